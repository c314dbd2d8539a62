"""hybridflows: flujos normalizantes híbridos para regresión de densidades."""
