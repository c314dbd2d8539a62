from .graph_agent import ExperimentGraph

__all__ = ["ExperimentGraph"]
