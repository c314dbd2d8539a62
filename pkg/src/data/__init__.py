from .datasets import (
    DataConfig,
    Dataset,
    gen_circles,
    gen_moons,
    gen_tabular_smoke,
    load_dataset,
    load_table,
    save_dataset,
    split_dataset,
    standardize,
)

__all__ = [
    "DataConfig",
    "Dataset",
    "gen_circles",
    "gen_moons",
    "gen_tabular_smoke",
    "load_dataset",
    "load_table",
    "save_dataset",
    "split_dataset",
    "standardize",
]
