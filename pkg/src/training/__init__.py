from .trainer import (
    AdamState,
    EarlyStopping,
    TrainConfig,
    TrainReport,
    adam_step,
    cosine_lr,
    evaluate_nll,
    fit,
    nll_loss,
)

__all__ = [
    "AdamState",
    "EarlyStopping",
    "TrainConfig",
    "TrainReport",
    "adam_step",
    "cosine_lr",
    "evaluate_nll",
    "fit",
    "nll_loss",
]
