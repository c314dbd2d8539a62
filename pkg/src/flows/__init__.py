from .models import (
    FlowModel,
    MVNModel,
    build_model,
    load_model,
    log_prob,
    sample,
    save_model,
)
from .specs import ModelSpec

__all__ = [
    "FlowModel",
    "MVNModel",
    "ModelSpec",
    "build_model",
    "load_model",
    "log_prob",
    "sample",
    "save_model",
]
