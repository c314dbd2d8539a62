from .base_agent import BaseAgent, RunState
from .data_agent import DataAgent
from .diagnostics_agent import DiagnosticsAgent
from .evaluation_agent import EvaluationAgent
from .sampling_agent import SamplingAgent
from .training_agent import TrainingAgent

__all__ = [
    "BaseAgent",
    "DataAgent",
    "DiagnosticsAgent",
    "EvaluationAgent",
    "RunState",
    "SamplingAgent",
    "TrainingAgent",
]
