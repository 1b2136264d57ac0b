"""Differentiable working memory: model, tasks, training and evaluation."""

from .autodiff import Tensor, no_grad
from .baseline import BaselineConfig, RecurrentBaseline
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError
from .evaluation import evaluate, record_trace, render_heatmap, write_trace
from .model import Dwm, DwmConfig
from .tasks import TASK_NAMES, GenerationRegime, TaskSpec, generate, regime_for
from .training import TrainConfig, train

__all__ = [
    "Tensor",
    "no_grad",
    "BaselineConfig",
    "RecurrentBaseline",
    "load_checkpoint",
    "save_checkpoint",
    "ConfigError",
    "evaluate",
    "record_trace",
    "render_heatmap",
    "write_trace",
    "Dwm",
    "DwmConfig",
    "TASK_NAMES",
    "GenerationRegime",
    "TaskSpec",
    "generate",
    "regime_for",
    "TrainConfig",
    "train",
]

__version__ = "0.1.0"
