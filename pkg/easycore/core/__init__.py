"""EasyCore — Core package. Merges the kind registries of every sub-module."""

from .autodiff import OP_KINDS
from .train import SCHEDULERS
from .coreset import SELECTION_METHODS
from .analysis import ANALYSIS_KINDS

REGISTRIES = {
    "op": OP_KINDS,
    "scheduler": SCHEDULERS,
    "selection": SELECTION_METHODS,
    "analysis": ANALYSIS_KINDS,
}

__all__ = ["OP_KINDS", "SCHEDULERS", "SELECTION_METHODS", "ANALYSIS_KINDS", "REGISTRIES"]
