"""Stable-matching toolkit: classical solvers, an enumeration oracle and the WeaveNet model."""
from .instance import CostReport, Matching, PreferenceInstance, cost_report, find_blocking_pairs, is_stable
from .model import ModelConfig, WeaveNet

__version__ = "0.1.0"
__all__ = ["CostReport", "Matching", "PreferenceInstance", "ModelConfig", "WeaveNet", "cost_report",
           "find_blocking_pairs", "is_stable", "__version__"]
