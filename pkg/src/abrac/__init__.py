"""Multi-task Bayesian optimization with adaptive-complexity neural basis
functions (ABRAC)."""

from .ard_blr import ArdHead, FitBounds, fit, predict, predict_many
from .bo_engine import BoConfig, BoHistory, Objective, run, run_random_search
from .data import ConfigSpace, TaskDataset
from .feature_net import FeatureNet, FeatureNetConfig, TrainConfig, train_offline
from .harness import HarnessConfig, aggregate, leave_one_task_out
from .surrogate import SurrogateKind, TruncationPolicy, make_surrogate, refit

__version__ = "0.1.0"

__all__ = [
    "ArdHead", "BoConfig", "BoHistory", "ConfigSpace", "FeatureNet", "FeatureNetConfig", "FitBounds",
    "HarnessConfig", "Objective", "SurrogateKind", "TaskDataset", "TrainConfig", "TruncationPolicy",
    "aggregate", "fit", "leave_one_task_out", "make_surrogate", "predict", "predict_many", "refit", "run",
    "run_random_search", "train_offline",
]
