"""Strategic classification with user side information.

Users see a noisy target label before responding to a published classifier.
The package provides the response models, strategic margins and losses,
training routines, incentive-alignment checks and the experiment drivers.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    BilinearModel,
    CostKind,
    CostSpec,
    Dataset,
    Example,
    History,
    LinearModel,
    NoiseVector,
    PPEDataset,
    SideInfo,
    TargetLabel,
    make_rng,
)
from .losses import StrategicLoss  # noqa: E402
from .response import Kind, ResponseSetting, UserLoss, respond  # noqa: E402
from .solvers import OptimizerConfig, TrainResult, evaluate, train_hard, train_soft  # noqa: E402

__all__ = [
    "__version__", "BilinearModel", "CostKind", "CostSpec", "Dataset", "Example", "History", "LinearModel",
    "NoiseVector", "PPEDataset", "SideInfo", "TargetLabel", "make_rng", "StrategicLoss", "Kind",
    "ResponseSetting", "UserLoss", "respond", "OptimizerConfig", "TrainResult", "evaluate", "train_hard",
    "train_soft",
]
