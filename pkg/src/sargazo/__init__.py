"""Small numpy CNN library and experiment harness for sargassum level classification."""
from .architectures import FAMILIES, ArchSpec, build
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .evaluation import EvalReport, evaluate, predict
from .graph import NetworkGraph
from .training import TrainConfig, apply_regime, pretrain_source, train

__version__ = "0.1.0"

__all__ = [
    "ArchSpec", "Checkpoint", "EvalReport", "FAMILIES", "NetworkGraph", "TrainConfig", "apply_regime",
    "build", "evaluate", "load_checkpoint", "predict", "pretrain_source", "save_checkpoint", "train",
]
