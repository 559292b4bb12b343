"""Single-image super-resolution with a projection-skip CNN and
per-image model adaptation."""

__version__ = "0.1.0"

from .checkpoint import Checkpoint
from .data import PatchPair, PyramidSpec
from .engine import ConvParams, OptimizerState
from .model import CellSpec, Network, NetworkSpec, build_network, build_variant, default_spec
from .pipeline import SROptions, run_sr, superresolve
from .train import TrainConfig, train

__all__ = [
    "Checkpoint",
    "PatchPair",
    "PyramidSpec",
    "ConvParams",
    "OptimizerState",
    "CellSpec",
    "Network",
    "NetworkSpec",
    "build_network",
    "build_variant",
    "default_spec",
    "SROptions",
    "run_sr",
    "superresolve",
    "TrainConfig",
    "train",
]
