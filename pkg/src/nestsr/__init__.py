"""Residual nested U-Net super-resolution for synthetic low-field MRI."""

from .degrade import AugmentSpec, DegradeSpec, PairedSample, make_pair
from .metrics import EvalReport, MetricConfig, evaluate, psnr, ssim
from .tensor import Tensor
from .training import TrainConfig, TrainState, load_checkpoint, save_checkpoint, train
from .unetpp import UNetPPConfig, UNetPPModel, forward, super_resolve

__version__ = "0.1.0"

__all__ = [
    "AugmentSpec",
    "DegradeSpec",
    "EvalReport",
    "MetricConfig",
    "PairedSample",
    "Tensor",
    "TrainConfig",
    "TrainState",
    "UNetPPConfig",
    "UNetPPModel",
    "evaluate",
    "forward",
    "load_checkpoint",
    "make_pair",
    "psnr",
    "save_checkpoint",
    "ssim",
    "super_resolve",
    "train",
]
