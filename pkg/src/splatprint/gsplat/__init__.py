"""Gaussian splatting: representation, rasterization, loss and training."""

from .cloud import GaussianCloud, Gaussian3D, eval_gaussian, load_checkpoint, save_checkpoint
from .projection import Splat2D, project_gaussian
from .render import Camera, Gradients, backward, render
from .loss import loss
from .train import TrainConfig, TrainResult, train

__all__ = [
    "Camera", "Gaussian3D", "GaussianCloud", "Gradients", "Splat2D", "backward", "eval_gaussian",
    "load_checkpoint", "loss", "project_gaussian", "render", "save_checkpoint", "TrainConfig", "TrainResult",
    "train",
]
