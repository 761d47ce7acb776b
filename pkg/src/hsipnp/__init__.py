"""Plug-and-play ADMM restoration of hyperspectral cubes with a gated recurrent CNN prior."""

from .admm import make_schedule, run
from .degrade import Mask, Sensing, SuperRes, add_noise, apply, apply_adjoint
from .metrics import psnr, sam, ssim

__version__ = "0.1.0"

__all__ = [
    "Mask",
    "Sensing",
    "SuperRes",
    "add_noise",
    "apply",
    "apply_adjoint",
    "make_schedule",
    "psnr",
    "run",
    "sam",
    "ssim",
]
