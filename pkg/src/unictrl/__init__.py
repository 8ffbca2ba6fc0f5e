"""Desk-scale video diffusion lab with training-free cross-frame attention control."""

__version__ = "0.1.0"

from .attention import ControlHook, attention  # noqa: E402
from .diffusion import SamplerConfig, add_noise, cfg_combine, ddim_step, make_schedule  # noqa: E402
from .model import Denoiser, DenoiserConfig  # noqa: E402
from .pipeline import UniCtrlConfig, ablation_run, sample_baseline, sample_unictrl  # noqa: E402

__all__ = [
    "ControlHook",
    "Denoiser",
    "DenoiserConfig",
    "SamplerConfig",
    "UniCtrlConfig",
    "ablation_run",
    "add_noise",
    "attention",
    "cfg_combine",
    "ddim_step",
    "make_schedule",
    "sample_baseline",
    "sample_unictrl",
]
