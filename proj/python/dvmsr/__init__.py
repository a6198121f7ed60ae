"""Mamba-based efficient image super-resolution.

Thin python surface over the C++ core: model profiling and inference, the
selective-scan kernels, bicubic resampling and the Y-channel metrics.
"""

from ._dvmsr import (
    PRESETS,
    Model,
    bicubic_resize,
    count_activations_m,
    count_flops,
    count_params,
    load_png,
    profile_json,
    psnr,
    rgb_to_y,
    save_png,
    selective_scan,
    ssim,
    zoh_discretize,
)

__all__ = [
    "PRESETS",
    "Model",
    "bicubic_resize",
    "count_activations_m",
    "count_flops",
    "count_params",
    "load_png",
    "profile_json",
    "psnr",
    "rgb_to_y",
    "save_png",
    "selective_scan",
    "ssim",
    "zoh_discretize",
]
