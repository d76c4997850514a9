"""Joint registration and fusion of panchromatic and multispectral images.

Images are float64 arrays laid out band-major, shape ``(bands, height, width)``.
"""

from sirf.tensor import (
    DualPair,
    GradientField,
    as_image,
    forward_gradient,
    group_l21_norm,
    l_adjoint,
    l_op,
    project_dual,
    replicate_pan,
)
from sirf.resample import (
    OverlapMask,
    TransformParams,
    build_pyramid,
    downsample,
    downsample_adjoint,
    image_gradient_at_warp,
    upsample,
    warp,
)
from sirf.vtv import DenoiseState, vtv_denoise, vtv_objective
from sirf.registration import (
    RegistrationConfig,
    RegistrationTrace,
    dgs_energy,
    dgs_gradient,
    register,
)
from sirf.solver import ConvergenceTrace, SolverConfig, sirf_fuse, sirf_objective
from sirf.metrics import MetricsReport, evaluate

__version__ = "0.1.0"

__all__ = [
    "ConvergenceTrace",
    "DenoiseState",
    "DualPair",
    "GradientField",
    "MetricsReport",
    "OverlapMask",
    "RegistrationConfig",
    "RegistrationTrace",
    "SolverConfig",
    "TransformParams",
    "as_image",
    "build_pyramid",
    "dgs_energy",
    "dgs_gradient",
    "downsample",
    "downsample_adjoint",
    "evaluate",
    "forward_gradient",
    "group_l21_norm",
    "image_gradient_at_warp",
    "l_adjoint",
    "l_op",
    "project_dual",
    "register",
    "replicate_pan",
    "sirf_fuse",
    "sirf_objective",
    "upsample",
    "vtv_denoise",
    "vtv_objective",
    "warp",
]
