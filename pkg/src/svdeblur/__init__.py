"""Spatially-variant motion deblurring from piecewise-planar scene flow.

Each image segment carries a plane and a rigid motion.  The plane-induced
homographies along the exposure give every pixel its own blur kernel, and a
robust IRLS solver recovers the sharp frame while downweighting pixels at
motion boundaries that the blur model cannot explain.
"""

from .blurmodel import (
    BlurOperator,
    BlurSpec,
    FlowField,
    apply_blur,
    apply_blur_transpose,
    assemble_flow_operator,
    assemble_operator,
    homography_flow,
)
from .errors import (
    AngleTooLarge,
    DeblurError,
    DegenerateHomography,
    DimensionMismatch,
    InvariantViolation,
    MissingSegment,
    NotARotation,
    NumericalBreakdown,
    ParseError,
    SingularProjection,
)
from .geometry import CameraModel, PlanePatch, RigidMotion, Twist, se3_exp, se3_log
from .metrics import psnr, ssim
from .solver import SolverConfig, deblur

__version__ = "0.1.0"

__all__ = [
    "AngleTooLarge", "BlurOperator", "BlurSpec", "CameraModel", "DeblurError", "DegenerateHomography",
    "DimensionMismatch", "FlowField", "InvariantViolation", "MissingSegment", "NotARotation",
    "NumericalBreakdown", "ParseError", "PlanePatch", "RigidMotion", "SingularProjection", "SolverConfig",
    "Twist", "apply_blur", "apply_blur_transpose", "assemble_flow_operator", "assemble_operator", "deblur",
    "homography_flow", "psnr", "se3_exp", "se3_log", "ssim",
]
