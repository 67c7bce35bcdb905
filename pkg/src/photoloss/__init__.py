"""Scale-aware SSIM photometric loss for self-supervised depth estimation."""

__version__ = "0.1.0"

from .errors import ContractViolation, RasterLoadError
from .imaging import DepthMap, ImagePlane, WindowSpec, load_raster, save_raster, window_stats
from .ssim import SimilarityMap, SsimConfig, similarity_map, ssim_map, ssim_prime_map
from .geometry import CameraIntrinsics, PlanarCoeffs, RigidPose, compose, reproject, staged_synthesis
from .losses import LossWeights, photometric_loss, total_loss
from .metrics import MetricsReport, evaluate

__all__ = [
    "__version__",
    "ContractViolation",
    "RasterLoadError",
    "DepthMap",
    "ImagePlane",
    "WindowSpec",
    "load_raster",
    "save_raster",
    "window_stats",
    "SimilarityMap",
    "SsimConfig",
    "similarity_map",
    "ssim_map",
    "ssim_prime_map",
    "CameraIntrinsics",
    "PlanarCoeffs",
    "RigidPose",
    "compose",
    "reproject",
    "staged_synthesis",
    "LossWeights",
    "photometric_loss",
    "total_loss",
    "MetricsReport",
    "evaluate",
]
