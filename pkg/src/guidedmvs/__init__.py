"""Plane-sweep multi-view stereo guided by sparse depth hints."""

from .aggregation import FilterParams, aggregate_hints
from .errors import GuidedMVSError, ParseError
from .fusion import EvalThresholds, PointCloud, cloud_accuracy_completeness, error_rates, fuse
from .geometry import Camera, Extrinsics, Intrinsics, View, ViewSet
from .guidance import GuidanceParams, SparseDepthMap, modulate_volume
from .inference import (
    DepthMap,
    PipelineConfig,
    StageConfig,
    default_stages,
    run_coarse_to_fine,
    run_single_stage,
)
from .sweep import build_variance_volume, make_hypotheses
from .synthetic import SceneConfig, generate_scene, sample_hints

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "DepthMap",
    "EvalThresholds",
    "Extrinsics",
    "FilterParams",
    "GuidanceParams",
    "GuidedMVSError",
    "Intrinsics",
    "ParseError",
    "PipelineConfig",
    "PointCloud",
    "SceneConfig",
    "SparseDepthMap",
    "StageConfig",
    "View",
    "ViewSet",
    "aggregate_hints",
    "build_variance_volume",
    "cloud_accuracy_completeness",
    "default_stages",
    "error_rates",
    "fuse",
    "generate_scene",
    "make_hypotheses",
    "modulate_volume",
    "run_coarse_to_fine",
    "run_single_stage",
    "sample_hints",
]
