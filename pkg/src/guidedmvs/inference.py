"""Depth regression from cost volumes and the single/coarse-to-fine guided pipelines."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import ndimage

from .geometry import ViewSet
from .guidance import GuidanceParams, SparseDepthMap, modulate_stage
from .sweep import (
    CostVolume,
    build_variance_volume,
    features_at_scale,
    local_hypotheses,
    make_hypotheses,
)


@dataclass(frozen=True, eq=False)
class DepthMap:
    depth: np.ndarray  # (H, W)
    confidence: np.ndarray  # (H, W) in [0, 1]
    validity: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @classmethod
    def from_depth(cls, depth: np.ndarray) -> "DepthMap":
        """Wrap a plain depth array; NaN and non-positive entries are invalid."""
        depth = np.asarray(depth, dtype=float)
        valid = np.isfinite(depth) & (depth > 0)
        return cls(np.where(valid, depth, np.nan), valid.astype(float), valid)


@dataclass(frozen=True)
class StageConfig:
    """One sweep of a coarse-to-fine cascade.

    ``half_width`` is ``None`` for a full-range sweep, otherwise the per-pixel search
    half-width measured in plane spacings of the previous stage.
    """

    scale: float
    num_hypotheses: int
    half_width: float | None = None
    guided: bool = True
    spacing: str = "inverse"


def default_stages(guided: bool | Sequence[bool] = True) -> list[StageConfig]:
    flags = [guided] * 3 if isinstance(guided, bool) else list(guided)
    return [
        StageConfig(0.25, 64, None, flags[0], "inverse"),
        StageConfig(0.5, 16, 4.0, flags[1], "linear"),
        StageConfig(1.0, 8, 2.0, flags[2], "linear"),
    ]


@dataclass(frozen=True)
class PipelineConfig:
    stages: tuple[StageConfig, ...] = field(default_factory=lambda: tuple(default_stages()))
    guidance: GuidanceParams = field(default_factory=GuidanceParams)
    depth_range: tuple[float, float] | None = None
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ValueError("at least one stage required")
        scales = [st.scale for st in self.stages]
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ValueError(f"stage scales must increase strictly, got {scales}")
        if self.stages[0].half_width is not None:
            raise ValueError("the first stage must sweep the full range")

    def with_guidance(self, flags: Sequence[bool]) -> "PipelineConfig":
        stages = tuple(replace(st, guided=bool(f)) for st, f in zip(self.stages, flags))
        return replace(self, stages=stages)


def box_smooth(costs: np.ndarray) -> np.ndarray:
    # explicit 9-tap sum; a running-sum filter leaks rounding residue along whole rows
    H, W = costs.shape[:2]
    p = np.pad(costs, ((1, 1), (1, 1), (0, 0)), mode="edge")
    acc = np.zeros_like(costs, dtype=float)
    for dy in range(3):
        for dx in range(3):
            acc += p[dy : dy + H, dx : dx + W]
    return acc / 9.0


def regress_depth(vol: CostVolume) -> DepthMap:
    """Winner-take-all over 3x3 box-filtered costs with parabolic sub-plane refinement.

    Ties go to the lowest hypothesis index. Confidence is ``1 - best/second_best``.
    """
    costs = box_smooth(vol.costs)
    H, W, D = costs.shape
    idx = np.argmin(costs, axis=2)
    take = lambda a, j: np.take_along_axis(a, j[..., None], axis=2)[..., 0]  # noqa: E731
    c0 = take(costs, idx)
    z0 = take(vol.depths, idx)

    if D > 1:
        second = np.partition(costs, 1, axis=2)[..., 1]
    else:
        second = c0
    with np.errstate(divide="ignore", invalid="ignore"):
        conf = 1.0 - c0 / second
    conf = np.where(np.isfinite(conf) & (second > 0), np.clip(conf, 0.0, 1.0), 0.0)

    jm = np.clip(idx - 1, 0, D - 1)
    jp = np.clip(idx + 1, 0, D - 1)
    cm, cp = take(costs, jm), take(costs, jp)
    zm, zp = take(vol.depths, jm), take(vol.depths, jp)
    interior = (idx > 0) & (idx < D - 1)
    a = z0 - zm
    b = z0 - zp
    fa = c0 - cp
    fb = c0 - cm
    num = a * a * fa - b * b * fb
    den = a * fa - b * fb
    with np.errstate(divide="ignore", invalid="ignore"):
        vertex = z0 - 0.5 * num / den
        convex = interior & (den != 0) & ((cm - c0) + (cp - c0) > 0) & np.isfinite(vertex)
    depth = np.where(convex, np.clip(vertex, zm, zp), z0)

    support = take(vol.support, idx)
    return DepthMap(depth, conf, support >= 2)


def _upsample(a: np.ndarray, shape: tuple[int, int], ratio: float, order: int = 1) -> np.ndarray:
    """Resample ``a`` onto a finer grid where fine pixel ``X`` maps to coarse ``X * ratio``."""
    if a.shape == shape:
        return a
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]].astype(float)
    return ndimage.map_coordinates(a.astype(float), [ys * ratio, xs * ratio], order=order, mode="nearest")


def _local_spacing(depths: np.ndarray, estimate: np.ndarray) -> np.ndarray:
    """Spacing of the hypothesis grid bracketing ``estimate`` at every pixel."""
    D = depths.shape[2]
    j = (depths <= estimate[..., None]).sum(axis=2) - 1
    j = np.clip(j, 0, D - 2)
    lo = np.take_along_axis(depths, j[..., None], axis=2)[..., 0]
    hi = np.take_along_axis(depths, (j + 1)[..., None], axis=2)[..., 0]
    return hi - lo


def _resolve_range(views: ViewSet, cfg: PipelineConfig) -> tuple[float, float]:
    rng = cfg.depth_range or views.depth_range
    if rng is None:
        raise ValueError("no depth range: set PipelineConfig.depth_range or ViewSet.depth_range")
    return float(rng[0]), float(rng[1])


@dataclass
class StageResult:
    scale: float
    volume: CostVolume
    depth: DepthMap


class Cascade:
    """Stage-by-stage runner that keeps per-stage features and volumes.

    The object caches features per scale, so several guidance variants can share them.
    """

    def __init__(self, views: ViewSet, cfg: PipelineConfig):
        self.views = views
        self.cfg = cfg
        self.z_min, self.z_max = _resolve_range(views, cfg)
        self._features: dict[float, tuple] = {}

    def reconfigured(self, cfg: PipelineConfig) -> "Cascade":
        """Same views and feature cache, different stage or guidance settings."""
        other = Cascade(self.views, cfg)
        other._features = self._features
        return other

    def features(self, s: float):
        if s not in self._features:
            cams = [v.camera.scaled(s) for v in self.views.views]
            feats = [features_at_scale(v.image, s) for v in self.views.views]
            self._features[s] = (feats, cams)
        return self._features[s]

    def first_volume(self) -> CostVolume:
        st = self.cfg.stages[0]
        feats, cams = self.features(st.scale)
        hyps = make_hypotheses(self.z_min, self.z_max, st.num_hypotheses, st.spacing)
        return build_variance_volume(feats, hyps, cams, self.cfg.workers)

    def run(self, hints: SparseDepthMap | None, first_volume: CostVolume | None = None) -> list[StageResult]:
        results: list[StageResult] = []
        params = self.cfg.guidance
        prev: StageResult | None = None
        for n, st in enumerate(self.cfg.stages):
            feats, cams = self.features(st.scale)
            if n == 0:
                vol = first_volume if first_volume is not None else self.first_volume()
            else:
                shape = cams[0].intrinsics.shape
                ratio = prev.scale / st.scale
                center = _upsample(prev.depth.depth, shape, ratio)
                spacing = _upsample(_local_spacing(prev.volume.depths, prev.depth.depth), shape, ratio)
                depths = local_hypotheses(center, st.half_width * spacing, st.num_hypotheses, self.z_min)
                vol = build_variance_volume(feats, depths, cams, self.cfg.workers)
            if hints is not None and st.guided:
                vol = modulate_stage(vol, hints, st.scale, params)
            prev = StageResult(st.scale, vol, regress_depth(vol))
            results.append(prev)
        return results

    def output(self, results: list[StageResult]) -> DepthMap:
        """Final stage estimate at the reference image resolution."""
        last = results[-1]
        shape = self.views.reference.camera.intrinsics.shape
        if (last.depth.height, last.depth.width) == shape:
            return last.depth
        ratio = last.scale
        return DepthMap(
            _upsample(last.depth.depth, shape, ratio),
            _upsample(last.depth.confidence, shape, ratio),
            _upsample(last.depth.validity.astype(float), shape, ratio, order=0) > 0.5,
        )


def run_coarse_to_fine(views: ViewSet, hints: SparseDepthMap | None, cfg: PipelineConfig) -> DepthMap:
    """Cascade of sweeps; later stages search around the upsampled previous estimate.

    Hints are given once at full resolution and downsampled per guided stage.
    """
    cascade = Cascade(views, cfg)
    return cascade.output(cascade.run(hints))


def run_single_stage(views: ViewSet, hints: SparseDepthMap | None, cfg: PipelineConfig) -> DepthMap:
    """Features, full-range variance volume, optional modulation, regression."""
    if len(cfg.stages) != 1:
        cfg = replace(cfg, stages=cfg.stages[:1])
    return run_coarse_to_fine(views, hints, cfg)


def single_stage_config(
    num_hypotheses: int = 64,
    scale: float = 1.0,
    spacing: str = "inverse",
    guidance: GuidanceParams | None = None,
    depth_range: tuple[float, float] | None = None,
    workers: int = 1,
) -> PipelineConfig:
    return PipelineConfig(
        stages=(StageConfig(scale, num_hypotheses, None, True, spacing),),
        guidance=guidance or GuidanceParams(),
        depth_range=depth_range,
        workers=workers,
    )


def plane_spacing(depth_range: tuple[float, float], stage: StageConfig) -> float:
    """Mean gap between the full-range hypotheses of ``stage``; a natural Gaussian width."""
    return (float(depth_range[1]) - float(depth_range[0])) / (stage.num_hypotheses - 1)
