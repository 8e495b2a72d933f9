"""Sparse depth hints and flipped-Gaussian modulation of variance volumes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonIntegerResolution, NonPositiveHint, ResolutionMismatch
from .sweep import CostVolume


@dataclass(frozen=True, eq=False)
class SparseDepthMap:
    depth: np.ndarray  # (H, W), meaningful where mask
    mask: np.ndarray  # (H, W) bool

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if depth.shape != mask.shape or depth.ndim != 2:
            raise ValueError("depth and mask must be equal-shaped 2-D arrays")
        depth = np.where(mask, depth, 0.0)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def empty(cls, width: int, height: int) -> "SparseDepthMap":
        return cls(np.zeros((height, width)), np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def density(self) -> float:
        return self.count / self.mask.size

    def validate(self) -> None:
        if np.any(self.depth[self.mask] <= 0) or not np.all(np.isfinite(self.depth[self.mask])):
            raise NonPositiveHint("hinted depths must be positive and finite")


@dataclass(frozen=True)
class GuidanceParams:
    """Amplitude ``k`` and width ``c`` (depth units) of the flipped Gaussian.

    ``modulate_outside_range`` decides whether a hint outside a pixel's hypothesis range
    still modulates it (then every cell is inflated by roughly ``k``).
    """

    k: float = 10.0
    c: float = 0.01
    modulate_outside_range: bool = True

    def __post_init__(self):
        if not self.k > 1:
            raise ValueError(f"k must exceed 1, got {self.k}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")


def modulation_factor(z, z_star, v, k: float, c: float):
    # expm1 keeps the factor strictly positive next to the hint when c is wide
    return 1.0 - v + v * k * -np.expm1(-((z - z_star) ** 2) / (2.0 * c * c))


def modulate_volume(vol: CostVolume, hints: SparseDepthMap, params: GuidanceParams) -> CostVolume:
    """Return a new volume whose hinted pixels are scaled by the flipped Gaussian.

    Unhinted pixels are copied untouched, so an empty mask gives a bit-identical volume.
    """
    if (hints.height, hints.width) != (vol.height, vol.width):
        raise ResolutionMismatch(
            f"hints {hints.width}x{hints.height} vs volume {vol.width}x{vol.height}"
        )
    hints.validate()
    costs = np.array(vol.costs, copy=True)
    ys, xs = np.nonzero(hints.mask)
    if ys.size:
        z = vol.depths[ys, xs]  # (n, D)
        z_star = hints.depth[ys, xs][:, None]
        v = np.ones_like(z_star)
        if not params.modulate_outside_range:
            outside = (z_star[:, 0] < z[:, 0]) | (z_star[:, 0] > z[:, -1])
            v[outside] = 0.0
        costs[ys, xs] = modulation_factor(z, z_star, v, params.k, params.c) * costs[ys, xs]
    costs.setflags(write=False)
    return vol.with_costs(costs)


def _nearest_index(n_low: int, n_full: int, s: float) -> np.ndarray:
    idx = np.floor(np.arange(n_low) / s + 0.5).astype(np.intp)
    return np.clip(idx, 0, n_full - 1)


def downsample_hints(hints: SparseDepthMap, s: float) -> SparseDepthMap:
    """Nearest-neighbour subsampling: low-res pixel ``i`` reads full-res pixel ``round(i / s)``."""
    if s == 1:
        return hints
    w, h = hints.width * s, hints.height * s
    if abs(w - round(w)) > 1e-9 or abs(h - round(h)) > 1e-9 or round(w) < 1 or round(h) < 1:
        raise NonIntegerResolution(f"{hints.width}x{hints.height} at scale {s} gives {w}x{h}")
    iy = _nearest_index(int(round(h)), hints.height, s)
    ix = _nearest_index(int(round(w)), hints.width, s)
    return SparseDepthMap(hints.depth[np.ix_(iy, ix)], hints.mask[np.ix_(iy, ix)])


def modulate_stage(
    vol_s: CostVolume, full_hints: SparseDepthMap, s: float, params: GuidanceParams
) -> CostVolume:
    return modulate_volume(vol_s, downsample_hints(full_hints, s), params)
