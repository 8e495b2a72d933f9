"""Hand-crafted features, plane-sweep warping and variance cost volumes."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import EmptyImage, InvalidRange, ResolutionMismatch
from .geometry import Camera, pixel_grid, sweep_warp_coords

# Cost stored where fewer than two views sampled the cell; argmin treats it as worst.
SENTINEL_COST = 1e6
# Hypotheses processed per work unit; bounds the (views, H, W, chunk, C) buffer.
CHUNK = 4

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class FeatureMap:
    data: np.ndarray  # (H, W, C)
    validity: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class DepthHypotheses:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2 or v[0] <= 0 or np.any(np.diff(v) <= 0):
            raise InvalidRange("hypotheses must be positive and strictly increasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def z_min(self) -> float:
        return float(self.values[0])

    @property
    def z_max(self) -> float:
        return float(self.values[-1])

    def __len__(self) -> int:
        return self.values.size

    @property
    def mean_spacing(self) -> float:
        return (self.z_max - self.z_min) / (len(self) - 1)


@dataclass(frozen=True, eq=False)
class CostVolume:
    """Variance scores over depth hypotheses.

    ``depths`` is ``(H, W, D)``; for a global sweep it is a broadcast view of
    ``hypotheses.values``, for refined stages every pixel carries its own grid.
    """

    costs: np.ndarray  # (H, W, D)
    support: np.ndarray  # (H, W, D) int
    depths: np.ndarray  # (H, W, D)
    hypotheses: DepthHypotheses | None = None

    @property
    def height(self) -> int:
        return self.costs.shape[0]

    @property
    def width(self) -> int:
        return self.costs.shape[1]

    @property
    def num_hypotheses(self) -> int:
        return self.costs.shape[2]

    def with_costs(self, costs: np.ndarray) -> "CostVolume":
        return CostVolume(costs, self.support, self.depths, self.hypotheses)


def make_hypotheses(z_min: float, z_max: float, count: int, spacing: str = "inverse") -> DepthHypotheses:
    """``count`` depths spanning ``[z_min, z_max]``, uniform in depth or inverse depth."""
    if not (0 < z_min < z_max) or count < 2:
        raise InvalidRange(f"need 0 < z_min < z_max and count >= 2, got {z_min}, {z_max}, {count}")
    if spacing == "linear":
        values = np.linspace(z_min, z_max, count)
    elif spacing == "inverse":
        values = 1.0 / np.linspace(1.0 / z_min, 1.0 / z_max, count)
    else:
        raise ValueError(f"unknown spacing {spacing!r}")
    values[0], values[-1] = z_min, z_max
    return DepthHypotheses(values)


def local_hypotheses(center: np.ndarray, half_width: np.ndarray, count: int, floor: float) -> np.ndarray:
    """Per-pixel linear grids ``[center - half_width, center + half_width]``, ``(H, W, count)``.

    Grids are shifted upward where they would dip below ``floor`` so every depth stays positive.
    """
    lo = np.maximum(center - half_width, floor)
    hi = lo + 2.0 * half_width
    t = np.linspace(0.0, 1.0, count)
    return lo[..., None] + (hi - lo)[..., None] * t


def to_gray(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.size == 0:
        raise EmptyImage("image is empty")
    if np.issubdtype(img.dtype, np.integer):
        img = img.astype(float) / 255.0
    else:
        img = img.astype(float)
    if img.ndim == 3:
        if img.shape[2] == 1:
            img = img[..., 0]
        elif img.shape[2] == 3:
            img = img @ LUMA
        else:
            raise ValueError(f"expected 1 or 3 channels, got {img.shape[2]}")
    elif img.ndim != 2:
        raise ValueError(f"expected a 2-D or 3-D image, got shape {img.shape}")
    return img


def downscale_gray(gray: np.ndarray, s: float) -> np.ndarray:
    """Resample so that low-res pixel ``i`` sits on full-res coordinate ``i / s``.

    This matches intrinsics scaled by plain multiplication with ``s``.
    """
    if s == 1:
        return gray
    f = 1.0 / s
    h, w = int(round(gray.shape[0] * s)), int(round(gray.shape[1] * s))
    blurred = ndimage.gaussian_filter(gray, sigma=0.5 * (f - 1.0), mode="nearest")
    if abs(f - round(f)) < 1e-9:
        step = int(round(f))
        return np.ascontiguousarray(blurred[::step, ::step][:h, :w])
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    return ndimage.map_coordinates(blurred, [ys * f, xs * f], order=1, mode="nearest")


def extract_features(image: np.ndarray) -> FeatureMap:
    """Grayscale intensity plus horizontal/vertical Sobel responses (3 channels).

    Sobel responses are divided by 8 so a unit-slope ramp gives gradient 1.
    """
    gray = to_gray(image)
    gx = ndimage.sobel(gray, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(gray, axis=0, mode="nearest") / 8.0
    data = np.stack([gray, gx, gy], axis=-1)
    return FeatureMap(data, np.ones(gray.shape, dtype=bool))


def features_at_scale(image: np.ndarray, s: float) -> FeatureMap:
    return extract_features(downscale_gray(to_gray(image), s))


def bilinear_sample(data: np.ndarray, coords: np.ndarray):
    """Sample ``data`` (h, w, C) at fractional ``coords`` (..., 2).

    Returns ``(values (..., C), valid (...))``. A sample is valid when it lies inside the
    hull of pixel centres; invalid samples are zero.
    """
    h, w = data.shape[:2]
    x = coords[..., 0]
    y = coords[..., 1]
    with np.errstate(invalid="ignore"):
        valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xs = np.where(valid, x, 0.0)
    ys = np.where(valid, y, 0.0)
    x0 = np.minimum(np.floor(xs).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = (xs - x0)[..., None]
    ay = (ys - y0)[..., None]
    out = (
        (1.0 - ax) * (1.0 - ay) * data[y0, x0]
        + ax * (1.0 - ay) * data[y0, x1]
        + (1.0 - ax) * ay * data[y1, x0]
        + ax * ay * data[y1, x1]
    )
    out = np.where(valid[..., None], out, 0.0)
    return out, valid


def warp_features(F_i: FeatureMap, z, cam_0: Camera, cam_i: Camera) -> FeatureMap:
    """Resample source features onto the reference grid for the plane at depth ``z``.

    ``z`` is a scalar or an ``(H, W)`` per-pixel depth.
    """
    if (F_i.height, F_i.width) != cam_i.intrinsics.shape:
        raise ResolutionMismatch(
            f"feature map {F_i.width}x{F_i.height} vs camera {cam_i.width}x{cam_i.height}"
        )
    grid = pixel_grid(cam_0.width, cam_0.height)
    coords, behind = sweep_warp_coords(grid, z, cam_0, cam_i)
    values, valid = bilinear_sample(F_i.data, coords)
    valid &= ~behind & _source_valid(F_i, coords)
    return FeatureMap(values, valid)


def _source_valid(F: FeatureMap, coords: np.ndarray) -> np.ndarray:
    """All four bilinear taps fall on valid source pixels."""
    if F.validity.all():
        return np.ones(coords.shape[:-1], dtype=bool)
    taps, _ = bilinear_sample(F.validity[..., None].astype(float), coords)
    # any invalid tap with nonzero weight pulls the blend below 1
    return taps[..., 0] >= 1.0 - 1e-12


def variance_from_samples(samples: np.ndarray, valid: np.ndarray):
    """Per-cell variance over the leading (view) axis, averaged over channels.

    ``samples`` is ``(V, ..., C)``, ``valid`` is ``(V, ...)``. Values are sorted along the
    view axis before the sequential sums, so the result is bitwise independent of view
    order. Returns ``(cost, support)``.
    """
    V = samples.shape[0]
    keyed = np.where(valid[..., None], samples, np.inf)
    keyed = np.sort(keyed, axis=0)
    n = valid.sum(axis=0)
    n_c = n[..., None]
    total = np.zeros(keyed.shape[1:])
    for i in range(V):
        total = total + np.where(i < n_c, keyed[i], 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = total / n_c
        sq = np.zeros_like(total)
        for i in range(V):
            d = keyed[i] - mean
            sq = sq + np.where(i < n_c, d * d, 0.0)
        var = sq / n_c
    C = var.shape[-1]
    acc = var[..., 0]
    for c in range(1, C):
        acc = acc + var[..., c]
    cost = acc / C
    cost = np.where(n >= 2, cost, SENTINEL_COST)
    return cost, n


def _chunk_samples(features, cams, depth_chunk, grid):
    """Warped samples of every view for a block of hypotheses.

    ``depth_chunk`` is ``(H, W, d)``. Returns ``(V, H, W, d, C)`` samples and validity.
    """
    ref = features[0]
    H, W, d = depth_chunk.shape
    C = ref.channels
    samples = np.empty((len(features), H, W, d, C))
    valid = np.empty((len(features), H, W, d), dtype=bool)
    samples[0] = ref.data[:, :, None, :]
    valid[0] = ref.validity[:, :, None]
    q = grid[:, :, None, :]
    for i in range(1, len(features)):
        coords, behind = sweep_warp_coords(q, depth_chunk, cams[0], cams[i])
        vals, ok = bilinear_sample(features[i].data, coords)
        samples[i] = vals
        valid[i] = ok & ~behind & _source_valid(features[i], coords)
    return samples, valid


def build_variance_volume(
    features: Sequence[FeatureMap],
    hypotheses: DepthHypotheses | np.ndarray,
    cams: Sequence[Camera],
    workers: int = 1,
) -> CostVolume:
    """Variance cost volume on the reference grid.

    ``features[0]`` and ``cams[0]`` are the reference; the rest are sources. ``hypotheses``
    is either a global :class:`DepthHypotheses` or a per-pixel ``(H, W, D)`` depth array.
    Work is split into blocks of hypotheses; the result does not depend on ``workers``.
    """
    if len(features) != len(cams):
        raise ValueError("one camera per feature map required")
    ref = features[0]
    for f, cam in zip(features, cams):
        if (f.height, f.width) != cam.intrinsics.shape:
            raise ResolutionMismatch("feature map resolution does not match its camera")
        if f.channels != ref.channels:
            raise ResolutionMismatch("channel count differs between views")
    H, W = ref.height, ref.width
    if isinstance(hypotheses, DepthHypotheses):
        depths = np.broadcast_to(hypotheses.values, (H, W, len(hypotheses)))
        hyp = hypotheses
    else:
        depths = np.asarray(hypotheses, dtype=float)
        if depths.shape[:2] != (H, W):
            raise ResolutionMismatch("per-pixel hypotheses do not match the reference grid")
        hyp = None
    D = depths.shape[2]
    costs = np.empty((H, W, D))
    support = np.empty((H, W, D), dtype=np.int64)
    grid = pixel_grid(W, H)

    def work(start: int) -> None:
        stop = min(start + CHUNK, D)
        samples, valid = _chunk_samples(features, cams, depths[:, :, start:stop], grid)
        c, n = variance_from_samples(samples, valid)
        costs[:, :, start:stop] = c
        support[:, :, start:stop] = n

    starts = range(0, D, CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)
    costs.setflags(write=False)
    support.setflags(write=False)
    return CostVolume(costs, support, depths, hyp)


def default_workers() -> int:
    env = os.environ.get("GUIDEDMVS_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)
