"""Multi-view hint aggregation onto the reference view and occlusion filtering."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Camera, in_bounds, pixel_rays, project_cam_points, relative_pose
from .guidance import SparseDepthMap


@dataclass(frozen=True)
class FilterParams:
    """``epsilon`` is the depth gap (scene units); ``radius`` the Chebyshev neighbourhood.

    ``angle_rule`` selects whether one angular sign inversion suffices (``"any"``) or
    both axes must invert (``"all"``).
    """

    epsilon: float = 3.0
    radius: int = 2
    angle_rule: str = "any"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.radius < 1:
            raise ValueError("radius must be at least 1")
        if self.angle_rule not in ("any", "all"):
            raise ValueError(f"unknown angle rule {self.angle_rule!r}")


@dataclass(frozen=True, eq=False)
class HintPointSet:
    """Hints expressed in the reference view.

    ``x``/``y`` are pixel coordinates (fractional before merging, integral after),
    ``theta``/``phi`` the azimuth/elevation of the 3-D point in the reference frame.
    """

    x: np.ndarray
    y: np.ndarray
    depth: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    width: int
    height: int
    dropped: int = 0
    stats: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.depth.size

    @property
    def density(self) -> float:
        return len(self) / (self.width * self.height)

    def subset(self, keep: np.ndarray) -> "HintPointSet":
        return HintPointSet(
            self.x[keep], self.y[keep], self.depth[keep], self.theta[keep], self.phi[keep],
            self.width, self.height,
        )


def spherical_angles(points_cam: np.ndarray):
    x, y, z = points_cam[..., 0], points_cam[..., 1], points_cam[..., 2]
    return np.arctan2(x, z), np.arctan2(y, np.hypot(x, z))


def _raster(x: np.ndarray) -> np.ndarray:
    """Nearest pixel index, halves rounded up."""
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def from_sparse_map(hints: SparseDepthMap, cam: Camera) -> HintPointSet:
    """Hints of a view expressed in that same view."""
    ys, xs = np.nonzero(hints.mask)
    d = hints.depth[ys, xs]
    q = np.stack([xs, ys], axis=-1).astype(float)
    p = pixel_rays(q, cam.intrinsics) * d[:, None]
    theta, phi = spherical_angles(p)
    return HintPointSet(q[:, 0], q[:, 1], d, theta, phi, hints.width, hints.height)


def project_hints(hints_i: SparseDepthMap, cam_i: Camera, cam_0: Camera) -> HintPointSet:
    """Transfer every hint of view ``i`` into the reference view.

    Points behind the reference camera or outside its image are dropped and counted.
    """
    hints_i.validate()
    ys, xs = np.nonzero(hints_i.mask)
    d = hints_i.depth[ys, xs]
    q = np.stack([xs, ys], axis=-1).astype(float)
    R, t = relative_pose(cam_i, cam_0)
    p_0 = (pixel_rays(q, cam_i.intrinsics) * d[:, None]) @ R.T + t
    q0, d0 = project_cam_points(p_0, cam_0.intrinsics)
    keep = (d0 > 0) & in_bounds(q0, cam_0.width, cam_0.height)
    theta, phi = spherical_angles(p_0[keep])
    return HintPointSet(
        q0[keep, 0], q0[keep, 1], d0[keep], theta, phi,
        cam_0.width, cam_0.height, dropped=int((~keep).sum()),
    )


def merge_hints(sets: Sequence[HintPointSet], reference_hints: SparseDepthMap, reference_cam: Camera) -> HintPointSet:
    """Rasterise projected hints onto the reference grid and add the reference's own hints.

    Reference hints are kept verbatim and take their pixel; among projected points
    competing for one pixel the smallest depth wins (ties broken by angles, so the
    result does not depend on the order of ``sets``). Angles of merged points are
    those of the pixel centre at the kept depth.
    """
    W, H = reference_hints.width, reference_hints.height
    ref = from_sparse_map(reference_hints, reference_cam)
    parts = [s for s in sets if len(s)]
    if parts:
        x = _raster(np.concatenate([s.x for s in parts]))
        y = _raster(np.concatenate([s.y for s in parts]))
        d = np.concatenate([s.depth for s in parts])
        th = np.concatenate([s.theta for s in parts])
        ph = np.concatenate([s.phi for s in parts])
        pix = y * W + x
        order = np.lexsort((ph, th, d, pix))
        pix, d, th, ph = pix[order], d[order], th[order], ph[order]
        first = np.ones(pix.size, dtype=bool)
        first[1:] = pix[1:] != pix[:-1]
        pix, d, th, ph = pix[first], d[first], th[first], ph[first]
        free = ~reference_hints.mask.ravel()[pix]
        pix, d, th, ph = pix[free], d[free], th[free], ph[free]
        px, py = (pix % W).astype(float), (pix // W).astype(float)
        # angles of the rasterised point, so sign tests compare like with like
        th, ph = spherical_angles(pixel_rays(np.stack([px, py], axis=-1), reference_cam.intrinsics) * d[:, None])
    else:
        px = py = d = th = ph = np.empty(0)
    x_all = np.concatenate([ref.x, px])
    y_all = np.concatenate([ref.y, py])
    d_all = np.concatenate([ref.depth, d])
    th_all = np.concatenate([ref.theta, th])
    ph_all = np.concatenate([ref.phi, ph])
    order = np.lexsort((x_all, y_all))
    merged = HintPointSet(
        x_all[order], y_all[order], d_all[order], th_all[order], ph_all[order], W, H,
        dropped=sum(s.dropped for s in sets),
    )
    merged.stats.update(
        density_reference=reference_hints.density,
        density_merged=merged.density,
        collisions=sum(len(s) for s in sets) - len(px),
    )
    return merged


def _scatter(points: HintPointSet, pad: int):
    shape = (points.height + 2 * pad, points.width + 2 * pad)
    grids = [np.full(shape, np.nan) for _ in range(3)]
    xi = _raster(points.x) + pad
    yi = _raster(points.y) + pad
    flat = yi * shape[1] + xi
    if np.unique(flat).size != flat.size:
        raise ValueError("filtering needs at most one hint per pixel; merge first")
    for g, vals in zip(grids, (points.depth, points.theta, points.phi)):
        g[yi, xi] = vals
    return grids, xi, yi


def outlier_mask(points: HintPointSet, params: FilterParams) -> np.ndarray:
    """True for every point that some neighbour flags as occluded.

    All decisions are taken against the unfiltered set.
    """
    r = params.radius
    (dg, tg, pg), xi, yi = _scatter(points, r)
    d, th, ph = points.depth, points.theta, points.phi
    bad = np.zeros(len(points), dtype=bool)
    with np.errstate(invalid="ignore"):
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                if dx == 0 and dy == 0:
                    continue
                ds = dg[yi + dy, xi + dx]
                ts = tg[yi + dy, xi + dx]
                ps = pg[yi + dy, xi + dx]
                # x_q - x_s = -dx, y_q - y_s = -dy
                a = (-dx) * (th - ts) < 0
                b = (-dy) * (ph - ps) < 0
                angular = (a | b) if params.angle_rule == "any" else (a & b)
                gap = d > ds + params.epsilon
                bad |= angular | gap
    return bad


def filter_hints(points: HintPointSet, params: FilterParams) -> HintPointSet:
    bad = outlier_mask(points, params)
    out = points.subset(~bad)
    out.stats.update(points.stats)
    out.stats.update(removed=int(bad.sum()), density_filtered=out.density)
    return out


def to_sparse_map(points: HintPointSet, width: int | None = None, height: int | None = None) -> SparseDepthMap:
    """Nearest-pixel rasterisation; the smallest depth wins on collisions."""
    W = points.width if width is None else width
    H = points.height if height is None else height
    depth = np.zeros((H, W))
    mask = np.zeros((H, W), dtype=bool)
    if len(points):
        x = _raster(points.x)
        y = _raster(points.y)
        ok = (x >= 0) & (x < W) & (y >= 0) & (y < H)
        x, y, d = x[ok], y[ok], points.depth[ok]
        order = np.argsort(-d, kind="stable")  # nearest written last
        depth[y[order], x[order]] = d[order]
        mask[y, x] = True
    return SparseDepthMap(depth, mask)


MODES = ("unguided", "g", "mvg", "fmvg")


def aggregate_hints(
    view_hints: Sequence[SparseDepthMap],
    cams: Sequence[Camera],
    mode: str,
    params: FilterParams | None = None,
) -> tuple[SparseDepthMap | None, dict]:
    """Build the reference hint map for a guidance mode.

    ``view_hints[0]``/``cams[0]`` belong to the reference view. Returns the hint map
    (``None`` for unguided) and a dict of densities at each step.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "unguided":
        return None, {}
    ref_hints = view_hints[0]
    stats = {"density_reference": ref_hints.density}
    if mode == "g":
        return ref_hints, stats
    if len(view_hints) < 2:
        raise ValueError(f"mode {mode} needs hints from at least two views")
    sets = [project_hints(h, c, cams[0]) for h, c in zip(view_hints[1:], cams[1:])]
    merged = merge_hints(sets, ref_hints, cams[0])
    stats.update(merged.stats)
    stats["dropped"] = merged.dropped
    if mode == "fmvg":
        merged = filter_hints(merged, params or FilterParams())
        stats["removed"] = merged.stats["removed"]
        stats["density_filtered"] = merged.density
    return to_sparse_map(merged), stats
