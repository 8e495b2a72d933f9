"""Depth-map fusion by multi-view geometric consistency, error rates and cloud metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, EmptyGT, ResolutionMismatch
from .geometry import Camera, backproject, pixel_grid, transfer_points
from .inference import DepthMap


@dataclass(frozen=True)
class EvalThresholds:
    """Error thresholds and the consistency test used by :func:`fuse`.

    ``min_views`` source confirmations are needed; a confirmation requires the
    round-trip pixel error below ``max_reproj`` and relative depth gap below ``max_rel_depth``.
    """

    taus: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0)
    min_views: int = 2
    max_reproj: float = 1.0
    max_rel_depth: float = 0.01

    def __post_init__(self):
        if not all(t > 0 for t in self.taus) or self.min_views < 1:
            raise ValueError("thresholds must be positive")
        if not (self.max_reproj > 0 and self.max_rel_depth > 0):
            raise ValueError("thresholds must be positive")


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # (n, 3)
    colors: np.ndarray | None = None  # (n, 3) uint8

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            object.__setattr__(self, "colors", np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3))

    def __len__(self) -> int:
        return self.points.shape[0]


def _as_array(d) -> np.ndarray:
    return d.depth if isinstance(d, DepthMap) else np.asarray(d, dtype=float)


def error_rates(est, gt, taus: Sequence[float] = (1, 2, 3, 4)) -> list[float]:
    """Fraction of GT-valid pixels whose absolute depth error exceeds each threshold.

    Estimated pixels that are NaN count as errors.
    """
    e, g = _as_array(est), _as_array(gt)
    if e.shape != g.shape:
        raise ResolutionMismatch(f"estimate {e.shape} vs ground truth {g.shape}")
    valid = gt.validity if isinstance(gt, DepthMap) else (np.isfinite(g) & (g > 0))
    if not valid.any():
        raise EmptyGT("ground truth has no valid pixel")
    err = np.abs(e - g)[valid]
    n = err.size
    return [float(np.count_nonzero(~(err <= t)) / n) for t in taus]


def _sample_depth(depth: np.ndarray, valid: np.ndarray, coords: np.ndarray):
    """Bilinear interpolation of inverse depth; all four taps must be valid.

    Inverse depth is affine in pixel coordinates on a plane, so planar surfaces are
    reproduced exactly.
    """
    h, w = depth.shape
    x, y = coords[..., 0], coords[..., 1]
    with np.errstate(invalid="ignore"):
        inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xs, ys = np.where(inside, x, 0.0), np.where(inside, y, 0.0)
    x0 = np.minimum(np.floor(xs).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h - 2)
    ax, ay = xs - x0, ys - y0
    inv = np.where(valid, 1.0 / np.where(valid, depth, 1.0), 0.0)
    ok = inside.copy()
    acc = np.zeros(x.shape)
    for dy, dx, wgt in ((0, 0, (1 - ax) * (1 - ay)), (0, 1, ax * (1 - ay)), (1, 0, (1 - ax) * ay), (1, 1, ax * ay)):
        tap_valid = valid[y0 + dy, x0 + dx]
        ok &= tap_valid | (wgt == 0)
        acc = acc + wgt * inv[y0 + dy, x0 + dx]
    ok &= acc > 0
    with np.errstate(divide="ignore"):
        return np.where(ok, 1.0 / acc, np.nan), ok


def consistency(
    ref: int, depths: Sequence[DepthMap], cams: Sequence[Camera], th: EvalThresholds
):
    """Per-source confirmation masks and source-side points for reference view ``ref``.

    Returns ``(pixels, ref_depth, confirms (S, n), points (S, n, 3))`` over the valid
    reference pixels, with ``S`` running over all other views in index order.
    """
    dm, cam = depths[ref], cams[ref]
    grid = pixel_grid(cam.width, cam.height)
    valid = dm.validity & np.isfinite(dm.depth) & (dm.depth > 0)
    q = grid[valid]
    d = dm.depth[valid]
    confirms, points = [], []
    for j, (dj, cj) in enumerate(zip(depths, cams)):
        if j == ref:
            continue
        xj, dt, front = transfer_points(q, d, cam, cj)
        vj = dj.validity & np.isfinite(dj.depth) & (dj.depth > 0)
        ds, ok = _sample_depth(dj.depth, vj, np.where(front[:, None], xj, np.nan))
        ds_safe = np.where(ok, ds, 1.0)
        qb, _, back_front = transfer_points(xj, ds_safe, cj, cam)
        reproj = np.linalg.norm(qb - q, axis=-1)
        with np.errstate(invalid="ignore"):
            good = ok & front & back_front & (reproj < th.max_reproj)
            good &= np.abs(ds_safe - dt) / dt < th.max_rel_depth
        confirms.append(good)
        pts = np.full((q.shape[0], 3), np.nan)
        if good.any():
            pts[good] = backproject(xj[good], ds_safe[good], cj)
        points.append(pts)
    return q, d, np.array(confirms), np.array(points)


def fuse(
    depths: Sequence[DepthMap],
    cams: Sequence[Camera],
    thresholds: EvalThresholds | None = None,
    images: Sequence[np.ndarray] | None = None,
) -> PointCloud:
    """Union over reference views of pixels confirmed by enough source views.

    Each accepted point is the mean of the reference back-projection and the
    back-projections from its confirming views.
    """
    th = thresholds or EvalThresholds()
    if len(depths) != len(cams) or len(depths) < 2:
        raise ValueError("need one camera per depth map and at least two views")
    out_pts, out_cols = [], []
    for r in range(len(depths)):
        q, d, conf, src_pts = consistency(r, depths, cams, th)
        if q.size == 0:
            continue
        n_conf = conf.sum(axis=0)
        keep = n_conf >= th.min_views
        if not keep.any():
            continue
        ref_pts = backproject(q[keep], d[keep], cams[r])
        total = ref_pts.copy()
        for s in range(conf.shape[0]):
            m = conf[s, keep]
            total[m] += src_pts[s, keep][m]
        out_pts.append(total / (1 + n_conf[keep])[:, None])
        if images is not None:
            img = np.asarray(images[r])
            pix = np.round(q[keep]).astype(int)
            col = img[pix[:, 1], pix[:, 0]]
            if col.ndim == 1:
                col = np.repeat(col[:, None], 3, axis=1)
            out_cols.append(col)
    if not out_pts:
        return PointCloud(np.empty((0, 3)), np.empty((0, 3), dtype=np.uint8) if images is not None else None)
    pts = np.concatenate(out_pts)
    cols = np.concatenate(out_cols) if images is not None else None
    return PointCloud(pts, cols)


def depth_to_cloud(depth: DepthMap, cam: Camera) -> PointCloud:
    valid = depth.validity & np.isfinite(depth.depth)
    grid = pixel_grid(cam.width, cam.height)
    return PointCloud(backproject(grid[valid], depth.depth[valid], cam))


def nearest_distances(query: np.ndarray, target: np.ndarray, cap: float) -> np.ndarray:
    """Distance from each query point to its nearest target point, clipped at ``cap``."""
    tree = cKDTree(target)
    dist, _ = tree.query(query, k=1, distance_upper_bound=cap)
    return np.minimum(dist, cap)


def cloud_accuracy_completeness(est: PointCloud, gt: PointCloud, dist_cap: float = 20.0):
    """``(accuracy, completeness, mean of both)``; lower is better."""
    if len(est) == 0 or len(gt) == 0:
        raise EmptyCloud("both clouds must be non-empty")
    acc = float(nearest_distances(est.points, gt.points, dist_cap).mean())
    comp = float(nearest_distances(gt.points, est.points, dist_cap).mean())
    return acc, comp, (acc + comp) / 2.0
