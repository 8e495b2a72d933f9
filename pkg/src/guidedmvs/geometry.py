"""Pinhole cameras, projection, cross-view transfer and plane-sweep warping.

Conventions used everywhere in the package:

* extrinsics map world points into the camera frame (``p_cam = R @ p_world + t``);
* pixel ``(0, 0)`` is the centre of the top-left pixel, ``x`` grows to the right;
* depth is the camera-frame ``z`` coordinate, not the ray length.

Array-valued functions broadcast over leading dimensions: pixels are ``(..., 2)``,
points ``(..., 3)``, depths ``(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonIntegerResolution, NonPositiveDepth

ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @classmethod
    def from_matrix(cls, K: np.ndarray, width: int, height: int) -> "Intrinsics":
        K = np.asarray(K, dtype=float)
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]), int(width), int(height))

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Extrinsics:
    """World-to-camera rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _readonly(self.rotation).reshape(3, 3)
        t = _readonly(self.translation).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if not np.allclose(R @ R.T, np.eye(3), rtol=0, atol=ORTHO_TOL):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, E: np.ndarray) -> "Extrinsics":
        E = np.asarray(E, dtype=float)
        return cls(E[:3, :3], E[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        E = np.eye(4)
        E[:3, :3] = self.rotation
        E[:3, 3] = self.translation
        return E

    def inverse(self) -> "Extrinsics":
        Rt = self.rotation.T
        return Extrinsics(Rt, -Rt @ self.translation)

    def compose(self, other: "Extrinsics") -> "Extrinsics":
        """``self ∘ other``: apply ``other`` first."""
        return Extrinsics(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.rotation.T @ self.translation

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation


@dataclass(frozen=True, eq=False)
class Camera:
    intrinsics: Intrinsics
    extrinsics: Extrinsics = field(default_factory=Extrinsics.identity)

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    def scaled(self, s: float) -> "Camera":
        return Camera(scale_intrinsics(self.intrinsics, s), self.extrinsics)


def look_at(center, target, up=(0.0, -1.0, 0.0)) -> Extrinsics:
    """World-to-camera transform of a camera at ``center`` looking at ``target``.

    ``up`` is the world direction that should appear towards the top of the image
    (image ``y`` grows downward, so the default ``-y`` keeps world ``+y`` pointing down).
    """
    center = np.asarray(center, dtype=float)
    z = np.asarray(target, dtype=float) - center
    z /= np.linalg.norm(z)
    x = np.cross(-np.asarray(up, dtype=float), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    # re-orthonormalise to clear rounding before the strict check
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return Extrinsics(R, -R @ center)


def project_cam_points(points_cam: np.ndarray, K: Intrinsics):
    z = points_cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * points_cam[..., 0] / z + K.cx
        v = K.fy * points_cam[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1), z


def pixel_rays(pixels: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Camera-frame directions with unit ``z`` through ``pixels``."""
    pixels = np.asarray(pixels, dtype=float)
    x = (pixels[..., 0] - K.cx) / K.fx
    y = (pixels[..., 1] - K.cy) / K.fy
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def project(point, cam: Camera):
    """Project world point(s); returns ``(pixels, depths)``.

    Raises NonPositiveDepth when any point is at or behind the camera plane.
    """
    p = cam.extrinsics.apply(point)
    if np.any(p[..., 2] <= 0):
        raise NonPositiveDepth("point at or behind the camera plane")
    return project_cam_points(p, cam.intrinsics)


def backproject(pixel, depth, cam: Camera) -> np.ndarray:
    depth = np.asarray(depth, dtype=float)
    if np.any(depth <= 0):
        raise NonPositiveDepth("depth must be positive")
    p_cam = pixel_rays(pixel, cam.intrinsics) * depth[..., None]
    return cam.extrinsics.inverse().apply(p_cam)


def relative_pose(cam_from: Camera, cam_to: Camera) -> tuple[np.ndarray, np.ndarray]:
    """``(R, t)`` taking camera-frame points of ``cam_from`` into ``cam_to``'s frame."""
    rel = cam_to.extrinsics.compose(cam_from.extrinsics.inverse())
    return rel.rotation, rel.translation


def transfer_points(pixels, depths, cam_i: Camera, cam_0: Camera):
    """Vectorised transfer without raising.

    Returns ``(pixels_0, depths_0, ok)`` where ``ok`` is false for points that land at
    or behind ``cam_0``.
    """
    R, t = relative_pose(cam_i, cam_0)
    p_i = pixel_rays(pixels, cam_i.intrinsics) * np.asarray(depths, dtype=float)[..., None]
    p_0 = p_i @ R.T + t
    q0, d0 = project_cam_points(p_0, cam_0.intrinsics)
    return q0, d0, d0 > 0


def in_bounds(pixels, width: int, height: int) -> np.ndarray:
    """True where the nearest pixel of ``pixels`` lies inside the image."""
    pixels = np.asarray(pixels)
    x, y = pixels[..., 0], pixels[..., 1]
    return (x >= -0.5) & (x < width - 0.5) & (y >= -0.5) & (y < height - 0.5)


def transfer_point(q_i, d, cam_i: Camera, cam_0: Camera):
    """Move pixel ``q_i`` at depth ``d`` from view ``i`` into the reference view.

    Returns ``(q_0, d_0, visible)``; ``visible`` flags whether ``q_0`` falls inside the
    reference image. Raises NonPositiveDepth when ``d <= 0`` or the point lands behind
    the reference camera.
    """
    if np.any(np.asarray(d) <= 0):
        raise NonPositiveDepth("depth must be positive")
    q0, d0, ok = transfer_points(q_i, d, cam_i, cam_0)
    if not np.all(ok):
        raise NonPositiveDepth("point lands behind the reference camera")
    return q0, d0, in_bounds(q0, cam_0.width, cam_0.height)


def sweep_warp_coords(q_0, z, cam_0: Camera, cam_i: Camera):
    """Source-image coordinates seen by reference pixel ``q_0`` on the plane at depth ``z``.

    ``q_0`` is ``(..., 2)`` and ``z`` broadcasts against ``q_0[..., 0]``. Returns
    ``(coords, behind)`` where ``behind`` marks swept points with non-positive source
    depth; their coordinates are NaN.
    """
    R, t = relative_pose(cam_0, cam_i)
    H = cam_i.intrinsics.matrix @ R @ cam_0.intrinsics.inverse_matrix
    Kt = cam_i.intrinsics.matrix @ t
    q_0 = np.asarray(q_0, dtype=float)
    z = np.asarray(z, dtype=float)
    # K_i (R K_0^-1 q z + t) = z * (H q) + K_i t
    hq = q_0[..., 0, None] * H[:, 0] + q_0[..., 1, None] * H[:, 1] + H[:, 2]
    shape = np.broadcast_shapes(hq.shape[:-1], z.shape)
    hq = np.broadcast_to(hq, shape + (3,))
    w = z * hq[..., 2] + Kt[2]
    behind = w <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (z * hq[..., 0] + Kt[0]) / w
        v = (z * hq[..., 1] + Kt[1]) / w
    coords = np.stack([u, v], axis=-1)
    coords[behind] = np.nan
    return coords, behind


def plane_homography(z: float, cam_0: Camera, cam_i: Camera) -> np.ndarray:
    """Homography induced by the fronto-parallel reference plane ``n·p = z``, ``n = e_z``."""
    R, t = relative_pose(cam_0, cam_i)
    n = np.array([0.0, 0.0, 1.0])
    return cam_i.intrinsics.matrix @ (R + np.outer(t, n) / z) @ cam_0.intrinsics.inverse_matrix


def scale_intrinsics(K: Intrinsics, s: float) -> Intrinsics:
    if not 0 < s <= 1:
        raise ValueError(f"scale must lie in (0, 1], got {s}")
    w, h = s * K.width, s * K.height
    if abs(w - round(w)) > 1e-9 or abs(h - round(h)) > 1e-9 or round(w) < 1 or round(h) < 1:
        raise NonIntegerResolution(f"{K.width}x{K.height} at scale {s} gives {w}x{h}")
    return Intrinsics(K.fx * s, K.fy * s, K.cx * s, K.cy * s, int(round(w)), int(round(h)))


def pixel_grid(width: int, height: int) -> np.ndarray:
    """``(H, W, 2)`` array of pixel-centre coordinates ``(x, y)``."""
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    return np.stack([xs, ys], axis=-1)


@dataclass(frozen=True, eq=False)
class View:
    camera: Camera
    image: np.ndarray

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.shape[:2] != self.camera.intrinsics.shape:
            raise ValueError(
                f"image shape {img.shape[:2]} does not match camera {self.camera.intrinsics.shape}"
            )


@dataclass(frozen=True, eq=False)
class ViewSet:
    """Reference view plus ordered source views.

    ``depth_range`` is the ``(z_min, z_max)`` sweep range when known (from camera
    files or the scene generator).
    """

    reference: View
    sources: tuple[View, ...]
    depth_range: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if len(self.sources) < 1:
            raise ValueError("a view set needs at least one source view")
        ref = np.asarray(self.reference.image)
        for v in self.sources:
            img = np.asarray(v.image)
            if img.dtype != ref.dtype or img.ndim != ref.ndim or img.shape[2:] != ref.shape[2:]:
                raise ValueError("all images in a view set must share one pixel format")

    @property
    def views(self) -> tuple[View, ...]:
        return (self.reference,) + self.sources

    @property
    def cameras(self) -> list[Camera]:
        return [v.camera for v in self.views]

    def __len__(self) -> int:
        return 1 + len(self.sources)
