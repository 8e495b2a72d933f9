"""Ray-cast synthetic multi-view scenes with exact ground-truth depth.

Scenes are built from textured rectangles/planes and spheres. Texture is a seeded
3-D value noise evaluated at the surface point, so every view sees the same albedo
(Lambertian, fixed directional light). Everything is a pure function of the config
and seed: lattice values come from an integer hash, hint sampling draws from a
``SeedSequence`` keyed by ``(seed, stream, view)``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DegenerateScene, InvalidDensity
from .geometry import Camera, Extrinsics, Intrinsics, View, ViewSet, look_at, pixel_grid, pixel_rays
from .guidance import SparseDepthMap
from .inference import DepthMap

HINT_STREAM = 1
RIG_STREAM = 2
# unit vector from surfaces towards the light
TO_LIGHT = np.array([-0.3, -0.5, -0.8]) / np.linalg.norm([-0.3, -0.5, -0.8])
_EPS = 1e-9


@dataclass(frozen=True)
class Rect:
    """Rectangle (or infinite plane when half sizes are ``inf``) facing ``normal``."""

    center: tuple[float, float, float]
    normal: tuple[float, float, float] = (0.0, 0.0, -1.0)
    half_size: tuple[float, float] = (np.inf, np.inf)

    def axes(self):
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u = np.cross(helper, n)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        return n, u, v


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float


@dataclass(frozen=True)
class SceneConfig:
    rects: tuple[Rect, ...] = ()
    spheres: tuple[Sphere, ...] = ()
    num_views: int = 5
    rig: str = "arc"  # arc | lateral | random
    baseline: float = 2.0
    target_depth: float = 10.0
    width: int = 160
    height: int = 128
    focal: float = 150.0
    texture_seed: int = 0
    texture_frequency: float = 2.0
    hint_noise: float = 0.0
    range_margin: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "rects", tuple(self.rects))
        object.__setattr__(self, "spheres", tuple(self.spheres))
        if self.num_views < 2:
            raise ValueError("a scene needs at least two views")
        if self.rig not in ("arc", "lateral", "random"):
            raise ValueError(f"unknown rig {self.rig!r}")
        if not self.rects and not self.spheres:
            raise ValueError("a scene needs at least one primitive")
        if self.width < 2 or self.height < 2:
            raise ValueError("image must be at least 2x2")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    depths: tuple[DepthMap, ...]
    images: tuple[np.ndarray, ...]
    cameras: tuple[Camera, ...]
    primitive_ids: tuple[np.ndarray, ...] = ()


# --- procedural texture -------------------------------------------------------


def _mix(h: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser on uint64 arrays."""
    with np.errstate(over="ignore"):
        h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return h ^ (h >> np.uint64(31))


def _lattice(ix, iy, iz, key: int) -> np.ndarray:
    """Uniform [0, 1) value attached to each integer lattice point."""
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(key) + np.uint64(0x9E3779B97F4A7C15))
        for c in (ix, iy, iz):
            h = _mix(h ^ c.astype(np.int64).view(np.uint64))
    return (h >> np.uint64(11)).astype(float) / float(1 << 53)


def value_noise(points: np.ndarray, frequency: float, key: int) -> np.ndarray:
    """Smooth trilinear value noise in [0, 1] at ``points`` (..., 3)."""
    q = np.asarray(points, dtype=float) * frequency
    i = np.floor(q)
    f = q - i
    f = f * f * (3.0 - 2.0 * f)
    i = i.astype(np.int64)
    out = np.zeros(q.shape[:-1])
    for dx in (0, 1):
        wx = f[..., 0] if dx else 1.0 - f[..., 0]
        for dy in (0, 1):
            wy = f[..., 1] if dy else 1.0 - f[..., 1]
            for dz in (0, 1):
                wz = f[..., 2] if dz else 1.0 - f[..., 2]
                out += wx * wy * wz * _lattice(i[..., 0] + dx, i[..., 1] + dy, i[..., 2] + dz, key)
    return out


def albedo(points: np.ndarray, frequency: float, key: int) -> np.ndarray:
    """Textured albedo whose contrast itself varies slowly over the surface."""
    detail = (
        0.6 * value_noise(points, frequency, key)
        + 0.3 * value_noise(points, 2.1 * frequency, key + 1)
        + 0.1 * value_noise(points, 4.3 * frequency, key + 2)
    )
    contrast = 0.02 + 0.98 * value_noise(points, 0.25 * frequency, key + 3)
    return np.clip(0.5 + contrast * (detail - 0.5) * 1.6, 0.0, 1.0)


# --- ray casting ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Scene:
    rects: tuple[Rect, ...]
    spheres: tuple[Sphere, ...]
    texture_key: int
    texture_frequency: float = 2.0

    def cast(self, cam: Camera, pixels: np.ndarray):
        """Nearest hit along each pixel ray.

        Returns ``(depth, normal, primitive_id)``; depth is NaN and id -1 on a miss.
        Rays are parametrised so the ray parameter equals camera-frame depth.
        """
        R = cam.extrinsics.rotation
        origin = cam.extrinsics.center
        d = pixel_rays(pixels, cam.intrinsics) @ R  # world direction, unit camera z
        shape = d.shape[:-1]
        best = np.full(shape, np.inf)
        normal = np.zeros(shape + (3,))
        pid = np.full(shape, -1, dtype=np.int64)
        for k, rect in enumerate(self.rects):
            n, u, v = rect.axes()
            c = np.asarray(rect.center, dtype=float)
            denom = d @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                t = ((c - origin) @ n) / denom
            hit = origin + t[..., None] * d
            rel = hit - c
            ok = (np.abs(denom) > _EPS) & (t > _EPS)
            ok &= np.abs(rel @ u) <= rect.half_size[0]
            ok &= np.abs(rel @ v) <= rect.half_size[1]
            closer = ok & (t < best)
            best = np.where(closer, t, best)
            facing = np.where((denom < 0)[..., None], n, -n)
            normal = np.where(closer[..., None], facing, normal)
            pid = np.where(closer, k, pid)
        for k, sph in enumerate(self.spheres, start=len(self.rects)):
            s = np.asarray(sph.center, dtype=float)
            oc = origin - s
            a = np.einsum("...i,...i->...", d, d)
            b = 2.0 * (d @ oc)
            cc = oc @ oc - sph.radius**2
            disc = b * b - 4 * a * cc
            with np.errstate(invalid="ignore"):
                root = np.sqrt(disc)
                t0 = (-b - root) / (2 * a)
                t1 = (-b + root) / (2 * a)
            t = np.where(t0 > _EPS, t0, t1)
            ok = (disc >= 0) & (t > _EPS)
            closer = ok & (t < best)
            best = np.where(closer, t, best)
            hit = origin + t[..., None] * d
            nrm = (hit - s) / sph.radius
            normal = np.where(closer[..., None], nrm, normal)
            pid = np.where(closer, k, pid)
        depth = np.where(np.isfinite(best), best, np.nan)
        return depth, normal, pid

    def render(self, cam: Camera):
        """Ray-cast one view: ``(uint8 image, depth with NaN background, primitive ids)``."""
        pix = pixel_grid(cam.width, cam.height)
        depth, normal, pid = self.cast(cam, pix)
        hit = np.isfinite(depth)
        pts = cam.extrinsics.inverse().apply(pixel_rays(pix, cam.intrinsics) * np.where(hit, depth, 1.0)[..., None])
        alb = albedo(pts, self.texture_frequency, self.texture_key)
        shade = 0.35 + 0.65 * np.clip(normal @ TO_LIGHT, 0.0, 1.0)
        img = np.where(hit, alb * shade, 0.08)
        return np.round(np.clip(img, 0, 1) * 255).astype(np.uint8), depth, pid


def _texture_key(cfg: SceneConfig, seed: int) -> int:
    ss = np.random.SeedSequence([cfg.texture_seed, seed])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_rig(cfg: SceneConfig, seed: int = 0) -> list[Camera]:
    """Reference camera at the origin looking down +z, sources around it."""
    K = Intrinsics(cfg.focal, cfg.focal, (cfg.width - 1) / 2, (cfg.height - 1) / 2, cfg.width, cfg.height)
    cams = [Camera(K, Extrinsics.identity())]
    target = np.array([0.0, 0.0, cfg.target_depth])
    n = cfg.num_views - 1
    if cfg.rig == "arc":
        # alternate sides, growing outward; slight alternating elevation
        for j in range(n):
            side = 1 if j % 2 == 0 else -1
            step = (j // 2 + 1) / ((n + 1) // 2)
            ang = side * step * np.arctan2(cfg.baseline, cfg.target_depth)
            elev = (0.25 if j % 4 < 2 else -0.25) * cfg.baseline
            pos = np.array([cfg.target_depth * np.sin(ang), elev, cfg.target_depth * (1 - np.cos(ang))])
            cams.append(Camera(K, look_at(pos, target)))
    elif cfg.rig == "lateral":
        for j in range(n):
            side = 1 if j % 2 == 0 else -1
            step = (j // 2 + 1) / ((n + 1) // 2)
            pos = np.array([side * step * cfg.baseline, 0.0, 0.0])
            if j >= 2:
                pos[1] = (0.5 if j % 2 == 0 else -0.5) * cfg.baseline * step
            cams.append(Camera(K, Extrinsics(np.eye(3), -pos)))
    else:
        rng = np.random.default_rng(np.random.SeedSequence([seed, RIG_STREAM]))
        for _ in range(n):
            direction = rng.normal(size=3)
            direction[2] = 0.0
            direction /= np.linalg.norm(direction)
            radius = cfg.baseline * rng.uniform(0.4, 1.0)
            pos = direction * radius
            cams.append(Camera(K, look_at(pos, target)))
    return cams


def generate_scene(cfg: SceneConfig, seed: int = 0) -> tuple[ViewSet, GroundTruth]:
    """Render all views; view 0 is the reference, the rest are sources in rig order."""
    scene = Scene(cfg.rects, cfg.spheres, _texture_key(cfg, seed), cfg.texture_frequency)
    cams = make_rig(cfg, seed)
    images, depths, ids = [], [], []
    for i, cam in enumerate(cams):
        img, depth, pid = scene.render(cam)
        if not np.isfinite(depth).any():
            raise DegenerateScene(f"view {i} sees no primitive")
        images.append(img)
        depths.append(DepthMap.from_depth(depth))
        ids.append(pid)
    ref_depth = depths[0].depth
    lo, hi = np.nanmin(ref_depth), np.nanmax(ref_depth)
    span = hi - lo
    z_range = (max(lo - cfg.range_margin * span, 0.5 * lo), hi + cfg.range_margin * span)
    views = [View(c, im) for c, im in zip(cams, images)]
    vs = ViewSet(views[0], tuple(views[1:]), z_range)
    return vs, GroundTruth(tuple(depths), tuple(images), tuple(cams), tuple(ids))


def scene_of(cfg: SceneConfig, seed: int = 0) -> Scene:
    return Scene(cfg.rects, cfg.spheres, _texture_key(cfg, seed), cfg.texture_frequency)


def view_set_for(gt: GroundTruth, ref: int, sources: list[int] | None = None, depth_range=None) -> ViewSet:
    """Re-root a generated scene at another reference view."""
    if sources is None:
        sources = [i for i in range(len(gt.cameras)) if i != ref]
    views = [View(gt.cameras[i], gt.images[i]) for i in [ref] + list(sources)]
    if depth_range is None:
        d = gt.depths[ref].depth
        lo, hi = np.nanmin(d), np.nanmax(d)
        span = hi - lo
        depth_range = (max(lo - 0.1 * span, 0.5 * lo), hi + 0.1 * span)
    return ViewSet(views[0], tuple(views[1:]), depth_range)


def sample_hints(
    gt: GroundTruth, view: int, density: float, seed: int = 0, noise: float = 0.0
) -> SparseDepthMap:
    """Uniform random subset of ``round(density * valid)`` valid GT pixels."""
    if not 0 < density <= 1:
        raise InvalidDensity(f"density must lie in (0, 1], got {density}")
    dm = gt.depths[view]
    valid = np.flatnonzero(dm.validity.ravel())
    count = int(np.floor(density * valid.size + 0.5))
    rng = np.random.default_rng(np.random.SeedSequence([seed, HINT_STREAM, view]))
    chosen = np.sort(rng.choice(valid, size=count, replace=False))
    mask = np.zeros(dm.depth.size, dtype=bool)
    mask[chosen] = True
    depth = np.zeros(dm.depth.size)
    depth[chosen] = dm.depth.ravel()[chosen]
    if noise > 0:
        depth[chosen] += rng.normal(scale=noise, size=count)
        depth[chosen] = np.maximum(depth[chosen], 1e-6)
    shape = dm.depth.shape
    return SparseDepthMap(depth.reshape(shape), mask.reshape(shape))


def sample_all_hints(gt: GroundTruth, density: float, seed: int = 0, noise: float = 0.0) -> list[SparseDepthMap]:
    return [sample_hints(gt, i, density, seed, noise) for i in range(len(gt.depths))]


# --- preset scene families -----------------------------------------------------


def standard_scene(seed: int = 0, **overrides) -> SceneConfig:
    """Occlusion-bearing scene: tilted backdrop, a foreground panel and a sphere.

    Layout is jittered by ``seed``; the textures are keyed by ``seed`` as well.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    back_z = rng.uniform(14.0, 16.0)
    tilt = rng.uniform(-0.25, 0.25, size=2)
    panel = Rect(
        (rng.uniform(-2.0, 0.0), rng.uniform(-1.5, 0.5), rng.uniform(5.5, 7.0)),
        (rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), -1.0),
        (rng.uniform(1.2, 1.8), rng.uniform(1.0, 1.5)),
    )
    ball = Sphere((rng.uniform(1.2, 2.5), rng.uniform(-0.5, 1.5), rng.uniform(9.0, 10.5)), rng.uniform(1.0, 1.5))
    cfg = SceneConfig(
        rects=(Rect((0.0, 0.0, back_z), (tilt[0], tilt[1], -1.0)), panel),
        spheres=(ball,),
        texture_seed=seed,
    )
    return replace(cfg, **overrides)


def two_plane_scene(seed: int = 0, fg_depth: float = 5.0, bg_depth: float = 20.0, **overrides) -> SceneConfig:
    """Foreground panel in front of a fronto-parallel backdrop, lateral rig."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 8]))
    half = rng.uniform(0.8, 1.3, size=2)
    center = (rng.uniform(-0.8, 0.8), rng.uniform(-0.6, 0.6), fg_depth)
    cfg = SceneConfig(
        rects=(Rect((0.0, 0.0, bg_depth)), Rect(center, (0.0, 0.0, -1.0), tuple(half))),
        rig="lateral",
        baseline=1.0,
        target_depth=bg_depth,
        texture_seed=seed,
    )
    return replace(cfg, **overrides)


def plane_scene(depth: float = 8.0, **overrides) -> SceneConfig:
    """Single fronto-parallel backdrop."""
    cfg = SceneConfig(rects=(Rect((0.0, 0.0, depth)),), rig="lateral", baseline=0.8, target_depth=depth)
    return replace(cfg, **overrides)


# --- config files ---------------------------------------------------------------


def _floats(text: str, n: int, where: str) -> tuple[float, ...]:
    parts = text.split()
    if len(parts) != n:
        raise ValueError(f"{where}: expected {n} numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def read_scene_config(path) -> SceneConfig:
    """Parse an INI-style key-value scene file.

    ``[scene]`` holds scalar settings; each ``[rect ...]`` / ``[sphere ...]`` section
    adds one primitive.
    """
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    if "scene" not in cp:
        raise ValueError(f"{path}: missing [scene] section")
    sc = cp["scene"]
    known = {f for f in SceneConfig.__dataclass_fields__ if f not in ("rects", "spheres")}
    kwargs = {}
    for key, raw in sc.items():
        if key not in known:
            raise ValueError(f"{path}: unknown scene key {key!r}")
        ftype = type(getattr(SceneConfig, key, None)) if hasattr(SceneConfig, key) else str
        kwargs[key] = ftype(raw) if ftype in (int, float) else raw
    rects, spheres = [], []
    for name in cp.sections():
        sec = cp[name]
        kind = name.split()[0]
        if kind == "rect":
            rects.append(
                Rect(
                    _floats(sec["center"], 3, name),
                    _floats(sec.get("normal", "0 0 -1"), 3, name),
                    _floats(sec.get("half_size", "inf inf"), 2, name),
                )
            )
        elif kind == "sphere":
            spheres.append(Sphere(_floats(sec["center"], 3, name), float(sec["radius"])))
        elif kind != "scene":
            raise ValueError(f"{path}: unknown section [{name}]")
    return SceneConfig(rects=tuple(rects), spheres=tuple(spheres), **kwargs)


def write_scene_config(cfg: SceneConfig, path) -> None:
    cp = configparser.ConfigParser()
    cp["scene"] = {
        k: str(getattr(cfg, k))
        for k in SceneConfig.__dataclass_fields__
        if k not in ("rects", "spheres")
    }
    fmt = lambda xs: " ".join(repr(float(x)) for x in xs)  # noqa: E731
    for i, r in enumerate(cfg.rects):
        cp[f"rect {i}"] = {"center": fmt(r.center), "normal": fmt(r.normal), "half_size": fmt(r.half_size)}
    for i, s in enumerate(cfg.spheres):
        cp[f"sphere {i}"] = {"center": fmt(s.center), "radius": repr(float(s.radius))}
    with open(Path(path), "w") as fh:
        cp.write(fh)
