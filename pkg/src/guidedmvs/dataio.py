"""On-disk formats: camera text files, PFM depth, sparse hint text, PLY clouds, scene folders.

Scene folder layout::

    <scene>/images/00000000.png    8-bit PNG or PPM
    <scene>/cams/00000000_cam.txt  extrinsic / intrinsic / depth-range block
    <scene>/depths/00000000.pfm    optional ground truth (NaN = invalid)
    <scene>/hints/00000000.txt     optional sparse hints
    <scene>/pair.txt               per-reference ordered source lists

View indices follow the lexicographic order of the image file names.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import NonOrthonormalRotation, OutOfBoundsHint, ParseError, UnsupportedPFMVariant
from .geometry import Camera, Extrinsics, Intrinsics, View, ViewSet
from .guidance import SparseDepthMap
from .inference import DepthMap

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")


# --- cameras --------------------------------------------------------------------


@dataclass(frozen=True)
class DepthRangeMeta:
    z_min: float
    z_interval: float
    z_count: int
    z_max: float


def _numbers(line: str, n: int, path, lineno: int) -> list[float]:
    parts = line.split()
    if len(parts) != n:
        raise ParseError(f"expected {n} numbers, found {len(parts)}", path, lineno)
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ParseError(f"not a number: {exc}", path, lineno) from None


def read_camera(path, size: tuple[int, int] | None = None) -> tuple[Camera, DepthRangeMeta]:
    """Parse a camera file.

    ``size`` is the ``(width, height)`` of the matching image. Without it the size is
    taken as ``(2*cx + 1, 2*cy + 1)`` rounded up, which fits centred principal points.
    """
    text = Path(path).read_text().splitlines()
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text) if ln.strip()]
    pos = 0

    def expect(keyword: str) -> None:
        nonlocal pos
        if pos >= len(lines) or lines[pos][1].lower() != keyword:
            lineno = lines[pos][0] if pos < len(lines) else len(text) + 1
            raise ParseError(f"expected '{keyword}'", path, lineno)
        pos += 1

    def rows(n: int, m: int) -> np.ndarray:
        nonlocal pos
        out = []
        for _ in range(n):
            if pos >= len(lines):
                raise ParseError("file truncated inside a matrix", path, len(text) + 1)
            lineno, ln = lines[pos]
            out.append(_numbers(ln, m, path, lineno))
            pos += 1
        return np.array(out)

    expect("extrinsic")
    E = rows(4, 4)
    expect("intrinsic")
    K = rows(3, 3)
    if pos >= len(lines):
        raise ParseError("missing depth range line", path, len(text) + 1)
    lineno, ln = lines[pos]
    parts = ln.split()
    if len(parts) != 4:
        raise ParseError("depth range line needs 'z_min z_interval z_count z_max'", path, lineno)
    z_min, z_int, z_cnt, z_max = _numbers(ln, 4, path, lineno)
    if pos + 1 != len(lines):
        raise ParseError("trailing content after depth range", path, lines[pos + 1][0])

    R = E[:3, :3]
    if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1) > 1e-6:
        raise NonOrthonormalRotation("rotation is not orthonormal to 1e-6", path)
    # project onto SO(3) to absorb text rounding
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    if size is None:
        size = (int(np.ceil(2 * K[0, 2] + 1)), int(np.ceil(2 * K[1, 2] + 1)))
    cam = Camera(Intrinsics.from_matrix(K, *size), Extrinsics(R, E[:3, 3]))
    return cam, DepthRangeMeta(z_min, z_int, int(round(z_cnt)), z_max)


def write_camera(path, cam: Camera, meta: DepthRangeMeta) -> None:
    fmt = lambda row: " ".join(repr(float(v)) for v in row)  # noqa: E731
    out = ["extrinsic"]
    out += [fmt(r) for r in cam.extrinsics.matrix]
    out += ["", "intrinsic"]
    out += [fmt(r) for r in cam.intrinsics.matrix]
    out += ["", f"{meta.z_min!r} {meta.z_interval!r} {meta.z_count} {meta.z_max!r}"]
    Path(path).write_text("\n".join(out) + "\n")


# --- PFM ------------------------------------------------------------------------


def write_pfm(path, data: np.ndarray) -> None:
    """Grayscale little-endian PFM, rows stored bottom to top."""
    data = np.asarray(data, dtype="<f4")
    if data.ndim != 2:
        raise ValueError("only single-channel maps are supported")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.flipud(data).tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM; big-endian files are byte-swapped."""
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header == b"PF":
            raise UnsupportedPFMVariant("colour PFM ('PF') is not supported", path, 1)
        if header != b"Pf":
            raise ParseError(f"bad PFM magic {header!r}", path, 1)
        dims = fh.readline().split()
        if len(dims) != 2:
            raise ParseError("expected 'width height'", path, 2)
        try:
            w, h = int(dims[0]), int(dims[1])
            scale = float(fh.readline().strip())
        except ValueError:
            raise ParseError("malformed PFM header", path, 3) from None
        if w <= 0 or h <= 0 or scale == 0:
            raise ParseError("malformed PFM header", path, 3)
        payload = fh.read()
    need = 4 * w * h
    if len(payload) < need:
        raise ParseError(f"truncated PFM payload: {len(payload)} of {need} bytes", path)
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload[:need], dtype=dtype).reshape(h, w)
    return np.flipud(data).astype(np.float32)


def write_depth(path, depth: DepthMap) -> None:
    write_pfm(path, np.where(depth.validity, depth.depth, np.nan))


def read_depth(path) -> DepthMap:
    return DepthMap.from_depth(read_pfm(path).astype(float))


# --- hints ----------------------------------------------------------------------


def write_hints(path, hints: SparseDepthMap) -> None:
    ys, xs = np.nonzero(hints.mask)
    lines = [f"{hints.width} {hints.height} {xs.size}"]
    lines += [f"{x} {y} {hints.depth[y, x]:.9g}" for x, y in zip(xs, ys)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_hints(path) -> SparseDepthMap:
    text = Path(path).read_text().splitlines()
    if not text:
        raise ParseError("empty hint file", path, 1)
    head = text[0].split()
    if len(head) != 3:
        raise ParseError("header must be 'width height count'", path, 1)
    try:
        w, h, n = (int(v) for v in head)
    except ValueError:
        raise ParseError("header must hold integers", path, 1) from None
    body = [(i + 2, ln) for i, ln in enumerate(text[1:]) if ln.strip()]
    if len(body) != n:
        raise ParseError(f"header announces {n} hints, found {len(body)}", path)
    depth = np.zeros((h, w))
    mask = np.zeros((h, w), dtype=bool)
    for lineno, ln in body:
        parts = ln.split()
        if len(parts) != 3:
            raise ParseError("expected 'x y depth'", path, lineno)
        try:
            x, y, d = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError("malformed hint line", path, lineno) from None
        if not (0 <= x < w and 0 <= y < h):
            raise OutOfBoundsHint(f"hint at ({x}, {y}) outside {w}x{h}", path, lineno)
        if not d > 0:
            raise ParseError("hint depth must be positive", path, lineno)
        if mask[y, x]:
            raise ParseError(f"duplicate hint at ({x}, {y})", path, lineno)
        depth[y, x] = d
        mask[y, x] = True
    return SparseDepthMap(depth, mask)


# --- PLY ------------------------------------------------------------------------


def write_ply(path, points: np.ndarray, colors: np.ndarray | None = None) -> None:
    """Binary little-endian PLY with float32 positions and optional uchar RGB."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.empty(pts.shape[0], dtype=fields)
    rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {pts.shape[0]}"]
    header += ["property float x", "property float y", "property float z"]
    if colors is not None:
        col = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
        rec["red"], rec["green"], rec["blue"] = col[:, 0], col[:, 1], col[:, 2]
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


_PLY_TYPES = {"float": "<f4", "float32": "<f4", "double": "<f8", "uchar": "u1", "uint8": "u1"}


def read_ply(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read the vertex block written by :func:`write_ply`."""
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ParseError("not a PLY file", path, 1)
        n, props, lineno = None, [], 1
        while True:
            ln = fh.readline()
            lineno += 1
            if not ln:
                raise ParseError("truncated PLY header", path, lineno)
            tok = ln.decode("ascii").split()
            if not tok:
                continue
            if tok[0] == "format" and tok[1] != "binary_little_endian":
                raise ParseError(f"unsupported PLY format {tok[1]}", path, lineno)
            if tok[0] == "element" and tok[1] == "vertex":
                n = int(tok[2])
            elif tok[0] == "property":
                if tok[1] not in _PLY_TYPES:
                    raise ParseError(f"unsupported property type {tok[1]}", path, lineno)
                props.append((tok[2], _PLY_TYPES[tok[1]]))
            elif tok[0] == "end_header":
                break
        if n is None:
            raise ParseError("no vertex element", path)
        dtype = np.dtype(props)
        payload = fh.read(dtype.itemsize * n)
    if len(payload) < dtype.itemsize * n:
        raise ParseError("truncated PLY payload", path)
    rec = np.frombuffer(payload, dtype=dtype, count=n)
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=-1).astype(float)
    cols = None
    if "red" in dtype.names:
        cols = np.stack([rec["red"], rec["green"], rec["blue"]], axis=-1)
    return pts, cols


# --- pair lists -----------------------------------------------------------------


def write_pairs(path, pairs: Sequence[Sequence[int]]) -> None:
    lines = [str(len(pairs))]
    for ref, srcs in enumerate(pairs):
        lines.append(str(ref))
        lines.append(" ".join([str(len(srcs))] + [f"{s} 1.0" for s in srcs]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_pairs(path, num_views: int | None = None) -> list[list[int]]:
    """MVS-style pair list: count, then per view its index and ``n id score ...``."""
    tokens = Path(path).read_text().split()
    try:
        pos = 0
        count = int(tokens[pos])
        pos += 1
        pairs: list[list[int]] = [[] for _ in range(count)]
        for _ in range(count):
            ref = int(tokens[pos])
            n = int(tokens[pos + 1])
            ids = [int(tokens[pos + 2 + 2 * k]) for k in range(n)]
            pos += 2 + 2 * n
            pairs[ref] = ids
    except (IndexError, ValueError):
        raise ParseError("malformed or truncated pair list", path) from None
    limit = num_views if num_views is not None else count
    for ref, ids in enumerate(pairs):
        if any(not 0 <= i < limit or i == ref for i in ids):
            raise ParseError(f"pair list for view {ref} references an invalid index", path)
    return pairs


# --- images and scene folders ---------------------------------------------------


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im).copy()


def write_image(path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)


def _stem_index(p: Path) -> str:
    return re.sub(r"_cam$", "", p.stem)


@dataclass
class SceneFolder:
    """A scene loaded from disk."""

    root: Path
    names: list[str]
    cameras: list[Camera]
    meta: list[DepthRangeMeta]
    images: list[np.ndarray]
    pairs: list[list[int]]
    depths: list[DepthMap] | None = None
    hints: list[SparseDepthMap] | None = None
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.names)

    def view_set(self, ref: int, max_sources: int | None = None) -> ViewSet:
        srcs = self.pairs[ref][: max_sources or None]
        views = [View(self.cameras[i], self.images[i]) for i in [ref] + srcs]
        m = self.meta[ref]
        return ViewSet(views[0], tuple(views[1:]), (m.z_min, m.z_max))


def load_scene(root) -> SceneFolder:
    root = Path(root)
    img_dir = root / "images"
    if not img_dir.is_dir():
        raise ParseError("missing images/ directory", root)
    image_files = sorted(p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not image_files:
        raise ParseError("no images found", img_dir)
    names = [p.stem for p in image_files]
    images = [read_image(p) for p in image_files]
    cams, meta = [], []
    for name, img in zip(names, images):
        cpath = root / "cams" / f"{name}_cam.txt"
        if not cpath.exists():
            raise ParseError(f"missing camera file for view {name}", cpath)
        cam, m = read_camera(cpath, (img.shape[1], img.shape[0]))
        cams.append(cam)
        meta.append(m)
    pair_path = root / "pair.txt"
    if pair_path.exists():
        pairs = read_pairs(pair_path, len(names))
        if len(pairs) != len(names):
            raise ParseError("pair list size differs from view count", pair_path)
    else:
        pairs = [[j for j in range(len(names)) if j != i] for i in range(len(names))]
    depths = None
    if (root / "depths").is_dir():
        depths = [read_depth(root / "depths" / f"{n}.pfm") for n in names]
    hints = None
    if (root / "hints").is_dir():
        hints = [read_hints(root / "hints" / f"{n}.txt") for n in names]
        for h, img in zip(hints, images):
            if h.depth.shape != img.shape[:2]:
                raise ParseError("hint map resolution differs from its image", root / "hints")
    return SceneFolder(root, names, cams, meta, images, pairs, depths, hints)


def view_name(i: int) -> str:
    return f"{i:08d}"


def write_scene(
    root,
    cameras: Sequence[Camera],
    images: Sequence[np.ndarray],
    ranges: Sequence[DepthRangeMeta],
    depths: Sequence[DepthMap] | None = None,
    hints: Sequence[SparseDepthMap] | None = None,
    pairs: Sequence[Sequence[int]] | None = None,
) -> Path:
    root = Path(root)
    for sub in ("images", "cams") + (("depths",) if depths else ()) + (("hints",) if hints else ()):
        (root / sub).mkdir(parents=True, exist_ok=True)
    n = len(cameras)
    for i in range(n):
        name = view_name(i)
        write_image(root / "images" / f"{name}.png", images[i])
        write_camera(root / "cams" / f"{name}_cam.txt", cameras[i], ranges[i])
        if depths:
            write_depth(root / "depths" / f"{name}.pfm", depths[i])
        if hints:
            write_hints(root / "hints" / f"{name}.txt", hints[i])
    if pairs is None:
        pairs = [[j for j in range(n) if j != i] for i in range(n)]
    write_pairs(root / "pair.txt", pairs)
    return root


def list_depth_files(directory) -> list[Path]:
    return sorted(Path(directory).glob("*.pfm"))


def eprint(*args) -> None:
    print(*args, file=sys.stderr)
