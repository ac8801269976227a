"""Pruning, per-view depth assembly and the colored point cloud."""

from __future__ import annotations

import re
import struct
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .blend import BlendStrategy, blend_arrays
from .errors import DimensionMismatch, FormatError, InconsistentScene, MissingFlow, TruncatedStream
from .flow import FlowField
from .geometry import CameraView, backproject_points
from .nexus import DepthCandidate, PairKernel, Status
from .validation import check_depth_bounds, check_epsilon, check_n_jobs, check_stride

ROW_BLOCK = 32


@dataclass(frozen=True, eq=False)
class DepthMap:
    view_id: int
    depth: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        depth = np.array(self.depth, dtype=np.float64)
        if depth.ndim != 2:
            raise DimensionMismatch("depth must be a 2D grid")
        mask = np.isfinite(depth) & (depth > 0)
        if self.mask is not None:
            given = np.asarray(self.mask, dtype=bool)
            if given.shape != depth.shape:
                raise DimensionMismatch("mask shape differs from depth grid")
            mask &= given
        depth[~mask] = 0.0
        depth.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "view_id", int(self.view_id))
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "mask", mask)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Struct-of-arrays cloud ordered by ``(src_view, row, col)``."""

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.uint8))
    src_view: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    src_pixel: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(pos)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", np.asarray(self.colors, dtype=np.uint8).reshape(n, 3))
        object.__setattr__(self, "src_view", np.asarray(self.src_view, dtype=np.int64).reshape(n))
        object.__setattr__(self, "src_pixel", np.asarray(self.src_pixel, dtype=np.int64).reshape(n, 2))

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def concatenate(cls, parts: Sequence["PointCloud"]) -> "PointCloud":
        if not parts:
            return cls()
        return cls(
            np.concatenate([p.positions for p in parts]),
            np.concatenate([p.colors for p in parts]),
            np.concatenate([p.src_view for p in parts]),
            np.concatenate([p.src_pixel for p in parts]),
        )


@dataclass(eq=False)
class Scene:
    """Calibrated views plus flows keyed by ordered ``(src_id, dst_id)``."""

    views: list[CameraView]
    flows: dict[tuple[int, int], FlowField]

    def __post_init__(self):
        self.views = sorted(self.views, key=lambda v: v.id)
        ids = [v.id for v in self.views]
        if len(set(ids)) != len(ids):
            raise InconsistentScene(f"duplicate view ids in {ids}")

    @property
    def view_ids(self) -> list[int]:
        return [v.id for v in self.views]

    def view(self, view_id: int) -> CameraView:
        for v in self.views:
            if v.id == view_id:
                return v
        raise KeyError(view_id)

    def flow(self, src_id: int, dst_id: int) -> FlowField:
        try:
            return self.flows[(src_id, dst_id)]
        except KeyError:
            raise MissingFlow(f"no flow for pair {src_id}->{dst_id}") from None

    def subset(self, view_ids) -> "Scene":
        keep = set(view_ids)
        return Scene(
            [v for v in self.views if v.id in keep],
            {k: f for k, f in self.flows.items() if k[0] in keep and k[1] in keep},
        )


def check_scene(scene: Scene) -> Scene:
    if len(scene.views) < 2:
        raise InconsistentScene("densification needs at least two views")
    for src in scene.views:
        for dst in scene.views:
            if src.id == dst.id:
                continue
            flow = scene.flow(src.id, dst.id)
            if (flow.height, flow.width) != src.shape:
                raise InconsistentScene(f"flow {src.id}->{dst.id} is {flow.width}x{flow.height}, view is {src.width}x{src.height}")
            if (flow.src_id, flow.dst_id) != (src.id, dst.id):
                raise InconsistentScene(f"flow stored under {src.id}->{dst.id} claims {flow.src_id}->{flow.dst_id}")
    return scene


def prune(candidates: Sequence[DepthCandidate], epsilon_d: float) -> list[DepthCandidate]:
    """Keep valid candidates whose match lies strictly closer than ``epsilon_d`` to its epipolar line."""
    epsilon_d = check_epsilon(epsilon_d)
    return [c for c in candidates if c.status == Status.VALID and c.residual < epsilon_d]


@dataclass(eq=False)
class ViewCandidates:
    """Stacked candidates of one source view, targets in ascending id order."""

    src_id: int
    dst_ids: list[int]
    xs: np.ndarray
    ys: np.ndarray
    depth: np.ndarray
    residual: np.ndarray
    sensitivity: np.ndarray
    status: np.ndarray
    baselines: np.ndarray


def pair_kernels(views: Sequence[CameraView]) -> dict[tuple[int, int], PairKernel]:
    return {(s.id, d.id): PairKernel(s, d) for s in views for d in views if s.id != d.id}


def sample_grid(view: CameraView, stride: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0 : view.height : stride, 0 : view.width : stride]
    return xs, ys


def view_candidates(scene: Scene, src: CameraView, stride: int = 1, kernels=None, n_jobs: int = 1) -> ViewCandidates:
    xs, ys = sample_grid(src, stride)
    dsts = [v for v in scene.views if v.id != src.id]
    kernels = kernels or {}
    shape = (len(dsts),) + xs.shape
    out = {k: np.empty(shape) for k in ("depth", "residual", "sensitivity")}
    out["status"] = np.empty(shape, np.uint8)

    blocks = [(k, r) for k in range(len(dsts)) for r in range(0, xs.shape[0], ROW_BLOCK)]

    def run(task):
        k, r0 = task
        dst = dsts[k]
        kernel = kernels.get((src.id, dst.id)) or PairKernel(src, dst)
        sl = slice(r0, r0 + ROW_BLOCK)
        res = kernel.candidates(scene.flow(src.id, dst.id), xs[sl], ys[sl])
        for key in out:
            out[key][k, sl] = res[key]

    if n_jobs > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(run, blocks))
    else:
        for task in blocks:
            run(task)
    baselines = np.array([np.linalg.norm(d.center - src.center) for d in dsts])
    return ViewCandidates(src.id, [d.id for d in dsts], xs, ys, baselines=baselines, **out)


def blend_view(
    vc: ViewCandidates,
    strategy: BlendStrategy,
    epsilon_d: float | None,
    depth_bounds=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Prune (unless ``epsilon_d`` is None) and blend one view's candidates."""
    usable = vc.status == Status.VALID
    if epsilon_d is not None:
        with np.errstate(invalid="ignore"):
            usable &= vc.residual < epsilon_d
    depth, ok = blend_arrays(vc.depth, vc.sensitivity, vc.residual, usable, strategy, vc.baselines)
    ok &= np.isfinite(depth) & (depth > 0)
    if depth_bounds is not None:
        lo, hi = depth_bounds
        with np.errstate(invalid="ignore"):
            ok &= (depth >= lo) & (depth <= hi)
    return np.where(ok, depth, np.nan), ok


def assemble(src: CameraView, vc: ViewCandidates, depth: np.ndarray, ok: np.ndarray) -> tuple[DepthMap, PointCloud]:
    full = np.zeros(src.shape)
    mask = np.zeros(src.shape, bool)
    full[vc.ys, vc.xs] = np.where(ok, depth, 0.0)
    mask[vc.ys, vc.xs] = ok
    dm = DepthMap(src.id, full, mask)

    rows, cols = vc.ys[ok], vc.xs[ok]
    pos = backproject_points(src, cols, rows, depth[ok])
    if src.image is not None:
        colors = src.image[rows, cols]
    else:
        colors = np.full((len(rows), 3), 255, np.uint8)
    cloud = PointCloud(pos, colors, np.full(len(rows), src.id), np.stack([rows, cols], axis=-1))
    return dm, cloud


@dataclass
class DensifyStats:
    candidates: int = 0
    valid: int = 0
    pruned: int = 0
    pixels: int = 0
    points: int = 0

    @property
    def pruned_fraction(self) -> float:
        return self.pruned / self.valid if self.valid else 0.0


def densify_candidates(sets, strategy, epsilon_d, depth_bounds=None):
    """Blend precomputed ``(view, ViewCandidates)`` pairs; ``epsilon_d`` None disables pruning."""
    depth_maps, clouds, stats = {}, [], DensifyStats()
    for src, vc in sets:
        depth, ok = blend_view(vc, strategy, epsilon_d, depth_bounds)
        dm, cloud = assemble(src, vc, depth, ok)
        depth_maps[src.id] = dm
        clouds.append(cloud)
        valid = vc.status == Status.VALID
        stats.candidates += valid.size
        stats.valid += int(valid.sum())
        if epsilon_d is not None:
            with np.errstate(invalid="ignore"):
                stats.pruned += int((valid & ~(vc.residual < epsilon_d)).sum())
        stats.pixels += vc.xs.size
        stats.points += len(cloud)
    return depth_maps, PointCloud.concatenate(clouds), stats


def densify_scene(
    scene: Scene,
    strategy="frdb",
    epsilon_d: float = 1.0,
    stride: int = 1,
    depth_bounds=None,
    *,
    prune: bool = True,
    n_jobs: int | None = 1,
    kernels: Mapping | None = None,
    return_stats: bool = False,
):
    """Depth map per view and the fused colored cloud.

    Every ``stride``-th pixel of every view gathers one candidate per other
    view, drops those failing the epipolar-distance test (when ``prune``),
    blends the rest and lifts the result to world space with the pixel color.
    """
    strategy = BlendStrategy.parse(strategy)
    epsilon_d = check_epsilon(epsilon_d)
    stride = check_stride(stride)
    depth_bounds = check_depth_bounds(depth_bounds)
    n_jobs = check_n_jobs(n_jobs)
    check_scene(scene)
    kernels = kernels if kernels is not None else pair_kernels(scene.views)

    sets = [(src, view_candidates(scene, src, stride, kernels, n_jobs)) for src in scene.views]
    depth_maps, cloud, stats = densify_candidates(sets, strategy, epsilon_d if prune else None, depth_bounds)
    if return_stats:
        return depth_maps, cloud, stats
    return depth_maps, cloud


# -- file formats ---------------------------------------------------------------

_PLY_HEADER = (
    "ply\n"
    "format binary_little_endian 1.0\n"
    "element vertex {n}\n"
    "property float x\n"
    "property float y\n"
    "property float z\n"
    "property uchar red\n"
    "property uchar green\n"
    "property uchar blue\n"
    "end_header\n"
)
_PLY_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")])


def write_ply(cloud: PointCloud) -> bytes:
    rec = np.empty(len(cloud), dtype=_PLY_DTYPE)
    for i, k in enumerate("xyz"):
        rec[k] = cloud.positions[:, i]
    for i, k in enumerate(("red", "green", "blue")):
        rec[k] = cloud.colors[:, i]
    return _PLY_HEADER.format(n=len(cloud)).encode("ascii") + rec.tobytes()


def read_ply(data: bytes) -> PointCloud:
    """Read back what :func:`write_ply` emits (provenance is not stored)."""
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise FormatError("not a PLY stream")
    header = data[: end + len(b"end_header\n")].decode("ascii")
    m = re.search(r"element vertex (\d+)", header)
    expected = _PLY_HEADER.format(n=m.group(1) if m else "?")
    if m is None or header != expected:
        raise FormatError("unsupported PLY layout")
    n = int(m.group(1))
    body = data[len(header) :]
    if len(body) < n * _PLY_DTYPE.itemsize:
        raise TruncatedStream("PLY payload shorter than declared vertex count")
    rec = np.frombuffer(body, dtype=_PLY_DTYPE, count=n)
    pos = np.stack([rec["x"], rec["y"], rec["z"]], axis=-1).astype(np.float64)
    col = np.stack([rec["red"], rec["green"], rec["blue"]], axis=-1)
    return PointCloud(pos, col, np.full(n, -1), np.full((n, 2), -1))


def write_pfm(depth: DepthMap) -> bytes:
    header = f"Pf\n{depth.width} {depth.height}\n-1.0\n".encode("ascii")
    grid = np.where(depth.mask, depth.depth, 0.0).astype("<f4")
    return header + np.ascontiguousarray(grid[::-1]).tobytes()


def read_pfm(data: bytes, view_id: int = -1) -> DepthMap:
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"Pf":
        raise FormatError("not a single-channel PFM stream")
    try:
        w, h = (int(s) for s in parts[1].split())
        scale = float(parts[2])
    except ValueError:
        raise FormatError("malformed PFM header") from None
    if w <= 0 or h <= 0 or scale == 0:
        raise FormatError("malformed PFM header")
    dtype = "<f4" if scale < 0 else ">f4"
    body = parts[3]
    if len(body) < 4 * w * h:
        raise TruncatedStream("PFM payload shorter than declared size")
    grid = np.frombuffer(body, dtype=dtype, count=w * h).reshape(h, w)[::-1].astype(np.float64)
    return DepthMap(view_id, grid, grid > 0)
