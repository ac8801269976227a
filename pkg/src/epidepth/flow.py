"""Dense correspondence fields: storage, Middlebury ``.flo`` I/O, synthesis, noise."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, DimensionMismatch, NonFiniteDimensions, OutOfBoundsPixel, TruncatedStream
from .geometry import CameraView, backproject_points, project_points

FLO_MAGIC = 202021.25
FLO_INVALID = 1e10
FLO_INVALID_THRESHOLD = 1e9
BOUNDS_MARGIN = 0.5


@dataclass(frozen=True, eq=False)
class FlowField:
    """Displacement from ``src_id`` pixels to ``dst_id`` pixels.

    ``u``/``v`` have the source view's ``(height, width)``; ``dst_width`` and
    ``dst_height`` bound where matches may land and default to the source size.
    """

    src_id: int
    dst_id: int
    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray | None = None
    dst_width: int | None = None
    dst_height: int | None = None

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64)
        v = np.array(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise DimensionMismatch(f"u and v must be equal-shape 2D grids, got {u.shape} and {v.shape}")
        valid = np.ones(u.shape, bool) if self.valid is None else np.array(self.valid, dtype=bool)
        if valid.shape != u.shape:
            raise DimensionMismatch("valid mask shape differs from flow grid")
        valid &= np.isfinite(u) & np.isfinite(v)
        u[~valid] = 0.0
        v[~valid] = 0.0
        for arr in (u, v, valid):
            arr.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "dst_width", int(self.dst_width or u.shape[1]))
        object.__setattr__(self, "dst_height", int(self.dst_height or u.shape[0]))

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    def replace(self, **changes) -> "FlowField":
        fields = dict(
            src_id=self.src_id, dst_id=self.dst_id, u=self.u, v=self.v, valid=self.valid,
            dst_width=self.dst_width, dst_height=self.dst_height,
        )
        fields.update(changes)
        return FlowField(**fields)

    def matches(self, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised :func:`matched_point` on integer pixel arrays.

        Returns ``(points, ok)`` where ``points`` has shape ``(..., 2)``.
        """
        u = self.u[ys, xs]
        v = self.v[ys, xs]
        mx = xs + u
        my = ys + v
        ok = self.valid[ys, xs] & in_bounds(mx, my, self.dst_width, self.dst_height)
        return np.stack([mx, my], axis=-1), ok


@dataclass(frozen=True)
class FlowNoiseSpec:
    gaussian_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_max: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.gaussian_sigma >= 0:
            raise ValueError("gaussian_sigma must be >= 0")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1]")
        if not self.outlier_max >= 0:
            raise ValueError("outlier_max must be >= 0")

    @property
    def is_zero(self) -> bool:
        return self.gaussian_sigma == 0 and (self.outlier_fraction == 0 or self.outlier_max == 0)


def in_bounds(x, y, width: int, height: int, margin: float = BOUNDS_MARGIN):
    return (x >= -margin) & (x <= width - 1 + margin) & (y >= -margin) & (y <= height - 1 + margin)


def matched_point(flow: FlowField, p_i) -> np.ndarray | None:
    """``p_i + flow(p_i)``, or None when the flow is masked or leaves the target image."""
    x, y = int(p_i[0]), int(p_i[1])
    if not (0 <= x < flow.width and 0 <= y < flow.height):
        raise OutOfBoundsPixel(f"pixel {(x, y)} outside {flow.width}x{flow.height} grid")
    if not flow.valid[y, x]:
        return None
    p = np.array([x + flow.u[y, x], y + flow.v[y, x]])
    if not in_bounds(p[0], p[1], flow.dst_width, flow.dst_height):
        return None
    return p


def read_flo(data: bytes) -> FlowField:
    """Parse a Middlebury ``.flo`` stream.  View ids are unknown and set to -1."""
    if len(data) < 12:
        raise TruncatedStream("stream shorter than the 12-byte header")
    magic, width, height = struct.unpack("<fii", data[:12])
    if magic != FLO_MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if width <= 0 or height <= 0 or width > 1 << 20 or height > 1 << 20:
        raise NonFiniteDimensions(f"implausible dimensions {width}x{height}")
    n = width * height * 2
    if len(data) < 12 + 4 * n:
        raise TruncatedStream(f"expected {12 + 4 * n} bytes, got {len(data)}")
    uv = np.frombuffer(data, dtype="<f4", count=n, offset=12).reshape(height, width, 2)
    u = uv[..., 0].astype(np.float64)
    v = uv[..., 1].astype(np.float64)
    valid = (np.abs(u) <= FLO_INVALID_THRESHOLD) & (np.abs(v) <= FLO_INVALID_THRESHOLD)
    return FlowField(-1, -1, u, v, valid)


def write_flo(flow: FlowField) -> bytes:
    uv = np.empty((flow.height, flow.width, 2), dtype="<f4")
    uv[..., 0] = np.where(flow.valid, flow.u, FLO_INVALID)
    uv[..., 1] = np.where(flow.valid, flow.v, FLO_INVALID)
    return struct.pack("<fii", FLO_MAGIC, flow.width, flow.height) + uv.tobytes()


def synth_flow(src: CameraView, dst: CameraView, gt_depth) -> FlowField:
    """Exact flow induced by ``gt_depth`` (a DepthMap) between two views."""
    if (gt_depth.height, gt_depth.width) != src.shape:
        raise DimensionMismatch(
            f"depth map is {gt_depth.width}x{gt_depth.height}, view {src.id} is {src.width}x{src.height}"
        )
    ys, xs = np.mgrid[0 : src.height, 0 : src.width]
    depth = np.where(gt_depth.mask, gt_depth.depth, 1.0)
    world = backproject_points(src, xs, ys, depth)
    px, z = project_points(dst, world)
    valid = gt_depth.mask & (z > 1e-12) & np.all(np.isfinite(px), axis=-1)
    with np.errstate(invalid="ignore"):
        valid &= in_bounds(px[..., 0], px[..., 1], dst.width, dst.height)
    u = np.where(valid, px[..., 0] - xs, 0.0)
    v = np.where(valid, px[..., 1] - ys, 0.0)
    return FlowField(src.id, dst.id, u, v, valid, dst.width, dst.height)


def perturb_flow(flow: FlowField, spec: FlowNoiseSpec) -> FlowField:
    """Add seeded Gaussian noise to valid pixels and replace a subset with disk outliers."""
    if spec.is_zero:
        return flow
    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(0.0, 1.0, size=(2, flow.height, flow.width)) * spec.gaussian_sigma
    idx = np.flatnonzero(flow.valid)
    n_out = int(round(spec.outlier_fraction * idx.size))
    if n_out and spec.outlier_max > 0:
        chosen = rng.choice(idx, size=n_out, replace=False)
        r = spec.outlier_max * np.sqrt(rng.uniform(size=n_out))
        phi = rng.uniform(0.0, 2.0 * np.pi, size=n_out)
        noise[0].flat[chosen] = r * np.cos(phi)
        noise[1].flat[chosen] = r * np.sin(phi)
    u = np.where(flow.valid, flow.u + noise[0], 0.0)
    v = np.where(flow.valid, flow.v + noise[1], 0.0)
    return flow.replace(u=u, v=v)


def displace_matches(flow: FlowField, mask: np.ndarray, du: np.ndarray, dv: np.ndarray) -> FlowField:
    """Return a copy of ``flow`` with ``(du, dv)`` added where ``mask`` is set."""
    u = flow.u + np.where(mask, du, 0.0)
    v = flow.v + np.where(mask, dv, 0.0)
    return flow.replace(u=u, v=v)


__all__ = [
    "FlowField", "FlowNoiseSpec", "matched_point", "read_flo", "write_flo", "synth_flow",
    "perturb_flow", "displace_matches", "in_bounds",
]
