"""Depth from flow matches relaxed onto epipolar lines.

A flow match in the target view is snapped to the closest point of the source
pixel's epipolar line, and depth along the source ray is then recovered in
closed form from the two (now coplanar) rays.  The scalar functions mirror the
individual steps; :class:`PairKernel` runs the same computation over arrays of
pixels for one ordered view pair.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLine, NumericBlowup
from .flow import FlowField, matched_point
from .geometry import (
    INFINITY_EPS,
    LINE_EPS,
    CameraView,
    EpipolarLine,
    _check_baseline,
    apply,
    cross,
    dot,
    epipolar_line,
    fundamental_matrix,
    norm,
)

RAY_EPS = 1e-14
SINE_EPS = 1e-9
FD_DELTA = 1e-3


class Status(enum.IntEnum):
    VALID = 0
    BEHIND_CAMERA = 1
    OFF_IMAGE = 2
    DEGENERATE_LINE = 3


@dataclass(frozen=True, eq=False)
class DepthCandidate:
    src_id: int
    dst_id: int
    pixel: tuple[int, int]
    foot: np.ndarray | None
    depth: float
    residual: float
    sensitivity: float
    status: Status

    @property
    def is_valid(self) -> bool:
        return self.status == Status.VALID


def perpendicular_foot(line: EpipolarLine, p_hat) -> np.ndarray:
    a, b, c = line.a, line.b, line.c
    nn = a * a + b * b
    if nn < LINE_EPS:
        raise DegenerateLine("line normal vanishes")
    x, y = float(p_hat[0]), float(p_hat[1])
    return np.array([(b * b * x - a * b * y - a * c) / nn, (a * a * y - a * b * x - b * c) / nn])


def epipolar_residual(line: EpipolarLine, p_hat) -> float:
    """Perpendicular distance (pixels) from ``p_hat`` to ``line``."""
    a, b, c = line.a, line.b, line.c
    nn = a * a + b * b
    if nn < LINE_EPS:
        raise DegenerateLine("line normal vanishes")
    return abs(a * p_hat[0] + b * p_hat[1] + c) / np.sqrt(nn)


def _ray_terms(src: CameraView, dst: CameraView, p_i, foot):
    R_rel, _ = _check_baseline(src, dst)
    ray_src = src.normalized_rays(p_i[0], p_i[1])
    # target ray rotated into the source frame
    H = R_rel.T @ dst.normalized_rays(foot[0], foot[1])
    # target camera center in the source frame
    o_dst = src.rotation @ dst.center + src.translation
    return ray_src, H, o_dst


def epipolar_depth(src: CameraView, dst: CameraView, p_i, foot) -> float:
    """Depth of ``p_i`` along its normalised source ray, given the relaxed match ``foot``.

    ``D = |H x o| / |r x H|`` with ``r`` the source ray, ``H`` the target ray and
    ``o`` the target center, all in the source camera frame.  Raises
    :class:`NumericBlowup` when the rays are parallel.
    """
    ray_src, H, o_dst = _ray_terms(src, dst, p_i, foot)
    den = np.linalg.norm(np.cross(ray_src, H))
    if den < RAY_EPS:
        raise NumericBlowup("source and target rays are parallel")
    return float(np.linalg.norm(np.cross(H, o_dst)) / den)


def in_front(src: CameraView, dst: CameraView, p_i, foot) -> bool:
    """Cheirality: the triangulated point has positive depth in both views."""
    ray_src, H, o_dst = _ray_terms(src, dst, p_i, foot)
    rxh = np.cross(ray_src, H)
    den2 = rxh @ rxh
    if den2 < RAY_EPS**2:
        return False
    signed = np.cross(o_dst, H) @ rxh / den2
    if signed <= 0:
        return False
    R_rel, t_rel = _check_baseline(src, dst)
    return bool((R_rel @ (signed * ray_src) + t_rel)[2] > 0)


def depth_candidate(src: CameraView, dst: CameraView, flow: FlowField, p_i) -> DepthCandidate:
    """Run match lookup, relaxation, triangulation and scoring for one pixel."""
    from .blend import sensitivity_gradient

    if flow.src_id != src.id or flow.dst_id != dst.id:
        raise ValueError(f"flow {flow.src_id}->{flow.dst_id} does not connect views {src.id}->{dst.id}")
    pixel = (int(p_i[0]), int(p_i[1]))

    def reject(status, foot=None, residual=np.nan):
        return DepthCandidate(src.id, dst.id, pixel, foot, np.nan, residual, np.nan, status)

    p_hat = matched_point(flow, pixel)
    if p_hat is None:
        return reject(Status.OFF_IMAGE)
    try:
        line = epipolar_line(fundamental_matrix(src, dst), pixel)
    except DegenerateLine:
        return reject(Status.DEGENERATE_LINE)
    foot = perpendicular_foot(line, p_hat)
    residual = epipolar_residual(line, p_hat)
    try:
        depth = epipolar_depth(src, dst, pixel, foot)
    except NumericBlowup:
        return reject(Status.DEGENERATE_LINE, foot, residual)
    if not in_front(src, dst, pixel, foot):
        return reject(Status.BEHIND_CAMERA, foot, residual)
    try:
        sens = sensitivity_gradient(src, dst, pixel, foot)
    except ValueError:
        return reject(Status.DEGENERATE_LINE, foot, residual)
    return DepthCandidate(src.id, dst.id, pixel, foot, depth, residual, sens, Status.VALID)


def _angle(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.arctan2(norm(cross(u, v)), dot(u, v))


class PairKernel:
    """Precomputed constants and vectorised candidate evaluation for ``src -> dst``."""

    def __init__(self, src: CameraView, dst: CameraView):
        self.src = src
        self.dst = dst
        self.F = fundamental_matrix(src, dst)
        self.R_rel, self.t_rel = _check_baseline(src, dst)
        self.R_back = self.R_rel.T.copy()
        self.o_dst = src.rotation @ dst.center + src.translation
        self.baseline = float(np.linalg.norm(self.t_rel))
        # epipole on the dst z=1 plane, in dst camera coordinates
        self.finite_epipole = abs(self.t_rel[2]) >= INFINITY_EPS * self.baseline
        self.e3 = self.t_rel / self.t_rel[2] if self.finite_epipole else None

    def lines(self, xs, ys) -> np.ndarray:
        pts = np.stack([xs, ys, np.ones_like(xs)], axis=-1).astype(np.float64)
        return apply(self.F, pts)

    def _eq8(self, ray_src, foot):
        H = apply(self.R_back, self.dst.normalized_rays(foot[..., 0], foot[..., 1]))
        rxh = cross(ray_src, H)
        den = norm(rxh)
        num = norm(cross(H, np.broadcast_to(self.o_dst, H.shape)))
        return num, den, H, rxh

    def dis_ref(self, ray_src, foot):
        """Distance from the source center to the triangulated point (NaN if parallel)."""
        num, den, _, _ = self._eq8(ray_src, foot)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den >= RAY_EPS, num / den, np.nan) * norm(ray_src)

    def sensitivity_numeric(self, ray_src, foot, direction, delta=FD_DELTA):
        hi = self.dis_ref(ray_src, foot + delta * direction)
        lo = self.dis_ref(ray_src, foot - delta * direction)
        return np.abs(hi - lo) / (2.0 * delta)

    def sensitivity_closed(self, ray_src, foot, H, direction):
        """Closed-form d(dis_ref)/d(dis_pro) per target pixel; NaN where it does not apply."""
        n = foot.shape[:-1]
        if not self.finite_epipole:
            return np.full(n, np.nan)
        o = np.broadcast_to(self.o_dst, H.shape)
        beta = _angle(o, ray_src)
        alpha = _angle(-o, H)
        q = self.dst.normalized_rays(foot[..., 0], foot[..., 1])
        e3 = np.broadcast_to(self.e3, q.shape)
        alpha_pro = _angle(e3, q)
        theta = _angle(-e3, q - e3)
        m = float(np.linalg.norm(self.e3))
        sines = np.stack([np.sin(alpha), np.sin(beta), np.sin(theta), np.sin(alpha + beta)])
        ok = np.all(np.abs(sines) > SINE_EPS, axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = (
                self.baseline * np.sin(beta) * np.sin(alpha_pro + theta) ** 2
                / (m * np.sin(theta) * np.sin(alpha + beta) ** 2)
            )
        # dis_pro lives on the z=1 plane; convert its arc length to pixels
        scale = np.hypot(direction[..., 0] / self.dst.fx, direction[..., 1] / self.dst.fy)
        return np.where(ok, np.abs(grad) * scale, np.nan)

    def evaluate(self, xs: np.ndarray, ys: np.ndarray, matches: np.ndarray, ok: np.ndarray) -> dict:
        """Candidate arrays for integer source pixels ``(xs, ys)`` and target ``matches``.

        Returns a dict with ``foot``, ``depth``, ``residual``, ``sensitivity``
        and ``status`` (``Status`` codes as uint8).
        """
        xs = np.asarray(xs)
        ys = np.asarray(ys)
        status = np.full(xs.shape, Status.VALID, dtype=np.uint8)
        status[~ok] = Status.OFF_IMAGE

        abc = self.lines(xs, ys)
        a, b, c = abc[..., 0], abc[..., 1], abc[..., 2]
        nn = a * a + b * b
        degenerate = nn < LINE_EPS
        status[ok & degenerate] = Status.DEGENERATE_LINE
        nn = np.where(degenerate, 1.0, nn)
        xh, yh = matches[..., 0], matches[..., 1]
        foot = np.stack(
            [(b * b * xh - a * b * yh - a * c) / nn, (a * a * yh - a * b * xh - b * c) / nn], axis=-1
        )
        rn = np.sqrt(nn)
        residual = np.abs(a * xh + b * yh + c) / rn
        direction = np.stack([-b / rn, a / rn], axis=-1)

        ray_src = self.src.normalized_rays(xs, ys)
        num, den, H, rxh = self._eq8(ray_src, foot)
        blowup = den < RAY_EPS
        status[(status == Status.VALID) & blowup] = Status.DEGENERATE_LINE
        with np.errstate(divide="ignore", invalid="ignore"):
            depth = num / den
            signed = dot(cross(np.broadcast_to(self.o_dst, H.shape), H), rxh) / (den * den)
        z_dst = apply(self.R_rel, signed[..., None] * ray_src)[..., 2] + self.t_rel[2]
        behind = ~((signed > 0) & (z_dst > 0))
        status[(status == Status.VALID) & behind] = Status.BEHIND_CAMERA

        live = status == Status.VALID
        sens = self.sensitivity_closed(ray_src, foot, H, direction)
        fallback = live & ~np.isfinite(sens)
        if np.any(fallback):
            sens = np.where(fallback, self.sensitivity_numeric(ray_src, foot, direction), sens)
        status[live & ~np.isfinite(sens)] = Status.DEGENERATE_LINE

        valid = status == Status.VALID
        return {
            "foot": foot,
            "depth": np.where(valid, depth, np.nan),
            "residual": np.where(status != Status.OFF_IMAGE, residual, np.nan),
            "sensitivity": np.where(valid, sens, np.nan),
            "status": status,
        }

    def candidates(self, flow: FlowField, xs: np.ndarray, ys: np.ndarray) -> dict:
        if flow.src_id != self.src.id or flow.dst_id != self.dst.id:
            raise ValueError(f"flow {flow.src_id}->{flow.dst_id} does not match pair {self.src.id}->{self.dst.id}")
        matches, ok = flow.matches(xs, ys)
        return self.evaluate(xs, ys, matches, ok)
