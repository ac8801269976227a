"""Per-pair sensitivity of triangulated depth to match error, and depth blending.

For a source pixel, every target view yields a candidate depth.  A target
whose triangulated distance changes little when the relaxed match slides
along the epipolar line gives the more trustworthy candidate; the
flow-resilient strategy (``FRDB``) keeps the candidate with the smallest such
rate.  The other strategies exist for comparison.
"""

from __future__ import annotations

import enum
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, NoCandidates, NumericBlowup
from .geometry import INFINITY_EPS, CameraView, _check_baseline, epipolar_line, fundamental_matrix
from .nexus import FD_DELTA, SINE_EPS, DepthCandidate, epipolar_depth

WEIGHT_EPS = 1e-6


class BlendStrategy(enum.Enum):
    AVERAGE = "average"
    NEAREST = "nearest"
    WEIGHTED = "weighted"
    FRDB = "frdb"

    @classmethod
    def parse(cls, value) -> "BlendStrategy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown blend strategy {value!r}; expected one of {names}") from None


@dataclass(frozen=True)
class PairGeometry:
    """Triangle quantities for one source pixel and its relaxed match.

    ``t`` is the baseline length, ``m`` the distance from the target center to
    the epipole on the target's z=1 plane (``inf`` when the epipole is at
    infinity).  ``beta`` sits at the source center, ``alpha`` at the target
    center and ``theta`` at the epipole.  ``alpha_pro`` is the angle at the
    target center measured against the epipole direction; it equals ``alpha``
    unless the source center lies behind the target camera, where it is
    ``pi - alpha``.
    """

    t: float
    m: float
    alpha: float
    beta: float
    theta: float
    alpha_pro: float
    dis_ref: float
    pixel_scale: float

    @property
    def finite(self) -> bool:
        return np.isfinite(self.m)


def _angle(u, v) -> float:
    return float(np.arctan2(np.linalg.norm(np.cross(u, v)), np.dot(u, v)))


def pair_geometry(src: CameraView, dst: CameraView, p_i, foot) -> PairGeometry:
    _, t_rel = _check_baseline(src, dst)
    O_i, O_j = src.center, dst.center
    t = float(np.linalg.norm(O_j - O_i))
    ray_i = src.rotation.T @ src.normalized_rays(p_i[0], p_i[1])
    ray_j = dst.rotation.T @ dst.normalized_rays(foot[0], foot[1])
    beta = _angle(O_j - O_i, ray_i)
    alpha = _angle(O_i - O_j, ray_j)
    dis_ref = epipolar_depth(src, dst, p_i, foot) * float(np.linalg.norm(src.normalized_rays(*p_i[:2])))

    line = epipolar_line(fundamental_matrix(src, dst), p_i)
    ux, uy = line.direction
    pixel_scale = float(np.hypot(ux / dst.fx, uy / dst.fy))

    if abs(t_rel[2]) < INFINITY_EPS * np.linalg.norm(t_rel):
        return PairGeometry(t, np.inf, alpha, beta, np.nan, np.nan, dis_ref, pixel_scale)
    # work in the target camera frame, on its z=1 plane
    e3 = t_rel / t_rel[2]
    q = dst.normalized_rays(foot[0], foot[1])
    m = float(np.linalg.norm(e3))
    theta = _angle(-e3, q - e3)
    alpha_pro = _angle(e3, q)
    return PairGeometry(t, m, alpha, beta, theta, alpha_pro, dis_ref, pixel_scale)


def sensitivity_gradient_numeric(src: CameraView, dst: CameraView, p_i, foot, delta: float = FD_DELTA) -> float:
    """Central difference of the source-to-point distance as ``foot`` slides along its epipolar line."""
    line = epipolar_line(fundamental_matrix(src, dst), p_i)
    d = line.direction
    ray_norm = float(np.linalg.norm(src.normalized_rays(p_i[0], p_i[1])))
    foot = np.asarray(foot, dtype=np.float64)
    try:
        hi = epipolar_depth(src, dst, p_i, foot + delta * d)
        lo = epipolar_depth(src, dst, p_i, foot - delta * d)
    except NumericBlowup:
        raise NumericBlowup("finite-difference probe reached the parallel-ray singularity") from None
    return abs(hi - lo) * ray_norm / (2.0 * delta)


def sensitivity_from_geometry(g: PairGeometry) -> float:
    """``t sin(b) sin^2(a'+th) / (m sin(th) sin^2(a+b))`` converted to per-pixel units."""
    grad = (
        g.t * np.sin(g.beta) * np.sin(g.alpha_pro + g.theta) ** 2
        / (g.m * np.sin(g.theta) * np.sin(g.alpha + g.beta) ** 2)
    )
    return float(abs(grad) * g.pixel_scale)


def _closed_form_applies(g: PairGeometry) -> bool:
    if not g.finite:
        return False
    sines = (np.sin(g.alpha), np.sin(g.beta), np.sin(g.theta), np.sin(g.alpha + g.beta))
    return all(abs(s) > SINE_EPS for s in sines)


def sensitivity_gradient(src: CameraView, dst: CameraView, p_i, foot) -> float:
    """Rate of change of the source-to-point distance per pixel of match shift.

    Uses the closed-form triangle expression when the epipole is finite and the
    triangle is well formed, otherwise central finite differences.
    """
    g = pair_geometry(src, dst, p_i, foot)
    if _closed_form_applies(g):
        value = sensitivity_from_geometry(g)
        if np.isfinite(value):
            return value
    try:
        value = sensitivity_gradient_numeric(src, dst, p_i, foot)
    except NumericBlowup as exc:
        raise DegenerateGeometry(str(exc)) from exc
    if not np.isfinite(value):
        raise DegenerateGeometry("sensitivity is not finite")
    return value


def blend_depth(
    candidates: Sequence[DepthCandidate],
    strategy="frdb",
    views: Mapping[int, CameraView] | None = None,
) -> tuple[float, int | None]:
    """Blend the candidate depths of one source pixel.

    ``views`` maps view id to camera and is needed only for ``nearest``.
    Returns ``(depth, chosen_dst)``; ``chosen_dst`` is None for the averaging
    strategies.  Ties go to the smallest target id.
    """
    strategy = BlendStrategy.parse(strategy)
    if not candidates:
        raise NoCandidates("no candidates to blend")
    cands = sorted(candidates, key=lambda c: c.dst_id)
    depths = np.array([c.depth for c in cands])

    if strategy is BlendStrategy.AVERAGE:
        return float(depths.mean()), None
    if strategy is BlendStrategy.WEIGHTED:
        w = 1.0 / (np.array([c.residual for c in cands]) + WEIGHT_EPS)
        return float((w * depths).sum() / w.sum()), None
    if strategy is BlendStrategy.FRDB:
        k = int(np.argmin([c.sensitivity for c in cands]))
    else:
        if views is None:
            raise ValueError("the nearest strategy needs the camera views")
        src = views[cands[0].src_id]
        k = int(np.argmin([np.linalg.norm(views[c.dst_id].center - src.center) for c in cands]))
    return float(depths[k]), cands[k].dst_id


def blend_arrays(
    depth: np.ndarray,
    sensitivity: np.ndarray,
    residual: np.ndarray,
    usable: np.ndarray,
    strategy: BlendStrategy,
    baselines: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`blend_depth` over stacked candidates.

    Arrays are ``(n_targets, ...)`` with targets in ascending id order;
    ``baselines`` holds one length per target.  Returns ``(depth, valid)``.
    """
    any_ok = usable.any(axis=0)
    if strategy is BlendStrategy.AVERAGE:
        total = np.where(usable, depth, 0.0).sum(axis=0)
        count = usable.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = total / count
    elif strategy is BlendStrategy.WEIGHTED:
        w = np.where(usable, 1.0 / (np.where(usable, residual, 0.0) + WEIGHT_EPS), 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = (w * np.where(usable, depth, 0.0)).sum(axis=0) / w.sum(axis=0)
    else:
        if strategy is BlendStrategy.FRDB:
            key = np.where(usable, sensitivity, np.inf)
        else:
            b = np.asarray(baselines, dtype=np.float64).reshape((-1,) + (1,) * (depth.ndim - 1))
            key = np.where(usable, b, np.inf)
        k = np.argmin(key, axis=0)
        out = np.take_along_axis(depth, k[None], axis=0)[0]
    return np.where(any_ok, out, np.nan), any_ok
