"""Pinhole cameras and two-view epipolar geometry.

Poses are world-to-camera: ``X_cam = R @ X_world + T``; the camera center is
``-R.T @ T``.  Pixel coordinates are ``(x, y)`` = ``(column, row)`` with the
pixel center at integer coordinates.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBaseline, DegenerateLine, NonPositiveDepth, PointAtCameraPlane
from .validation import check_image, check_positive, check_rotation, check_vector

BASELINE_EPS = 1e-12
LINE_EPS = 1e-18
INFINITY_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class CameraView:
    id: int
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    image: np.ndarray | None = None

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("id", int(self.id))
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError("width and height must be >= 1")
        set_("width", int(self.width))
        set_("height", int(self.height))
        set_("fx", check_positive(self.fx, "fx"))
        set_("fy", check_positive(self.fy, "fy"))
        set_("cx", float(self.cx))
        set_("cy", float(self.cy))
        R = check_rotation(self.rotation)
        T = check_vector(self.translation, 3, "translation")
        R.setflags(write=False)
        T.setflags(write=False)
        set_("rotation", R)
        set_("translation", T)
        set_("image", check_image(self.image, self.width, self.height))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def replace(self, **changes) -> "CameraView":
        return dataclasses.replace(self, **changes)

    def normalized_rays(self, x, y) -> np.ndarray:
        """``K^-1 (x, y, 1)`` for arrays of pixel coordinates, shape ``(..., 3)``."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return np.stack([(x - self.cx) / self.fx, (y - self.cy) / self.fy, np.ones_like(x)], axis=-1)


@dataclass(frozen=True)
class EpipolarLine:
    """Line ``a x + b y + c = 0`` in target pixel coordinates."""

    a: float
    b: float
    c: float

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def normalized(self) -> "EpipolarLine":
        n = np.hypot(self.a, self.b)
        if n * n < LINE_EPS:
            raise DegenerateLine("line normal vanishes")
        return EpipolarLine(self.a / n, self.b / n, self.c / n)

    @property
    def direction(self) -> np.ndarray:
        """Unit direction vector along the line."""
        n = np.hypot(self.a, self.b)
        return np.array([-self.b, self.a]) / n


@dataclass(frozen=True, eq=False)
class Epipole:
    """Projection of the other camera's center; ``position`` is None at infinity."""

    position: np.ndarray | None
    direction: np.ndarray | None = None
    homogeneous: np.ndarray | None = None

    @property
    def at_infinity(self) -> bool:
        return self.position is None


def apply(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``M @ v`` over the last axis of ``v`` using fixed-order elementwise sums.

    Written out instead of delegating to BLAS so the result for a pixel does not
    depend on how many pixels are batched together.
    """
    v = np.asarray(v, dtype=np.float64)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    return np.stack(
        [
            M[0, 0] * x + M[0, 1] * y + M[0, 2] * z,
            M[1, 0] * x + M[1, 1] * y + M[1, 2] * z,
            M[2, 0] * x + M[2, 1] * y + M[2, 2] * z,
        ],
        axis=-1,
    )


def cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
    v1, v2, v3 = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([u2 * v3 - u3 * v2, u3 * v1 - u1 * v3, u1 * v2 - u2 * v1], axis=-1)


def dot(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1] + u[..., 2] * v[..., 2]


def norm(u: np.ndarray) -> np.ndarray:
    return np.sqrt(dot(u, u))


def skew(t: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -t[2], t[1]], [t[2], 0.0, -t[0]], [-t[1], t[0], 0.0]])


def relative_pose(src: CameraView, dst: CameraView) -> tuple[np.ndarray, np.ndarray]:
    """``(R_rel, t_rel)`` mapping src camera coordinates to dst camera coordinates."""
    R_rel = dst.rotation @ src.rotation.T
    t_rel = dst.translation - R_rel @ src.translation
    return R_rel, t_rel


def baseline(src: CameraView, dst: CameraView) -> float:
    return float(np.linalg.norm(src.center - dst.center))


def _check_baseline(src: CameraView, dst: CameraView) -> tuple[np.ndarray, np.ndarray]:
    R_rel, t_rel = relative_pose(src, dst)
    if np.linalg.norm(t_rel) < BASELINE_EPS:
        raise DegenerateBaseline(f"views {src.id} and {dst.id} share a camera center")
    return R_rel, t_rel


def fundamental_matrix(src: CameraView, dst: CameraView) -> np.ndarray:
    """F such that ``F @ (x_src, y_src, 1)`` is the epipolar line in ``dst``."""
    if src.id == dst.id:
        raise ValueError("fundamental matrix needs two distinct views")
    R_rel, t_rel = _check_baseline(src, dst)
    return dst.K_inv.T @ skew(t_rel) @ R_rel @ src.K_inv


def epipolar_line(F: np.ndarray, p_i) -> EpipolarLine:
    a, b, c = F @ np.array([p_i[0], p_i[1], 1.0])
    if a * a + b * b < LINE_EPS:
        raise DegenerateLine(f"pixel {tuple(p_i)} maps to a degenerate epipolar line")
    return EpipolarLine(float(a), float(b), float(c))


def epipole(src: CameraView, dst: CameraView) -> Epipole:
    """Image of ``src``'s camera center in ``dst``."""
    _, t_rel = _check_baseline(src, dst)
    # t_rel is src's center expressed in dst's camera frame
    hom = dst.K @ t_rel
    if abs(t_rel[2]) < INFINITY_EPS * np.linalg.norm(t_rel):
        d = np.array([dst.fx * t_rel[0], dst.fy * t_rel[1]])
        d = d / np.linalg.norm(d)
        # canonical sign: first non-zero component positive
        lead = d[0] if abs(d[0]) > 1e-15 else d[1]
        if lead < 0:
            d = -d
        return Epipole(position=None, direction=d, homogeneous=hom)
    return Epipole(position=hom[:2] / hom[2], homogeneous=hom)


def project(view: CameraView, world_point) -> tuple[np.ndarray, float]:
    X = view.rotation @ np.asarray(world_point, dtype=np.float64) + view.translation
    if abs(X[2]) < 1e-12:
        raise PointAtCameraPlane("point lies on the camera plane")
    pixel = np.array([view.fx * X[0] / X[2] + view.cx, view.fy * X[1] / X[2] + view.cy])
    return pixel, float(X[2])


def backproject(view: CameraView, pixel, depth: float) -> np.ndarray:
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    X_cam = depth * view.normalized_rays(pixel[0], pixel[1])
    return view.rotation.T @ (X_cam - view.translation)


def project_points(view: CameraView, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`project`; pixels are NaN where ``|z| < 1e-12``."""
    X = apply(view.rotation, points) + view.translation
    z = X[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.abs(z) >= 1e-12
        zs = np.where(safe, z, np.nan)
        px = np.stack([view.fx * X[..., 0] / zs + view.cx, view.fy * X[..., 1] / zs + view.cy], axis=-1)
    return px, z


def backproject_points(view: CameraView, x, y, depth) -> np.ndarray:
    """Vectorised :func:`backproject` without the positivity check."""
    X_cam = np.asarray(depth, dtype=np.float64)[..., None] * view.normalized_rays(x, y)
    return apply(view.rotation.T, X_cam - view.translation)


def rotation_about(axis: str, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    if axis == "x":
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == "y":
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    if axis == "z":
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    raise ValueError(f"unknown axis {axis!r}")


def look_at(center, target, up=(0.0, -1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera ``(R, T)`` for a camera at ``center`` looking at ``target``.

    Camera axes follow the x-right, y-down, z-forward convention, so the default
    ``up`` is world ``-y``.
    """
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return R, -R @ center


def make_view(id, center, R_c2w=None, *, target=None, width=100, height=100, f=100.0, image=None):
    """Convenience constructor from a camera center and orientation."""
    center = np.asarray(center, dtype=np.float64)
    if target is not None:
        R, T = look_at(center, target)
    else:
        R = np.eye(3) if R_c2w is None else np.asarray(R_c2w, dtype=np.float64).T
        T = -R @ center
    return CameraView(
        id=id, width=width, height=height, fx=f, fy=f, cx=width / 2, cy=height / 2,
        rotation=R, translation=T, image=image,
    )
