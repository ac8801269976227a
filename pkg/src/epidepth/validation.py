"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

import numpy as np

ROTATION_TOL = 1e-9

STRATEGY_NAMES = ("average", "nearest", "weighted", "frdb")


def check_rotation(rotation) -> np.ndarray:
    """Return ``rotation`` as a float64 3x3 array, raising if it is not in SO(3)."""
    R = np.array(rotation, dtype=np.float64)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got shape {R.shape}")
    if not np.all(np.isfinite(R)):
        raise ValueError("rotation contains non-finite entries")
    if np.max(np.abs(R.T @ R - np.eye(3))) > ROTATION_TOL:
        raise ValueError("rotation is not orthonormal")
    if np.linalg.det(R) <= 0:
        raise ValueError("rotation has negative determinant")
    return R


def check_vector(value, size: int, name: str) -> np.ndarray:
    v = np.array(value, dtype=np.float64).reshape(-1)
    if v.shape != (size,):
        raise ValueError(f"{name} must have {size} components, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def check_positive(value, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value


def check_epsilon(epsilon_d) -> float:
    return check_positive(epsilon_d, "epsilon_d")


def check_stride(stride) -> int:
    if isinstance(stride, bool) or int(stride) != stride or stride < 1:
        raise ValueError(f"stride must be an integer >= 1, got {stride!r}")
    return int(stride)


def check_depth_bounds(bounds):
    if bounds is None:
        return None
    lo, hi = (float(b) for b in bounds)
    if not lo < hi:
        raise ValueError(f"depth bounds must satisfy min < max, got {bounds!r}")
    return lo, hi


def check_grid(array, shape, name: str, dtype=np.float64) -> np.ndarray:
    """Coerce ``array`` to ``dtype`` and check it has exactly ``shape``."""
    out = np.asarray(array, dtype=dtype)
    if out.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {out.shape}")
    return out


def check_image(image, width: int, height: int):
    if image is None:
        return None
    img = np.asarray(image)
    if img.shape != (height, width, 3):
        raise ValueError(f"image must have shape ({height}, {width}, 3), got {img.shape}")
    return img.astype(np.uint8, copy=False)


def check_n_jobs(n_jobs) -> int:
    import os

    if n_jobs is None or n_jobs == -1:
        return os.cpu_count() or 1
    n_jobs = int(n_jobs)
    if n_jobs < 1:
        raise ValueError(f"n_jobs must be >= 1 or -1, got {n_jobs}")
    return n_jobs
