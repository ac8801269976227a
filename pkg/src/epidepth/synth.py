"""Synthetic calibrated scenes with exact depth and flow.

Scenes are a tilted backdrop plane, a ground plane and a few spheres, all
colored with a smooth procedural noise texture evaluated at the world-space
hit point, so colors are consistent across views.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BadPreset
from .flow import FlowField, FlowNoiseSpec, displace_matches, perturb_flow, synth_flow
from .fuse import DepthMap, Scene
from .geometry import CameraView, look_at, make_view, rotation_about

SCENE_CENTER = np.array([0.0, 0.0, 5.0])
IMAGE_SIZE = 100
FOCAL = 100.0


@dataclass(eq=False)
class SceneBundle(Scene):
    gt_depth: dict[int, DepthMap]
    seed: int
    preset: str

    def subset(self, view_ids) -> "SceneBundle":
        base = Scene.subset(self, view_ids)
        return SceneBundle(
            base.views, base.flows, {i: d for i, d in self.gt_depth.items() if i in set(view_ids)},
            self.seed, self.preset,
        )

    def with_flows(self, flows) -> "SceneBundle":
        return SceneBundle(list(self.views), dict(flows), self.gt_depth, self.seed, self.preset)

    def with_views(self, views) -> "SceneBundle":
        return SceneBundle(list(views), dict(self.flows), self.gt_depth, self.seed, self.preset)


# -- surfaces -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Plane:
    point: np.ndarray
    normal: np.ndarray
    texture_seed: int

    def intersect(self, origin, dirs):
        denom = dirs @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.point - origin) @ self.normal) / denom
        return np.where(np.abs(denom) > 1e-12, t, np.inf)


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float
    texture_seed: int

    def intersect(self, origin, dirs):
        oc = origin - self.center
        a = np.einsum("...i,...i->...", dirs, dirs)
        b = dirs @ oc
        c = oc @ oc - self.radius**2
        disc = b * b - a * c
        root = np.sqrt(np.maximum(disc, 0.0))
        # numerically stable pair of roots
        qq = -(b + np.copysign(root, b))
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = qq / a
            t2 = c / qq
        lo, hi = np.minimum(t1, t2), np.maximum(t1, t2)
        t = np.where(lo > 1e-9, lo, np.where(hi > 1e-9, hi, np.inf))
        return np.where(disc >= 0, t, np.inf)


def _lattice_noise(points: np.ndarray, seed: int) -> np.ndarray:
    """Smooth value noise in [0, 1] on the unit integer lattice (quintic fade)."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(256)
    values = rng.uniform(0.0, 1.0, 256)
    base = np.floor(points)
    frac = points - base
    fade = frac**3 * (frac * (frac * 6 - 15) + 10)
    ib = base.astype(np.int64) & 255
    out = np.zeros(points.shape[:-1])
    for corner in range(8):
        off = np.array([(corner >> k) & 1 for k in range(3)])
        idx = perm[(perm[(perm[(ib[..., 0] + off[0]) & 255] + ib[..., 1] + off[1]) & 255] + ib[..., 2] + off[2]) & 255]
        w = np.prod(np.where(off == 1, fade, 1.0 - fade), axis=-1)
        out += w * values[idx]
    return out


def texture(points: np.ndarray, seed: int) -> np.ndarray:
    """Multi-octave noise color (uint8 RGB) at world points ``(..., 3)``."""
    rgb = np.zeros(points.shape[:-1] + (3,))
    for ch in range(3):
        acc = np.zeros(points.shape[:-1])
        amp, freq, total = 1.0, 2.5, 0.0
        for octave in range(5):
            acc += amp * _lattice_noise(points * freq + 17.0 * ch, seed * 1009 + ch * 31 + octave)
            total += amp
            amp *= 0.6
            freq *= 2.1
        v = acc / total
        # fine stripes keep neighbouring pixels from sharing a color
        stripe = 0.5 + 0.5 * np.sin(points @ np.array([37.0, 23.0 + 7 * ch, 29.0]) + ch)
        rgb[..., ch] = 0.75 * (v - 0.5) * 2.2 + 0.5 * 1.0 + 0.25 * (stripe - 0.5)
    return np.clip(np.round(255 * rgb), 0, 255).astype(np.uint8)


def render(view: CameraView, surfaces) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ray-cast ``surfaces``; returns ``(depth, mask, rgb)``.

    Rays use the un-normalised direction ``R^T K^-1 (x, y, 1)`` so the hit
    parameter equals z-depth in the camera frame.
    """
    ys, xs = np.mgrid[0 : view.height, 0 : view.width]
    dirs = view.normalized_rays(xs, ys) @ view.rotation
    origin = view.center
    hits = np.stack([s.intersect(origin, dirs) for s in surfaces])
    hits = np.where(hits > 1e-9, hits, np.inf)
    which = np.argmin(hits, axis=0)
    depth = np.min(hits, axis=0)
    mask = np.isfinite(depth)
    points = origin + dirs * np.where(mask, depth, 0.0)[..., None]
    rgb = np.zeros(depth.shape + (3,), np.uint8)
    for k, s in enumerate(surfaces):
        sel = mask & (which == k)
        rgb[sel] = texture(points[sel], s.texture_seed)
    return np.where(mask, depth, 0.0), mask, rgb


def _surfaces(rng: np.random.Generator, seed: int, n_spheres: int = 3):
    tilt = rng.uniform(-0.15, 0.15, size=2)
    normal = np.array([tilt[0], tilt[1], -1.0])
    normal /= np.linalg.norm(normal)
    surfaces = [
        Plane(np.array([0.0, 0.0, 6.0 + rng.uniform(-0.2, 0.2)]), normal, seed * 7 + 1),
        Plane(np.array([0.0, 1.4 + rng.uniform(-0.1, 0.1), 0.0]), np.array([0.0, -1.0, 0.0]), seed * 7 + 2),
    ]
    for k in range(n_spheres):
        center = SCENE_CENTER + np.array([rng.uniform(-1.1, 1.1), rng.uniform(-0.5, 0.5), rng.uniform(-1.2, 0.0)])
        surfaces.append(Sphere(center, rng.uniform(0.5, 0.9), seed * 7 + 3 + k))
    return surfaces


# -- rigs -------------------------------------------------------------------------


def rig_rectified2() -> list[CameraView]:
    return [make_view(0, (0.0, 0.0, 0.0)), make_view(1, (1.0, 0.0, 0.0))]


def rig_converging3() -> list[CameraView]:
    a = np.deg2rad(10.0)
    return [
        make_view(0, (-0.5, 0.0, 0.0), rotation_about("y", a)),
        make_view(1, (0.5, 0.0, 0.0), rotation_about("y", -a)),
        make_view(2, (0.0, -0.4, 2.0), target=SCENE_CENTER),
    ]


def rig_ring(k: int, radius: float = 5.0, spacing_deg: float = 12.0, elevation: float = 0.4) -> list[CameraView]:
    """``k`` cameras on a horizontal circle around the scene center, all facing it."""
    angles = np.deg2rad(spacing_deg) * (np.arange(k) - (k - 1) / 2)
    views = []
    for i, phi in enumerate(angles):
        center = SCENE_CENTER + np.array([radius * np.sin(phi), -elevation, -radius * np.cos(phi)])
        views.append(make_view(i, center, target=SCENE_CENTER))
    return views


_RING = re.compile(r"^ring_?n?\((\d+)\)$|^ring(\d+)$")


def parse_preset(preset: str) -> tuple[str, int]:
    p = str(preset).strip().lower()
    if p in ("rectified2", "converging3"):
        return p, int(p[-1])
    m = _RING.match(p)
    if m:
        k = int(m.group(1) or m.group(2))
        if k < 2:
            raise BadPreset("ring_n needs at least 2 cameras")
        return "ring_n", k
    raise BadPreset(f"unknown preset {preset!r}; expected rectified2, converging3 or ring_n(k)")


def exact_flows(views, gt_depth) -> dict[tuple[int, int], FlowField]:
    return {
        (s.id, d.id): synth_flow(s, d, gt_depth[s.id]) for s in views for d in views if s.id != d.id
    }


def generate_scene(preset: str, seed: int = 0) -> SceneBundle:
    """Deterministic bundle of views, rendered images, gt depth and exact flows."""
    kind, k = parse_preset(preset)
    rng = np.random.default_rng([int(seed), 0x5EED])
    if kind == "rectified2":
        rig = rig_rectified2()
    elif kind == "converging3":
        rig = rig_converging3()
    else:
        rig = rig_ring(k)
    surfaces = _surfaces(rng, int(seed))
    views, gt = [], {}
    for v in rig:
        depth, mask, rgb = render(v, surfaces)
        views.append(v.replace(image=rgb))
        gt[v.id] = DepthMap(v.id, depth, mask)
    name = kind if kind != "ring_n" else f"ring_n({k})"
    return SceneBundle(views, exact_flows(views, gt), gt, int(seed), name)


def perturb_poses(scene: SceneBundle, magnitude: float, seed: int = 0) -> SceneBundle:
    """Jitter every pose; flows and gt depth keep describing the true scene.

    One unit draw per view is scaled by ``magnitude``, so runs that share a seed
    perturb along the same directions and differ only in size.
    """
    if magnitude < 0:
        raise ValueError("magnitude must be >= 0")
    if magnitude == 0:
        return scene
    rng = np.random.default_rng([int(seed), 0xCA1B])
    views = []
    for v in scene.views:
        dt = rng.uniform(-1.0, 1.0, 3) * magnitude
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(-1.0, 1.0) * magnitude
        dR = Rotation.from_rotvec(axis * angle).as_matrix()
        R = dR @ v.rotation
        # re-orthonormalise against accumulated rounding
        u, _, vt = np.linalg.svd(R)
        views.append(v.replace(rotation=u @ vt, translation=v.translation + dt))
    return scene.with_views(views)


def pair_seed(seed: int, src_id: int, dst_id: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(src_id), int(dst_id)]).generate_state(1)[0])


def add_flow_noise(scene: SceneBundle, spec: FlowNoiseSpec) -> SceneBundle:
    """Perturb every flow with ``spec``, deriving an independent stream per ordered pair."""
    if spec.is_zero:
        return scene
    flows = {}
    for (s, d), f in sorted(scene.flows.items()):
        pair_spec = FlowNoiseSpec(spec.gaussian_sigma, spec.outlier_fraction, spec.outlier_max, pair_seed(spec.seed, s, d))
        flows[(s, d)] = perturb_flow(f, pair_spec)
    return scene.with_flows(flows)


def offline_outliers(
    flow: FlowField, src: CameraView, dst: CameraView, fraction: float, distance: float, seed: int = 0
) -> tuple[FlowField, np.ndarray]:
    """Displace a random subset of valid matches by ``distance`` perpendicular to their epipolar line.

    Returns the new flow and the boolean mask of displaced pixels.
    """
    from .nexus import PairKernel

    rng = np.random.default_rng(seed)
    idx = np.flatnonzero(flow.valid)
    chosen = rng.choice(idx, size=int(round(fraction * idx.size)), replace=False)
    mask = np.zeros(flow.valid.shape, bool)
    mask.flat[chosen] = True
    ys, xs = np.mgrid[0 : flow.height, 0 : flow.width]
    abc = PairKernel(src, dst).lines(xs, ys)
    n = np.hypot(abc[..., 0], abc[..., 1])
    n = np.where(n > 0, n, 1.0)
    sign = np.where(rng.uniform(size=mask.shape) < 0.5, -1.0, 1.0)
    du = sign * distance * abc[..., 0] / n
    dv = sign * distance * abc[..., 1] / n
    return displace_matches(flow, mask, du, dv), mask


STANDARD_NOISE = FlowNoiseSpec(gaussian_sigma=0.5, outlier_fraction=0.05, outlier_max=20.0)
