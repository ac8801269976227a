"""Depth metrics, held-out reprojection, threshold sweeps and the strategy ablation."""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .blend import BlendStrategy
from .errors import DimensionMismatch, EmptyCloud, NoOverlap
from .flow import FlowNoiseSpec, in_bounds
from .fuse import DepthMap, PointCloud, Scene, check_scene, densify_candidates, pair_kernels, view_candidates
from .geometry import CameraView, backproject_points, project_points
from .validation import check_epsilon, check_n_jobs, check_stride


def _errors(pred: DepthMap, gt: DepthMap) -> tuple[np.ndarray, np.ndarray, int]:
    if pred.depth.shape != gt.depth.shape:
        raise DimensionMismatch(f"prediction is {pred.width}x{pred.height}, ground truth is {gt.width}x{gt.height}")
    both = pred.mask & gt.mask
    return np.abs(pred.depth[both] - gt.depth[both]), gt.depth[gt.mask], int(gt.mask.sum())


def _summarise(err: np.ndarray, gt_values: np.ndarray, n_gt: int) -> dict:
    if err.size == 0:
        raise NoOverlap("prediction and ground truth share no valid pixel")
    mae = float(err.mean())
    span = float(gt_values.max() - gt_values.min())
    # relative to the gt depth range; a flat gt falls back to its level
    scale = span if span > 0 else float(gt_values.mean())
    return {
        "mae": mae,
        "rmse": float(np.sqrt(np.mean(err * err))),
        "rel_mae": mae / scale,
        "coverage": err.size / n_gt,
    }


def depth_error(pred: DepthMap, gt: DepthMap) -> dict:
    """MAE, RMSE, range-relative MAE and coverage over pixels valid in both maps."""
    return _summarise(*_errors(pred, gt))


def pooled_depth_error(preds: Mapping[int, DepthMap], gts: Mapping[int, DepthMap]) -> dict:
    """:func:`depth_error` with every pixel of every view in one pool."""
    errs, vals, n = [], [], 0
    for vid in sorted(preds):
        e, g, k = _errors(preds[vid], gts[vid])
        errs.append(e)
        vals.append(g)
        n += k
    if not errs:
        raise NoOverlap("no depth maps to compare")
    return _summarise(np.concatenate(errs), np.concatenate(vals), n)


def _sample_inverse_depth(gt: DepthMap, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of ``1/depth`` (exact on planes); NaN unless all four taps are valid."""
    h, w = gt.depth.shape
    out = np.full(x.shape, np.nan)
    if h < 2 or w < 2:
        return out
    x0 = np.clip(np.floor(x), 0, w - 2).astype(np.int64)
    y0 = np.clip(np.floor(y), 0, h - 2).astype(np.int64)
    ax, ay = x - x0, y - y0
    taps = [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)]
    ok = np.all([gt.mask[r, c] for r, c in taps], axis=0)
    with np.errstate(divide="ignore"):
        inv = [np.where(gt.mask[r, c], 1.0 / gt.depth[r, c], 0.0) for r, c in taps]
    val = (1 - ay) * ((1 - ax) * inv[0] + ax * inv[1]) + ay * ((1 - ax) * inv[2] + ax * inv[3])
    out[ok] = 1.0 / val[ok]
    return out


def covisible_mask(
    holdout: CameraView,
    holdout_gt: DepthMap,
    views: Sequence[CameraView],
    gt_depth: Mapping[int, DepthMap],
    min_views: int = 2,
    rtol: float = 1e-2,
) -> np.ndarray:
    """Holdout pixels whose true surface point is unoccluded in at least ``min_views`` of ``views``."""
    ys, xs = np.nonzero(holdout_gt.mask)
    world = backproject_points(holdout, xs, ys, holdout_gt.depth[ys, xs])
    count = np.zeros(xs.shape, np.int64)
    for v in views:
        px, z = project_points(v, world)
        with np.errstate(invalid="ignore"):
            inside = (z > 1e-9) & in_bounds(px[..., 0], px[..., 1], v.width, v.height, margin=0.0)
        seen = np.zeros(xs.shape, bool)
        ref = _sample_inverse_depth(gt_depth[v.id], px[inside, 0], px[inside, 1])
        seen[inside] = np.abs(ref - z[inside]) <= rtol * z[inside]
        count += seen
    mask = np.zeros(holdout_gt.mask.shape, bool)
    mask[ys, xs] = count >= min_views
    return mask


def zbuffer(cloud: PointCloud, view: CameraView) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Splat ``cloud`` into ``view``; the nearest point wins each pixel.

    Returns ``(depth, mask, subpixel)`` where ``subpixel`` holds the exact
    projection of the winning point.
    """
    h, w = view.shape
    depth = np.zeros((h, w))
    sub = np.full((h, w, 2), np.nan)
    mask = np.zeros((h, w), bool)
    if len(cloud) == 0:
        return depth, mask, sub
    px, z = project_points(view, cloud.positions)
    ix = np.rint(px[:, 0])
    iy = np.rint(px[:, 1])
    with np.errstate(invalid="ignore"):
        keep = (z > 1e-9) & (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    ix, iy, z, px = ix[keep].astype(np.int64), iy[keep].astype(np.int64), z[keep], px[keep]
    flat = iy * w + ix
    order = np.lexsort((z, flat))
    first = np.unique(flat[order], return_index=True)[1]
    win = order[first]
    depth[iy[win], ix[win]] = z[win]
    sub[iy[win], ix[win]] = px[win]
    mask[iy[win], ix[win]] = True
    return depth, mask, sub


def reprojection_eval(cloud: PointCloud, holdout: CameraView, gt_depth: DepthMap, region: np.ndarray | None = None) -> dict:
    """Median depth error and coverage of ``cloud`` seen from an unused view.

    Each winning point is compared with the ground truth interpolated at its
    own sub-pixel projection.  ``region`` restricts both numbers (default: the
    valid gt pixels).
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot evaluate an empty cloud")
    if holdout.id in set(cloud.src_view.tolist()):
        raise ValueError(f"view {holdout.id} contributed to the cloud and cannot be held out")
    if gt_depth.depth.shape != holdout.shape:
        raise DimensionMismatch("holdout gt depth does not match the view size")
    region = gt_depth.mask if region is None else np.asarray(region, bool) & gt_depth.mask
    depth, hit, sub = zbuffer(cloud, holdout)
    hit &= region
    ref = _sample_inverse_depth(gt_depth, sub[hit, 0], sub[hit, 1])
    err = np.abs(depth[hit] - ref)
    err = err[np.isfinite(err)]
    n_region = int(region.sum())
    return {
        "median_depth_err": float(np.median(err)) if err.size else float("nan"),
        "coverage": int(hit.sum()) / n_region if n_region else 0.0,
        "pixels": int(hit.sum()),
        "region": n_region,
    }


# -- reports ------------------------------------------------------------------------


def config_label(strategy, prune: bool) -> str:
    name = BlendStrategy.parse(strategy).value
    return f"{name}+ffdp" if prune else name


@dataclass
class EvalReport:
    """Metrics of one densification plus optional comparison rows and holdout numbers."""

    per_view: dict[int, dict] = field(default_factory=dict)
    pooled: dict = field(default_factory=dict)
    valid_fraction: float = 0.0
    pruned_fraction: float = 0.0
    point_count: int = 0
    table: list[dict] = field(default_factory=list)
    holdout: dict | None = None

    def __post_init__(self):
        for name in ("valid_fraction", "pruned_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    @property
    def best(self) -> str | None:
        """Label of the table row with the lowest MAE (first wins ties)."""
        if not self.table:
            return None
        return min(self.table, key=lambda r: r["mae"])["config"]

    def row(self, label: str) -> dict:
        for r in self.table:
            if r["config"] == label:
                return r
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "per_view": {str(k): v for k, v in sorted(self.per_view.items())},
            "pooled": self.pooled,
            "valid_fraction": self.valid_fraction,
            "pruned_fraction": self.pruned_fraction,
            "point_count": self.point_count,
            "table": self.table,
            "holdout": self.holdout,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_table(self) -> str:
        return format_table(self.table)


def format_table(rows: Sequence[Mapping]) -> str:
    """Aligned plain-text table; floats get 6 significant digits."""
    if not rows:
        return ""
    cols = list(rows[0].keys())

    def fmt(v):
        return f"{v:.6g}" if isinstance(v, float) else str(v)

    cells = [[fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(wd) for c, wd in zip(cols, widths)).rstrip()]
    lines.append("  ".join("-" * wd for wd in widths))
    for row in cells:
        lines.append("  ".join(v.rjust(wd) if i else v.ljust(wd) for i, (v, wd) in enumerate(zip(row, widths))).rstrip())
    return "\n".join(lines) + "\n"


def _candidate_sets(scene: Scene, stride: int, n_jobs: int):
    check_scene(scene)
    kernels = pair_kernels(scene.views)
    return [(v, view_candidates(scene, v, stride, kernels, n_jobs)) for v in scene.views]


def evaluate_run(depth_maps: Mapping[int, DepthMap], cloud: PointCloud, gt_depth: Mapping[int, DepthMap], stats=None) -> EvalReport:
    per_view = {}
    for vid in sorted(depth_maps):
        m = depth_error(depth_maps[vid], gt_depth[vid])
        m["valid_fraction"] = float(depth_maps[vid].mask.mean())
        per_view[vid] = m
    n_pix = sum(dm.mask.size for dm in depth_maps.values())
    return EvalReport(
        per_view=per_view,
        pooled=pooled_depth_error(depth_maps, gt_depth),
        valid_fraction=sum(int(dm.mask.sum()) for dm in depth_maps.values()) / n_pix if n_pix else 0.0,
        pruned_fraction=stats.pruned_fraction if stats is not None else 0.0,
        point_count=len(cloud),
    )


def ablation_run(
    scene,
    noise: FlowNoiseSpec | None = None,
    epsilon_d: float = 1.0,
    stride: int = 1,
    strategies=tuple(BlendStrategy),
    n_jobs: int | None = 1,
) -> EvalReport:
    """Every strategy with and without pruning on one (optionally re-noised) bundle.

    Candidates are computed once; the eight rows differ only in blending and
    pruning.  The report's headline metrics describe ``frdb+ffdp``.
    """
    from .synth import add_flow_noise

    epsilon_d = check_epsilon(epsilon_d)
    stride = check_stride(stride)
    if noise is not None:
        scene = add_flow_noise(scene, noise)
    sets = _candidate_sets(scene, stride, check_n_jobs(n_jobs))

    table, headline = [], None
    for prune in (False, True):
        for strategy in map(BlendStrategy.parse, strategies):
            maps, cloud, stats = densify_candidates(sets, strategy, epsilon_d if prune else None)
            pooled = pooled_depth_error(maps, scene.gt_depth)
            table.append({
                "config": config_label(strategy, prune),
                "mae": pooled["mae"],
                "rmse": pooled["rmse"],
                "rel_mae": pooled["rel_mae"],
                "coverage": pooled["coverage"],
                "points": len(cloud),
                "pruned_fraction": stats.pruned_fraction,
            })
            if prune and strategy is BlendStrategy.FRDB:
                headline = evaluate_run(maps, cloud, scene.gt_depth, stats)
    report = headline or EvalReport()
    report.table = table
    return report


def threshold_sweep(
    scene: Scene,
    thresholds: Sequence[float],
    strategy="frdb",
    stride: int = 1,
    gt_depth: Mapping[int, DepthMap] | None = None,
    n_jobs: int | None = 1,
) -> list[dict]:
    """Point count (and MAE when ``gt_depth`` is given) per pruning threshold."""
    if len(thresholds) == 0:
        raise ValueError("need at least one threshold")
    eps = [check_epsilon(t) for t in thresholds]
    strategy = BlendStrategy.parse(strategy)
    sets = _candidate_sets(scene, check_stride(stride), check_n_jobs(n_jobs))
    rows = []
    for e in eps:
        maps, cloud, stats = densify_candidates(sets, strategy, e)
        row = {"epsilon_d": e, "points": len(cloud), "pruned_fraction": stats.pruned_fraction}
        if gt_depth is not None:
            row["mae"] = pooled_depth_error(maps, gt_depth)["mae"]
        rows.append(row)
    return rows
