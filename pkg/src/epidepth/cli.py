"""Command line entry point: ``epidepth {synth,densify,eval,sweep}``.

Exit codes: 0 success, 2 missing or unreadable input data, 3 invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .blend import BlendStrategy
from .errors import BadPreset, EmptyCloud, FormatError, InconsistentScene, IoFailure, MissingFlow, NoOverlap
from .evalkit import covisible_mask, evaluate_run, format_table, reprojection_eval, threshold_sweep, ablation_run
from .flow import FlowNoiseSpec
from .fuse import densify_scene
from .io import load_run, load_scene, save_run, save_scene
from .synth import SceneBundle, add_flow_noise, generate_scene
from .validation import STRATEGY_NAMES

log = logging.getLogger("epidepth")

EXIT_OK = 0
EXIT_DATA = 2
EXIT_CONFIG = 3


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _threads(args) -> int | None:
    env = os.environ.get("NEXUS_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"NEXUS_THREADS must be an integer, got {env!r}") from None
    else:
        n = args.threads
    if n is not None and n != -1 and n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def _depth_bounds(args):
    if args.depth_min is None and args.depth_max is None:
        return None
    return (args.depth_min or 0.0, args.depth_max if args.depth_max is not None else float("inf"))


def _dump(path, doc):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
        return
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def cmd_synth(args) -> int:
    bundle = generate_scene(args.preset, args.seed)
    spec = FlowNoiseSpec(args.noise_sigma, args.outlier_fraction, args.outlier_max, args.seed)
    bundle = add_flow_noise(bundle, spec)
    out = save_scene(bundle, args.out)
    print(f"wrote {len(bundle.views)} views and {len(bundle.flows)} flows to {out}")
    return EXIT_OK


def _densify(args, scene):
    depth_maps, cloud, stats = densify_scene(
        scene,
        args.strategy,
        args.threshold,
        args.stride,
        _depth_bounds(args),
        prune=not args.no_prune,
        n_jobs=_threads(args),
        return_stats=True,
    )
    summary = {
        "views": [v.id for v in scene.views],
        "strategy": args.strategy,
        "epsilon_d": args.threshold,
        "prune": not args.no_prune,
        "stride": args.stride,
        "points": len(cloud),
        "pruned_fraction": stats.pruned_fraction,
        "valid_fraction": {
            str(v.id): float(depth_maps[v.id].mask[:: args.stride, :: args.stride].mean()) for v in scene.views
        },
    }
    return depth_maps, cloud, summary


def _holdout_split(scene, holdout):
    if holdout is None:
        return scene, None
    if holdout not in scene.view_ids:
        raise ConfigError(f"holdout view {holdout} is not in the scene")
    return scene.subset([i for i in scene.view_ids if i != holdout]), scene.view(holdout)


def cmd_densify(args) -> int:
    scene, _ = load_scene(args.scene)
    scene, _ = _holdout_split(scene, args.holdout)
    depth_maps, cloud, summary = _densify(args, scene)
    save_run(args.out, depth_maps, cloud, summary)
    print(f"{summary['points']} points from {len(scene.views)} views -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    scene, gt = load_scene(args.scene)
    missing = [i for i in scene.view_ids if i not in gt]
    if missing:
        raise FileNotFoundError(f"ground-truth depth missing for views {missing}")
    inputs, holdout = _holdout_split(scene, args.holdout)
    if args.run:
        depth_maps, cloud, summary = load_run(args.run)
        if holdout is not None and holdout.id in summary["views"]:
            raise ConfigError(f"view {holdout.id} was used to build {args.run}")
    else:
        depth_maps, cloud, summary = _densify(args, inputs)

    report = evaluate_run(depth_maps, cloud, gt)
    report.pruned_fraction = summary.get("pruned_fraction", 0.0)
    if holdout is not None:
        used = [scene.view(int(i)) for i in summary["views"]]
        region = covisible_mask(holdout, gt[holdout.id], used, gt)
        report.holdout = {"view": holdout.id, **reprojection_eval(cloud, holdout, gt[holdout.id], region)}
    if args.ablation:
        bundle = SceneBundle(inputs.views, inputs.flows, {i: gt[i] for i in inputs.view_ids}, args.seed, "")
        report.table = ablation_run(bundle, None, args.threshold, args.stride, n_jobs=_threads(args)).table
        sys.stderr.write(format_table(report.table))
    _dump(args.out, report.to_dict())
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.thresholds:
        raise ConfigError("--thresholds needs at least one value")
    scene, gt = load_scene(args.scene)
    scene, _ = _holdout_split(scene, args.holdout)
    gt = gt if all(i in gt for i in scene.view_ids) else None
    rows = threshold_sweep(scene, args.thresholds, args.strategy, args.stride, gt, _threads(args))
    sys.stdout.write(format_table(rows))
    if args.out:
        _dump(args.out, {"rows": rows, "strategy": args.strategy, "stride": args.stride})
    return EXIT_OK


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="epidepth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic scene directory")
    p.add_argument("--preset", default="converging3", help="rectified2, converging3 or ring_n(k)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--noise-sigma", type=float, default=0.0, help="Gaussian flow noise (pixels)")
    p.add_argument("--outlier-fraction", type=float, default=0.0)
    p.add_argument("--outlier-max", type=float, default=0.0, help="outlier displacement radius (pixels)")
    p.set_defaults(func=cmd_synth)

    def common(p, out_required=False):
        p.add_argument("--scene", required=True, help="scene directory or scene.json")
        p.add_argument("--out", required=out_required)
        p.add_argument("--strategy", choices=STRATEGY_NAMES, default="frdb")
        p.add_argument("--stride", type=int, default=1)
        p.add_argument("--holdout", type=int, default=None, help="view id to leave out of densification")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("densify", help="depth maps and point cloud from a scene")
    common(p, out_required=True)
    p.add_argument("--threshold", type=float, default=1.0, help="pruning distance in pixels")
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--depth-min", type=float, default=None)
    p.add_argument("--depth-max", type=float, default=None)
    p.set_defaults(func=cmd_densify)

    p = sub.add_parser("eval", help="depth and holdout metrics against ground truth")
    common(p)
    p.add_argument("--run", default=None, help="densify output to evaluate (default: densify now)")
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--depth-min", type=float, default=None)
    p.add_argument("--depth-max", type=float, default=None)
    p.add_argument("--ablation", action="store_true", help="add the strategy x pruning table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="point count and error per pruning threshold")
    common(p)
    p.add_argument("--thresholds", type=_float_list, default=[0.01, 0.1, 1.0, 2.0, 3.0, 4.0])
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, MissingFlow, FormatError, IoFailure, InconsistentScene, EmptyCloud, NoOverlap) as exc:
        log.error("error: %s", exc)
        return EXIT_DATA
    except (ConfigError, BadPreset, ValueError) as exc:
        log.error("error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
