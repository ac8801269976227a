"""End-to-end acceptance checks, one verdict line per criterion."""

import dataclasses
import os
import time

import numpy as np
import pytest

from epidepth.blend import sensitivity_gradient
from epidepth.evalkit import ablation_run, covisible_mask, pooled_depth_error, reprojection_eval, threshold_sweep
from epidepth.flow import FlowField, FlowNoiseSpec, read_flo, write_flo
from epidepth.fuse import DepthMap, PointCloud, densify_scene, pair_kernels, read_pfm, read_ply, view_candidates, write_pfm, write_ply
from epidepth.geometry import epipolar_line, fundamental_matrix
from epidepth.nexus import Status, epipolar_depth, perpendicular_foot
from epidepth.synth import STANDARD_NOISE, add_flow_noise, generate_scene, offline_outliers, perturb_poses

import oracles
from conftest import ACCEPTANCE_LINES, view_from

pytestmark = pytest.mark.acceptance


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def test_criterion_1_triangulation_exactness():
    runs = [("rectified2", s) for s in range(7)] + [("converging3", s) for s in range(7)] + [("ring_n(5)", s) for s in range(6)]
    worst_gt = worst_mid = 0.0
    pixels = 0
    start = time.perf_counter()
    for preset, seed in runs:
        b = generate_scene(preset, seed)
        kernels = pair_kernels(b.views)
        for v in b.views:
            vc = view_candidates(b, v, 1, kernels)
            gt = b.gt_depth[v.id].depth
            for k, d in enumerate(vc.dst_ids):
                ok = vc.status[k] == Status.VALID
                ys, xs = vc.ys[ok], vc.xs[ok]
                depth = vc.depth[k][ok]
                worst_gt = max(worst_gt, np.max(np.abs(depth - gt[ys, xs]) / gt[ys, xs]))
                # oracle: midpoint of the source ray and the ray through the flow match
                dst, flow = b.view(d), b.flow(v.id, d)
                match = np.stack([xs + flow.u[ys, xs], ys + flow.v[ys, xs]], -1)
                r1 = oracles.world_rays(v.K, v.rotation, np.stack([xs, ys], -1).astype(float))
                r2 = oracles.world_rays(dst.K, dst.rotation, match)
                X = oracles.midpoint_triangulate_many(v.center, r1, dst.center, r2)
                zm = oracles.depth_in(v.rotation, v.translation, X)
                worst_mid = max(worst_mid, np.max(np.abs(depth - zm) / zm))
                pixels += len(xs)
    elapsed = time.perf_counter() - start
    ok = worst_gt < 1e-9 and worst_mid < 1e-7 and elapsed < 30
    verdict(1, ok, f"{len(runs)} bundles, {pixels} candidates, max rel err {worst_gt:.2e} vs gt, {worst_mid:.2e} vs midpoint, {elapsed:.1f}s")
    assert ok


def test_criterion_2_gradient_correctness():
    rng = np.random.default_rng(2024)
    cases = []
    for _ in range(10_000):
        K1, R1, T1, K2, R2, T2, X = oracles.random_pair(rng)
        src, dst = view_from(K1, R1, T1, 0), view_from(K2, R2, T2, 1)
        p1, _ = oracles.project(K1, R1, T1, X)
        p2, _ = oracles.project(K2, R2, T2, X)
        cases.append((src, dst, p1, p2))

    start = time.perf_counter()
    results = []
    for src, dst, p1, p2 in cases:
        line = epipolar_line(fundamental_matrix(src, dst), p1)
        foot = perpendicular_foot(line, p2)
        results.append((line.direction, foot, sensitivity_gradient(src, dst, p1, foot)))
    elapsed = time.perf_counter() - start

    worst_fd = worst_id = 0.0
    for (src, dst, p1, _), (direction, foot, g) in zip(cases, results):
        fd = oracles.fd_sensitivity(src.K, src.rotation, src.translation, dst.K, dst.rotation, dst.translation, p1, foot, direction)
        worst_fd = max(worst_fd, abs(g - fd) / abs(fd))
        # dis_ref two ways: sine rule in the camera triangle, and depth times ray length
        b = dst.center - src.center
        r1 = oracles.world_ray(src.K, src.rotation, p1)
        r2 = oracles.world_ray(dst.K, dst.rotation, foot)
        t = np.linalg.norm(b)
        alpha = np.arccos(np.clip(r2 @ -b / t, -1, 1))
        beta = np.arccos(np.clip(r1 @ b / t, -1, 1))
        via_sines = t * np.sin(alpha) / np.sin(alpha + beta)
        via_depth = epipolar_depth(src, dst, p1, foot) * np.linalg.norm(np.linalg.solve(src.K, [p1[0], p1[1], 1.0]))
        worst_id = max(worst_id, abs(via_sines - via_depth) / via_depth)
    ok = worst_fd < 1e-4 and worst_id < 1e-7 and elapsed < 10
    verdict(2, ok, f"10000 configs, max rel diff {worst_fd:.2e} vs finite differences, identity {worst_id:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_3_frdb_beats_average():
    beats, best, detail = 0, 0, []
    for seed in range(10):
        report = ablation_run(generate_scene("converging3", seed), FlowNoiseSpec(gaussian_sigma=0.5, seed=seed))
        frdb, ave = report.row("frdb")["mae"], report.row("average")["mae"]
        beats += frdb < ave
        best += report.best == "frdb+ffdp"
        detail.append(f"{seed}:{frdb / ave:.3f}/{report.best}")
    ok = beats >= 9 and best >= 8
    verdict(3, ok, f"FRDB < Average in {beats}/10 seeds, FRDB+FFDP best in {best}/10 seeds [{' '.join(detail)}]")
    assert ok


def test_criterion_4_pruning_guarantees():
    displaced = kept_outliers = clean = pruned_clean = exact_pruned = 0
    for preset in ("rectified2", "converging3", "ring_n(5)"):
        b = generate_scene(preset, 0)
        kernels = pair_kernels(b.views)
        for eps in (0.01, 0.1, 1.0):
            exact_pruned += densify_scene(b, epsilon_d=eps, kernels=kernels, return_stats=True)[2].pruned
            flows, masks = dict(b.flows), {}
            for (s, d), f in b.flows.items():
                flows[(s, d)], masks[(s, d)] = offline_outliers(f, b.view(s), b.view(d), 0.1, 2 * eps, seed=100 * s + d)
            scene = b.with_flows(flows)
            for v in scene.views:
                vc = view_candidates(scene, v, 1, kernels)
                for k, d in enumerate(vc.dst_ids):
                    valid = vc.status[k] == Status.VALID
                    kept = valid & (vc.residual[k] < eps)
                    out = masks[(v.id, d)]
                    displaced += int(out.sum())
                    kept_outliers += int(kept[out].sum())
                    clean += int((valid & ~out).sum())
                    pruned_clean += int((valid & ~out & ~kept).sum())
    ok = kept_outliers == 0 and pruned_clean == 0 and exact_pruned == 0 and displaced > 0
    verdict(
        4,
        ok,
        f"{kept_outliers}/{displaced} displaced matches survive, {pruned_clean}/{clean} clean matches pruned, "
        f"{exact_pruned} pruned on exact flow",
    )
    assert ok


def test_criterion_5_threshold_sweep():
    grid = [0.01, 0.1, 1.0, 2.0, 3.0, 4.0]
    ok, detail = True, []
    for seed in range(3):
        noisy = add_flow_noise(generate_scene("converging3", seed), dataclasses.replace(STANDARD_NOISE, seed=seed))
        counts = [r["points"] for r in threshold_sweep(noisy, grid)]
        ratio = counts[-1] / counts[-2]
        ok &= all(a < b for a, b in zip(counts, counts[1:])) and ratio < 1.05
        detail.append(f"seed {seed}: {counts} ratio {ratio:.4f}")
    verdict(5, ok, "; ".join(detail))
    assert ok


def pose_curve(preset, seed):
    b = generate_scene(preset, seed)
    return [pooled_depth_error(densify_scene(perturb_poses(b, m, seed))[0], b.gt_depth)["mae"] for m in (0, 0.02, 0.04, 0.06, 0.08, 0.1)]


def test_criterion_6_calibration_sensitivity():
    curves = {seed: pose_curve("ring_n(5)", seed) for seed in range(5)}
    ok = all(np.all(np.diff(c) >= 0) for c in curves.values())
    verdict(6, ok, "ring_n(5) MAE by perturbation: " + "; ".join(f"{s}: {np.round(c, 4).tolist()}" for s, c in curves.items()))
    # reported only: heavy-tailed failures on this rig make the mean erratic past 0.06 rad
    info = {seed: pose_curve("converging3", seed) for seed in range(5)}
    monotone = sum(bool(np.all(np.diff(c) >= 0)) for c in info.values())
    ACCEPTANCE_LINES.append(f"criterion 6: INFO  converging3 monotone on {monotone}/5 seeds")
    assert ok


def test_criterion_7_determinism_and_formats():
    noisy = add_flow_noise(generate_scene("converging3", 7), dataclasses.replace(STANDARD_NOISE, seed=7))
    outputs = []
    for n in sorted({1, 2, os.cpu_count() or 1}):
        maps, cloud = densify_scene(noisy, n_jobs=n)
        outputs.append((write_ply(cloud), tuple(write_pfm(maps[i]) for i in sorted(maps))))
    same_threads = all(o == outputs[0] for o in outputs)

    rng = np.random.default_rng(7)
    u, v = rng.normal(0, 30, (2, 37, 53)).astype(np.float32)
    flow = FlowField(0, 1, u.astype(np.float64), v.astype(np.float64), rng.uniform(size=(37, 53)) > 0.1)
    flo = write_flo(flow)
    back = read_flo(flo)
    flo_ok = write_flo(back) == flo and np.array_equal(back.u[back.valid], flow.u[flow.valid]) and np.array_equal(back.valid, flow.valid)

    depth = rng.uniform(0.1, 50, (41, 29)).astype(np.float32).astype(np.float64)
    mask = rng.uniform(size=depth.shape) > 0.2
    pfm = write_pfm(DepthMap(0, depth, mask))
    dm = read_pfm(pfm)
    pfm_ok = write_pfm(dm) == pfm and np.array_equal(dm.depth[mask], depth[mask]) and np.array_equal(dm.mask, mask)

    pos = rng.normal(0, 5, (500, 3)).astype(np.float32).astype(np.float64)
    col = rng.integers(0, 256, (500, 3))
    ply = write_ply(PointCloud(pos, col, np.zeros(500), np.zeros((500, 2))))
    pc = read_ply(ply)
    ply_ok = write_ply(pc) == ply and np.array_equal(pc.positions, pos) and np.array_equal(pc.colors, col)

    ok = same_threads and flo_ok and pfm_ok and ply_ok
    verdict(7, ok, f"threads {sorted({1, 2, os.cpu_count() or 1})} identical={same_threads}, round trips flo={flo_ok} pfm={pfm_ok} ply={ply_ok}")
    assert ok


def test_criterion_8_holdout_coverage():
    ok, detail = True, []
    for seed in range(5):
        b = generate_scene("ring_n(5)", seed)
        hold, gt = b.view(2), b.gt_depth[2]
        inputs = b.subset([0, 1, 3])
        _, cloud = densify_scene(inputs)
        r = reprojection_eval(cloud, hold, gt, covisible_mask(hold, gt, inputs.views, b.gt_depth))
        # monotonicity on a fixed region: every holdout pixel with ground truth
        cov = [reprojection_eval(densify_scene(b.subset(ids))[1], hold, gt, gt.mask)["coverage"] for ids in ([0, 1], [0, 1, 3], [0, 1, 3, 4])]
        ok &= r["coverage"] > 0.9 and r["median_depth_err"] < 1e-3 and cov[0] <= cov[1] <= cov[2]
        detail.append(f"seed {seed}: cov {r['coverage']:.3f} med {r['median_depth_err']:.1e} 2/3/4 {np.round(cov, 3).tolist()}")
    verdict(8, ok, "; ".join(detail))
    assert ok
