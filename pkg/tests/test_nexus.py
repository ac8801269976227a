import numpy as np
import pytest

from epidepth.errors import DegenerateLine, NumericBlowup
from epidepth.flow import FlowField, synth_flow
from epidepth.fuse import DepthMap
from epidepth.geometry import EpipolarLine, epipolar_line, fundamental_matrix
from epidepth.nexus import (
    PairKernel,
    Status,
    depth_candidate,
    epipolar_depth,
    epipolar_residual,
    in_front,
    perpendicular_foot,
)

import oracles
from conftest import view_from


def test_foot_drops_onto_horizontal_line():
    line = EpipolarLine(0, 1, -50)
    assert np.allclose(perpendicular_foot(line, (30, 52)), [30, 50])
    assert np.allclose(perpendicular_foot(line, (12.5, 50)), [12.5, 50])


def test_foot_is_the_closest_line_point():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b, c = rng.normal(size=3) * [1, 1, 50]
        line = EpipolarLine(a, b, c)
        p = rng.uniform(-50, 150, 2)
        foot = perpendicular_foot(line, p)
        assert abs(a * foot[0] + b * foot[1] + c) / np.hypot(a, b) < 1e-9
        d_brute, _ = oracles.brute_line_distance((a, b, c), p)
        assert np.linalg.norm(p - foot) <= d_brute + 1e-12
        u = np.array([-b, a]) / np.hypot(a, b)
        for s in rng.uniform(-100, 100, 100):
            assert np.linalg.norm(p - foot) <= np.linalg.norm(p - (foot + s * u)) + 1e-12


def test_degenerate_line_is_rejected():
    with pytest.raises(DegenerateLine):
        perpendicular_foot(EpipolarLine(0, 0, 1), (1, 1))
    with pytest.raises(DegenerateLine):
        epipolar_residual(EpipolarLine(1e-10, 0, 1), (1, 1))


def test_residual_examples():
    assert np.isclose(epipolar_residual(EpipolarLine(0, 0.01, -0.5), (30, 52)), 2.0)
    assert epipolar_residual(EpipolarLine(0, 1, -50), (7, 50)) == 0.0


def test_residual_equals_distance_to_foot():
    rng = np.random.default_rng(1)
    for _ in range(200):
        line = EpipolarLine(*(rng.normal(size=3) * [1, 1, 40]))
        p = rng.uniform(0, 100, 2)
        assert np.isclose(epipolar_residual(line, p), np.linalg.norm(p - perpendicular_foot(line, p)), rtol=1e-9, atol=1e-9)


def test_r1_worked_depth(r1):
    assert np.isclose(epipolar_depth(*r1, (50, 50), (30, 50)), 5.0, rtol=1e-15)
    with pytest.raises(NumericBlowup):
        epipolar_depth(*r1, (50, 50), (50, 50))


def test_r1_negative_disparity_is_behind(r1):
    assert in_front(*r1, (50, 50), (30, 50))
    assert not in_front(*r1, (50, 50), (60, 50))


def test_depth_matches_ground_truth_and_midpoint_oracle():
    rng = np.random.default_rng(2)
    for _ in range(300):
        K1, R1, T1, K2, R2, T2, X = oracles.random_pair(rng)
        src, dst = view_from(K1, R1, T1, 0), view_from(K2, R2, T2, 1)
        p1, z1 = oracles.project(K1, R1, T1, X)
        p2, _ = oracles.project(K2, R2, T2, X)
        foot = perpendicular_foot(epipolar_line(fundamental_matrix(src, dst), p1), p2)
        D = epipolar_depth(src, dst, p1, foot)
        assert abs(D - z1) / z1 < 1e-9
        Xm = oracles.midpoint_triangulate(src.center, oracles.world_ray(K1, R1, p1), dst.center, oracles.world_ray(K2, R2, foot))
        zm = oracles.depth_in(R1, T1, Xm)
        assert abs(D - zm) / zm < 1e-7


def test_candidate_r1_exact(r1):
    flow = synth_flow(r1[0], r1[1], DepthMap(0, np.full((100, 100), 5.0)))
    c = depth_candidate(r1[0], r1[1], flow, (50, 50))
    assert c.status == Status.VALID and c.is_valid
    assert np.isclose(c.depth, 5.0) and c.residual == 0.0
    assert np.isclose(c.sensitivity, 0.25, rtol=1e-6)
    assert np.allclose(c.foot, [30, 50])


def test_candidate_statuses(r1):
    valid = np.ones((100, 100), bool)
    valid[10, 10] = False
    u = np.full((100, 100), -20.0)
    u[20, 20] = 10.0  # negative disparity
    u[30, 30] = 0.0  # zero disparity, parallel rays
    flow = FlowField(0, 1, u, np.zeros((100, 100)), valid)
    assert depth_candidate(*r1, flow, (10, 10)).status == Status.OFF_IMAGE
    assert depth_candidate(*r1, flow, (5, 40)).status == Status.OFF_IMAGE  # lands at x = -15
    assert depth_candidate(*r1, flow, (20, 20)).status == Status.BEHIND_CAMERA
    assert depth_candidate(*r1, flow, (30, 30)).status == Status.DEGENERATE_LINE
    with pytest.raises(ValueError):
        depth_candidate(r1[1], r1[0], flow, (50, 50))


def test_kernel_random_pixels_all_valid_and_exact():
    rng = np.random.default_rng(3)
    total = 0
    while total < 10_000:
        K1, R1, T1, K2, R2, T2, _ = oracles.random_pair(rng)
        src, dst = view_from(K1, R1, T1, 0), view_from(K2, R2, T2, 1)
        depth = rng.uniform(3.0, 8.0, src.shape)
        flow = synth_flow(src, dst, DepthMap(0, depth))
        ys, xs = np.nonzero(flow.valid)
        pick = rng.choice(len(xs), size=min(1000, len(xs)), replace=False)
        xs, ys = xs[pick], ys[pick]
        res = PairKernel(src, dst).candidates(flow, xs, ys)
        assert np.all(res["status"] == Status.VALID)
        assert np.max(np.abs(res["depth"] - depth[ys, xs]) / depth[ys, xs]) < 1e-9
        total += len(xs)


def test_kernel_agrees_with_scalar_path(converging3):
    src, dst = converging3.views[0], converging3.views[2]
    flow = converging3.flow(0, 2)
    ys, xs = np.mgrid[0:100:7, 0:100:7]
    res = PairKernel(src, dst).candidates(flow, xs, ys)
    for (y, x), status in np.ndenumerate(res["status"]):
        c = depth_candidate(src, dst, flow, (xs[y, x], ys[y, x]))
        assert c.status == status
        if c.is_valid:
            assert np.isclose(c.depth, res["depth"][y, x], rtol=1e-12)
            assert np.isclose(c.sensitivity, res["sensitivity"][y, x], rtol=1e-9)
            assert np.isclose(c.residual, res["residual"][y, x], rtol=1e-9, atol=1e-12)


def test_depth_error_grows_toward_the_epipole_direction(r1):
    # rectified: moving the foot toward zero disparity makes a fixed slip costlier
    delta = 0.1
    feet = np.arange(20.0, 48.0, 2.0)
    slips = [abs(epipolar_depth(*r1, (50, 50), (x + delta, 50)) - epipolar_depth(*r1, (50, 50), (x, 50))) for x in feet]
    assert np.all(np.diff(slips) > 0)
