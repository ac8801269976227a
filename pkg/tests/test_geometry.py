import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epidepth.errors import DegenerateBaseline, DegenerateLine, NonPositiveDepth, PointAtCameraPlane
from epidepth.geometry import (
    CameraView,
    EpipolarLine,
    backproject,
    epipolar_line,
    epipole,
    fundamental_matrix,
    make_view,
    project,
)

import oracles
from conftest import view_from


def test_r1_fundamental_maps_center_to_row_50(r1):
    F = fundamental_matrix(*r1)
    abc = F @ np.array([50.0, 50.0, 1.0])
    assert np.allclose(abc / abc[1] * 0.01, [0, 0.01, -0.5])


def test_r1_lines_keep_the_row(r1):
    F = fundamental_matrix(*r1)
    line = epipolar_line(F, (50, 50)).normalized()
    assert np.allclose(line.coefficients * np.sign(line.b), [0, 1, -50])
    line = epipolar_line(F, (10, 70)).normalized()
    assert np.allclose(line.coefficients * np.sign(line.b), [0, 1, -70])


def test_fundamental_is_rank_two():
    rng = np.random.default_rng(1)
    for _ in range(100):
        K1, R1, T1, K2, R2, T2, _ = oracles.random_pair(rng)
        F = fundamental_matrix(view_from(K1, R1, T1, 0), view_from(K2, R2, T2, 1))
        assert abs(np.linalg.det(F)) < 1e-12 * np.linalg.norm(F) ** 3
        assert np.linalg.matrix_rank(F, tol=1e-9 * np.linalg.norm(F)) == 2


def test_fundamental_agrees_with_projection_matrix_construction():
    rng = np.random.default_rng(2)
    for _ in range(50):
        K1, R1, T1, K2, R2, T2, _ = oracles.random_pair(rng)
        F = fundamental_matrix(view_from(K1, R1, T1, 0), view_from(K2, R2, T2, 1))
        G = oracles.fundamental_from_projections(oracles.projection_matrix(K1, R1, T1), oracles.projection_matrix(K2, R2, T2))
        F, G = F / np.linalg.norm(F), G / np.linalg.norm(G)
        G *= np.sign(np.sum(F * G))
        assert np.allclose(F, G, atol=1e-9)


def test_projected_match_lies_on_its_epipolar_line():
    rng = np.random.default_rng(3)
    for _ in range(200):
        K1, R1, T1, K2, R2, T2, X = oracles.random_pair(rng)
        src, dst = view_from(K1, R1, T1, 0), view_from(K2, R2, T2, 1)
        p1, _ = oracles.project(K1, R1, T1, X)
        p2, _ = oracles.project(K2, R2, T2, X)
        line = epipolar_line(fundamental_matrix(src, dst), p1).normalized()
        assert abs(line.a * p2[0] + line.b * p2[1] + line.c) < 1e-7


def test_identical_centers_are_rejected():
    a = make_view(0, (0, 0, 0))
    b = make_view(1, (0, 0, 0), target=(1, 0, 5))
    with pytest.raises(DegenerateBaseline):
        fundamental_matrix(a, b)
    with pytest.raises(DegenerateBaseline):
        epipole(a, b)


def test_epipole_pixel_gives_degenerate_line(r2):
    src, dst = r2
    e = epipole(dst, src)  # dst center seen from src
    with pytest.raises(DegenerateLine):
        epipolar_line(fundamental_matrix(src, dst), e.position)


def test_r1_epipole_at_infinity(r1):
    e = epipole(*r1)
    assert e.at_infinity
    assert np.allclose(e.direction, [1, 0])


def test_r2_epipole_value(r2):
    # src center projected by the dst camera, frozen from the projection oracle
    e = epipole(*r2)
    assert not e.at_infinity
    assert np.allclose(e.position, [-517.12818196, 50.0], atol=1e-6)


def test_epipole_is_on_every_epipolar_line(r2):
    src, dst = r2
    e = epipole(src, dst)
    F = fundamental_matrix(src, dst)
    rng = np.random.default_rng(4)
    for p in rng.uniform(0, 100, (50, 2)):
        line = epipolar_line(F, p).normalized()
        assert abs(line.a * e.position[0] + line.b * e.position[1] + line.c) < 1e-6


def test_epipoles_are_null_vectors():
    rng = np.random.default_rng(5)
    for _ in range(20):
        K1, R1, T1, K2, R2, T2, _ = oracles.random_pair(rng)
        src, dst = view_from(K1, R1, T1, 0), view_from(K2, R2, T2, 1)
        F = fundamental_matrix(src, dst)
        F = F / np.linalg.norm(F)
        e_dst = epipole(src, dst).homogeneous
        e_src = epipole(dst, src).homogeneous
        assert np.linalg.norm(F @ (e_src / np.linalg.norm(e_src))) < 1e-8
        assert np.linalg.norm(F.T @ (e_dst / np.linalg.norm(e_dst))) < 1e-8


def test_project_r1_examples(r1):
    cam0, cam1 = r1
    px, z = project(cam0, (0, 0, 5))
    assert np.allclose(px, [50, 50]) and z == 5
    px, z = project(cam1, (0, 0, 5))
    assert np.allclose(px, [30, 50]) and z == 5


def test_project_on_camera_plane_raises(r1):
    with pytest.raises(PointAtCameraPlane):
        project(r1[0], (1.0, 2.0, 0.0))


def test_backproject_r1_examples(r1):
    assert np.allclose(backproject(r1[0], (50, 50), 5.0), [0, 0, 5])
    assert np.allclose(backproject(r1[0], (60, 50), 5.0), [0.5, 0, 5])
    with pytest.raises(NonPositiveDepth):
        backproject(r1[0], (50, 50), 0.0)


_cached = oracles.random_pair(np.random.default_rng(7))


def test_backproject_project_round_trip():
    K, R, T = _cached[0], _cached[1], _cached[2]
    view = view_from(K, R, T)
    rng = np.random.default_rng(6)
    for X in rng.uniform(-2, 2, (1000, 3)) + [0, 0, 5]:
        px, z = project(view, X)
        assert np.allclose(backproject(view, px, z), X, rtol=1e-9, atol=1e-9)


def test_project_matches_oracle():
    K, R, T = _cached[0], _cached[1], _cached[2]
    view = view_from(K, R, T)
    X = np.array([0.3, -0.2, 5.5])
    px, z = project(view, X)
    opx, oz = oracles.project(K, R, T, X)
    assert np.allclose(px, opx, atol=1e-12) and np.isclose(z, oz)


def test_camera_view_rejects_bad_rotation():
    with pytest.raises(ValueError):
        CameraView(0, 10, 10, 10, 10, 5, 5, np.diag([1, 1, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        CameraView(0, 10, 10, 10, 10, 5, 5, np.eye(3) * 1.01, np.zeros(3))
    with pytest.raises(ValueError):
        CameraView(0, 10, 10, -1, 10, 5, 5, np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        CameraView(0, 0, 10, 10, 10, 5, 5, np.eye(3), np.zeros(3))


def test_center_follows_world_to_camera_convention():
    R = oracles.random_rotation(np.random.default_rng(8))
    T = np.array([0.3, -1.0, 2.0])
    view = CameraView(0, 10, 10, 10, 10, 5, 5, R, T)
    assert np.allclose(R @ view.center + T, 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3).filter(lambda s: abs(s) > 1e-3))
def test_line_consumers_ignore_rescaling(s):
    from epidepth.nexus import epipolar_residual, perpendicular_foot

    line = EpipolarLine(0.3, -0.8, 12.0)
    scaled = EpipolarLine(0.3 * s, -0.8 * s, 12.0 * s)
    p = np.array([31.0, 7.5])
    assert np.isclose(epipolar_residual(line, p), epipolar_residual(scaled, p), rtol=1e-12)
    assert np.allclose(perpendicular_foot(line, p), perpendicular_foot(scaled, p), rtol=1e-12)
