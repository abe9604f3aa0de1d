"""Rortex detector: closed forms, convergence order, and component extraction."""

import math

import numpy as np
import pytest

from vortexgraph.detect import (DetectConfig, GradientField, detect_frame,
                                detect_sequence, extract_vortices, rortex_field,
                                velocity_gradient, vorticity_field,
                                write_observations_csv)
from vortexgraph.synth import Grid, LatentVortexState, VelocityField, render_field


def square_grid(n=64, dx=0.1):
    half = n * dx / 2
    return Grid(n, n, dx, dx, (-half, -half))


def analytic_gradient(grid, du_dx, du_dy, dv_dx, dv_dy):
    shape = (grid.ny, grid.nx)
    return GradientField(grid,
                         np.full(shape, du_dx), np.full(shape, du_dy),
                         np.full(shape, dv_dx), np.full(shape, dv_dy))


# -- closed forms ---------------------------------------------------------------

def test_rigid_rotation_rortex_equals_twice_omega_analytic():
    grid = square_grid(16)
    for omega in (0.5, 2.0, -1.3):
        grad = analytic_gradient(grid, 0.0, -omega, omega, 0.0)
        r = rortex_field(grad)
        np.testing.assert_allclose(r, np.full_like(r, 2 * omega), rtol=1e-10)


def test_rigid_rotation_rortex_from_finite_differences():
    omega = 1.7
    grid = square_grid(32, dx=0.2)
    X, Y = grid.meshgrid()
    field = VelocityField(grid, -omega * Y, omega * X)
    r = rortex_field(velocity_gradient(field))
    # linear velocity: differences are exact, but sqrt(omega^2 - 4 lci^2)
    # amplifies float roundoff near the rigid-rotation manifold to ~sqrt(eps)
    np.testing.assert_allclose(r, np.full_like(r, 2 * omega), rtol=1e-6)


def test_pure_shear_rortex_is_exactly_zero():
    grid = square_grid(16)
    grad = analytic_gradient(grid, 0.0, 3.0, 0.0, 0.0)
    assert not rortex_field(grad).any()
    X, Y = grid.meshgrid()
    field = VelocityField(grid, 3.0 * Y, np.zeros_like(Y))
    assert not rortex_field(velocity_gradient(field)).any()


def test_strain_plus_weak_rotation_has_real_eigenvalues_and_zero_rortex():
    grid = square_grid(8)
    # |strain| > |rotation|: eigenvalues real
    grad = analytic_gradient(grid, 1.0, 0.4, -0.4, -1.0)
    assert not rortex_field(grad).any()


def test_rortex_sign_follows_vorticity():
    grid = square_grid(8)
    grad = analytic_gradient(grid, 0.0, 1.0, -1.0, 0.0)  # omega = -2
    r = rortex_field(grad)
    assert np.all(r < 0)
    omega = vorticity_field(grad)
    np.testing.assert_allclose(omega, -2.0)


def test_gradient_convergence_order_at_least_1_9():
    errs = []
    steps = []
    for n in (32, 64, 128):
        half = 1.0
        dx = 2 * half / n
        grid = Grid(n, n, dx, dx, (-half, -half))
        X, Y = grid.meshgrid()
        field = VelocityField(grid, np.sin(3.0 * X), np.cos(2.0 * Y))
        grad = velocity_gradient(field)
        err = np.abs(grad.du_dx - 3.0 * np.cos(3.0 * X))[2:-2, 2:-2].max()
        errs.append(err)
        steps.append(dx)
    order = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert order >= 1.9


def test_lamb_oseen_rortex_positive_inside_core_decays_outside():
    grid = square_grid(128, dx=0.05)
    state = LatentVortexState(id=0, center=(0.0, 0.0), circulation=2 * math.pi,
                              core_radius=1.0, birth=0, death=1)
    r = rortex_field(velocity_gradient(render_field(grid, [state])))
    X, Y = grid.meshgrid()
    d = np.hypot(X, Y)
    assert r[d < 0.5].min() > 0.1
    assert np.abs(r[d > 2.5]).max() < 0.02


# -- component extraction ---------------------------------------------------------

def test_zero_field_yields_no_observations():
    grid = square_grid(16)
    z = np.zeros((16, 16))
    assert detect_frame(VelocityField(grid, z, z.copy()), DetectConfig(), 0) == []


def test_single_lamb_oseen_detected_within_one_cell():
    grid = square_grid(64, dx=0.1)
    state = LatentVortexState(id=0, center=(0.43, -0.81), circulation=2 * math.pi,
                              core_radius=1.0, birth=0, death=1)
    obs = detect_frame(render_field(grid, [state]), DetectConfig(), 5)
    assert len(obs) == 1
    o = obs[0]
    assert o.frame == 5
    assert math.hypot(o.x - 0.43, o.y + 0.81) <= grid.dx
    assert o.orientation == 1 and o.vorticity > 0
    assert o.radius > 0


def test_two_opposite_cores_detected_with_opposite_orientation():
    grid = square_grid(96, dx=0.1)
    a = LatentVortexState(id=0, center=(-2.0, 0.0), circulation=2 * math.pi,
                          core_radius=0.8, birth=0, death=1)
    b = LatentVortexState(id=1, center=(2.0, 0.0), circulation=-2 * math.pi,
                          core_radius=0.8, birth=0, death=1)
    obs = detect_frame(render_field(grid, [a, b]), DetectConfig(), 0)
    assert len(obs) == 2
    by_x = sorted(obs, key=lambda o: o.x)
    assert by_x[0].orientation == 1 and by_x[1].orientation == -1
    assert abs(by_x[0].x + 2.0) <= grid.dx and abs(by_x[1].x - 2.0) <= grid.dx


def test_mixed_sign_component_splits_by_sign():
    grid = square_grid(64, dx=0.1)
    # abutting blocks of opposite rotation form one |R| component
    r = np.zeros((64, 64))
    omega = np.zeros((64, 64))
    r[30:34, 20:30] = 1.0
    r[30:34, 30:40] = -1.0
    omega[30:34, 20:30] = 1.2
    omega[30:34, 30:40] = -1.2
    obs = extract_vortices(r, omega, grid, DetectConfig(rortex_threshold=0.5), 0)
    assert len(obs) == 2
    assert sorted(o.orientation for o in obs) == [-1, 1]


def test_min_area_filters_specks():
    grid = square_grid(32, dx=0.1)
    r = np.zeros((32, 32))
    omega = np.zeros((32, 32))
    r[5:8, 5:8] = 2.0      # 9 cells
    r[20, 20] = 2.0        # 1 cell
    omega[r > 0] = 2.0
    cfg = DetectConfig(rortex_threshold=1.0, min_area=4)
    obs = extract_vortices(r, omega, grid, cfg, 0)
    assert len(obs) == 1
    all_cfg = DetectConfig(rortex_threshold=1.0, min_area=1)
    assert len(extract_vortices(r, omega, grid, all_cfg, 0)) == 2


def test_radius_from_component_area():
    grid = square_grid(32, dx=0.2)
    r = np.zeros((32, 32))
    omega = np.zeros((32, 32))
    r[10:14, 10:14] = 1.0  # 16 cells
    omega[10:14, 10:14] = 3.0
    obs = extract_vortices(r, omega, grid, DetectConfig(rortex_threshold=0.5), 0)
    assert len(obs) == 1
    area = 16 * grid.dx * grid.dy
    assert obs[0].radius == pytest.approx(math.sqrt(area / math.pi))
    assert obs[0].vorticity == pytest.approx(3.0)


def test_weighted_centroid_favors_strong_cells():
    grid = square_grid(32, dx=1.0)
    r = np.zeros((32, 32))
    omega = np.ones((32, 32))
    r[10, 10:12] = [9.0, 1.0]  # heavy left cell
    obs = extract_vortices(r, omega, grid, DetectConfig(rortex_threshold=0.5,
                                                        min_area=1), 0)
    assert len(obs) == 1
    x_left = grid.x_centers[10]
    x_right = grid.x_centers[11]
    expect = (9 * x_left + 1 * x_right) / 10
    assert obs[0].x == pytest.approx(expect)


def test_rotation_equivariance_of_detection():
    grid = square_grid(64, dx=0.1)
    state = LatentVortexState(id=0, center=(1.1, 0.4), circulation=2 * math.pi,
                              core_radius=0.7, birth=0, death=1)
    field = render_field(grid, [state])
    # rotate grid and vectors by 90 degrees: (x,y) -> (-y,x), (u,v) -> (-v,u)
    u_rot = -np.rot90(field.v, -1)
    v_rot = np.rot90(field.u, -1)
    obs = detect_frame(field, DetectConfig(), 0)
    obs_rot = detect_frame(VelocityField(grid, u_rot, v_rot), DetectConfig(), 0)
    assert len(obs) == 1 and len(obs_rot) == 1
    assert math.hypot(obs_rot[0].x + obs[0].y, obs_rot[0].y - obs[0].x) <= grid.dx
    assert obs_rot[0].orientation == obs[0].orientation


def test_detect_sequence_indexes_frames(tmp_path):
    grid = square_grid(48, dx=0.1)
    state = LatentVortexState(id=0, center=(0.0, 0.0), circulation=2 * math.pi,
                              core_radius=0.6, birth=0, death=2)
    field = render_field(grid, [state])
    zero = VelocityField(grid, np.zeros((48, 48)), np.zeros((48, 48)))
    frames = detect_sequence([field, zero, field], DetectConfig())
    assert [len(f) for f in frames] == [1, 0, 1]
    assert frames[0][0].frame == 0 and frames[2][0].frame == 2
    csv_path = tmp_path / "obs.csv"
    write_observations_csv(csv_path, frames)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0].split(",") == ["t", "x", "y", "r", "orientation", "omega"]
    assert len(lines) == 3


def test_detect_config_validation():
    with pytest.raises(ValueError):
        DetectConfig(rortex_threshold=0.0)
    with pytest.raises(ValueError):
        DetectConfig(min_area=0)
    with pytest.raises(ValueError):
        DetectConfig(connectivity=6)
