"""Point-vortex channel simulator: closed-form oracles and format roundtrips."""

import json
import math

import numpy as np
import pytest

from vortexgraph.synth import (Grid, LatentVortexState, SynthConfig,
                               VelocityField, add_rayleigh_noise,
                               lamb_oseen_velocity, read_field_sequence,
                               render_field, simulate, write_field_sequence)


def make_state(center, gamma, rc=0.35, birth=0, death=10**6, sid=0):
    return LatentVortexState(id=sid, center=center, circulation=gamma,
                             core_radius=rc, birth=birth, death=death)


# -- single-core velocity profile ---------------------------------------------

def test_lamb_oseen_tangential_speed_matches_closed_form():
    gamma, rc = 2.0 * math.pi, 0.7
    s = make_state((0.0, 0.0), gamma, rc)
    for d in (0.1, 0.5, 1.0, 3.0):
        u, v = lamb_oseen_velocity(s, (d, 0.0))
        speed = gamma / (2 * math.pi * d) * (1 - math.exp(-d * d / rc**2))
        assert u == pytest.approx(0.0, abs=1e-15)
        assert v == pytest.approx(speed, rel=1e-12)  # CCW: +y at +x


def test_lamb_oseen_regular_at_center_and_small_distance():
    s = make_state((1.0, -2.0), 5.0, 0.3)
    assert lamb_oseen_velocity(s, (1.0, -2.0)) == (0.0, 0.0)
    u, v = lamb_oseen_velocity(s, (1.0 + 1e-8, -2.0))
    # u_theta ~ Gamma d / (2 pi r_c^2) as d -> 0: no blow-up near the center
    assert math.hypot(u, v) < 1e-6


def test_lamb_oseen_sign_flips_with_circulation():
    pos = make_state((0.0, 0.0), 3.0)
    neg = make_state((0.0, 0.0), -3.0)
    up, vp = lamb_oseen_velocity(pos, (0.5, 0.2))
    un, vn = lamb_oseen_velocity(neg, (0.5, 0.2))
    assert up == -un and vp == -vn


def test_render_field_is_superposition_of_cores():
    grid = Grid(16, 16, 0.25, 0.25, (-2.0, -2.0))
    a = make_state((-0.5, 0.0), 2.0)
    b = make_state((0.75, 0.3), -1.5)
    both = render_field(grid, [a, b])
    ua = render_field(grid, [a])
    ub = render_field(grid, [b])
    np.testing.assert_allclose(both.u, ua.u + ub.u, atol=1e-14)
    np.testing.assert_allclose(both.v, ua.v + ub.v, atol=1e-14)
    empty = render_field(grid, [])
    assert not empty.u.any() and not empty.v.any()


# -- advection dynamics --------------------------------------------------------

def test_two_identical_cores_corotate_at_predicted_rate():
    # two like-signed cores orbit their midpoint at
    # Omega = Gamma_eff / (pi d^2), Gamma_eff = Gamma (1 - exp(-d^2/r_c^2))
    gamma, rc, d = 2.0, 0.05, 1.0
    cfg = SynthConfig(severity=100.0, num_frames=40, dt=0.08, birth_rate=0.0,
                      base_half_width=math.inf, core_radius=rc, seed=0)
    init = [make_state((-d / 2, 0.0), gamma, rc, sid=0),
            make_state((d / 2, 0.0), gamma, rc, sid=1)]
    _, states = simulate(cfg, initial_states=init)
    omega = gamma * (1 - math.exp(-d * d / rc**2)) / (math.pi * d * d)
    for s in states:
        path = np.asarray(s.path)
        radii = np.hypot(path[:, 0], path[:, 1])
        np.testing.assert_allclose(radii, d / 2, rtol=1e-7)
        angles = np.unwrap(np.arctan2(path[:, 1], path[:, 0]))
        steps = np.diff(angles) / cfg.dt
        np.testing.assert_allclose(steps, omega, rtol=1e-6)


def test_single_core_between_walls_drifts_along_channel():
    # both wall images sit directly above/below: y stays put and the drift
    # speed is constant, so RK4 reproduces the closed form to roundoff
    gamma, rc, h, y0 = 1.5, 0.2, 2.0, 0.6
    cfg = SynthConfig(severity=100.0, num_frames=30, dt=0.1, birth_rate=0.0,
                      base_half_width=h, core_radius=rc, seed=0)
    init = [make_state((0.0, y0), gamma, rc)]
    _, states = simulate(cfg, initial_states=init)
    path = np.asarray(states[0].path)
    np.testing.assert_allclose(path[:, 1], y0, atol=1e-12)

    def image_u(dist):
        return gamma / (4 * math.pi * dist) * (1 - math.exp(-4 * dist * dist / rc**2))

    u = image_u(h + y0) - image_u(h - y0)
    assert u < 0  # CCW core near the upper wall drifts toward -x
    expect_x = u * cfg.dt * np.arange(len(path))
    np.testing.assert_allclose(path[:, 0], expect_x, atol=1e-9)


def test_centered_core_between_walls_is_stationary():
    cfg = SynthConfig(severity=100.0, num_frames=10, dt=0.1, birth_rate=0.0,
                      base_half_width=1.5, core_radius=0.2, seed=0)
    _, states = simulate(cfg, initial_states=[make_state((0.3, 0.0), 2.0, 0.2)])
    path = np.asarray(states[0].path)
    np.testing.assert_allclose(path, np.tile(path[0], (len(path), 1)), atol=1e-12)


def test_simulate_is_deterministic():
    cfg = SynthConfig(severity=40.0, num_frames=12, seed=9)
    f1, s1 = simulate(cfg)
    f2, s2 = simulate(cfg)
    assert len(s1) == len(s2)
    for a, b in zip(f1, f2):
        np.testing.assert_array_equal(a.u, b.u)
        np.testing.assert_array_equal(a.v, b.v)
    for a, b in zip(s1, s2):
        assert a.path == b.path and a.circulation == b.circulation


def test_truth_paths_cover_lifetime_clipped_to_run():
    cfg = SynthConfig(severity=70.0, num_frames=15, seed=4)
    _, states = simulate(cfg)
    assert states, "expected at least one vortex at this seed"
    for s in states:
        assert s.birth < s.death
        assert len(s.path) == max(0, min(s.death, cfg.num_frames) - s.birth)


def test_circulation_signs_alternate_across_births():
    cfg = SynthConfig(severity=100.0, num_frames=40, birth_rate=0.5, seed=2)
    _, states = simulate(cfg)
    assert len(states) >= 4
    signs = [math.copysign(1, s.circulation) for s in states]
    assert signs == [1 if i % 2 == 0 else -1 for i in range(len(signs))]


def test_severity_sets_channel_width_only():
    wide = SynthConfig(severity=100.0)
    narrow = SynthConfig(severity=30.0)
    assert narrow.channel_half_width() == pytest.approx(0.3 * wide.base_half_width)
    assert wide.channel_half_width() == pytest.approx(wide.base_half_width)
    # support-style severities in [0, 1] use the affine map onto (0.3, 1.0]
    lvad = SynthConfig(severity=0.5)
    assert lvad.severity_fraction() == pytest.approx(0.65)
    assert SynthConfig(severity=1.0).severity_fraction() == pytest.approx(1.0)


def test_channel_narrower_than_core_rejected():
    cfg = SynthConfig(severity=30.0, base_half_width=0.5, core_radius=0.4)
    with pytest.raises(ValueError, match="half-width"):
        simulate(cfg)


# -- measurement noise ---------------------------------------------------------

def test_rayleigh_noise_preserves_direction_and_unit_mean():
    grid = Grid(64, 64, 0.125, 0.125, (-4.0, -4.0))
    field = render_field(grid, [make_state((0.0, 0.0), 2.0)])
    noisy = add_rayleigh_noise(field, 5.0, seed=11)
    nz = (field.u != 0) & (field.v != 0)
    ratio_u = noisy.u[nz] / field.u[nz]
    ratio_v = noisy.v[nz] / field.v[nz]
    np.testing.assert_allclose(ratio_u, ratio_v, rtol=1e-12)  # shared draw
    assert ratio_u.min() > 0  # magnitude-only corruption
    assert abs(ratio_u.mean() - 1.0) < 0.05
    cv = ratio_u.std() / ratio_u.mean()
    assert abs(cv - math.sqrt(4 / math.pi - 1)) < 0.05


def test_rayleigh_noise_scale_invariant_after_normalization():
    grid = Grid(16, 16, 0.25, 0.25, (-2.0, -2.0))
    field = render_field(grid, [make_state((0.1, -0.2), 1.0)])
    a = add_rayleigh_noise(field, 5.0, seed=3)
    b = add_rayleigh_noise(field, 10.0, seed=3)
    np.testing.assert_allclose(a.u, b.u, rtol=1e-12)
    np.testing.assert_allclose(a.v, b.v, rtol=1e-12)


def test_rayleigh_noise_zero_sigma_copies_and_negative_rejected():
    grid = Grid(8, 8, 0.5, 0.5)
    field = VelocityField(grid, np.ones((8, 8)), np.full((8, 8), 2.0))
    out = add_rayleigh_noise(field, 0.0, seed=1)
    np.testing.assert_array_equal(out.u, field.u)
    assert out.u is not field.u
    with pytest.raises(ValueError):
        add_rayleigh_noise(field, -1.0, seed=1)


def test_rayleigh_noise_deterministic_by_seed():
    grid = Grid(8, 8, 0.5, 0.5)
    field = VelocityField(grid, np.ones((8, 8)), np.ones((8, 8)))
    a = add_rayleigh_noise(field, 5.0, seed=7)
    b = add_rayleigh_noise(field, 5.0, seed=7)
    c = add_rayleigh_noise(field, 5.0, seed=8)
    np.testing.assert_array_equal(a.u, b.u)
    assert not np.array_equal(a.u, c.u)


# -- config and on-disk format --------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(num_frames=1)
    with pytest.raises(ValueError):
        SynthConfig(dt=0.0)
    with pytest.raises(ValueError):
        SynthConfig(noise_sigma=-0.1)
    with pytest.raises(ValueError):
        Grid(4, 64, 0.1, 0.1)


def test_config_jsonable_roundtrip_including_infinite_width():
    cfg = SynthConfig(severity=45.0, base_half_width=math.inf, seed=12)
    back = SynthConfig.from_jsonable(json.loads(json.dumps(cfg.to_jsonable())))
    assert back == cfg
    finite = SynthConfig(base_half_width=2.5)
    assert SynthConfig.from_jsonable(finite.to_jsonable()) == finite


def test_field_sequence_roundtrip(tmp_path):
    cfg = SynthConfig(severity=60.0, num_frames=6, seed=5,
                      grid=Grid(16, 12, 0.25, 0.25, (-2.0, -1.5)))
    fields, states = simulate(cfg)
    write_field_sequence(tmp_path / "sim", fields, cfg, truth=states)
    back, cfg_back = read_field_sequence(tmp_path / "sim")
    assert cfg_back == cfg
    assert len(back) == len(fields)
    for orig, rt in zip(fields, back):
        np.testing.assert_array_equal(rt.u, orig.u.astype("<f4").astype(np.float64))
    truth = json.loads((tmp_path / "sim" / "truth.json").read_text())
    assert [t["id"] for t in truth] == [s.id for s in states]


def test_read_rejects_foreign_directory(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(ValueError, match="field-sequence"):
        read_field_sequence(tmp_path)
