"""Frame association, tensor assembly, and feature scaling."""

import numpy as np
import pytest

from vortexgraph.detect import VortexObservation
from vortexgraph.track import (ScalingParams, TrajectoryTensor, apply_scaling,
                               assemble_tensor, associate, fit_scaling,
                               invert_scaling, pad_tensor, read_tensor,
                               track_fields_to_tensor, write_tensor)


def obs(frame, x, y, r=0.3, orientation=1, omega=None):
    if omega is None:
        omega = 1.0 if orientation > 0 else -1.0
    return VortexObservation(frame=frame, x=x, y=y, radius=r,
                             orientation=orientation, vorticity=omega)


# -- association fixtures --------------------------------------------------------

def test_two_stationary_disjoint_vortices_give_two_full_tracks():
    frames = [[obs(t, 0.0, 0.0), obs(t, 5.0, 0.0)] for t in range(5)]
    tracks = associate(frames)
    assert len(tracks) == 2
    for tr in tracks:
        assert len(tr.observations) == 5
        assert tr.birth == 0 and tr.death == 5


def test_orientation_gate_blocks_association():
    frames = [[obs(0, 1.0, 1.0, orientation=1)],
              [obs(1, 1.0, 1.0, orientation=-1)]]
    tracks = associate(frames)
    assert len(tracks) == 2
    assert [len(t.observations) for t in tracks] == [1, 1]


def test_overlap_gate_requires_disk_contact():
    # gap 0.7 > r_a + r_b = 0.6: no continuation
    frames = [[obs(0, 0.0, 0.0)], [obs(1, 0.7, 0.0)]]
    assert len(associate(frames)) == 2
    # gap 0.5 < 0.6: same track
    frames = [[obs(0, 0.0, 0.0)], [obs(1, 0.5, 0.0)]]
    tracks = associate(frames)
    assert len(tracks) == 1 and tracks[0].death == 2


def test_crossing_paths_keep_identity():
    # same orientation, x-paths cross, vertical offset keeps cross-pair
    # distance at 0.8 > 0.6 while each step of 0.5 stays inside the gate
    xs_a = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]
    xs_b = [3.0, 2.5, 2.0, 1.5, 1.0, 0.5, 0.0]
    frames = [[obs(t, xa, 0.0), obs(t, xb, 0.8)]
              for t, (xa, xb) in enumerate(zip(xs_a, xs_b))]
    tracks = associate(frames)
    assert len(tracks) == 2
    a, b = tracks
    assert [o.y for _, o in a.observations] == [0.0] * 7
    assert [o.x for _, o in a.observations] == xs_a
    assert [o.x for _, o in b.observations] == xs_b


def test_greedy_association_takes_globally_smallest_distance_first():
    # both tracks can reach P, but track 2 is closer; row-scan order would
    # instead hand P to track 1
    frames = [[obs(0, 0.0, 0.0, r=0.4), obs(0, 1.0, 0.0, r=0.4)],
              [obs(1, 0.55, 0.0, r=0.4), obs(1, 2.5, 0.0, r=0.4)]]
    tracks = associate(frames)
    by_birth_x = {tr.observations[0][1].x: tr for tr in tracks}
    assert len(by_birth_x[1.0].observations) == 2       # continued with P
    assert by_birth_x[1.0].last().x == 0.55
    assert len(by_birth_x[0.0].observations) == 1       # closed
    assert len(tracks) == 3                             # far obs opens a track


def test_track_closed_after_gap_never_reopens():
    frames = [[obs(0, 0.0, 0.0)], [], [obs(2, 0.0, 0.0)]]
    tracks = associate(frames)
    assert len(tracks) == 2
    assert tracks[0].death == 1 and tracks[1].birth == 2


def test_every_observation_lands_in_exactly_one_track():
    rng = np.random.default_rng(3)
    frames = []
    for t in range(6):
        frames.append([obs(t, float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3)),
                           orientation=int(rng.choice([-1, 1])))
                       for _ in range(rng.integers(0, 5))])
    tracks = associate(frames)
    seen = [id(o) for tr in tracks for _, o in tr.observations]
    assert len(seen) == len(set(seen)) == sum(len(f) for f in frames)


# -- tensor assembly --------------------------------------------------------------

def test_existence_row_for_partial_lifetime():
    frames = [[], [], [obs(2, 0.0, 0.0)], [obs(3, 0.1, 0.0)], []]
    tensor = track_fields_to_tensor(frames, 5, severity=50.0, noise_sigma=5.0)
    np.testing.assert_array_equal(tensor.mask, [[0, 0, 1, 1, 0]])
    np.testing.assert_array_equal(tensor.features[0, :, 7], [0, 0, 1, 1, 0])


def test_rows_ordered_by_birth():
    late = [obs(3, 2.0, 0.0)]
    early = [obs(1, -2.0, 0.0)]
    frames = [[], early, [], late, []]
    tensor = track_fields_to_tensor(frames, 5, 50.0, 5.0)
    births = tensor.births()
    np.testing.assert_array_equal(births, [1, 3])
    assert tensor.features[0, 1, 0] == -2.0
    assert tensor.features[1, 3, 0] == 2.0


def test_absent_timesteps_zero_except_none_onehot():
    frames = [[obs(0, 1.5, -0.5, omega=2.0)], []]
    tensor = track_fields_to_tensor(frames, 2, 50.0, 5.0)
    absent = tensor.features[0, 1]
    np.testing.assert_array_equal(absent, [0, 0, 0, 0, 0, 0, 1, 0])
    present = tensor.features[0, 0]
    np.testing.assert_array_equal(present, [1.5, -0.5, 0.3, 2.0, 1, 0, 0, 1])


def test_orientation_onehot_is_exclusive():
    frames = [[obs(0, 0.0, 0.0, orientation=1), obs(0, 2.0, 0.0, orientation=-1)]]
    tensor = track_fields_to_tensor(frames, 1, 50.0, 5.0)
    onehot = tensor.features[:, :, 4:7]
    np.testing.assert_array_equal(onehot.sum(axis=2), np.ones((2, 1)))
    np.testing.assert_array_equal(tensor.features[0, 0, 4:7], [1, 0, 0])
    np.testing.assert_array_equal(tensor.features[1, 0, 4:7], [0, 1, 0])


def test_empty_track_list_gives_empty_tensor():
    tensor = assemble_tensor([], 4, 50.0, 5.0)
    assert tensor.num_vortices == 0 and tensor.num_timesteps == 4


def test_zero_timesteps_rejected():
    with pytest.raises(ValueError):
        assemble_tensor([], 0, 50.0, 5.0)


def test_track_beyond_t_rejected():
    frames = [[], [obs(1, 0.0, 0.0)]]
    tracks = associate(frames)
    with pytest.raises(ValueError, match="beyond"):
        assemble_tensor(tracks, 1, 50.0, 5.0)


# -- scaling ----------------------------------------------------------------------

def two_point_tensor():
    feats = np.zeros((1, 2, 8))
    feats[0, 0] = [0.0, -1.0, 1.0, -4.0, 1, 0, 0, 1]
    feats[0, 1] = [10.0, 1.0, 2.0, 4.0, 1, 0, 0, 1]
    return TrajectoryTensor(feats, np.ones((1, 2)), 50.0, 5.0)


def test_scaling_maps_min_max_to_unit_interval_endpoints():
    tensor = two_point_tensor()
    params = fit_scaling([tensor])
    scaled = apply_scaling(tensor, params)
    np.testing.assert_allclose(scaled.features[0, 0, 0:4], [-1, -1, -1, -1])
    np.testing.assert_allclose(scaled.features[0, 1, 0:4], [1, 1, 1, 1])


def test_scaling_midpoint_and_out_of_range():
    params = ScalingParams(np.zeros(4), np.full(4, 10.0))
    feats = np.zeros((1, 1, 8))
    feats[0, 0] = [5.0, 12.0, 5.0, 5.0, 1, 0, 0, 1]
    tensor = TrajectoryTensor(feats, np.ones((1, 1)), 50.0, 5.0)
    scaled = apply_scaling(tensor, params)
    assert scaled.features[0, 0, 0] == pytest.approx(0.0)
    assert scaled.features[0, 0, 1] == pytest.approx(1.4)  # unclipped


def test_scaling_leaves_onehot_and_existence_untouched():
    tensor = two_point_tensor()
    scaled = apply_scaling(tensor, fit_scaling([tensor]))
    np.testing.assert_array_equal(scaled.features[:, :, 4:8],
                                  tensor.features[:, :, 4:8])


def test_masked_entries_rezeroed_after_scaling():
    feats = np.zeros((1, 2, 8))
    feats[0, 0] = [3.0, 3.0, 1.0, 2.0, 1, 0, 0, 1]
    feats[0, 1, 6] = 1.0
    mask = np.array([[1, 0]])
    tensor = TrajectoryTensor(feats, mask, 50.0, 5.0)
    params = ScalingParams(np.full(4, -5.0), np.full(4, 5.0))
    scaled = apply_scaling(tensor, params)
    # 0 would map to 0.0 only by accident; absent entries must be forced back
    np.testing.assert_array_equal(scaled.features[0, 1], [0, 0, 0, 0, 0, 0, 1, 0])


def test_scaling_roundtrip_recovers_continuous_features():
    rng = np.random.default_rng(8)
    feats = rng.normal(0, 3, size=(4, 6, 8))
    mask = (rng.random((4, 6)) > 0.3).astype(np.uint8)
    feats[~mask.astype(bool)] = 0.0
    feats[~mask.astype(bool), 6] = 1.0
    tensor = TrajectoryTensor(feats, mask, 50.0, 5.0)
    params = fit_scaling([tensor])
    back = invert_scaling(apply_scaling(tensor, params))
    np.testing.assert_allclose(back.features, tensor.features, rtol=1e-6, atol=1e-9)
    assert back.scaling is None


def test_invert_without_params_rejected():
    with pytest.raises(ValueError, match="scaling"):
        invert_scaling(two_point_tensor())


def test_constant_feature_rejected_by_name():
    feats = np.zeros((1, 2, 8))
    feats[0, 0] = [0.0, 0.0, 1.0, 1.5, 1, 0, 0, 1]
    feats[0, 1] = [1.0, 0.0, 2.0, 1.5, 1, 0, 0, 1]
    tensor = TrajectoryTensor(feats, np.ones((1, 2)), 50.0, 5.0)
    with pytest.raises(ValueError, match="y, omega"):
        fit_scaling([tensor])


def test_scaling_fit_ignores_masked_outliers():
    tensor = two_point_tensor()
    spoiled = TrajectoryTensor(tensor.features.copy(), tensor.mask.copy(), 50.0, 5.0)
    extra = np.zeros((1, 2, 8))
    extra[0, 0] = [99.0, 99.0, 99.0, 99.0, 1, 0, 0, 1]  # masked out below
    both = TrajectoryTensor(np.concatenate([spoiled.features, extra]),
                            np.concatenate([spoiled.mask, np.zeros((1, 2))]),
                            50.0, 5.0)
    params = fit_scaling([both])
    np.testing.assert_array_equal(params.maximum, [10.0, 1.0, 2.0, 4.0])


def test_fit_scaling_requires_an_existing_entry():
    empty = TrajectoryTensor(np.zeros((1, 2, 8)), np.zeros((1, 2)), 50.0, 5.0)
    with pytest.raises(ValueError, match="no existing"):
        fit_scaling([empty])


# -- padding and on-disk format ----------------------------------------------------

def test_pad_tensor_appends_never_existing_rows():
    tensor = two_point_tensor()
    padded = pad_tensor(tensor, 3)
    assert padded.num_vortices == 3
    np.testing.assert_array_equal(padded.mask[1:], np.zeros((2, 2)))
    np.testing.assert_array_equal(padded.features[2, :, 6], [1, 1])
    assert padded.features[1:, :, :6].sum() == 0
    np.testing.assert_array_equal(padded.births(), [0, 2, 2])
    with pytest.raises(ValueError):
        pad_tensor(tensor, 0)
    assert pad_tensor(tensor, 1) is tensor


def test_tensor_roundtrip_through_disk(tmp_path):
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(3, 4, 8)).astype(np.float32).astype(np.float64)
    mask = (rng.random((3, 4)) > 0.4).astype(np.uint8)
    tensor = TrajectoryTensor(feats, mask, severity=35.0, noise_sigma=10.0,
                              scaling=ScalingParams(np.zeros(4), np.ones(4)))
    write_tensor(tmp_path, tensor)
    back = read_tensor(tmp_path)
    np.testing.assert_array_equal(back.features, tensor.features)
    np.testing.assert_array_equal(back.mask, tensor.mask)
    assert back.severity == 35.0 and back.noise_sigma == 10.0
    np.testing.assert_array_equal(back.scaling.minimum, np.zeros(4))


def test_read_tensor_rejects_foreign_directory(tmp_path):
    (tmp_path / "traj_manifest.json").write_text('{"format": "nope"}')
    with pytest.raises(ValueError, match="trajectory-tensor"):
        read_tensor(tmp_path)
