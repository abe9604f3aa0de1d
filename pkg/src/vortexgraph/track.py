"""Track association and trajectory-tensor assembly.

Observations in consecutive frames continue the same track when their discs
overlap (center distance < sum of radii) and orientations agree; among
competing candidates the globally smallest center distance wins.  Tracks are
packed into an N x T x 8 tensor with feature order

    [x, y, r, omega, onehot_CCW, onehot_CW, onehot_NONE, existence]

rows sorted by birth frame, absent timesteps zero-filled except for the NONE
one-hot, and continuous channels affinely scaled to [-1, 1] with parameters
fit on the training split only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detect import VortexObservation

NUM_FEATURES = 8
CONTINUOUS = slice(0, 4)            # x, y, r, omega
ONEHOT = slice(4, 7)                # CCW, CW, NONE
EXIST = 7
FEATURE_NAMES = ["x", "y", "r", "omega", "ccw", "cw", "none", "exist"]
TRAJ_FORMAT = "vortexgraph-traj-v1"


@dataclass
class VortexTrack:
    track_id: int
    observations: list[tuple[int, VortexObservation]] = field(default_factory=list)

    @property
    def birth(self) -> int:
        return self.observations[0][0]

    @property
    def death(self) -> int:
        """Exclusive end frame."""
        return self.observations[-1][0] + 1

    @property
    def orientation(self) -> int:
        return self.observations[0][1].orientation

    def last(self) -> VortexObservation:
        return self.observations[-1][1]


def associate(frames: list[list[VortexObservation]]) -> list[VortexTrack]:
    """Greedy smallest-distance-first association between consecutive frames.

    Tracks with no continuation are closed immediately (no gap bridging);
    unmatched observations open new tracks in observation order.
    """
    tracks: list[VortexTrack] = []
    active: list[VortexTrack] = []

    def open_track(t: int, obs: VortexObservation) -> VortexTrack:
        tr = VortexTrack(track_id=len(tracks), observations=[(t, obs)])
        tracks.append(tr)
        return tr

    for t, observations in enumerate(frames):
        if t == 0 or not active:
            active = [open_track(t, o) for o in observations]
            continue
        candidates = []
        for ai, tr in enumerate(active):
            prev = tr.last()
            for oi, obs in enumerate(observations):
                if obs.orientation != prev.orientation:
                    continue
                dist = float(np.hypot(obs.x - prev.x, obs.y - prev.y))
                if dist < obs.radius + prev.radius:
                    candidates.append((dist, ai, oi))
        candidates.sort()
        taken_track: set[int] = set()
        taken_obs: set[int] = set()
        next_active = []
        for dist, ai, oi in candidates:
            if ai in taken_track or oi in taken_obs:
                continue
            taken_track.add(ai)
            taken_obs.add(oi)
            active[ai].observations.append((t, observations[oi]))
            next_active.append(active[ai])
        for oi, obs in enumerate(observations):
            if oi not in taken_obs:
                next_active.append(open_track(t, obs))
        active = next_active
    return tracks


@dataclass
class ScalingParams:
    """Per-continuous-feature (min, max) fit on the training split."""

    minimum: np.ndarray  # (4,)
    maximum: np.ndarray  # (4,)

    def to_jsonable(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @staticmethod
    def from_jsonable(d: dict) -> "ScalingParams":
        return ScalingParams(np.asarray(d["min"], dtype=np.float64),
                             np.asarray(d["max"], dtype=np.float64))


@dataclass
class TrajectoryTensor:
    """N vortices x T timesteps x 8 features plus existence mask and metadata."""

    features: np.ndarray            # (N, T, 8) float64
    mask: np.ndarray                # (N, T) uint8 in {0, 1}
    severity: float
    noise_sigma: float
    scaling: ScalingParams | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.features.ndim != 3 or self.features.shape[2] != NUM_FEATURES:
            raise ValueError(f"features must be (N, T, {NUM_FEATURES})")
        if self.mask.shape != self.features.shape[:2]:
            raise ValueError("mask shape must be (N, T)")

    @property
    def num_vortices(self) -> int:
        return self.features.shape[0]

    @property
    def num_timesteps(self) -> int:
        return self.features.shape[1]

    def births(self) -> np.ndarray:
        """First existing frame per row; T for rows that never exist."""
        n, t = self.mask.shape
        out = np.full(n, t, dtype=np.int64)
        for i in range(n):
            idx = np.flatnonzero(self.mask[i])
            if idx.size:
                out[i] = idx[0]
        return out


def assemble_tensor(tracks: list[VortexTrack], num_timesteps: int,
                    severity: float, noise_sigma: float) -> TrajectoryTensor:
    """Pack tracks into a birth-ordered, zero-padded trajectory tensor."""
    if num_timesteps <= 0:
        raise ValueError("num_timesteps must be positive")
    for tr in tracks:
        if tr.death > num_timesteps:
            raise ValueError(
                f"track {tr.track_id} extends to frame {tr.death - 1}, "
                f"beyond T = {num_timesteps}")
    ordered = sorted(tracks, key=lambda tr: tr.birth)  # stable: ties keep creation order
    n = len(ordered)
    feats = np.zeros((n, num_timesteps, NUM_FEATURES), dtype=np.float64)
    mask = np.zeros((n, num_timesteps), dtype=np.uint8)
    feats[:, :, 6] = 1.0  # NONE one-hot everywhere a vortex is absent
    for i, tr in enumerate(ordered):
        for t, obs in tr.observations:
            feats[i, t, 0] = obs.x
            feats[i, t, 1] = obs.y
            feats[i, t, 2] = obs.radius
            feats[i, t, 3] = obs.vorticity
            feats[i, t, 4] = 1.0 if obs.orientation > 0 else 0.0
            feats[i, t, 5] = 1.0 if obs.orientation < 0 else 0.0
            feats[i, t, 6] = 0.0
            feats[i, t, EXIST] = 1.0
            mask[i, t] = 1
    return TrajectoryTensor(feats, mask, severity, noise_sigma)


def fit_scaling(training: list[TrajectoryTensor]) -> ScalingParams:
    """Min/max of each continuous feature over existing entries of the training set."""
    mins = np.full(4, np.inf)
    maxs = np.full(4, -np.inf)
    for tensor in training:
        sel = tensor.mask.astype(bool)
        if not sel.any():
            continue
        vals = tensor.features[sel][:, CONTINUOUS]
        mins = np.minimum(mins, vals.min(axis=0))
        maxs = np.maximum(maxs, vals.max(axis=0))
    if not np.isfinite(mins).all():
        raise ValueError("training set has no existing entries to fit scaling on")
    flat = np.flatnonzero(maxs <= mins)
    if flat.size:
        names = ", ".join(FEATURE_NAMES[i] for i in flat)
        raise ValueError(f"cannot scale constant feature(s): {names}")
    return ScalingParams(mins, maxs)


def apply_scaling(tensor: TrajectoryTensor, params: ScalingParams) -> TrajectoryTensor:
    """Map continuous features through x -> 2(x-min)/(max-min) - 1.

    Out-of-range values pass through unclipped (keeps the map invertible);
    entries at absent timesteps are re-zeroed after the transform.
    """
    feats = tensor.features.copy()
    span = params.maximum - params.minimum
    cont = feats[:, :, CONTINUOUS]
    feats[:, :, CONTINUOUS] = 2.0 * (cont - params.minimum) / span - 1.0
    absent = ~tensor.mask.astype(bool)
    feats[absent, 0:4] = 0.0
    return TrajectoryTensor(feats, tensor.mask.copy(), tensor.severity,
                            tensor.noise_sigma, scaling=params)


def invert_scaling(tensor: TrajectoryTensor) -> TrajectoryTensor:
    """Undo apply_scaling on the continuous channels (absent entries stay zero)."""
    if tensor.scaling is None:
        raise ValueError("tensor carries no scaling parameters")
    params = tensor.scaling
    feats = tensor.features.copy()
    span = params.maximum - params.minimum
    cont = feats[:, :, CONTINUOUS]
    feats[:, :, CONTINUOUS] = (cont + 1.0) / 2.0 * span + params.minimum
    absent = ~tensor.mask.astype(bool)
    feats[absent, 0:4] = 0.0
    return TrajectoryTensor(feats, tensor.mask.copy(), tensor.severity,
                            tensor.noise_sigma, scaling=None)


def track_fields_to_tensor(frames: list[list[VortexObservation]], num_timesteps: int,
                           severity: float, noise_sigma: float) -> TrajectoryTensor:
    return assemble_tensor(associate(frames), num_timesteps, severity, noise_sigma)


def pad_tensor(tensor: TrajectoryTensor, num_rows: int) -> TrajectoryTensor:
    """Append never-existing rows up to `num_rows` (batching across unequal N).

    Padded rows follow the absent-timestep convention: all-zero features with
    the NONE one-hot set, mask 0 everywhere.
    """
    n, t = tensor.mask.shape
    if num_rows < n:
        raise ValueError(f"cannot pad {n} rows down to {num_rows}")
    if num_rows == n:
        return tensor
    feats = np.zeros((num_rows, t, NUM_FEATURES), dtype=np.float64)
    feats[:, :, 6] = 1.0
    feats[:n] = tensor.features
    mask = np.zeros((num_rows, t), dtype=np.uint8)
    mask[:n] = tensor.mask
    return TrajectoryTensor(feats, mask, tensor.severity, tensor.noise_sigma,
                            scaling=tensor.scaling)


# ---------------------------------------------------------------------------
# On-disk format: traj_manifest.json + traj.f32 [N][T][8] + mask.u8 [N][T]
# ---------------------------------------------------------------------------

def write_tensor(out_dir: str | Path, tensor: TrajectoryTensor) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "traj.f32").write_bytes(tensor.features.astype("<f4").tobytes())
    (out / "mask.u8").write_bytes(tensor.mask.astype(np.uint8).tobytes())
    manifest = {
        "format": TRAJ_FORMAT,
        "num_vortices": tensor.num_vortices,
        "num_timesteps": tensor.num_timesteps,
        "severity": tensor.severity,
        "noise_sigma": tensor.noise_sigma,
        "scaling": tensor.scaling.to_jsonable() if tensor.scaling else None,
        "births": tensor.births().tolist(),
    }
    (out / "traj_manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))


def read_tensor(in_dir: str | Path) -> TrajectoryTensor:
    src = Path(in_dir)
    manifest = json.loads((src / "traj_manifest.json").read_text())
    if manifest.get("format") != TRAJ_FORMAT:
        raise ValueError(f"{src}: not a trajectory-tensor directory")
    n = int(manifest["num_vortices"])
    t = int(manifest["num_timesteps"])
    feats = np.frombuffer((src / "traj.f32").read_bytes(), dtype="<f4").astype(np.float64)
    if feats.size != n * t * NUM_FEATURES:
        raise ValueError(f"{src}: traj.f32 size mismatch")
    mask = np.frombuffer((src / "mask.u8").read_bytes(), dtype=np.uint8)
    scaling = manifest.get("scaling")
    return TrajectoryTensor(
        feats.reshape(n, t, NUM_FEATURES), mask.reshape(n, t),
        severity=float(manifest["severity"]), noise_sigma=float(manifest["noise_sigma"]),
        scaling=ScalingParams.from_jsonable(scaling) if scaling else None)
