"""Severity-conditioned, energy-gated relational inference over vortex tracks.

Encoder: two message-passing rounds over flattened trajectories produce
per-pair edge embeddings; a physics head maps a Biot-Savart-style pair energy
into the edge embedding, and a severity head multiplies the edge logits before
the softmax.  Directed pairs are restricted by a birth-order mask so a
later-born vortex cannot influence an earlier one.  Edges are sampled with
the Gumbel-softmax trick; the decoder passes messages along sampled
interaction edges and emits continuous deltas, orientation logits, and an
existence logit per vortex per step.  Losses are masked by existence.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import (NumericalError, Tensor, check_finite, concat, elu,
                       log_softmax, segment_sum, sigmoid, softmax, softplus,
                       where_const)
from .track import CONTINUOUS, EXIST, NUM_FEATURES, ONEHOT, TrajectoryTensor

CKPT_FORMAT = "vortexgraph-ckpt-v1"
NO_EDGE, EDGE = 0, 1  # edge type order: (no interaction, interaction)


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 256
    num_edge_types: int = 2
    prior: tuple[float, float] = (0.7, 0.3)   # (no interaction, interaction)
    temperature: float = 0.5
    output_variance: float = 5e-5
    teacher_forcing_period: int = 10
    distance_guard: float = 1e-6
    num_timesteps: int = 50
    feature_dim: int = NUM_FEATURES
    # ablation rewires
    birth_ordering: bool = True
    physics_gating: bool = True
    severity_conditioning: bool = True
    original_loss: bool = False

    def __post_init__(self):
        if self.num_edge_types != 2:
            raise ValueError("exactly two edge types are supported")
        if abs(sum(self.prior) - 1.0) > 1e-12 or min(self.prior) <= 0:
            raise ValueError("prior must be a positive distribution summing to 1")
        if self.temperature <= 0 or self.output_variance <= 0:
            raise ValueError("temperature and output variance must be positive")
        if self.teacher_forcing_period < 1:
            raise ValueError("teacher_forcing_period must be >= 1")

    def to_jsonable(self) -> dict:
        return {
            "hidden": self.hidden, "num_edge_types": self.num_edge_types,
            "prior": list(self.prior), "temperature": self.temperature,
            "output_variance": self.output_variance,
            "teacher_forcing_period": self.teacher_forcing_period,
            "distance_guard": self.distance_guard,
            "num_timesteps": self.num_timesteps, "feature_dim": self.feature_dim,
            "birth_ordering": self.birth_ordering, "physics_gating": self.physics_gating,
            "severity_conditioning": self.severity_conditioning,
            "original_loss": self.original_loss,
        }

    @staticmethod
    def from_jsonable(d: dict) -> "ModelConfig":
        d = dict(d)
        d["prior"] = tuple(d["prior"])
        return ModelConfig(**d)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class ModelParams:
    """All weights in one flat float64 vector addressed by a named slice table."""

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray],
                 energy_mean: float = 0.0, energy_std: float = 1.0):
        self.config = config
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        self.energy_mean = float(energy_mean)
        self.energy_std = float(energy_std)
        for name, arr in self.arrays.items():
            if not np.isfinite(arr).all():
                raise NumericalError(f"non-finite parameter values in {name}")

    @staticmethod
    def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
        h = config.hidden
        f = config.feature_dim
        d_in = config.num_timesteps * f
        shapes: dict[str, tuple[int, ...]] = {}

        def mlp(prefix: str, dim_in: int, norm: bool = False):
            shapes[f"{prefix}.w1"] = (dim_in, h)
            shapes[f"{prefix}.b1"] = (h,)
            shapes[f"{prefix}.w2"] = (h, h)
            shapes[f"{prefix}.b2"] = (h,)
            if norm:
                shapes[f"{prefix}.gain"] = (h,)
                shapes[f"{prefix}.shift"] = (h,)

        mlp("enc_embed", d_in)
        mlp("enc_edge1", 2 * h, norm=True)
        mlp("enc_node2", h)
        mlp("enc_edge2", 3 * h, norm=True)
        if config.physics_gating:
            shapes["enc_energy.w"] = (h,)
            shapes["enc_energy.b"] = (h,)
        if config.severity_conditioning:
            shapes["enc_sev.w"] = (2,)
            shapes["enc_sev.b"] = (2,)
        shapes["enc_out.w"] = (h, 2)
        shapes["enc_out.b"] = (2,)
        mlp("dec_edge", 2 * f)
        mlp("dec_node", f + h)
        shapes["dec_cont.w"] = (h, 4)
        shapes["dec_cont.b"] = (4,)
        shapes["dec_orient.w"] = (h, 3)
        shapes["dec_orient.b"] = (3,)
        shapes["dec_exist.w"] = (h, 1)
        shapes["dec_exist.b"] = (1,)
        return shapes

    @staticmethod
    def initialize(config: ModelConfig, seed: int) -> "ModelParams":
        """Glorot-uniform weights, zero biases; the severity head starts at the
        identity (weight 0, bias 1) so conditioning is neutral at epoch 0.

        The logit layer starts at zero so every pair opens at an even
        posterior.  The edge-to-node aggregation is an unnormalized sum, so
        with a dense-weight logit layer the initial logits scale with the
        incoming-edge count and the softmax saturates before training starts.
        Edge-MLP standardization gains start at one, shifts at zero.
        """
        rng = np.random.default_rng(seed)
        arrays: dict[str, np.ndarray] = {}
        for name, shape in ModelParams.parameter_shapes(config).items():
            if name == "enc_sev.w":
                arrays[name] = np.zeros(shape)
            elif name == "enc_sev.b":
                arrays[name] = np.ones(shape)
            elif name == "enc_energy.w":
                arrays[name] = _glorot(rng, 1, shape[0]).reshape(shape)
            elif name == "enc_out.w":
                arrays[name] = np.zeros(shape)
            elif name.endswith(".gain"):
                arrays[name] = np.ones(shape)
            else:
                if name.rsplit(".", 1)[-1].startswith("w"):
                    arrays[name] = _glorot(rng, *shape)
                else:
                    arrays[name] = np.zeros(shape)
        return ModelParams(config, arrays)

    # -- flat-vector view -----------------------------------------------------

    def slice_table(self) -> list[tuple[str, int, tuple[int, ...]]]:
        table = []
        offset = 0
        for name, arr in self.arrays.items():
            table.append((name, offset, arr.shape))
            offset += arr.size
        return table

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def to_flat(self) -> np.ndarray:
        if not self.arrays:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def from_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size:
            raise ValueError(f"flat vector has {vec.size} entries, expected {self.size}")
        offset = 0
        for name, arr in self.arrays.items():
            arr[...] = vec[offset:offset + arr.size].reshape(arr.shape)
            offset += arr.size

    def leaves(self) -> dict[str, Tensor]:
        return {name: Tensor(arr, requires_grad=True) for name, arr in self.arrays.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()},
                           self.energy_mean, self.energy_std)


# ---------------------------------------------------------------------------
# Masks and pair energies
# ---------------------------------------------------------------------------

def build_causal_mask(tensor: TrajectoryTensor) -> np.ndarray:
    """Boolean (N, N): entry [j, i] allows the directed edge j -> i.

    Allowed iff j != i, both rows exist at some timestep, and j is born no
    later than i (equal births permit both directions).  Rows that never
    exist (batch padding) join no pairs.
    """
    births = tensor.births()
    exists = births < tensor.num_timesteps
    allowed = (births[:, None] <= births[None, :]) & exists[:, None] & exists[None, :]
    np.fill_diagonal(allowed, False)
    return allowed


def build_full_mask(tensor: TrajectoryTensor) -> np.ndarray:
    """No-self-loop mask over rows that exist somewhere (ordering ablated)."""
    exists = tensor.births() < tensor.num_timesteps
    allowed = exists[:, None] & exists[None, :]
    np.fill_diagonal(allowed, False)
    return allowed


def edge_mask(tensor: TrajectoryTensor, config: ModelConfig) -> np.ndarray:
    return build_causal_mask(tensor) if config.birth_ordering else build_full_mask(tensor)


def pair_energy(tensor: TrajectoryTensor, i: int, j: int, eps: float = 1e-6) -> float:
    """Mean over co-existing timesteps of w_i r_i^2 / max(|x_i - x_j|, eps).

    Asymmetric: uses the source vortex i's vorticity and radius.  Expects
    physical (unscaled) features; returns 0 when the pair never co-exists.
    """
    if i == j:
        raise ValueError("pair energy needs two distinct vortices")
    both = (tensor.mask[i] == 1) & (tensor.mask[j] == 1)
    if not both.any():
        return 0.0
    fi = tensor.features[i, both]
    fj = tensor.features[j, both]
    dist = np.hypot(fi[:, 0] - fj[:, 0], fi[:, 1] - fj[:, 1])
    dist = np.maximum(dist, eps)
    return float(np.mean(fi[:, 3] * fi[:, 2] ** 2 / dist))


def pair_energy_matrix(tensor: TrajectoryTensor, eps: float = 1e-6) -> np.ndarray:
    """E[j, i] = pair energy of directed edge j -> i (source j)."""
    n = tensor.num_vortices
    out = np.zeros((n, n))
    for j in range(n):
        for i in range(n):
            if i != j:
                out[j, i] = pair_energy(tensor, j, i, eps)
    return out


def compress_energy(e: np.ndarray) -> np.ndarray:
    """Sign-preserving log compression of the heavy-tailed pair energy."""
    return np.sign(e) * np.log1p(np.abs(e))


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

@dataclass
class LatentEdgePosterior:
    """Two-way categorical edge posterior on the valid directed pairs."""

    senders: np.ndarray        # (P,) int
    receivers: np.ndarray      # (P,) int
    logits: Tensor             # (P, 2) gated logits
    log_probs: Tensor          # (P, 2)
    probs: Tensor              # (P, 2)
    num_vortices: int
    valid_mask: np.ndarray     # (N, N) bool

    @property
    def num_pairs(self) -> int:
        return len(self.senders)

    def probs_array(self) -> np.ndarray:
        return self.probs.data

    @staticmethod
    def from_probs(probs: np.ndarray, senders: np.ndarray | None = None,
                   receivers: np.ndarray | None = None,
                   num_vortices: int | None = None) -> "LatentEdgePosterior":
        """Wrap an explicit (P, 2) probability table (analysis/test helper)."""
        probs = np.asarray(probs, dtype=np.float64)
        p = probs.shape[0]
        if senders is None:
            senders = np.zeros(p, dtype=np.int64)
        if receivers is None:
            receivers = np.arange(1, p + 1, dtype=np.int64)
        n = num_vortices if num_vortices is not None else p + 1
        valid = np.zeros((n, n), dtype=bool)
        valid[senders, receivers] = True
        with np.errstate(divide="ignore"):
            logp = np.log(probs)
        return LatentEdgePosterior(np.asarray(senders), np.asarray(receivers),
                                   Tensor(logp), Tensor(logp), Tensor(probs), n, valid)


def _mlp(leaves: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    h = elu(x @ leaves[f"{prefix}.w1"] + leaves[f"{prefix}.b1"])
    return elu(h @ leaves[f"{prefix}.w2"] + leaves[f"{prefix}.b2"])


def _norm_mlp(leaves: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    """Edge MLP with per-feature standardization across the pair batch.

    The node aggregation upstream is an unnormalized sum, so raw edge
    activations grow with the incoming-edge count; a bare logit layer on
    top saturates the posterior within a few optimizer steps and the
    encoder stops learning.  Standardizing over the pairs of the current
    forward pass keeps the logit scale flat in the pair count.  One pair
    degenerates to the shift vector (zero variance).
    """
    y = _mlp(leaves, prefix, x)
    m = y.mean(axis=0, keepdims=True)
    v = ((y - m) ** 2).mean(axis=0, keepdims=True)
    return (y - m) * ((v + 1e-5) ** -0.5) * leaves[f"{prefix}.gain"] \
        + leaves[f"{prefix}.shift"]


def normalize_severity(severity: float) -> float:
    """Map either severity convention onto [0, 1] (percent scale divides by 100)."""
    return severity / 100.0 if severity > 1.0 else float(severity)


def encode(features: np.ndarray | Tensor, mask: np.ndarray, severity: float,
           params: ModelParams, config: ModelConfig,
           energies: np.ndarray | None = None,
           leaves: dict[str, Tensor] | None = None) -> LatentEdgePosterior:
    """Infer the per-pair edge posterior from scaled trajectories.

    `energies` is the raw pair-energy matrix (physical units); it is
    log-compressed and standardized with the training statistics stored on
    `params` before entering the physics head.
    """
    x = features if isinstance(features, Tensor) else Tensor(features)
    n, t, f = x.shape
    if t != config.num_timesteps or f != config.feature_dim:
        raise ValueError(f"trajectories are {t}x{f}, model expects "
                         f"{config.num_timesteps}x{config.feature_dim}")
    if leaves is None:
        leaves = params.leaves()
    senders, receivers = np.nonzero(mask)
    p = len(senders)
    h1 = _mlp(leaves, "enc_embed", x.reshape(n, t * f))
    if p == 0:
        empty = Tensor(np.zeros((0, 2)))
        return LatentEdgePosterior(senders, receivers, empty, empty,
                                   Tensor(np.zeros((0, 2))), n, mask)
    e1 = _norm_mlp(leaves, "enc_edge1", concat([h1[senders], h1[receivers]], axis=1))
    h2 = _mlp(leaves, "enc_node2", segment_sum(e1, receivers, n))
    e2 = _norm_mlp(leaves, "enc_edge2", concat([h2[senders], h2[receivers], e1], axis=1))
    if config.physics_gating:
        if energies is None:
            raise ValueError("physics gating requires the pair-energy matrix")
        e_std = (compress_energy(energies[senders, receivers]) - params.energy_mean) \
            / params.energy_std
        gate = Tensor(e_std[:, None]) * leaves["enc_energy.w"] + leaves["enc_energy.b"]
        e2 = e2 + gate
    logits = e2 @ leaves["enc_out.w"] + leaves["enc_out.b"]
    if config.severity_conditioning:
        s_norm = normalize_severity(severity)
        gs = leaves["enc_sev.w"] * s_norm + leaves["enc_sev.b"]
        logits = logits * gs.reshape(1, 2)
    check_finite(logits, "encoder logits")
    return LatentEdgePosterior(senders, receivers, logits, log_softmax(logits),
                               softmax(logits), n, mask)


# ---------------------------------------------------------------------------
# Edge sampling
# ---------------------------------------------------------------------------

def sample_edges(posterior: LatentEdgePosterior, temperature: float, seed: int,
                 hard: bool = False) -> Tensor:
    """Gumbel-softmax samples per valid pair: softmax((log p + G)/tau).

    `hard` returns straight-through one-hots (forward one-hot, soft gradient).
    Identical seed -> identical noise, which is what the finite-difference
    gradient check relies on.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    p = posterior.num_pairs
    noise = np.random.default_rng(seed).gumbel(size=(p, 2))
    soft = softmax((posterior.log_probs + Tensor(noise)) * (1.0 / temperature))
    if not hard:
        return soft
    onehot = np.zeros_like(soft.data)
    if p:
        onehot[np.arange(p), soft.data.argmax(axis=1)] = 1.0
    return soft + Tensor(onehot - soft.data)


def argmax_samples(posterior: LatentEdgePosterior) -> Tensor:
    """Deterministic hard assignment (the temperature -> 0, no-noise limit)."""
    p = posterior.num_pairs
    onehot = np.zeros((p, 2))
    if p:
        onehot[np.arange(p), posterior.probs.data.argmax(axis=1)] = 1.0
    return Tensor(onehot)


# ---------------------------------------------------------------------------
# Decoder
# ---------------------------------------------------------------------------

@dataclass
class Predictions:
    """Per-step decoder outputs; index k predicts timestep k+1."""

    continuous: Tensor          # (N, T-1, 4)
    orientation_logits: Tensor  # (N, T-1, 3)
    existence_logits: Tensor    # (N, T-1)
    full_state: Tensor          # (N, T-1, 8) residual prediction (original-loss path)


def decode(features: np.ndarray | Tensor, samples: Tensor | np.ndarray,
           posterior: LatentEdgePosterior, params: ModelParams, config: ModelConfig,
           teacher_forcing_period: int | None = None,
           leaves: dict[str, Tensor] | None = None) -> Predictions:
    """Roll the per-step dynamics forward along sampled interaction edges.

    Ground truth is fed at step indices divisible by the teacher-forcing
    period; in between the decoder consumes its own predictions (orientation
    softmaxed, existence squashed).  The no-interaction edge type contributes
    no message.  `samples` may also be a dense (N, N, 2) array; entries on
    invalid pairs are discarded.
    """
    x = features if isinstance(features, Tensor) else Tensor(features)
    n, t, f = x.shape
    period = teacher_forcing_period or config.teacher_forcing_period
    if leaves is None:
        leaves = params.leaves()
    senders, receivers = posterior.senders, posterior.receivers
    if not isinstance(samples, Tensor):
        samples = Tensor(samples)
    if samples.data.ndim == 3:
        samples = samples[senders, receivers]
    if samples.data.shape[0] != len(senders):
        raise ValueError("one edge sample per valid pair is required")
    interaction = samples[:, EDGE:EDGE + 1]

    cont_steps, orient_steps, exist_steps, full_steps = [], [], [], []
    state = x[:, 0, :]
    for step in range(t - 1):
        if step % period == 0:
            state = x[:, step, :]
        if len(senders):
            msg_in = concat([state[senders], state[receivers]], axis=1)
            messages = _mlp(leaves, "dec_edge", msg_in) * interaction
            agg = segment_sum(messages, receivers, n)
        else:
            agg = Tensor(np.zeros((n, config.hidden)))
        hidden = _mlp(leaves, "dec_node", concat([state, agg], axis=1))
        d_cont = hidden @ leaves["dec_cont.w"] + leaves["dec_cont.b"]
        orient = hidden @ leaves["dec_orient.w"] + leaves["dec_orient.b"]
        exist = hidden @ leaves["dec_exist.w"] + leaves["dec_exist.b"]
        pred_cont = state[:, CONTINUOUS] + d_cont
        full = state + concat([d_cont, orient, exist], axis=1)
        cont_steps.append(pred_cont.reshape(n, 1, 4))
        orient_steps.append(orient.reshape(n, 1, 3))
        exist_steps.append(exist.reshape(n, 1))
        full_steps.append(full.reshape(n, 1, f))
        if config.original_loss:
            state = full
        else:
            state = concat([pred_cont, softmax(orient), sigmoid(exist)], axis=1)
    return Predictions(
        continuous=concat(cont_steps, axis=1),
        orientation_logits=concat(orient_steps, axis=1),
        existence_logits=concat(exist_steps, axis=1),
        full_state=concat(full_steps, axis=1),
    )


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

@dataclass
class LossBreakdown:
    rec_continuous: float
    rec_orientation: float
    exist: float
    kl: float
    lambda_kl: float
    total: float
    total_node: Tensor = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {"rec_continuous": self.rec_continuous,
                "rec_orientation": self.rec_orientation, "exist": self.exist,
                "kl": self.kl, "lambda_kl": self.lambda_kl, "total": self.total}


def kl_to_prior(posterior: LatentEdgePosterior, prior: tuple[float, float]) -> Tensor:
    """Mean over valid pairs of sum_k q_k (log q_k - log p_k).

    Entries with q_k = 0 contribute nothing (the 0 log 0 = 0 convention), so
    hand-built degenerate posteriors evaluate exactly instead of producing
    0 * -inf.  Softmax outputs are strictly positive, so the guard is inert
    during training.
    """
    if posterior.num_pairs == 0:
        return Tensor(0.0)
    log_prior = np.log(np.asarray(prior))
    with np.errstate(invalid="ignore"):      # 0 * -inf before the mask
        contrib = posterior.probs * (posterior.log_probs - Tensor(log_prior))
    per_pair = where_const(posterior.probs.data > 0, contrib).sum(axis=1)
    return per_pair.mean()


def loss(predictions: Predictions, tensor: TrajectoryTensor,
         posterior: LatentEdgePosterior, lambda_kl: float,
         config: ModelConfig) -> LossBreakdown:
    """Masked reconstruction + existence + annealed KL, as one minimization
    objective: total = NLL + CE + BCE + lambda_kl * KL."""
    if not 0.0 <= lambda_kl <= 1.0:
        raise ValueError("lambda_kl must lie in [0, 1]")
    feats = tensor.features
    n, t = tensor.mask.shape
    exist_mask = tensor.mask[:, 1:].astype(bool)           # (N, T-1) target steps
    kl = kl_to_prior(posterior, config.prior)

    if config.original_loss:
        # residual prediction of every channel, every row and timestep, unmasked
        target = Tensor(feats[:, 1:, :])
        se = ((predictions.full_state - target) ** 2.0).sum(axis=2)
        count = max(1, n * (t - 1))
        rec_cont = se.sum() * (1.0 / (2.0 * config.output_variance * count))
        total = rec_cont + Tensor(lambda_kl) * kl
        return LossBreakdown(rec_cont.item(), 0.0, 0.0, kl.item(), lambda_kl,
                             total.item(), total)

    count_exist = max(1, int(exist_mask.sum()))
    target_cont = Tensor(feats[:, 1:, CONTINUOUS])
    se = ((predictions.continuous - target_cont) ** 2.0).sum(axis=2)
    rec_cont = where_const(exist_mask, se).sum() \
        * (1.0 / (2.0 * config.output_variance * count_exist))

    target_orient = feats[:, 1:, ONEHOT]
    ce = -(Tensor(target_orient) * log_softmax(predictions.orientation_logits)).sum(axis=2)
    rec_orient = where_const(exist_mask, ce).sum() * (1.0 / count_exist)

    # unmasked: predicting absence is part of the objective
    target_exist = feats[:, 1:, EXIST]
    logits = predictions.existence_logits
    bce = Tensor(target_exist) * softplus(-logits) \
        + Tensor(1.0 - target_exist) * softplus(logits)
    exist_loss = bce.sum() * (1.0 / max(1, n * (t - 1)))

    total = rec_cont + rec_orient + exist_loss + Tensor(lambda_kl) * kl
    blk = LossBreakdown(rec_cont.item(), rec_orient.item(), exist_loss.item(),
                        kl.item(), lambda_kl, total.item(), total)
    if not np.isfinite(blk.total):
        raise NumericalError(f"non-finite loss: {blk.as_dict()}")
    return blk


# ---------------------------------------------------------------------------
# Full forward pass (shared by training, evaluation, markers)
# ---------------------------------------------------------------------------

def forward(scaled: TrajectoryTensor, physical: TrajectoryTensor,
            params: ModelParams, config: ModelConfig, lambda_kl: float,
            sample_seed: int, hard: bool = False,
            teacher_forcing_period: int | None = None,
            leaves: dict[str, Tensor] | None = None,
            ) -> tuple[LatentEdgePosterior, Predictions, LossBreakdown]:
    if leaves is None:
        leaves = params.leaves()
    mask = edge_mask(scaled, config)
    energies = pair_energy_matrix(physical, config.distance_guard) \
        if config.physics_gating else None
    posterior = encode(scaled.features, mask, scaled.severity, params, config,
                       energies=energies, leaves=leaves)
    samples = sample_edges(posterior, config.temperature, sample_seed, hard=hard)
    predictions = decode(scaled.features, samples, posterior, params, config,
                         teacher_forcing_period=teacher_forcing_period, leaves=leaves)
    return posterior, predictions, loss(predictions, scaled, posterior, lambda_kl, config)


# ---------------------------------------------------------------------------
# Checkpoints: JSON header + flat little-endian float64 parameter block
# ---------------------------------------------------------------------------

def save_checkpoint(path: str | Path, params: ModelParams, epoch: int,
                    rng_state: dict | None = None, extra: dict | None = None) -> None:
    header = {
        "format": CKPT_FORMAT,
        "version": __version__,
        "config": params.config.to_jsonable(),
        "slices": [[name, off, list(shape)] for name, off, shape in params.slice_table()],
        "energy_stats": [params.energy_mean, params.energy_std],
        "epoch": epoch,
        "rng_state": rng_state,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(params.to_flat().astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, int, dict | None, dict]:
    raw = Path(path).read_bytes()
    (hlen,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    if header.get("format") != CKPT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    config = ModelConfig.from_jsonable(header["config"])
    flat = np.frombuffer(raw[8 + hlen:], dtype="<f8")
    arrays: dict[str, np.ndarray] = {}
    for name, off, shape in header["slices"]:
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = flat[off:off + size].reshape(shape).copy()
    mean, std = header["energy_stats"]
    params = ModelParams(config, arrays, mean, std)
    return params, int(header["epoch"]), header.get("rng_state"), header.get("extra", {})
