"""Training loop, stratified splits, evaluation metrics, gradient checking.

Optimization is plain Adam over the flat parameter vector with the KL weight
annealed linearly from 0 to 1 over the first `anneal_epochs` epochs.  Feature
scaling and pair-energy standardization are fit on the training split only
and travel with the checkpoint.  Everything is seeded; two runs with the same
config produce bit-identical checkpoints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import NumericalError, Tensor, softmax
from .nri import (ModelConfig, ModelParams, argmax_samples, compress_energy,
                  decode, edge_mask, encode, loss, pair_energy_matrix,
                  sample_edges, save_checkpoint)
from .track import (CONTINUOUS, EXIST, FEATURE_NAMES, ScalingParams,
                    TrajectoryTensor, apply_scaling, fit_scaling,
                    invert_scaling)

LOG_COLUMNS = ["epoch", "rec_continuous", "rec_orientation", "exist", "kl",
               "lambda_kl", "total", "eval_mse", "eval_mae", "eval_accuracy"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 8
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    anneal_epochs: int = 100
    seed: int = 0
    eval_every: int = 10
    checkpoint_every: int = 0         # 0: final checkpoint only
    no_ordering: bool = False
    no_physics_gating: bool = False
    no_severity_conditioning: bool = False
    original_nri: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.anneal_epochs < 1:
            raise ValueError("anneal_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("moment decays must lie in [0, 1)")

    def lambda_kl(self, epoch: int) -> float:
        return min(1.0, epoch / self.anneal_epochs)

    def to_jsonable(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def apply_ablations(model_config: ModelConfig, config: TrainConfig) -> ModelConfig:
    """Rewire the model per the ablation flags.

    original_nri implies all three structural ablations plus the unmasked
    residual loss over all eight channels.
    """
    original = config.original_nri
    return replace(
        model_config,
        birth_ordering=not (config.no_ordering or original),
        physics_gating=not (config.no_physics_gating or original),
        severity_conditioning=not (config.no_severity_conditioning or original),
        original_loss=original,
    )


# ---------------------------------------------------------------------------
# Stratified split
# ---------------------------------------------------------------------------

def split(dataset: list, eval_count: int, seed: int) -> tuple[list[int], list[int]]:
    """Deterministic stratified split by (severity, noise_sigma).

    Returns (train_indices, eval_indices), both sorted.  Eval slots are
    water-filled across strata, preferring strata whose severity level and
    noise level are least represented so far; each stratum keeps at least one
    training item.
    """
    if eval_count < 1:
        raise ValueError("eval split must contain at least one item")
    if eval_count >= len(dataset):
        raise ValueError("eval split would leave no training items")
    strata: dict[tuple[float, float], list[int]] = {}
    for idx, item in enumerate(dataset):
        strata.setdefault((float(item.severity), float(item.noise_sigma)), []).append(idx)
    keys = sorted(strata)
    capacity = {k: len(strata[k]) - 1 for k in keys}
    if sum(capacity.values()) < eval_count:
        raise ValueError(
            f"strata too small: cannot place {eval_count} eval items while "
            f"keeping one training item per stratum "
            f"(capacity {sum(capacity.values())} over {len(keys)} strata)")
    quota = {k: 0 for k in keys}
    sev_taken: dict[float, int] = {}
    noise_taken: dict[float, int] = {}
    for _ in range(eval_count):
        best = None
        best_rank = None
        for pos, k in enumerate(keys):
            if quota[k] >= capacity[k]:
                continue
            rank = (quota[k] / len(strata[k]), sev_taken.get(k[0], 0),
                    noise_taken.get(k[1], 0), pos)
            if best_rank is None or rank < best_rank:
                best, best_rank = k, rank
        quota[best] += 1
        sev_taken[best[0]] = sev_taken.get(best[0], 0) + 1
        noise_taken[best[1]] = noise_taken.get(best[1], 0) + 1
    rng = np.random.default_rng(seed)
    eval_idx: list[int] = []
    for k in keys:
        members = strata[k]
        picked = rng.permutation(len(members))[:quota[k]]
        eval_idx.extend(members[i] for i in picked)
    eval_set = set(eval_idx)
    train_idx = [i for i in range(len(dataset)) if i not in eval_set]
    return train_idx, sorted(eval_idx)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class Metrics:
    """Masked prediction quality over an evaluation set.

    MSE/MAE cover the seven non-existence channels at existing (i, t)
    entries only; accuracy covers the existence head over every timestep of
    real (non-padded) vortices.
    """

    accuracy: float
    mse: float
    mae: float
    per_feature_mse: dict[str, float] = field(default_factory=dict)
    per_feature_mae: dict[str, float] = field(default_factory=dict)
    num_entries: int = 0
    num_existence: int = 0

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "mse": self.mse, "mae": self.mae,
                "per_feature_mse": self.per_feature_mse,
                "per_feature_mae": self.per_feature_mae,
                "num_entries": self.num_entries,
                "num_existence": self.num_existence}


@dataclass
class _SimCache:
    """Per-simulation immutables computed once before the epoch loop."""

    scaled: TrajectoryTensor
    mask: np.ndarray
    energies: np.ndarray | None


def _prepare(tensor: TrajectoryTensor, scaling: ScalingParams | None,
             config: ModelConfig) -> _SimCache:
    if tensor.scaling is not None:
        scaled, physical = tensor, invert_scaling(tensor)
    elif scaling is not None:
        scaled, physical = apply_scaling(tensor, scaling), tensor
    else:
        raise ValueError("tensor carries no scaling and none was provided")
    if scaled.num_timesteps != config.num_timesteps:
        raise ValueError(
            f"tensor has {scaled.num_timesteps} timesteps, model expects "
            f"{config.num_timesteps}")
    energies = pair_energy_matrix(physical, config.distance_guard) \
        if config.physics_gating else None
    return _SimCache(scaled, edge_mask(scaled, config), energies)


def predict_rollout(params: ModelParams, cache: _SimCache):
    """Hard-edge full rollout: argmax edges, ground truth only at step 0."""
    config = params.config
    scaled = cache.scaled
    posterior = encode(scaled.features, cache.mask, scaled.severity, params,
                       config, energies=cache.energies)
    samples = argmax_samples(posterior)
    preds = decode(scaled.features, samples, posterior, params, config,
                   teacher_forcing_period=max(2, scaled.num_timesteps))
    return posterior, preds


def evaluate(params: ModelParams, dataset: list[TrajectoryTensor],
             scaling: ScalingParams | None = None) -> Metrics:
    config = params.config
    n_feat = 7
    se = np.zeros(n_feat)
    ae = np.zeros(n_feat)
    n_masked = 0
    correct = 0
    n_exist = 0
    for tensor in dataset:
        cache = _prepare(tensor, scaling, config)
        scaled = cache.scaled
        _, preds = predict_rollout(params, cache)
        pred7 = np.concatenate(
            [preds.continuous.data, softmax(preds.orientation_logits).data], axis=2)
        target7 = scaled.features[:, 1:, :n_feat]
        sel = scaled.mask[:, 1:].astype(bool)
        diff = pred7[sel] - target7[sel]
        se += (diff ** 2).sum(axis=0)
        ae += np.abs(diff).sum(axis=0)
        n_masked += int(sel.sum())
        real = scaled.mask.any(axis=1)
        if real.any():
            pred_exist = preds.existence_logits.data[real] > 0.0  # sigmoid > 0.5
            target_exist = scaled.mask[real, 1:].astype(bool)
            correct += int((pred_exist == target_exist).sum())
            n_exist += target_exist.size
    if n_masked == 0:
        per_mse = {name: 0.0 for name in FEATURE_NAMES[:n_feat]}
        per_mae = dict(per_mse)
        return Metrics(correct / n_exist if n_exist else 0.0, 0.0, 0.0,
                       per_mse, per_mae, 0, n_exist)
    per_mse = {name: se[i] / n_masked for i, name in enumerate(FEATURE_NAMES[:n_feat])}
    per_mae = {name: ae[i] / n_masked for i, name in enumerate(FEATURE_NAMES[:n_feat])}
    return Metrics(
        accuracy=correct / n_exist if n_exist else 0.0,
        mse=float(se.sum() / (n_masked * n_feat)),
        mae=float(ae.sum() / (n_masked * n_feat)),
        per_feature_mse=per_mse, per_feature_mae=per_mae,
        num_entries=n_masked, num_existence=n_exist)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: ModelParams
    scaling: ScalingParams
    history: list[dict]
    metrics: Metrics | None
    model_config: ModelConfig


def fit_energy_stats(caches: list[_SimCache]) -> tuple[float, float]:
    """Mean/std of the log-compressed pair energies over valid training pairs."""
    values = []
    for cache in caches:
        if cache.energies is not None and cache.mask.any():
            values.append(compress_energy(cache.energies[cache.mask]))
    if not values:
        return 0.0, 1.0
    pooled = np.concatenate(values)
    std = float(pooled.std())
    return float(pooled.mean()), std if std > 1e-12 else 1.0


def _sample_seed(seed: int, epoch: int, sim_index: int) -> int:
    return (seed * 1_000_003 + epoch * 8191 + sim_index) & 0x7FFFFFFF


def train(dataset: list[TrajectoryTensor], model_config: ModelConfig,
          config: TrainConfig, eval_set: list[TrajectoryTensor] | None = None,
          out_dir: str | Path | None = None) -> TrainResult:
    """Optimize on `dataset` (physical, unscaled tensors).

    Scaling and energy statistics come from `dataset` alone; `eval_set` is
    scored with them.  Writes checkpoint.bin and train_log.csv under
    `out_dir` when given.  Divergence aborts with the offending batch id.
    """
    if not dataset:
        raise ValueError("training set is empty")
    mc = apply_ablations(model_config, config)
    t_steps = dataset[0].num_timesteps
    mc = replace(mc, num_timesteps=t_steps)
    scaling = fit_scaling(dataset)
    caches = [_prepare(t, scaling, mc) for t in dataset]

    params = ModelParams.initialize(mc, config.seed)
    if mc.physics_gating:
        params.energy_mean, params.energy_std = fit_energy_stats(caches)

    adam_m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    adam_v = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    adam_t = 0
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    history: list[dict] = []
    metrics: Metrics | None = None
    for epoch in range(config.epochs):
        lam = config.lambda_kl(epoch)
        order = np.random.default_rng([config.seed, 1, epoch]).permutation(len(caches))
        sums = np.zeros(5)  # rec_cont, rec_orient, exist, kl, total
        seen = 0
        for batch_id, start in enumerate(range(0, len(order), config.batch_size)):
            batch = order[start:start + config.batch_size]
            grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
            inv = 1.0 / len(batch)
            for sim_index in batch:
                cache = caches[sim_index]
                leaves = params.leaves()
                posterior = encode(cache.scaled.features, cache.mask,
                                   cache.scaled.severity, params, mc,
                                   energies=cache.energies, leaves=leaves)
                samples = sample_edges(
                    posterior, mc.temperature,
                    _sample_seed(config.seed, epoch, int(sim_index)), hard=True)
                preds = decode(cache.scaled.features, samples, posterior,
                               params, mc, leaves=leaves)
                try:
                    blk = loss(preds, cache.scaled, posterior, lam, mc)
                except NumericalError as err:
                    raise NumericalError(
                        f"divergence at epoch {epoch}, batch {batch_id}, "
                        f"simulation {sim_index}: {err}") from err
                (blk.total_node * inv).backward()
                for name, leaf in leaves.items():
                    if leaf.grad is not None:
                        grads[name] += leaf.grad
                sums += np.array([blk.rec_continuous, blk.rec_orientation,
                                  blk.exist, blk.kl, blk.total])
                seen += 1
            adam_t += 1
            c1 = 1.0 - config.beta1 ** adam_t
            c2 = 1.0 - config.beta2 ** adam_t
            for name, arr in params.arrays.items():
                g = grads[name]
                adam_m[name] = config.beta1 * adam_m[name] + (1 - config.beta1) * g
                adam_v[name] = config.beta2 * adam_v[name] + (1 - config.beta2) * g * g
                arr -= config.learning_rate * (adam_m[name] / c1) \
                    / (np.sqrt(adam_v[name] / c2) + config.adam_epsilon)
        mean = sums / max(1, seen)
        row = {"epoch": epoch, "rec_continuous": mean[0], "rec_orientation": mean[1],
               "exist": mean[2], "kl": mean[3], "lambda_kl": lam, "total": mean[4],
               "eval_mse": "", "eval_mae": "", "eval_accuracy": ""}
        last = epoch == config.epochs - 1
        if eval_set and (last or (epoch + 1) % config.eval_every == 0):
            metrics = evaluate(params, eval_set, scaling)
            row["eval_mse"] = metrics.mse
            row["eval_mae"] = metrics.mae
            row["eval_accuracy"] = metrics.accuracy
        history.append(row)
        if out is not None and config.checkpoint_every \
                and (epoch + 1) % config.checkpoint_every == 0 and not last:
            _save(out / f"checkpoint_{epoch + 1:04d}.bin", params, epoch + 1,
                  scaling, config)
    if out is not None:
        _save(out / "checkpoint.bin", params, config.epochs, scaling, config)
        write_log(out / "train_log.csv", history)
    return TrainResult(params, scaling, history, metrics, mc)


def _save(path: Path, params: ModelParams, epoch: int, scaling: ScalingParams,
          config: TrainConfig) -> None:
    save_checkpoint(path, params, epoch,
                    extra={"scaling": scaling.to_jsonable(),
                           "train_config": config.to_jsonable()})


def write_log(path: str | Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: _fmt(row[k]) for k in LOG_COLUMNS})


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, float):
        return "%.10g" % value
    return str(value)


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_slice: str
    per_slice: dict[str, float]


def _check_instance(config: ModelConfig, seed: int,
                    n: int, t: int) -> tuple[TrajectoryTensor, np.ndarray]:
    """Random small tensor with staggered births/deaths and both orientations."""
    rng = np.random.default_rng(seed)
    mask = np.ones((n, t), dtype=np.uint8)
    for i in range(n):
        mask[i, :min(i, t - 1)] = 0                  # staggered births
    if n > 1:
        mask[1, t - 1] = 0                           # one death
    feats = np.zeros((n, t, 8))
    cont = rng.normal(0.0, 0.5, size=(n, t, 4))
    cont[:, :, 2] = np.abs(cont[:, :, 2]) + 0.2      # radius stays positive
    feats[:, :, CONTINUOUS] = cont
    for i in range(n):
        orient = 4 if i % 2 == 0 else 5              # CCW / CW one-hot slot
        feats[i, :, orient] = 1.0
        feats[i, :, 3] = np.abs(feats[i, :, 3]) * (1 if i % 2 == 0 else -1)
    feats[:, :, EXIST] = 1.0
    absent = mask == 0
    feats[absent] = 0.0
    feats[absent, 6] = 1.0
    tensor = TrajectoryTensor(feats, mask, severity=70.0, noise_sigma=0.0)
    energies = pair_energy_matrix(tensor, config.distance_guard)
    return tensor, energies


def grad_check(config: ModelConfig, seed: int, n: int = 3, t: int = 6,
               fd_step: float = 5e-5, lambda_kl: float = 0.7) -> GradCheckReport:
    """Analytic gradients vs central finite differences over every parameter.

    The Gumbel draws are reused across all evaluations (common random
    numbers); soft sampling keeps the objective differentiable.

    ELU is C1 but not C2, so a pre-activation landing within fd_step of
    zero inflates the finite-difference error to O(h) for that slice.
    The jitter below avoids the systematic case (zero biases); for an
    unlucky seed the report can still show an inflated slice even though
    the analytic gradient is exact.

    The default step balances O(h^2) truncation against round-off: the
    continuous term carries a 1/(2 sigma^2) scale, so central differences
    lose roughly ten digits to cancellation and smaller steps make the
    check worse, not better.
    """
    mc = replace(config, num_timesteps=t)
    tensor, energies = _check_instance(mc, seed, n, t)
    params = ModelParams.initialize(mc, seed + 1)
    if params.size == 0:
        return GradCheckReport(0.0, "", {})
    # jitter off the init point: zero biases put ELU inputs exactly on the
    # kink (C1 only), where central differences pick up an O(h) error
    jitter = np.random.default_rng(seed + 3)
    for arr in params.arrays.values():
        arr += jitter.uniform(-0.05, 0.05, size=arr.shape)
    mask = edge_mask(tensor, mc)
    sample_seed = seed + 2

    def objective(build_graph: bool):
        leaves = {k: Tensor(v, requires_grad=build_graph)
                  for k, v in params.arrays.items()}
        posterior = encode(tensor.features, mask, tensor.severity, params, mc,
                           energies=energies, leaves=leaves)
        samples = sample_edges(posterior, mc.temperature, sample_seed, hard=False)
        preds = decode(tensor.features, samples, posterior, params, mc, leaves=leaves)
        blk = loss(preds, tensor, posterior, lambda_kl, mc)
        return blk, leaves

    blk, leaves = objective(build_graph=True)
    blk.total_node.backward()
    analytic = {k: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
                for k, leaf in leaves.items()}

    per_slice: dict[str, float] = {}
    for name, arr in params.arrays.items():
        worst = 0.0
        flat = arr.ravel()
        a_flat = analytic[name].ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + fd_step
            up = objective(build_graph=False)[0].total
            flat[i] = keep - fd_step
            down = objective(build_graph=False)[0].total
            flat[i] = keep
            fd = (up - down) / (2.0 * fd_step)
            rel = abs(a_flat[i] - fd) / max(abs(a_flat[i]), abs(fd), 1e-6)
            worst = max(worst, rel)
        per_slice[name] = worst
    worst_name = max(per_slice, key=per_slice.get)
    return GradCheckReport(per_slice[worst_name], worst_name, per_slice)
