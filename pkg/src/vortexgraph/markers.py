"""Latent-graph entropy markers and their relationship to severity.

Per simulation, each edge type's posterior mass over valid pairs is
normalized into a distribution whose Shannon entropy is the marker.  Across
simulations the markers are related to severity via Spearman rank
correlation (average ranks, t-distribution p-value), a monotonicity score
over per-level means, and ordinary least squares R².  A perturbation probe
re-encodes each simulation at severity s +/- delta and records the entropy
change, which is zero by construction until the severity head departs from
its identity initialization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as _sstats

from . import __version__
from .nri import (LatentEdgePosterior, ModelParams, edge_mask, encode,
                  pair_energy_matrix)
from .track import ScalingParams, TrajectoryTensor, apply_scaling

EDGE_TYPE_NAMES = ("no_interaction", "interaction")
MARKERS_CSV_COLUMNS = (
    ["name", "severity", "noise_sigma", "valid_pairs"]
    + [f"entropy_{n}" for n in EDGE_TYPE_NAMES]
    + [f"d_entropy_minus_{n}" for n in EDGE_TYPE_NAMES]
    + [f"d_entropy_plus_{n}" for n in EDGE_TYPE_NAMES])

TINY_P = 5e-324  # smallest positive subnormal; keeps p in (0, 1]


# ---------------------------------------------------------------------------
# Statistics primitives
# ---------------------------------------------------------------------------

def edge_entropy(posterior: LatentEdgePosterior, edge_type: int) -> float:
    """Shannon entropy of the normalized edge-type-k mass over valid pairs.

    Weights w_p = q_p(k) normalize to a distribution; H = -sum q ln q.
    All-zero weights give 0 by convention; an empty posterior is an error.
    """
    if posterior.num_pairs == 0:
        raise ValueError("entropy is undefined without valid pairs")
    if not 0 <= edge_type < posterior.probs.data.shape[1]:
        raise ValueError(f"edge type {edge_type} out of range")
    w = posterior.probs_array()[:, edge_type]
    total = w.sum()
    if total <= 0.0:
        return 0.0
    q = w / total
    nz = q[q > 0]
    return float(-(nz * np.log(nz)).sum())


def rank_average(xs: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average of their positions."""
    xs = np.asarray(xs, dtype=np.float64)
    order = np.argsort(xs, kind="stable")
    ranks = np.empty(len(xs))
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[order[j + 1]] == xs[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(xs, ys) -> tuple[float, float]:
    """Spearman rho with average ranks; two-sided p from the t-statistic
    t = rho * sqrt((n-2)/(1-rho^2)) on n-2 degrees of freedom."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n = len(xs)
    if n < 3 or len(ys) != n:
        raise ValueError("spearman needs at least 3 paired values")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        raise ValueError("spearman is undefined for a constant input")
    rx = rank_average(xs) - rank_average(xs).mean()
    ry = rank_average(ys) - rank_average(ys).mean()
    rho = float((rx * ry).sum() / np.sqrt((rx * rx).sum() * (ry * ry).sum()))
    rho = min(1.0, max(-1.0, rho))
    if abs(rho) == 1.0:
        return rho, TINY_P
    t = rho * np.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * float(_sstats.t.sf(abs(t), df=n - 2))
    return rho, max(min(p, 1.0), TINY_P)


def monotonicity(severities, values, direction: str = "decreasing") -> float:
    """Fraction of consecutive severity-level mean transitions moving in the
    expected direction; exactly equal consecutive means count against."""
    if direction not in ("increasing", "decreasing"):
        raise ValueError("direction must be 'increasing' or 'decreasing'")
    severities = np.asarray(severities, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(severities) != len(values):
        raise ValueError("severities and values differ in length")
    levels = np.unique(severities)
    if len(levels) < 2:
        raise ValueError("monotonicity needs at least 2 severity levels")
    means = np.array([values[severities == lv].mean() for lv in levels])
    diffs = np.diff(means)
    good = diffs > 0 if direction == "increasing" else diffs < 0
    return float(good.sum() / len(diffs))


def r_squared(xs, ys) -> float:
    """R^2 of the least-squares line y = a + b x, clamped to [0, 1].

    Constant ys give 0 by convention; constant xs are rejected.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if len(xs) < 2 or len(xs) != len(ys):
        raise ValueError("r_squared needs at least 2 paired values")
    if np.all(xs == xs[0]):
        raise ValueError("r_squared is undefined for constant xs")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    ss_tot = float((yc * yc).sum())
    if ss_tot == 0.0:
        return 0.0
    b = float((xc * yc).sum() / (xc * xc).sum())
    resid = yc - b * xc
    r2 = 1.0 - float((resid * resid).sum()) / ss_tot
    return min(1.0, max(0.0, r2))


# ---------------------------------------------------------------------------
# Model-side marker extraction
# ---------------------------------------------------------------------------

def clamp_severity(severity: float) -> float:
    """Clamp into the valid range of whichever severity convention applies."""
    hi = 100.0 if severity > 1.0 else 1.0
    return min(hi, max(0.0, severity))


def _posterior_for(params: ModelParams, physical: TrajectoryTensor,
                   scaling: ScalingParams, severity: float) -> LatentEdgePosterior:
    config = params.config
    scaled = apply_scaling(physical, scaling)
    mask = edge_mask(scaled, config)
    energies = pair_energy_matrix(physical, config.distance_guard) \
        if config.physics_gating else None
    return encode(scaled.features, mask, severity, params, config,
                  energies=energies)


def entropies(posterior: LatentEdgePosterior) -> np.ndarray:
    if posterior.num_pairs == 0:
        return np.zeros(len(EDGE_TYPE_NAMES))
    return np.array([edge_entropy(posterior, k)
                     for k in range(len(EDGE_TYPE_NAMES))])


def perturb_severity(params: ModelParams, physical: TrajectoryTensor,
                     scaling: ScalingParams, delta: float
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Entropies at severity s - delta, s, s + delta (inputs unchanged).

    Perturbed severities are clamped to the valid range.  Requires severity
    conditioning; on an ablated model the probe is meaningless.
    """
    if not params.config.severity_conditioning:
        raise ValueError("severity conditioning is ablated; nothing to perturb")
    s = physical.severity
    h_minus = entropies(_posterior_for(params, physical, scaling,
                                       clamp_severity(s - delta)))
    h_base = entropies(_posterior_for(params, physical, scaling, s))
    h_plus = entropies(_posterior_for(params, physical, scaling,
                                      clamp_severity(s + delta)))
    return h_minus, h_base, h_plus


# ---------------------------------------------------------------------------
# Dataset-level report
# ---------------------------------------------------------------------------

@dataclass
class SimMarkers:
    name: str
    severity: float
    noise_sigma: float
    valid_pairs: int
    entropy: np.ndarray        # (2,) per edge type
    d_entropy_minus: np.ndarray
    d_entropy_plus: np.ndarray
    interaction_probs: np.ndarray | None = None  # (P,) per valid pair


@dataclass
class MarkerReport:
    sims: list[SimMarkers]
    per_type: dict[str, dict]  # rho/p/monotonicity/r_squared per edge type
    direction: str
    delta: float

    def severity_levels(self) -> np.ndarray:
        return np.unique([s.severity for s in self.sims])

    def to_summary(self) -> dict:
        by_level = {}
        for lv in self.severity_levels():
            rows = [s for s in self.sims if s.severity == lv]
            mags = [0.5 * (abs(s.d_entropy_minus[1]) + abs(s.d_entropy_plus[1]))
                    for s in rows]
            by_level["%.10g" % lv] = float(np.mean(mags))
        return {
            "version": __version__,
            "num_simulations": len(self.sims),
            "direction": self.direction,
            "delta": self.delta,
            "edge_types": self.per_type,
            "interaction_abs_d_entropy_by_level": by_level,
        }


def compute_markers(params: ModelParams, sims: list[tuple[str, TrajectoryTensor]],
                    scaling: ScalingParams, delta: float = 10.0,
                    direction: str = "decreasing") -> MarkerReport:
    """Markers for a list of (name, physical tensor) simulations."""
    if not sims:
        raise ValueError("no simulations to compute markers for")
    rows: list[SimMarkers] = []
    conditioned = params.config.severity_conditioning
    for name, tensor in sims:
        posterior = _posterior_for(params, tensor, scaling, tensor.severity)
        h_base = entropies(posterior)
        if conditioned and posterior.num_pairs:
            h_minus, h_base, h_plus = perturb_severity(params, tensor, scaling, delta)
            d_minus, d_plus = h_minus - h_base, h_plus - h_base
        else:
            d_minus = d_plus = np.zeros_like(h_base)
        rows.append(SimMarkers(name, tensor.severity, tensor.noise_sigma,
                               posterior.num_pairs, h_base, d_minus, d_plus,
                               posterior.probs_array()[:, 1].copy()))
    per_type: dict[str, dict] = {}
    xs = np.array([r.severity for r in rows])
    for k, type_name in enumerate(EDGE_TYPE_NAMES):
        ys = np.array([r.entropy[k] for r in rows])
        entry: dict = {"n": len(rows)}
        try:
            entry["rho"], entry["p"] = spearman(xs, ys)
        except ValueError:
            entry["rho"] = entry["p"] = None
        try:
            entry["monotonicity"] = monotonicity(xs, ys, direction)
        except ValueError:
            entry["monotonicity"] = None
        try:
            entry["r_squared"] = r_squared(xs, ys)
        except ValueError:
            entry["r_squared"] = None
        per_type[type_name] = entry
    return MarkerReport(rows, per_type, direction, delta)


def write_markers(report: MarkerReport, out_dir: str | Path) -> None:
    """Emit markers.csv (one row per simulation) and summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [",".join(MARKERS_CSV_COLUMNS)]
    for s in report.sims:
        cells = [s.name, "%.10g" % s.severity, "%.10g" % s.noise_sigma,
                 str(s.valid_pairs)]
        cells += ["%.10g" % v for v in s.entropy]
        cells += ["%.10g" % v for v in s.d_entropy_minus]
        cells += ["%.10g" % v for v in s.d_entropy_plus]
        lines.append(",".join(cells))
    (out / "markers.csv").write_text("\n".join(lines) + "\n")
    (out / "summary.json").write_text(
        json.dumps(report.to_summary(), sort_keys=True, indent=2) + "\n")
