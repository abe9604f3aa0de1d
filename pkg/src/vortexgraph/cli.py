"""Command-line pipeline front end.

Subcommands: gen, track, train, eval, markers, ablate, report.  All runs are
driven by a flat `key = value` config file (unknown keys rejected) plus a few
shared flags; every output directory receives the fully resolved config and
tool version so a run is reconstructible from its directory alone.

Exit codes: 0 success, 1 usage error, 2 missing input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import NumericalError
from .detect import DetectConfig, detect_sequence, write_observations_csv
from .markers import (EDGE_TYPE_NAMES, MarkerReport, compute_markers,
                      write_markers)
from .nri import ModelConfig, ModelParams, load_checkpoint
from .svg import box_plot, scatter_plot
from .synth import (Grid, SynthConfig, add_rayleigh_noise, read_field_sequence,
                    simulate, write_field_sequence)
from .track import (ScalingParams, TrajectoryTensor, read_tensor,
                    track_fields_to_tensor, write_tensor)
from .train import TrainConfig, evaluate, split, train

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_NUMERIC = 0, 1, 2, 3
DATASET_FORMAT = "vortexgraph-dataset-v1"
ABLATION_ROWS = (
    ("none", {}),
    ("no ordering", {"no_ordering": True}),
    ("no physics gating", {"no_physics_gating": True}),
    ("no severity conditioning", {"no_severity_conditioning": True}),
    ("original NRI", {"original_nri": True}),
)
ABLATION_COLUMNS = ["Ablation", "Existence Accuracy", "MAE", "MSE", "rho",
                    "p-value", "R2", "Monotonicity"]


class UsageError(Exception):
    pass


class MissingInputError(Exception):
    pass


# ---------------------------------------------------------------------------
# Experiment configuration: flat key = value file
# ---------------------------------------------------------------------------

_TOP_DEFAULTS = {
    "out_dir": "runs/experiment",
    "seed": 7,
    "severities": tuple(float(s) for s in range(30, 101, 10)),
    "noise_sigmas": (5.0, 10.0),
    "replicates": 3,
    "eval_count": 8,
    "markers.delta": 10.0,
    "markers.direction": "decreasing",
}


@dataclass
class ExperimentConfig:
    out_dir: str = _TOP_DEFAULTS["out_dir"]
    seed: int = _TOP_DEFAULTS["seed"]
    severities: tuple = _TOP_DEFAULTS["severities"]
    noise_sigmas: tuple = _TOP_DEFAULTS["noise_sigmas"]
    replicates: int = _TOP_DEFAULTS["replicates"]
    eval_count: int = _TOP_DEFAULTS["eval_count"]
    markers_delta: float = _TOP_DEFAULTS["markers.delta"]
    markers_direction: str = _TOP_DEFAULTS["markers.direction"]
    synth: SynthConfig = field(default_factory=SynthConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    explicit: frozenset = frozenset()


def parse_config_text(text: str) -> dict[str, str]:
    mapping: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise UsageError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if not key:
            raise UsageError(f"config line {lineno}: empty key")
        if key in mapping:
            raise UsageError(f"config line {lineno}: duplicate key '{key}'")
        mapping[key] = value
    return mapping


def _convert(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"expected a boolean, got '{raw}'")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(part) for part in raw.split(",") if part.strip())
        if isinstance(default, str):
            return raw
    except ValueError as err:
        raise UsageError(f"config key '{key}': {err}") from None
    raise UsageError(f"config key '{key}' is not settable from a file")


_SECTIONS = {"synth": SynthConfig, "detect": DetectConfig, "model": ModelConfig,
             "train": TrainConfig}
_GRID_KEYS = ("nx", "ny", "dx", "dy", "origin_x", "origin_y")


def config_from_mapping(mapping: dict[str, str]) -> ExperimentConfig:
    top: dict = {}
    section_kwargs: dict[str, dict] = {name: {} for name in _SECTIONS}
    grid_kwargs: dict = {}
    for key, raw in mapping.items():
        if key in _TOP_DEFAULTS:
            top[key] = _convert(key, raw, _TOP_DEFAULTS[key])
            continue
        if key.startswith("synth.grid."):
            name = key[len("synth.grid."):]
            if name not in _GRID_KEYS:
                raise UsageError(f"unknown config key '{key}'")
            default = 0 if name in ("nx", "ny") else 0.0
            grid_kwargs[name] = _convert(key, raw, default)
            continue
        section, _, name = key.partition(".")
        cls = _SECTIONS.get(section)
        if cls is None or not name:
            raise UsageError(f"unknown config key '{key}'")
        defaults = cls()
        if name not in cls.__dataclass_fields__ or name == "grid":
            raise UsageError(f"unknown config key '{key}'")
        section_kwargs[section][name] = _convert(key, raw, getattr(defaults, name))
    try:
        if grid_kwargs:
            base = SynthConfig().grid
            origin = (grid_kwargs.pop("origin_x", base.origin[0]),
                      grid_kwargs.pop("origin_y", base.origin[1]))
            grid = Grid(nx=int(grid_kwargs.get("nx", base.nx)),
                        ny=int(grid_kwargs.get("ny", base.ny)),
                        dx=grid_kwargs.get("dx", base.dx),
                        dy=grid_kwargs.get("dy", base.dy), origin=origin)
            section_kwargs["synth"]["grid"] = grid
        synth = SynthConfig(**section_kwargs["synth"])
        detect = DetectConfig(**section_kwargs["detect"])
        model = ModelConfig(**section_kwargs["model"])
        train_cfg = TrainConfig(**section_kwargs["train"])
    except (TypeError, ValueError) as err:
        raise UsageError(f"invalid config: {err}") from None
    if "model.num_timesteps" not in mapping:
        model = replace(model, num_timesteps=synth.num_frames)
    cfg = ExperimentConfig(synth=synth, detect=detect, model=model,
                           train=train_cfg, explicit=frozenset(mapping))
    for key, value in top.items():
        setattr(cfg, key.replace(".", "_"), value)
    if cfg.replicates < 1 or cfg.eval_count < 1:
        raise UsageError("replicates and eval_count must be >= 1")
    if not cfg.severities or not cfg.noise_sigmas:
        raise UsageError("severities and noise_sigmas must be nonempty")
    if cfg.markers_direction not in ("increasing", "decreasing"):
        raise UsageError("markers.direction must be increasing or decreasing")
    return cfg


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "%.10g" % value
    if isinstance(value, tuple):
        return ",".join(_render_value(v) for v in value)
    return str(value)


def render_config(cfg: ExperimentConfig) -> str:
    """Canonical full key = value dump; parsing it reproduces the config."""
    lines = [f"# resolved configuration (version {__version__})"]
    for key in _TOP_DEFAULTS:
        lines.append(f"{key} = {_render_value(getattr(cfg, key.replace('.', '_')))}")
    for section in _SECTIONS:
        obj = getattr(cfg, section if section != "train" else "train")
        lines.append("")
        for name in obj.__dataclass_fields__:
            value = getattr(obj, name)
            if name == "grid":
                lines.append(f"synth.grid.nx = {value.nx}")
                lines.append(f"synth.grid.ny = {value.ny}")
                lines.append(f"synth.grid.dx = {_render_value(value.dx)}")
                lines.append(f"synth.grid.dy = {_render_value(value.dy)}")
                lines.append(f"synth.grid.origin_x = {_render_value(value.origin[0])}")
                lines.append(f"synth.grid.origin_y = {_render_value(value.origin[1])}")
                continue
            lines.append(f"{section}.{name} = {_render_value(value)}")
    return "\n".join(lines) + "\n"


def load_config(args) -> ExperimentConfig:
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise MissingInputError(str(path))
        cfg = config_from_mapping(parse_config_text(path.read_text()))
    else:
        cfg = config_from_mapping({})
    if getattr(args, "seed", None) is not None:
        cfg.seed = int(args.seed)
        # an explicit flag reseeds the whole run, including training
        cfg.explicit = cfg.explicit - {"train.seed"}
    return cfg


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def derive_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=(index,)).generate_state(1)[0])


def _root(cfg: ExperimentConfig, args) -> Path:
    return Path(args.out) if args.out is not None else Path(cfg.out_dir)


def _prepare_out(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise UsageError(f"output directory {path} is not empty (use --force)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


def _write_run_meta(out: Path, cfg: ExperimentConfig, command: str) -> None:
    (out / "config.txt").write_text(render_config(cfg))
    meta = {"command": command, "seed": cfg.seed, "version": __version__}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def sim_specs(cfg: ExperimentConfig) -> list[dict]:
    specs = []
    index = 0
    for severity in cfg.severities:
        for noise in cfg.noise_sigmas:
            for _ in range(cfg.replicates):
                specs.append({"name": f"sim_{index:03d}", "severity": severity,
                              "noise_sigma": noise,
                              "seed": derive_seed(cfg.seed, index)})
                index += 1
    return specs


def _run_jobs(worker, items: list, jobs: int) -> list:
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(worker, items))
    return [worker(item) for item in items]


def _read_dataset_index(path: Path) -> dict:
    if not path.exists():
        raise MissingInputError(str(path))
    index = json.loads(path.read_text())
    if index.get("format") != DATASET_FORMAT:
        raise UsageError(f"{path} is not a dataset index")
    return index


def _load_tracked(root: Path) -> list[tuple[str, TrajectoryTensor]]:
    tracks = root / "tracks"
    index = _read_dataset_index(tracks / "dataset.json")
    out = []
    for sim in index["sims"]:
        sim_dir = tracks / sim["name"]
        if not (sim_dir / "traj_manifest.json").exists():
            raise MissingInputError(str(sim_dir / "traj_manifest.json"))
        out.append((sim["name"], read_tensor(sim_dir)))
    return out


def _load_checkpoint_dir(root: Path) -> tuple[ModelParams, ScalingParams, dict]:
    path = root / "train" / "checkpoint.bin"
    if not path.exists():
        raise MissingInputError(str(path))
    params, _, _, extra = load_checkpoint(path)
    if "scaling" not in extra:
        raise UsageError(f"{path} lacks feature-scaling parameters")
    return params, ScalingParams.from_jsonable(extra["scaling"]), extra


def _split_names(root: Path, names: list[str]) -> list[str]:
    """Evaluation-split names recorded by cmd_train, else every simulation."""
    path = root / "train" / "split.json"
    if path.exists():
        recorded = json.loads(path.read_text())["eval"]
        return [n for n in names if n in set(recorded)]
    return names


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def _gen_one(item: tuple[str, dict, dict]) -> str:
    out_dir, spec, synth_jsonable = item
    base = SynthConfig.from_jsonable(synth_jsonable)
    sim_cfg = replace(base, severity=spec["severity"],
                      noise_sigma=spec["noise_sigma"], seed=spec["seed"])
    fields, states = simulate(sim_cfg)
    noisy = [add_rayleigh_noise(f, sim_cfg.noise_sigma,
                                (spec["seed"] * 2654435761 + k) % 2 ** 63)
             for k, f in enumerate(fields)]
    write_field_sequence(Path(out_dir) / spec["name"], noisy, sim_cfg, truth=states)
    return spec["name"]


def cmd_gen(cfg: ExperimentConfig, args) -> int:
    root = _root(cfg, args)
    ds = root / "dataset"
    specs = sim_specs(cfg)
    if args.dry_run:
        print(f"[gen] would write {len(specs)} simulations to {ds}")
        for spec in specs:
            print(f"  {spec['name']}: severity={spec['severity']:g} "
                  f"noise={spec['noise_sigma']:g} seed={spec['seed']}")
        return EXIT_OK
    _prepare_out(ds, args.force)
    items = [(str(ds), spec, cfg.synth.to_jsonable()) for spec in specs]
    _run_jobs(_gen_one, items, args.jobs)
    index = {"format": DATASET_FORMAT, "version": __version__, "seed": cfg.seed,
             "num_frames": cfg.synth.num_frames,
             "sims": [{k: spec[k] for k in ("name", "severity", "noise_sigma", "seed")}
                      for spec in specs]}
    (ds / "dataset.json").write_text(json.dumps(index, sort_keys=True, indent=1) + "\n")
    _write_run_meta(ds, cfg, "gen")
    print(f"[gen] wrote {len(specs)} simulations to {ds}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# track
# ---------------------------------------------------------------------------

def _track_one(item: tuple[str, str, DetectConfig]) -> str:
    sim_dir, out_dir, detect_cfg = item
    fields, sim_cfg = read_field_sequence(sim_dir)
    frames = detect_sequence(fields, detect_cfg)
    tensor = track_fields_to_tensor(frames, len(fields), sim_cfg.severity,
                                    sim_cfg.noise_sigma)
    out = Path(out_dir)
    write_tensor(out, tensor)
    write_observations_csv(out / "observations.csv", frames)
    return out.name


def cmd_track(cfg: ExperimentConfig, args) -> int:
    root = _root(cfg, args)
    index = _read_dataset_index(root / "dataset" / "dataset.json")
    out = root / "tracks"
    if args.dry_run:
        print(f"[track] would track {len(index['sims'])} simulations into {out}")
        return EXIT_OK
    _prepare_out(out, args.force)
    items = []
    for sim in index["sims"]:
        sim_dir = root / "dataset" / sim["name"]
        if not (sim_dir / "manifest.json").exists():
            raise MissingInputError(str(sim_dir / "manifest.json"))
        items.append((str(sim_dir), str(out / sim["name"]), cfg.detect))
    _run_jobs(_track_one, items, args.jobs)
    (out / "dataset.json").write_text(json.dumps(index, sort_keys=True, indent=1) + "\n")
    _write_run_meta(out, cfg, "track")
    print(f"[track] wrote {len(items)} trajectory tensors to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _resolved_train_config(cfg: ExperimentConfig) -> TrainConfig:
    if "train.seed" in cfg.explicit:
        return cfg.train
    return replace(cfg.train, seed=cfg.seed)


def cmd_train(cfg: ExperimentConfig, args) -> int:
    root = _root(cfg, args)
    named = _load_tracked(root)
    names = [n for n, _ in named]
    tensors = [t for _, t in named]
    train_idx, eval_idx = split(tensors, cfg.eval_count, cfg.seed)
    train_cfg = _resolved_train_config(cfg)
    out = root / "train"
    if args.dry_run:
        print(f"[train] would train on {len(train_idx)} sims "
              f"(eval {len(eval_idx)}) for {train_cfg.epochs} epochs into {out}")
        return EXIT_OK
    _prepare_out(out, args.force)
    result = train([tensors[i] for i in train_idx], cfg.model, train_cfg,
                   eval_set=[tensors[i] for i in eval_idx], out_dir=out)
    split_info = {"train": [names[i] for i in train_idx],
                  "eval": [names[i] for i in eval_idx],
                  "eval_count": cfg.eval_count, "seed": cfg.seed}
    (out / "split.json").write_text(json.dumps(split_info, sort_keys=True, indent=1) + "\n")
    _write_run_meta(out, cfg, "train")
    line = f"[train] {train_cfg.epochs} epochs on {len(train_idx)} sims"
    if result.metrics is not None:
        line += (f"; eval mse={result.metrics.mse:.6g} "
                 f"accuracy={result.metrics.accuracy:.4f}")
    print(line + f"; checkpoint at {out / 'checkpoint.bin'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(cfg: ExperimentConfig, args) -> int:
    root = _root(cfg, args)
    params, scaling, _ = _load_checkpoint_dir(root)
    named = _load_tracked(root)
    chosen = set(_split_names(root, [n for n, _ in named]))
    subset = [(n, t) for n, t in named if n in chosen]
    out = root / "eval"
    if args.dry_run:
        print(f"[eval] would score {len(subset)} simulations into {out}")
        return EXIT_OK
    _prepare_out(out, args.force)
    lines = ["name,severity,noise_sigma,accuracy,mse,mae"]
    for name, tensor in subset:
        m = evaluate(params, [tensor], scaling)
        lines.append(f"{name},{tensor.severity:.10g},{tensor.noise_sigma:.10g},"
                     f"{m.accuracy:.10g},{m.mse:.10g},{m.mae:.10g}")
    pooled = evaluate(params, [t for _, t in subset], scaling)
    lines.append(f"ALL,,,{pooled.accuracy:.10g},{pooled.mse:.10g},{pooled.mae:.10g}")
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")
    (out / "metrics.json").write_text(
        json.dumps(pooled.as_dict(), sort_keys=True, indent=1) + "\n")
    _write_run_meta(out, cfg, "eval")
    print(f"[eval] accuracy={pooled.accuracy:.4f} mse={pooled.mse:.6g} "
          f"mae={pooled.mae:.6g} over {len(subset)} sims -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# markers
# ---------------------------------------------------------------------------

def _emit_edge_probs(report: MarkerReport, out: Path) -> None:
    lines = ["name,severity,p_interaction"]
    for sim in report.sims:
        for p in (sim.interaction_probs if sim.interaction_probs is not None else []):
            lines.append(f"{sim.name},{sim.severity:.10g},{p:.10g}")
    (out / "edge_probs.csv").write_text("\n".join(lines) + "\n")


def cmd_markers(cfg: ExperimentConfig, args) -> int:
    root = _root(cfg, args)
    params, scaling, _ = _load_checkpoint_dir(root)
    named = _load_tracked(root)
    chosen = set(_split_names(root, [n for n, _ in named]))
    subset = [(n, t) for n, t in named if n in chosen]
    out = root / "markers"
    if args.dry_run:
        print(f"[markers] would compute markers for {len(subset)} sims into {out}")
        return EXIT_OK
    _prepare_out(out, args.force)
    report = compute_markers(params, subset, scaling, delta=cfg.markers_delta,
                             direction=cfg.markers_direction)
    write_markers(report, out)
    _emit_edge_probs(report, out)
    _write_run_meta(out, cfg, "markers")
    stats = report.per_type[EDGE_TYPE_NAMES[1]]
    rho = "n/a" if stats["rho"] is None else f"{stats['rho']:.4f}"
    mono = "n/a" if stats["monotonicity"] is None else f"{stats['monotonicity']:.3f}"
    print(f"[markers] interaction entropy vs severity: rho={rho} "
          f"monotonicity={mono} over {len(subset)} sims -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def _ablate_one(item: tuple[str, str, dict, str]) -> dict:
    root_str, label, flags, config_text = item
    root = Path(root_str)
    cfg = config_from_mapping(parse_config_text(config_text))
    named = _load_tracked(root)
    names = [n for n, _ in named]
    tensors = [t for _, t in named]
    train_idx, eval_idx = split(tensors, cfg.eval_count, cfg.seed)
    train_cfg = replace(_resolved_train_config(cfg), **flags)
    slug = label.replace(" ", "_")
    cell_dir = root / "ablate" / slug
    cell_dir.mkdir(parents=True, exist_ok=True)
    result = train([tensors[i] for i in train_idx], cfg.model, train_cfg,
                   eval_set=[tensors[i] for i in eval_idx], out_dir=cell_dir)
    eval_named = [(names[i], tensors[i]) for i in eval_idx]
    report = compute_markers(result.params, eval_named, result.scaling,
                             delta=cfg.markers_delta,
                             direction=cfg.markers_direction)
    write_markers(report, cell_dir)
    stats = report.per_type[EDGE_TYPE_NAMES[1]]
    metrics = result.metrics
    return {"Ablation": label,
            "Existence Accuracy": metrics.accuracy if metrics else "",
            "MAE": metrics.mae if metrics else "",
            "MSE": metrics.mse if metrics else "",
            "rho": stats["rho"], "p-value": stats["p"],
            "R2": stats["r_squared"], "Monotonicity": stats["monotonicity"]}


def cmd_ablate(cfg: ExperimentConfig, args) -> int:
    root = _root(cfg, args)
    _load_tracked(root)  # validate inputs before spawning work
    out = root / "ablate"
    if args.dry_run:
        print(f"[ablate] would run {len(ABLATION_ROWS)} training cells into {out}")
        for label, _ in ABLATION_ROWS:
            print(f"  {label}")
        return EXIT_OK
    _prepare_out(out, args.force)
    config_text = render_config(cfg)
    items = [(str(root), label, flags, config_text) for label, flags in ABLATION_ROWS]
    rows = _run_jobs(_ablate_one, items, args.jobs)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_cell(row[k]) for k in ABLATION_COLUMNS})
    _write_run_meta(out, cfg, "ablate")
    print(f"[ablate] wrote {len(rows)} rows to {out / 'ablation.csv'}")
    return EXIT_OK


def _csv_cell(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, float):
        return "%.10g" % value
    return str(value)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(cfg: ExperimentConfig, args) -> int:
    root = _root(cfg, args)
    markers_dir = root / "markers"
    markers_csv = markers_dir / "markers.csv"
    if not markers_csv.exists():
        raise MissingInputError(str(markers_csv))
    probs_csv = markers_dir / "edge_probs.csv"
    if not probs_csv.exists():
        raise MissingInputError(str(probs_csv))
    out = root / "report"
    if args.dry_run:
        print(f"[report] would render SVG plots into {out}")
        return EXIT_OK
    _prepare_out(out, args.force)
    with open(markers_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise UsageError(f"{markers_csv} has no data rows")
    xs = [float(r["severity"]) for r in rows]
    ys = [float(r["entropy_interaction"]) for r in rows]
    caption = None
    summary_path = markers_dir / "summary.json"
    if summary_path.exists():
        stats = json.loads(summary_path.read_text())["edge_types"]["interaction"]
        if stats.get("rho") is not None:
            caption = f"Spearman rho = {stats['rho']:.4f}"
    svg = scatter_plot(xs, ys, "Interaction-graph entropy vs severity",
                       "severity", "entropy (interaction edges)",
                       caption=caption)
    (out / "entropy_vs_severity.svg").write_text(svg)
    with open(probs_csv, newline="") as fh:
        prows = list(csv.DictReader(fh))
    by_level: dict[float, list[float]] = {}
    for r in prows:
        by_level.setdefault(float(r["severity"]), []).append(float(r["p_interaction"]))
    groups = [("%g" % lv, by_level[lv]) for lv in sorted(by_level)]
    if not groups:
        raise UsageError(f"{probs_csv} has no data rows")
    svg = box_plot(groups, "Interaction-edge probability by severity level",
                   "severity level", "edge probability")
    (out / "edge_probability_boxes.svg").write_text(svg)
    _write_run_meta(out, cfg, "report")
    print(f"[report] wrote 2 SVG plots to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_COMMANDS = {
    "gen": (cmd_gen, "generate the synthetic field-sequence dataset"),
    "track": (cmd_track, "detect and track vortices into trajectory tensors"),
    "train": (cmd_train, "train the relational model on tracked trajectories"),
    "eval": (cmd_eval, "score a checkpoint on the held-out simulations"),
    "markers": (cmd_markers, "compute entropy markers and severity statistics"),
    "ablate": (cmd_ablate, "run the five-row ablation grid"),
    "report": (cmd_report, "render SVG plots from marker tables"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vortexgraph",
                     description="vortex interaction-graph pipeline")
    parser.add_argument("--version", action="version",
                        version=f"vortexgraph {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", type=Path, help="key = value config file")
        sp.add_argument("--out", type=Path, help="experiment root directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--jobs", type=int, default=1,
                        help="parallel workers across simulations/cells")
        sp.add_argument("--force", action="store_true",
                        help="replace non-empty output directories")
        sp.add_argument("--dry-run", action="store_true", dest="dry_run",
                        help="print the plan without writing")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.jobs is not None and args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = load_config(args)
        return _COMMANDS[args.command][0](cfg, args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except MissingInputError as err:
        print(f"error: missing input: {err}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as err:
        print(f"error: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
