"""Synthetic 2D vortical flow sequences with birth/death and channel confinement.

Generates desk-scale analogues of noisy planar flow measurements: Lamb-Oseen
cores advected by mutual induction plus wall images at the channel boundaries
y = +/- h, where h shrinks with disease severity.  Optional multiplicative
Rayleigh noise emulates speckle-like measurement texture.

Severity conventions:
  * 30..100  -- percentage of the unobstructed channel radius (narrowing),
  * 0..1     -- support-level convention (0 = none, 1 = full).
Both map to a channel half-width that is strictly increasing in severity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__

FIELDS_FORMAT = "vortexgraph-fields-v1"


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered 2D grid. Cell (iy, ix) has center
    (x0 + (ix+0.5)*dx, y0 + (iy+0.5)*dy)."""

    nx: int
    ny: int
    dx: float
    dy: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"grid must be at least 8x8, got {self.nx}x{self.ny}")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError("cell spacing must be positive")

    @property
    def x_centers(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y_centers(self) -> np.ndarray:
        return self.origin[1] + (np.arange(self.ny) + 0.5) * self.dy

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x_centers, self.y_centers)

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "dx": self.dx, "dy": self.dy,
                "origin": list(self.origin)}

    @staticmethod
    def from_dict(d: dict) -> "Grid":
        return Grid(nx=int(d["nx"]), ny=int(d["ny"]), dx=float(d["dx"]),
                    dy=float(d["dy"]), origin=tuple(d["origin"]))


@dataclass
class VelocityField:
    """One velocity snapshot; u, v are (ny, nx) arrays of the two components."""

    grid: Grid
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        shape = (self.grid.ny, self.grid.nx)
        if self.u.shape != shape or self.v.shape != shape:
            raise ValueError(f"component shape must be {shape}")
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise ValueError("velocity components must be finite")


@dataclass
class LatentVortexState:
    """Ground-truth vortex: a Lamb-Oseen core with a lifetime.

    `path` records the center at every frame in [birth, death) and is filled
    in by the simulator; it is the oracle for detector/tracker tests.
    """

    id: int
    center: tuple[float, float]
    circulation: float
    core_radius: float
    birth: int
    death: int  # exclusive
    path: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.birth >= self.death:
            raise ValueError("birth must precede death")
        if self.core_radius <= 0:
            raise ValueError("core radius must be positive")


@dataclass(frozen=True)
class SynthConfig:
    severity: float = 100.0
    num_frames: int = 50
    dt: float = 0.08
    birth_rate: float = 0.12          # expected births per frame
    mean_lifetime: float = 25.0       # frames
    circulation_scale: float = 1.6
    core_radius: float = 0.35
    base_half_width: float = 3.2      # channel half-width at severity 100 / support 1
    noise_sigma: float = 0.0
    seed: int = 0
    grid: Grid = field(default_factory=lambda: Grid(64, 64, 0.125, 0.125, (-4.0, -4.0)))

    def __post_init__(self):
        if self.num_frames < 2:
            raise ValueError("num_frames must be >= 2")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.birth_rate < 0:
            raise ValueError("birth_rate must be >= 0")
        if self.mean_lifetime < 1:
            raise ValueError("mean_lifetime must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def severity_fraction(self) -> float:
        """Map either severity convention onto (0, 1]."""
        if self.severity > 1.0:
            return self.severity / 100.0
        return 0.3 + 0.7 * self.severity

    def channel_half_width(self) -> float:
        """Wall position h (walls at y = +/- h); inf disables confinement."""
        if math.isinf(self.base_half_width):
            return math.inf
        return self.base_half_width * self.severity_fraction()

    def to_jsonable(self) -> dict:
        d = {
            "severity": self.severity, "num_frames": self.num_frames, "dt": self.dt,
            "birth_rate": self.birth_rate, "mean_lifetime": self.mean_lifetime,
            "circulation_scale": self.circulation_scale, "core_radius": self.core_radius,
            "base_half_width": None if math.isinf(self.base_half_width) else self.base_half_width,
            "noise_sigma": self.noise_sigma, "seed": self.seed, "grid": self.grid.to_dict(),
        }
        return d

    @staticmethod
    def from_jsonable(d: dict) -> "SynthConfig":
        d = dict(d)
        if d.get("base_half_width") is None:
            d["base_half_width"] = math.inf
        d["grid"] = Grid.from_dict(d["grid"])
        return SynthConfig(**d)


def lamb_oseen_velocity(state: LatentVortexState, point: tuple[float, float]) -> tuple[float, float]:
    """Velocity induced at `point` by one Lamb-Oseen core.

    Tangential speed Gamma/(2 pi d) * (1 - exp(-d^2/r_c^2)); the d -> 0
    singularity is removable and the center maps to (0, 0).
    """
    px, py = point
    if not (math.isfinite(px) and math.isfinite(py)):
        raise ValueError("point must be finite")
    ox = px - state.center[0]
    oy = py - state.center[1]
    d2 = ox * ox + oy * oy
    if d2 == 0.0:
        return (0.0, 0.0)
    factor = state.circulation / (2.0 * math.pi * d2) * (
        1.0 - math.exp(-d2 / state.core_radius**2))
    return (-factor * oy, factor * ox)


def _induced_uv(px, py, cx, cy, gamma, rc):
    """Vectorized induction: velocities at points (px, py) from cores
    (cx, cy, gamma, rc). Points and cores broadcast on separate axes."""
    ox = px[..., None] - cx
    oy = py[..., None] - cy
    d2 = ox * ox + oy * oy
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = gamma / (2.0 * np.pi * d2) * (1.0 - np.exp(-d2 / rc**2))
    factor = np.where(d2 == 0.0, 0.0, factor)
    u = -(factor * oy).sum(axis=-1)
    v = (factor * ox).sum(axis=-1)
    return u, v


def render_field(grid: Grid, vortices: list[LatentVortexState],
                 centers: np.ndarray | None = None) -> VelocityField:
    """Superpose Lamb-Oseen cores on the grid (free-space field of the cores;
    wall images act on advection only, not on the rendered snapshot)."""
    X, Y = grid.meshgrid()
    if not vortices:
        z = np.zeros_like(X)
        return VelocityField(grid, z, z.copy())
    if centers is None:
        centers = np.array([s.center for s in vortices], dtype=np.float64)
    gamma = np.array([s.circulation for s in vortices], dtype=np.float64)
    rc = np.array([s.core_radius for s in vortices], dtype=np.float64)
    u, v = _induced_uv(X, Y, centers[:, 0], centers[:, 1], gamma, rc)
    return VelocityField(grid, u, v)


def _advection_rhs(centers: np.ndarray, gamma: np.ndarray, rc: np.ndarray,
                   half_width: float) -> np.ndarray:
    """d(center)/dt for each live vortex: induction from all other vortices
    plus first-order wall images (mirrored across y = +/- h, sign flipped).
    A vortex never advects itself but is advected by its own images."""
    n = centers.shape[0]
    vel = np.zeros_like(centers)
    if n == 0:
        return vel
    px, py = centers[:, 0], centers[:, 1]
    cx, cy = centers[:, 0], centers[:, 1]
    ox = px[:, None] - cx[None, :]
    oy = py[:, None] - cy[None, :]
    d2 = ox * ox + oy * oy
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = gamma[None, :] / (2.0 * np.pi * d2) * (1.0 - np.exp(-d2 / rc[None, :] ** 2))
    np.fill_diagonal(fac, 0.0)  # self-advection excluded
    fac = np.where(d2 == 0.0, 0.0, fac)
    vel[:, 0] = -(fac * oy).sum(axis=1)
    vel[:, 1] = (fac * ox).sum(axis=1)
    if math.isfinite(half_width):
        for wall_y in (half_width, -half_width):
            img = centers.copy()
            img[:, 1] = 2.0 * wall_y - centers[:, 1]
            iu, iv = _induced_uv(px, py, img[:, 0], img[:, 1], -gamma, rc)
            vel[:, 0] += iu
            vel[:, 1] += iv
    return vel


def _rk4_step(centers, gamma, rc, half_width, dt):
    k1 = _advection_rhs(centers, gamma, rc, half_width)
    k2 = _advection_rhs(centers + 0.5 * dt * k1, gamma, rc, half_width)
    k3 = _advection_rhs(centers + 0.5 * dt * k2, gamma, rc, half_width)
    k4 = _advection_rhs(centers + dt * k3, gamma, rc, half_width)
    return centers + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate(config: SynthConfig,
             initial_states: list[LatentVortexState] | None = None,
             ) -> tuple[list[VelocityField], list[LatentVortexState]]:
    """Run the point-vortex channel simulation.

    Births follow a seeded Poisson process (`birth_rate` per frame beyond the
    first); the frame-0 population is drawn from the steady-state occupancy
    Poisson(birth_rate * mean_lifetime) unless `initial_states` overrides it.
    Lifetimes are geometric with the configured mean; circulation signs
    alternate across births so both orientations appear.  Bit-reproducible
    for a fixed config.
    """
    h = config.channel_half_width()
    rc = config.core_radius
    if h < rc:
        raise ValueError(
            f"channel half-width {h:.4g} cannot hold a core of radius {rc:.4g}")
    rng = np.random.default_rng(config.seed)
    grid = config.grid
    x_lo = grid.origin[0] + rc
    x_hi = grid.origin[0] + grid.nx * grid.dx - rc
    if math.isfinite(h):
        y_lo, y_hi = -(h - rc), (h - rc)
    else:
        y_lo = grid.origin[1] + rc
        y_hi = grid.origin[1] + grid.ny * grid.dy - rc
    p_death = 1.0 / config.mean_lifetime
    sign_counter = 0
    states: list[LatentVortexState] = []

    def spawn(frame: int) -> LatentVortexState:
        nonlocal sign_counter
        x = rng.uniform(x_lo, x_hi)
        y = rng.uniform(y_lo, y_hi)
        mag = config.circulation_scale * rng.uniform(0.7, 1.3)
        sign = 1.0 if sign_counter % 2 == 0 else -1.0
        sign_counter += 1
        lifetime = int(rng.geometric(p_death))
        s = LatentVortexState(id=len(states), center=(x, y), circulation=sign * mag,
                              core_radius=rc, birth=frame, death=frame + lifetime)
        states.append(s)
        return s

    if initial_states is not None:
        for s in initial_states:
            s = replace(s, id=len(states), path=[])
            states.append(s)
    else:
        n0 = int(rng.poisson(config.birth_rate * config.mean_lifetime))
        for _ in range(n0):
            spawn(0)

    positions = {s.id: np.array(s.center, dtype=np.float64) for s in states}
    fields: list[VelocityField] = []
    for t in range(config.num_frames):
        if t > 0:
            for _ in range(int(rng.poisson(config.birth_rate))):
                s = spawn(t)
                positions[s.id] = np.array(s.center, dtype=np.float64)
        live = [s for s in states if s.birth <= t < s.death]
        centers = np.array([positions[s.id] for s in live], dtype=np.float64).reshape(-1, 2)
        for s, c in zip(live, centers):
            s.path.append((float(c[0]), float(c[1])))
        fields.append(render_field(grid, live, centers))
        if live:
            gamma = np.array([s.circulation for s in live])
            rcs = np.array([s.core_radius for s in live])
            advanced = _rk4_step(centers, gamma, rcs, h, config.dt)
            for s, c in zip(live, advanced):
                positions[s.id] = c
    for s in states:
        s.center = tuple(positions[s.id])
    return fields, states


def add_rayleigh_noise(vfield: VelocityField, sigma: float, seed: int) -> VelocityField:
    """Multiply each cell's velocity vector by R/mean(R), R ~ Rayleigh(sigma).

    One draw per cell, shared by both components, so noise perturbs magnitude
    but not direction.  The multiplier is normalized to unit mean
    (mean(R) = sigma*sqrt(pi/2)), so sigma sets texture, not field scale.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return VelocityField(vfield.grid, vfield.u.copy(), vfield.v.copy())
    rng = np.random.default_rng(seed)
    r = rng.rayleigh(scale=sigma, size=vfield.u.shape)
    mult = r / (sigma * math.sqrt(math.pi / 2.0))
    return VelocityField(vfield.grid, vfield.u * mult, vfield.v * mult)


# ---------------------------------------------------------------------------
# On-disk format: manifest.json + fields.f32, layout [frame][u then v][row-major]
# ---------------------------------------------------------------------------

def write_field_sequence(out_dir: str | Path, fields: list[VelocityField],
                         config: SynthConfig,
                         truth: list[LatentVortexState] | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = fields[0].grid
    blocks = []
    for f in fields:
        if f.grid != grid:
            raise ValueError("all frames must share one grid")
        blocks.append(f.u.astype("<f4").ravel())
        blocks.append(f.v.astype("<f4").ravel())
    (out / "fields.f32").write_bytes(np.concatenate(blocks).tobytes())
    manifest = {
        "format": FIELDS_FORMAT,
        "version": __version__,
        "grid": grid.to_dict(),
        "num_frames": len(fields),
        "seed": config.seed,
        "config": config.to_jsonable(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    if truth is not None:
        rows = [{"id": s.id, "circulation": s.circulation, "core_radius": s.core_radius,
                 "birth": s.birth, "death": s.death, "path": s.path} for s in truth]
        (out / "truth.json").write_text(json.dumps(rows, sort_keys=True))


def read_field_sequence(in_dir: str | Path) -> tuple[list[VelocityField], SynthConfig]:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    if manifest.get("format") != FIELDS_FORMAT:
        raise ValueError(f"{src}: not a field-sequence directory")
    grid = Grid.from_dict(manifest["grid"])
    t = int(manifest["num_frames"])
    raw = np.frombuffer((src / "fields.f32").read_bytes(), dtype="<f4")
    per_frame = 2 * grid.nx * grid.ny
    if raw.size != t * per_frame:
        raise ValueError(f"{src}: fields.f32 has {raw.size} floats, expected {t * per_frame}")
    fields = []
    for k in range(t):
        fr = raw[k * per_frame:(k + 1) * per_frame].astype(np.float64)
        u = fr[:grid.nx * grid.ny].reshape(grid.ny, grid.nx)
        v = fr[grid.nx * grid.ny:].reshape(grid.ny, grid.nx)
        fields.append(VelocityField(grid, u, v))
    return fields, SynthConfig.from_jsonable(manifest["config"])
