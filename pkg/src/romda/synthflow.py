"""Synthetic parameterised wake: a Hopf normal form embedded in a 2-D velocity field.

The amplitude/phase pair obeys ``dr/dt = mu r - r^3`` and ``dtheta/dt = omega``
with ``mu = alpha (xi - xi_c)`` and ``omega = omega0 + omega1 (xi - xi_c)``.
Each state ``(r, theta)`` is lifted to the field

    u = U_b + r cos(theta) Phi1 + r sin(theta) Phi2 + r^2 Phi3
    v = r cos(theta) Psi2 - r sin(theta) Psi1

on an ``ny x nx`` grid (rows are y, columns are x). A snapshot vector is the
row-major flattened u grid followed by the v grid, so ``m = 2 nx ny``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from romda.errors import ContractError, NumericError
from romda.numerics.tensor import read_rmx, write_rmx


@dataclass(frozen=True)
class FlowConfig:
    xi: float = 100.0
    xi_c: float = 60.0
    alpha: float = 0.005
    omega0: float = 0.8
    omega1: float = 0.005
    kappa: float = 2.0
    x0: float = 3.0
    sigma_x: float = 2.5
    sigma_y: float = 1.2
    nx: int = 32
    ny: int = 24
    lx: float = 8.0
    ly: float = 6.0
    dt: float = 0.05
    n_snapshots: int = 800
    r0: float = 1e-3

    def __post_init__(self):
        if not self.xi > 0:
            raise ContractError(f"xi must be positive, got {self.xi}")
        if not self.dt > 0:
            raise ContractError(f"dt must be positive, got {self.dt}")
        if self.n_snapshots < 2:
            raise ContractError(f"need at least 2 snapshots, got {self.n_snapshots}")
        if self.nx * self.ny < 4:
            raise ContractError(f"grid {self.nx}x{self.ny} has fewer than 4 points")
        if not self.r0 > 0:
            raise ContractError(f"r0 must be positive, got {self.r0}")

    @property
    def growth(self) -> float:
        return self.alpha * (self.xi - self.xi_c)

    @property
    def omega(self) -> float:
        return self.omega0 + self.omega1 * (self.xi - self.xi_c)

    @property
    def m(self) -> int:
        return 2 * self.nx * self.ny

    def with_xi(self, xi: float) -> "FlowConfig":
        return replace(self, xi=float(xi))


@dataclass
class SnapshotSet:
    xi: float
    times: np.ndarray
    states: np.ndarray  # (T, m)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[1] % 2:
            raise ContractError(f"states must be T x m with m even, got {self.states.shape}")
        if self.times.shape != (self.states.shape[0],):
            raise ContractError("times length must match number of states")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ContractError("times must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise NumericError("snapshot states contain non-finite values")

    def __len__(self):
        return self.states.shape[0]

    @property
    def m(self) -> int:
        return self.states.shape[1]


@dataclass
class EnergySignal:
    xi: float
    values: np.ndarray


@dataclass(frozen=True)
class Modes:
    x: np.ndarray
    y: np.ndarray
    envelope: np.ndarray
    base: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    phi3: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray


def spatial_modes(config: FlowConfig) -> Modes:
    x = np.linspace(0.0, config.lx, config.nx)
    y = np.linspace(-config.ly / 2, config.ly / 2, config.ny)
    xx, yy = np.meshgrid(x, y)  # (ny, nx)
    env = np.exp(-((xx - config.x0) / config.sigma_x) ** 2 - (yy / config.sigma_y) ** 2)
    s, c = np.sin(config.kappa * xx), np.cos(config.kappa * xx)
    ry = 2.0 * yy / config.sigma_y
    return Modes(
        x=x, y=y, envelope=env,
        base=1.0 - np.exp(-(xx ** 2 + yy ** 2) / 0.5),
        phi1=env * s, phi2=env * c, phi3=-0.3 * env,
        psi1=env * s * ry, psi2=env * c * ry,
    )


def wake_mask(config: FlowConfig, threshold: float = 0.5) -> np.ndarray:
    """Boolean mask over the m state entries where the wake envelope exceeds ``threshold``."""
    e = spatial_modes(config).envelope.ravel() > threshold
    return np.concatenate([e, e])


def _rhs(r, growth):
    return growth * r - r ** 3


def integrate_radius(config: FlowConfig) -> np.ndarray:
    """Classical RK4 radius trajectory at the snapshot times."""
    h, mu = config.dt, config.growth
    r = np.empty(config.n_snapshots)
    r[0] = config.r0
    for k in range(1, config.n_snapshots):
        x = r[k - 1]
        k1 = _rhs(x, mu)
        k2 = _rhs(x + 0.5 * h * k1, mu)
        k3 = _rhs(x + 0.5 * h * k2, mu)
        k4 = _rhs(x + h * k3, mu)
        r[k] = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not math.isfinite(r[k]):
            raise NumericError(f"non-finite radius at step {k}")
    return r


def radius_closed_form(t, growth: float, r0: float) -> np.ndarray:
    """Exact solution of ``dr/dt = mu r - r^3`` (logistic in r^2)."""
    t = np.asarray(t, dtype=np.float64)
    if growth == 0.0:
        return r0 / np.sqrt(1.0 + 2.0 * r0 ** 2 * t)
    e = np.exp(2.0 * growth * t)
    r2 = growth * r0 ** 2 * e / (growth + r0 ** 2 * (e - 1.0))
    return np.sqrt(r2)


def embed(config: FlowConfig, r, theta, modes: Modes | None = None) -> np.ndarray:
    """Lift amplitude/phase arrays of length T to a T x m state matrix."""
    modes = modes or spatial_modes(config)
    r = np.asarray(r, dtype=np.float64)[:, None]
    theta = np.asarray(theta, dtype=np.float64)[:, None]
    a, b = r * np.cos(theta), r * np.sin(theta)
    flat = {k: getattr(modes, k).ravel()[None, :]
            for k in ("base", "phi1", "phi2", "phi3", "psi1", "psi2")}
    u = flat["base"] + a * flat["phi1"] + b * flat["phi2"] + r ** 2 * flat["phi3"]
    v = a * flat["psi2"] - b * flat["psi1"]
    return np.concatenate([u, v], axis=1)


def simulate(config: FlowConfig) -> SnapshotSet:
    r = integrate_radius(config)
    times = np.arange(config.n_snapshots) * config.dt
    theta = config.omega * times
    states = embed(config, r, theta)
    if not np.all(np.isfinite(states)):
        bad = int(np.argmax(~np.all(np.isfinite(states), axis=1)))
        raise NumericError(f"non-finite state at step {bad}")
    return SnapshotSet(xi=config.xi, times=times, states=states)


def energy_bound(config: FlowConfig) -> float:
    """Upper bound on per-snapshot kinetic energy from mode-amplitude maxima."""
    modes = spatial_modes(config)
    r_max = max(config.r0, math.sqrt(config.growth) if config.growth > 0 else 0.0)
    u_max = (np.abs(modes.base) + r_max * (np.abs(modes.phi1) + np.abs(modes.phi2))
             + r_max ** 2 * np.abs(modes.phi3))
    v_max = r_max * (np.abs(modes.psi1) + np.abs(modes.psi2))
    return float(np.sum(u_max ** 2 + v_max ** 2))


def kinetic_energy(snapshots: SnapshotSet) -> EnergySignal:
    """Spatially summed ``u^2 + v^2`` per snapshot."""
    return EnergySignal(xi=snapshots.xi, values=energy_of_states(snapshots.states))


def energy_of_states(states) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    half = states.shape[-1] // 2
    if states.shape[-1] % 2:
        raise ContractError("state dimension must be even (u then v)")
    u, v = states[..., :half], states[..., half:]
    return np.sum(u * u + v * v, axis=-1)


def split_even_odd(snapshots: SnapshotSet) -> tuple[SnapshotSet, SnapshotSet]:
    if len(snapshots) < 2:
        raise ContractError("need at least 2 snapshots to split")
    train = SnapshotSet(snapshots.xi, snapshots.times[0::2], snapshots.states[0::2])
    test = SnapshotSet(snapshots.xi, snapshots.times[1::2], snapshots.states[1::2])
    return train, test


def interleave(train: SnapshotSet, test: SnapshotSet) -> SnapshotSet:
    """Inverse of :func:`split_even_odd`."""
    n = len(train) + len(test)
    states = np.empty((n, train.m))
    times = np.empty(n)
    states[0::2], states[1::2] = train.states, test.states
    times[0::2], times[1::2] = train.times, test.times
    return SnapshotSet(train.xi, times, states)


@dataclass
class Corpus:
    train: list[SnapshotSet]
    eval: list[SnapshotSet]
    manifest: list[dict]

    def eval_at(self, xi: float) -> SnapshotSet:
        for s in self.eval:
            if s.xi == xi:
                return s
        raise KeyError(f"no evaluation set at xi={xi}")


def _xi_tag(xi: float) -> str:
    return f"{xi:g}".replace(".", "p")


def build_corpus(xi_train, xi_eval, template: FlowConfig, out_dir=None) -> Corpus:
    """Simulate one trajectory per distinct xi; optionally persist RMX1 files + manifest.json.

    Manifest entries carry ``{xi, path, dims, dt, split}`` with ``split`` in
    {"train", "eval"}; a xi in both lists shares one file.
    """
    xi_train, xi_eval = [float(x) for x in xi_train], [float(x) for x in xi_eval]
    if not xi_train and not xi_eval:
        raise ContractError("build_corpus needs at least one xi")
    for xi in xi_train + xi_eval:
        if not xi > template.xi_c:
            raise ContractError(f"xi={xi} is not above the critical value {template.xi_c}")
    sims = {xi: simulate(template.with_xi(xi)) for xi in dict.fromkeys(xi_train + xi_eval)}
    manifest = []
    paths = {}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for xi, snaps in sims.items():
            paths[xi] = write_rmx(out_dir / f"flow_xi{_xi_tag(xi)}.rmx", snaps.states).name
    for split, xs in (("train", xi_train), ("eval", xi_eval)):
        for xi in xs:
            manifest.append({"xi": xi, "path": paths.get(xi), "dims": list(sims[xi].states.shape),
                             "dt": template.dt, "split": split})
    if out_dir is not None:
        doc = {"flow": asdict(template), "entries": manifest}
        path = out_dir / "manifest.json"
        try:
            path.write_text(json.dumps(doc, indent=2))
        except OSError as exc:
            raise OSError(f"cannot write manifest {path}: {exc}") from exc
    return Corpus(train=[sims[x] for x in xi_train], eval=[sims[x] for x in xi_eval],
                  manifest=manifest)


def load_corpus(corpus_dir) -> Corpus:
    corpus_dir = Path(corpus_dir)
    path = corpus_dir / "manifest.json"
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read manifest {path}: {exc}") from exc
    cache, train, evals = {}, [], []
    for entry in doc["entries"]:
        rel = entry["path"]
        if rel not in cache:
            states = read_rmx(corpus_dir / rel)
            times = np.arange(states.shape[0]) * entry["dt"]
            cache[rel] = SnapshotSet(entry["xi"], times, states)
        (train if entry["split"] == "train" else evals).append(cache[rel])
    return Corpus(train=train, eval=evals, manifest=doc["entries"])


def load_flow_config(corpus_dir) -> FlowConfig:
    doc = json.loads((Path(corpus_dir) / "manifest.json").read_text())
    return FlowConfig(**doc["flow"])
