"""Latent rollout, ensemble forecasting and the scalar UQ summary."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from romda.errors import ContractError, ShapeError
from romda.numerics.autodiff import Graph
from romda.numerics.rng import Rng
from romda.rom.model import LatentGaussian, RomModel, next_latent, normalize_xi, reparameterize

DECODE_CHUNK = 4096


@dataclass
class EnsembleForecast:
    samples: np.ndarray  # (T, N, m)
    xi: float
    latents: np.ndarray | None = None  # (T, N, p)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 3:
            raise ShapeError(f"forecast samples must be T x N x m, got {self.samples.shape}")

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=1)

    @property
    def variance(self) -> np.ndarray:
        return self.samples.var(axis=1, ddof=1)


def rollout(model: RomModel, window, xi, steps: int) -> np.ndarray:
    """Autoregressive latent prediction from a (lookback, p) or (B, lookback, p) window."""
    hp = model.hyper
    w = np.asarray(window, dtype=np.float64)
    single = w.ndim == 2
    if single:
        w = w[None]
    if w.shape[1:] != (hp.lookback, hp.p_latent):
        raise ShapeError(f"window must be ({hp.lookback}, {hp.p_latent}), got {w.shape[1:]}")
    if steps < 0:
        raise ContractError(f"steps must be >= 0, got {steps}")
    B = w.shape[0]
    out = np.empty((B, steps, hp.p_latent))
    xin = np.full((B, 1), float(normalize_xi(xi)))
    for s in range(steps):
        g = Graph(record=False)
        nodes = {k: g.const(v) for k, v in model.params.items()}
        z = next_latent(nodes, hp, g.const(w), g.const(xin)).value
        out[:, s] = z
        w = np.concatenate([w[:, 1:], z[:, None, :]], axis=1)
    return out[0] if single else out


def forecast_ensemble(model: RomModel, initial_states, xi, steps: int, n_members: int,
                      rng) -> EnsembleForecast:
    """Decoded ensemble of ``lookback + steps`` states per member.

    Member ``i`` perturbs the encoded initial window with draws from
    ``rng.spawn(i)``; a sequence of ``Rng`` objects may be passed instead to
    give each member an explicit stream.
    """
    hp = model.hyper
    X0 = np.asarray(initial_states, dtype=np.float64)
    if X0.shape != (hp.lookback, hp.m):
        raise ShapeError(f"initial states must be ({hp.lookback}, {hp.m}), got {X0.shape}")
    if n_members < 2:
        raise ContractError(f"ensemble needs N >= 2 members, got {n_members}")
    streams = list(rng) if not isinstance(rng, Rng) else [rng.spawn(i) for i in range(n_members)]
    if len(streams) != n_members:
        raise ContractError(f"got {len(streams)} member streams for N={n_members}")
    mu, lv = model.encode_batch(X0, xi)
    windows = np.stack([reparameterize(LatentGaussian(mu, lv), s) for s in streams])
    traj = np.concatenate([windows, rollout(model, windows, xi, steps)], axis=1)  # (N, T, p)
    T = traj.shape[1]
    lat = np.ascontiguousarray(traj.transpose(1, 0, 2))  # (T, N, p)
    flat = lat.reshape(T * n_members, hp.p_latent)
    dec = np.concatenate([model.decode_batch(flat[i:i + DECODE_CHUNK], xi)
                          for i in range(0, flat.shape[0], DECODE_CHUNK)])
    return EnsembleForecast(dec.reshape(T, n_members, hp.m), float(xi), lat)


def uq_scalar(forecast: EnsembleForecast) -> float:
    """Ensemble variance averaged over time and state components."""
    return float(np.mean(forecast.variance))
