"""Ensemble Kalman filter analysis using the influence function P^f H^T.

The full m x m forecast covariance is never formed: with anomalies
``A = psi - mean(psi)`` (N x m) the cross term is ``A^T (A H^T) / (N - 1)``.
Every member is updated with its own innovation against the same observation
vector, without perturbed observations, inflation or localisation. Analysis
spread therefore shrinks deterministically in observed directions and is not a
calibrated posterior spread.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from romda.errors import ContractError, NumericError
from romda.numerics.tensor import read_rmx, write_rmx
from romda.sensing import SensorLayout

DEFAULT_EPSILON = 1e-4


@dataclass
class ObservationSeries:
    values: np.ndarray  # (T, n_obs)
    layout: SensorLayout
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if not self.epsilon > 0:
            raise ContractError(f"observation noise epsilon must be positive, got {self.epsilon}")
        if self.values.shape[1] != self.layout.n_obs:
            raise ContractError(
                f"observations have {self.values.shape[1]} columns, layout has {self.layout.n_obs}")


@dataclass
class AnalysisResult:
    samples: np.ndarray  # (T, N, m)
    xi: float | None = None
    times: np.ndarray | None = None

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=1)

    @property
    def variance(self) -> np.ndarray:
        return self.samples.var(axis=1, ddof=1)

    FILES = ("analysis_samples.rmx", "analysis_mean.rmx", "analysis_variance.rmx", "analysis.json")

    def save(self, directory, epsilon: float, n_obs: int) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_rmx(directory / "analysis_samples.rmx", self.samples)
        write_rmx(directory / "analysis_mean.rmx", self.mean)
        write_rmx(directory / "analysis_variance.rmx", self.variance)
        T, N, _ = self.samples.shape
        meta = {"epsilon": epsilon, "n_obs": n_obs, "N": N, "T": T, "xi": self.xi,
                "times": None if self.times is None else self.times.tolist()}
        (directory / "analysis.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, directory) -> "AnalysisResult":
        directory = Path(directory)
        meta = json.loads((directory / "analysis.json").read_text())
        times = None if meta.get("times") is None else np.asarray(meta["times"])
        return cls(read_rmx(directory / "analysis_samples.rmx"), meta.get("xi"), times)


def _anomalies(ensemble):
    ensemble = np.asarray(ensemble, dtype=np.float64)
    if ensemble.ndim != 2:
        raise ContractError(f"ensemble must be N x m, got shape {ensemble.shape}")
    if ensemble.shape[0] < 2:
        raise ContractError("influence function needs at least 2 members")
    return ensemble - ensemble.mean(axis=0)


def influence(ensemble, layout: SensorLayout) -> np.ndarray:
    """``P^f H^T`` (m x n_obs) from member anomalies."""
    A = _anomalies(ensemble)
    return A.T @ A[:, layout.indices] / (A.shape[0] - 1)


def projected_covariance(ensemble, layout: SensorLayout) -> np.ndarray:
    """``H P^f H^T`` (n_obs x n_obs)."""
    HA = _anomalies(ensemble)[:, layout.indices]
    return HA.T @ HA / (HA.shape[0] - 1)


def kalman_gain(PfHt, HPfHt, epsilon: float) -> np.ndarray:
    """``K = P^f H^T (H P^f H^T + eps I)^{-1}`` via a Cholesky solve.

    On factorisation failure a jitter of ``1e-12 * trace / n`` is added once.
    """
    PfHt = np.atleast_2d(np.asarray(PfHt, dtype=np.float64))
    S = np.atleast_2d(np.asarray(HPfHt, dtype=np.float64))
    n = S.shape[0]
    if S.shape != (n, n) or PfHt.shape[1] != n:
        raise ContractError(f"gain shapes: P^f H^T {PfHt.shape}, H P^f H^T {S.shape}")
    S = 0.5 * (S + S.T) + epsilon * np.eye(n)
    try:
        factor = scipy.linalg.cho_factor(S, lower=True, check_finite=True)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * np.trace(S) / n
        try:
            factor = scipy.linalg.cho_factor(S + jitter * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            lam = float(np.linalg.eigvalsh(S)[0])
            raise NumericError(
                f"innovation covariance not positive definite (smallest eigenvalue ~ {lam:.3g})"
            ) from None
    return scipy.linalg.cho_solve(factor, PfHt.T).T


def analysis_step(ensemble, y, layout: SensorLayout, epsilon: float = DEFAULT_EPSILON):
    """Update every member with ``K (y - H psi_i)``; returns the N x m analysis."""
    ensemble = np.asarray(ensemble, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != layout.n_obs:
        raise ContractError(f"expected {layout.n_obs} observations, got {y.size}")
    if ensemble.shape[1] != layout.m:
        raise ContractError(f"ensemble state size {ensemble.shape[1]} != layout m {layout.m}")
    K = kalman_gain(influence(ensemble, layout), projected_covariance(ensemble, layout), epsilon)
    innovations = y[None, :] - ensemble[:, layout.indices]
    return ensemble + innovations @ K.T


def assimilate(forecast_samples, obs: ObservationSeries, workers: int = 1,
               xi: float | None = None, times=None) -> AnalysisResult:
    """Run :func:`analysis_step` independently at each time of a T x N x m forecast."""
    samples = np.asarray(forecast_samples, dtype=np.float64)
    if samples.ndim != 3:
        raise ContractError(f"forecast samples must be T x N x m, got {samples.shape}")
    if samples.shape[0] != obs.values.shape[0]:
        raise ContractError(
            f"forecast has {samples.shape[0]} steps, observations have {obs.values.shape[0]}")

    def step(t):
        try:
            return analysis_step(samples[t], obs.values[t], obs.layout, obs.epsilon)
        except (NumericError, ContractError) as exc:
            raise type(exc)(f"analysis failed at t={t}: {exc}") from exc

    T = samples.shape[0]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(step, range(T)))
    else:
        out = [step(t) for t in range(T)]
    return AnalysisResult(np.stack(out), xi=xi, times=times)
