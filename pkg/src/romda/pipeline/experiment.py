"""Experiment building blocks shared by the CLI stages and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from romda.enkf import AnalysisResult, ObservationSeries, assimilate
from romda.metrics import relative_error, wasserstein2
from romda.numerics.rng import Rng
from romda.rom import EnsembleForecast, Normalizer, RomModel, forecast_ensemble, uq_scalar
from romda.sensing import PodBasis, SensorLayout, numerical_rank, observe, place_sensors, pod_basis
from romda.synthflow import SnapshotSet, energy_of_states


@dataclass
class XiEvaluation:
    xi: float
    w2: float
    uq: float
    recon_l1: float
    energy_pred: np.ndarray
    energy_true: np.ndarray


def forecast_from_start(model: RomModel, snaps: SnapshotSet, n_members: int, rng) -> EnsembleForecast:
    """Ensemble seeded by the first ``lookback`` states, rolled out to the end of ``snaps``."""
    L = model.hyper.lookback
    return forecast_ensemble(model, snaps.states[:L], snaps.xi, len(snaps) - L, n_members, rng)


def energy_distance(forecast: EnsembleForecast, truth: SnapshotSet) -> float:
    """W2 between the energy signal of the ensemble-mean prediction and the truth."""
    return wasserstein2(energy_of_states(forecast.mean), energy_of_states(truth.states))


def evaluate_xi(model: RomModel, test: SnapshotSet, n_members: int, rng) -> XiEvaluation:
    f = forecast_from_start(model, test, n_members, rng)
    e_pred = energy_of_states(f.mean)
    e_true = energy_of_states(test.states)
    rec = relative_error(model.reconstruct(test.states, test.xi), test.states, "L1")
    return XiEvaluation(float(test.xi), wasserstein2(e_pred, e_true), uq_scalar(f), rec,
                        e_pred, e_true)


def evaluate_grid(model: RomModel, tests, n_members: int, seed: int) -> list[XiEvaluation]:
    return [evaluate_xi(model, t, n_members, Rng(seed)) for t in tests]


def sensor_setup(train_states, n_sensors: int) -> tuple[PodBasis, SensorLayout]:
    """POD of the training snapshots (rank capped at the sensor count) and QR placement."""
    X = np.asarray(train_states, dtype=np.float64)
    r = min(numerical_rank(X), n_sensors)
    basis = pod_basis(X, r)
    return basis, place_sensors(basis, n_sensors)


@dataclass
class TwinResult:
    truth: SnapshotSet
    forecast: EnsembleForecast
    analysis: AnalysisResult
    observations: ObservationSeries
    normalizer: Normalizer

    def forecast_mse_t(self) -> np.ndarray:
        return np.mean((self.forecast.mean - self.truth.states) ** 2, axis=1)

    def analysis_mse_t(self) -> np.ndarray:
        return np.mean((self.analysis.mean - self.truth.states) ** 2, axis=1)

    def mse_ratio(self) -> float:
        return float(self.analysis_mse_t().mean() / self.forecast_mse_t().mean())

    def sensor_mae(self) -> float:
        """Mean absolute filter error at the sensors, in the normalized units of the filter."""
        idx = self.observations.layout.indices
        a = self.normalizer.normalize(self.analysis.mean)[:, idx]
        t = self.normalizer.normalize(self.truth.states)[:, idx]
        return float(np.mean(np.abs(a - t)))


def twin_experiment(model: RomModel, truth: SnapshotSet, layout: SensorLayout, epsilon: float,
                    n_members: int, forecast_seed: int, observe_seed: int,
                    workers: int = 1) -> TwinResult:
    """Forecast from the first window of ``truth``, observe it at the sensors and filter
    every time step.

    The filter runs on the model's normalized state scale, where the observation
    noise has variance ``epsilon``; the analysis is returned in physical units.
    """
    norm = model.norm
    f = forecast_from_start(model, truth, n_members, Rng(forecast_seed))
    noise = np.sqrt(epsilon) * Rng(observe_seed).normal((len(truth), layout.n_obs))
    obs = ObservationSeries(observe(norm.normalize(truth.states), layout) + noise, layout, epsilon)
    filtered = assimilate(norm.normalize(f.samples), obs, workers=workers)
    analysis = AnalysisResult(norm.denormalize(filtered.samples), truth.xi, truth.times)
    return TwinResult(truth, f, analysis, obs, norm)
