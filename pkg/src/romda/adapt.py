"""Fine-tuning at a new parameter value and the diagonal-covariance moment check."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from romda.enkf import AnalysisResult
from romda.errors import ContractError
from romda.numerics.rng import Rng
from romda.rom.model import RomModel
from romda.rom.train import Trajectory, train

VARIANTS = ("full", "vae_only", "vae_only_da")
SOURCES = ("truth", "analysis")


@dataclass(frozen=True)
class RetrainMode:
    variant: str
    source: str | None = None
    epochs: int = 30
    lr: float = 5e-4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        source = self.source or ("analysis" if self.variant == "vae_only_da" else "truth")
        object.__setattr__(self, "source", source)
        if source not in SOURCES:
            raise ContractError(f"source must be one of {SOURCES}, got {source!r}")
        if (self.variant == "vae_only_da") != (source == "analysis"):
            raise ContractError(f"variant {self.variant!r} is inconsistent with source {source!r}")
        if self.epochs < 0 or not self.lr > 0:
            raise ContractError("epochs must be >= 0 and lr > 0")

    @property
    def freezes_transformer(self) -> bool:
        return self.variant != "full"


def _new_trajectory(mode: RetrainMode, data, xi) -> Trajectory:
    if isinstance(data, AnalysisResult):
        if mode.source != "analysis":
            raise ContractError(f"{mode.variant} expects simulated truth, got an analysis")
        xi = data.xi if xi is None else xi
        states = data.mean
    else:
        if mode.source == "analysis":
            raise ContractError("vae_only_da expects an AnalysisResult")
        xi = getattr(data, "xi", xi) if xi is None else xi
        states = np.asarray(getattr(data, "states", data), dtype=np.float64)
    if xi is None:
        raise ContractError("parameter value xi of the new data is unknown")
    return Trajectory(float(xi), states)


def finetune(model: RomModel, mode: RetrainMode, data, replay, rng: Rng, xi=None,
             replay_fraction: float = 0.5):
    """Retrain on ``data`` mixed with the ``replay`` corpus; returns ``(model, history)``.

    ``data`` is a SnapshotSet (truth) or an AnalysisResult whose ensemble mean
    serves as the target trajectory. The vae_only variants freeze the
    transformer; rollout-penalty gradients still pass through it to the encoder.
    """
    new = _new_trajectory(mode, data, xi)
    work = model.copy()
    work.freeze("encoder", "decoder", frozen=False)
    work.freeze("transformer", frozen=mode.freezes_transformer)
    if mode.epochs == 0:
        return work, []
    return train(work, [new], rng, epochs=mode.epochs, lr=mode.lr, replay=replay,
                 replay_fraction=replay_fraction)


# ------------------------------------------------------------------ diagonal KL optimum

def _check_spd(sigma):
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    p = sigma.shape[0]
    if sigma.shape != (p, p) or not np.allclose(sigma, sigma.T, rtol=1e-12, atol=1e-14):
        raise ContractError("covariance must be a symmetric square matrix")
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ContractError("covariance is not positive definite") from None
    return sigma


def kl_diag_objective(lam, sigma) -> float:
    """``sum(log lam) + sum(diag(sigma) / lam)``; the lam-dependent part of 2 KL."""
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0):
        return float("inf")
    return float(np.sum(np.log(lam)) + np.sum(np.diag(sigma) / lam))


def kl_full(lam, sigma) -> float:
    """``KL(N(0, sigma) || N(0, diag(lam)))``."""
    sigma = _check_spd(sigma)
    lam = np.asarray(lam, dtype=np.float64)
    _, logdet = np.linalg.slogdet(sigma)
    p = sigma.shape[0]
    return 0.5 * (np.sum(np.log(lam)) - logdet - p + np.sum(np.diag(sigma) / lam))


def kl_diag_optimum(sigma) -> np.ndarray:
    """Minimiser over diagonal ``Lambda`` of ``KL(N(0, sigma) || N(0, Lambda))``: ``diag(sigma)``."""
    return np.diag(_check_spd(sigma)).copy()


# ------------------------------------------------------------------ moment check

@dataclass
class MomentReport:
    lambda_vae: np.ndarray  # (T, p)
    sigma_ens: np.ndarray  # (T, p)

    @property
    def discrepancy(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.abs(self.lambda_vae - self.sigma_ens) / self.sigma_ens
        return np.where(self.sigma_ens > 0, rel, np.inf)

    def time_mean(self) -> np.ndarray:
        return self.discrepancy.mean(axis=0)

    def time_median(self) -> np.ndarray:
        return np.median(self.discrepancy, axis=0)

    def write_csv(self, path) -> Path:
        path = Path(path)
        rel = self.discrepancy
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "component", "lambda_vae", "sigma_ens", "rel_discrepancy"])
            T, p = self.lambda_vae.shape
            for t in range(T):
                for j in range(p):
                    w.writerow([t, j, repr(float(self.lambda_vae[t, j])),
                                repr(float(self.sigma_ens[t, j])), repr(float(rel[t, j]))])
        return path


def second_moment_check(model: RomModel, analysis: AnalysisResult, xi) -> MomentReport:
    """Encoder variance at the analysis mean versus spread of encoded analysis members."""
    samples = analysis.samples
    T, N, m = samples.shape
    if N < 2:
        raise ContractError("moment check needs at least 2 members")
    _, lv = model.encode_batch(analysis.mean, xi)
    mu, _ = model.encode_batch(samples.reshape(T * N, m), xi)
    sigma = mu.reshape(T, N, -1).var(axis=1, ddof=1)
    return MomentReport(np.exp(lv), sigma)
