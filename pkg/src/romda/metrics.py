"""Evaluation metrics: 1-D Wasserstein-2, relative errors, KS Gaussianity, KL, Spearman."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from romda.errors import ContractError, NumericError
from romda.numerics.rng import Rng


def _samples(x, name):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 1:
        raise ContractError(f"{name} must contain at least one sample")
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name} contains non-finite samples")
    return x


def wasserstein2(a, b) -> float:
    """W2 between the empirical measures of two 1-D sample sets.

    Computed exactly as the L2 distance between the two quantile functions.
    For equal sizes this is ``sqrt(mean((sort(a) - sort(b))**2))``; otherwise
    the piecewise-constant quantile functions are integrated over the merged
    set of breakpoints ``k/n_a`` and ``l/n_b``.
    """
    a, b = np.sort(_samples(a, "a")), np.sort(_samples(b, "b"))
    na, nb = a.size, b.size
    if na == nb:
        d = a - b
        return float(np.sqrt(np.mean(d * d)))
    # Work on the integer grid 0..na*nb to keep breakpoints exact.
    cuts = np.union1d(np.arange(1, na + 1) * nb, np.arange(1, nb + 1) * na)
    lo = np.concatenate([[0], cuts[:-1]])
    mid2 = lo + cuts  # twice the midpoint, still integer
    ia = mid2 // (2 * nb)
    ib = mid2 // (2 * na)
    widths = (cuts - lo) / (na * nb)
    d = a[ia] - b[ib]
    return float(np.sqrt(np.sum(widths * d * d)))


def relative_error(pred, truth, norm: str = "L1") -> float:
    """``100 * ||pred - truth|| / ||truth||`` in percent."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ContractError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    order = {"L1": 1, "L2": 2}.get(norm.upper())
    if order is None:
        raise ContractError(f"norm must be L1 or L2, got {norm!r}")
    denom = np.linalg.norm(truth.ravel(), ord=order)
    if denom == 0:
        raise ContractError("relative error undefined for zero-norm truth")
    return float(100.0 * np.linalg.norm((pred - truth).ravel(), ord=order) / denom)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    reject: bool
    critical: float
    degenerate: bool = False
    alpha: float = 0.05


def ks_statistic_normal(samples) -> float:
    """Two-sided KS distance to the normal with fitted mean and (ddof=1) std."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    sd = x.std(ddof=1)
    cdf = ndtr((x - x.mean()) / sd)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


def ks_null_statistics(n: int, rng: Rng, replicates: int = 2000) -> np.ndarray:
    """Monte-Carlo null distribution of the fitted-normal KS statistic for size ``n``.

    The statistic is location/scale invariant, so standard-normal replicates
    stand in for draws from the fitted Gaussian.
    """
    z = np.sort(rng.normal((replicates, n)), axis=1)
    mu = z.mean(axis=1, keepdims=True)
    sd = z.std(axis=1, ddof=1, keepdims=True)
    cdf = ndtr((z - mu) / sd)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - cdf, axis=1)
    d_minus = np.max(cdf - (i - 1) / n, axis=1)
    return np.maximum(d_plus, d_minus)


def ks_gaussianity(samples, rng: Rng, alpha: float = 0.05, replicates: int = 2000,
                   null: np.ndarray | None = None) -> KsResult:
    """Kolmogorov-Smirnov test of normality with estimated parameters.

    The critical value is the ``1 - alpha`` quantile of a seeded Monte-Carlo
    null (``replicates`` fitted-Gaussian samples of the same size). A
    precomputed ``null`` for this sample size may be supplied to share it
    across many tests.
    """
    x = _samples(samples, "samples")
    if x.size < 8:
        raise ContractError(f"KS test needs n >= 8, got {x.size}")
    if np.ptp(x) == 0:
        return KsResult(0.0, False, float("nan"), degenerate=True, alpha=alpha)
    d = ks_statistic_normal(x)
    if null is None:
        null = ks_null_statistics(x.size, rng, replicates)
    crit = float(np.quantile(null, 1.0 - alpha))
    return KsResult(d, d > crit, crit, alpha=alpha)


def kl_gauss(mu1, cov1, mu2, var2) -> float:
    """KL( N(mu1, cov1) || N(mu2, diag(var2)) )."""
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, float)), np.atleast_1d(np.asarray(mu2, float))
    cov1 = np.atleast_2d(np.asarray(cov1, float))
    var2 = np.atleast_1d(np.asarray(var2, float))
    p = mu1.size
    if cov1.shape != (p, p) or mu2.shape != (p,) or var2.shape != (p,):
        raise ContractError("kl_gauss: inconsistent dimensions")
    if np.any(var2 <= 0):
        raise ContractError("kl_gauss: diagonal covariance must be positive")
    if not np.allclose(cov1, cov1.T, rtol=1e-12, atol=1e-14):
        raise ContractError("kl_gauss: covariance is not symmetric")
    try:
        chol = np.linalg.cholesky(cov1)
    except np.linalg.LinAlgError:
        raise ContractError("kl_gauss: covariance is not positive definite") from None
    logdet1 = 2.0 * np.sum(np.log(np.diag(chol)))
    diff = mu2 - mu1
    val = 0.5 * (np.sum(np.log(var2)) - logdet1 - p + np.sum(np.diag(cov1) / var2)
                 + np.sum(diff * diff / var2))
    return float(max(val, 0.0))


class UndefinedCorrelation(ContractError):
    """Rank correlation of a constant vector."""


def rank_correlation(a, b) -> float:
    """Spearman correlation; ties receive their average rank."""
    a, b = np.asarray(a, float).ravel(), np.asarray(b, float).ravel()
    if a.size != b.size:
        raise ContractError("rank_correlation: length mismatch")
    if a.size < 3:
        raise ContractError("rank_correlation needs at least 3 pairs")
    ra, rb = rankdata(a), rankdata(b)
    ra, rb = ra - ra.mean(), rb - rb.mean()
    den = np.sqrt(np.sum(ra * ra) * np.sum(rb * rb))
    if den == 0:
        raise UndefinedCorrelation("rank correlation undefined for a constant vector")
    return float(np.clip(np.sum(ra * rb) / den, -1.0, 1.0))


def write_metric_rows(path, rows) -> Path:
    """Write ``(metric, xi, value)`` rows as CSV."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "xi", "value"])
        for metric, xi, value in rows:
            w.writerow([metric, f"{float(xi):g}", repr(float(value))])
    return path
