"""POD bases, greedy QR-pivot sensor placement and sparse reconstruction."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from romda.errors import ConditionError, ContractError
from romda.numerics.tensor import read_rmx, write_rmx

MAX_CONDITION = 1e12


@dataclass
class PodBasis:
    modes: np.ndarray  # (m, r): left singular vectors scaled by singular values
    singular_values: np.ndarray  # (r,)
    mean: np.ndarray | None = None

    @property
    def rank(self) -> int:
        return self.modes.shape[1]

    @property
    def m(self) -> int:
        return self.modes.shape[0]

    def coefficients(self, X) -> np.ndarray:
        """Temporal coefficients ``A`` with ``X ~ A @ modes.T`` (least squares)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.mean is not None:
            X = X - self.mean
        return X @ self.modes / self.singular_values ** 2

    def expand(self, A) -> np.ndarray:
        out = np.asarray(A) @ self.modes.T
        return out if self.mean is None else out + self.mean


@dataclass
class SensorLayout:
    indices: np.ndarray
    m: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).ravel()
        if self.indices.size == 0:
            raise ContractError("sensor layout needs at least one index")
        if np.any(self.indices < 0) or np.any(self.indices >= self.m):
            raise ContractError(f"sensor index out of range [0, {self.m})")
        if np.unique(self.indices).size != self.indices.size:
            raise ContractError("duplicate sensor indices")

    @property
    def n_obs(self) -> int:
        return self.indices.size

    def matrix(self) -> np.ndarray:
        """Dense selection operator H (n_obs x m)."""
        H = np.zeros((self.n_obs, self.m))
        H[np.arange(self.n_obs), self.indices] = 1.0
        return H

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps({"m": int(self.m), "indices": self.indices.tolist()}))
        return path

    @classmethod
    def load(cls, path) -> "SensorLayout":
        doc = json.loads(Path(path).read_text())
        return cls(doc["indices"], doc["m"])


def _sign_fix(U):
    # largest-magnitude entry of each column made positive
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def pod_basis(X, r: int, subtract_mean: bool = False) -> PodBasis:
    """Rank-``r`` POD of a T x m snapshot matrix, ``modes = U_r diag(s_r)``."""
    X = np.asarray(X, dtype=np.float64)
    T, m = X.shape
    if not 1 <= r <= min(T, m):
        raise ContractError(f"rank r={r} must lie in [1, min(T, m)={min(T, m)}]")
    mean = X.mean(axis=0) if subtract_mean else None
    Xc = X - mean if subtract_mean else X
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    U = _sign_fix(Vt[:r].T)
    return PodBasis(modes=U * s[:r], singular_values=s[:r].copy(), mean=mean)


def numerical_rank(X, rtol: float = 1e-6) -> int:
    s = np.linalg.svd(np.asarray(X, dtype=np.float64), compute_uv=False)
    return int(np.sum(s > rtol * s[0]))


def pivoted_qr(A, n_pivots: int | None = None):
    """Householder QR with column pivoting on ``A`` (k x m).

    At each step the remaining column with the largest residual 2-norm is
    swapped to the front (first index wins ties). Returns ``(pivots, R)``
    where ``R`` holds the first ``n_pivots`` rows of the triangular factor
    restricted to the pivoted columns.
    """
    A = np.array(A, dtype=np.float64)
    k, m = A.shape
    steps = min(k, m) if n_pivots is None else min(n_pivots, k, m)
    perm = np.arange(m)
    for j in range(steps):
        norms = np.einsum("ij,ij->j", A[j:, j:], A[j:, j:])
        p = j + int(np.argmax(norms))
        if p != j:
            A[:, [j, p]] = A[:, [p, j]]
            perm[[j, p]] = perm[[p, j]]
        x = A[j:, j]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x.copy()
        v[0] += np.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        A[j:, j:] -= 2.0 * np.outer(v, v @ A[j:, j:])
    return perm[:steps], np.triu(A[:steps, :steps])


def place_sensors(basis: PodBasis, n_obs: int) -> SensorLayout:
    """Greedy sensor placement maximising ``|det(H Psi_r)|``.

    The first ``min(n_obs, r)`` sensors are the column pivots of the pivoted QR
    of ``Psi_r^T``. Beyond ``r`` every further sensor maximises the leverage
    ``psi_j^T M^{-1} psi_j`` with ``M = Psi_S^T Psi_S`` over the chosen set S,
    which is the greedy step for ``det(Psi_r^T H^T H Psi_r)``; the rows are
    re-whitened after each pick.
    """
    psi = basis.modes
    m, r = psi.shape
    if n_obs < 1:
        raise ContractError("n_obs must be at least 1")
    if n_obs > m:
        raise ContractError(f"n_obs={n_obs} exceeds state dimension m={m}")
    pivots, _ = pivoted_qr(psi.T, min(n_obs, r))
    chosen = [int(i) for i in pivots]
    if n_obs > len(chosen):
        M = psi[chosen].T @ psi[chosen]
        L = np.linalg.cholesky(M)
        W = np.linalg.solve(L, psi.T).T  # whitened rows
        lev = np.einsum("ij,ij->i", W, W)
        taken = np.zeros(m, dtype=bool)
        taken[chosen] = True
        while len(chosen) < n_obs:
            lev_masked = np.where(taken, -np.inf, lev)
            j = int(np.argmax(lev_masked))
            chosen.append(j)
            taken[j] = True
            # rank-1 update of the whitened rows: M <- M + psi_j psi_j^T
            w = W[j].copy()
            c = 1.0 + w @ w
            proj = W @ w
            W = W - np.outer(proj, w) * ((1.0 - 1.0 / np.sqrt(c)) / (w @ w))
            lev = np.einsum("ij,ij->i", W, W)
    return SensorLayout(chosen, m)


def observe(X, layout: SensorLayout) -> np.ndarray:
    """Column gather ``Y = X H^T``."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != layout.m:
        raise ContractError(f"state dimension {X.shape[-1]} != layout m {layout.m}")
    return X[..., layout.indices]


def reconstruct(y, layout: SensorLayout, basis: PodBasis) -> np.ndarray:
    """Full state ``Psi_r a`` with ``a = argmin ||H Psi_r a - y||``."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != layout.n_obs:
        raise ContractError(f"expected {layout.n_obs} observations, got {y.shape[-1]}")
    if basis.m != layout.m:
        raise ContractError("basis and layout disagree on m")
    A = basis.modes[layout.indices]
    s = np.linalg.svd(A, compute_uv=False)
    cond = np.inf if s[-1] == 0 or A.shape[0] < A.shape[1] else s[0] / s[-1]
    if cond > MAX_CONDITION:
        raise ConditionError(
            f"H Psi_r is rank deficient or ill-conditioned (cond ~ {cond:.3g})", condition=cond)
    if basis.mean is not None:
        y = y - basis.mean[layout.indices]
    coef, *_ = np.linalg.lstsq(A, y.T, rcond=None)
    return basis.expand(coef.T)


def save_basis(basis: PodBasis, directory, stem: str = "pod") -> None:
    directory = Path(directory)
    write_rmx(directory / f"{stem}_modes.rmx", basis.modes)
    doc = {"singular_values": basis.singular_values.tolist(), "rank": basis.rank}
    (directory / f"{stem}_singular_values.json").write_text(json.dumps(doc))


def load_basis(directory, stem: str = "pod") -> PodBasis:
    directory = Path(directory)
    modes = read_rmx(directory / f"{stem}_modes.rmx")
    doc = json.loads((directory / f"{stem}_singular_values.json").read_text())
    return PodBasis(modes=modes, singular_values=np.asarray(doc["singular_values"]))
