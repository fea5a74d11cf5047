"""Closed-form selection statistics and the streaming covariance estimator.

Everything here is a pure function of its inputs: per-client value vectors
(variance reduction of the global model when one client is observed),
subset variance reduction and its regression coefficients, Pearson
correlations, the conditional-mean update, and the Robbins-Monro
covariance recursion that keeps the server's belief state current.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularSubmatrix, ZeroDiagonal

# Diagonal entries below this are treated as exactly-degenerate dimensions.
DIAG_EPS = 1e-15


def _as_alpha(alpha) -> np.ndarray:
    if isinstance(alpha, AggregationWeights):
        return alpha.alpha
    return np.asarray(alpha, dtype=float)


@dataclass
class AggregationWeights:
    """Convex combination weights over clients (simplex vector)."""

    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.alpha.ndim != 1:
            raise ValueError("weights must be a vector")
        if np.any(self.alpha < 0):
            raise ValueError("weights must be nonnegative")
        if abs(float(self.alpha.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")

    @classmethod
    def from_counts(cls, counts) -> "AggregationWeights":
        """Weights proportional to per-client sample counts."""
        n = np.asarray(counts, dtype=float)
        return cls(n / n.sum())

    def __len__(self) -> int:
        return self.alpha.shape[0]


@dataclass
class ValueVector:
    """Per-client total variance reduction; per-dimension terms optional."""

    total: np.ndarray
    per_dim: np.ndarray | None = None  # shape (D, K) when retained

    def __post_init__(self):
        self.total = np.asarray(self.total, dtype=float)


@dataclass
class GammaSchedule:
    """Step-size schedule for the covariance recursion."""

    kind: str = "reciprocal"
    constant_value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("reciprocal", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and not 0.0 < self.constant_value <= 1.0:
            raise ValueError("constant step size must lie in (0, 1]")

    def gamma(self, t: int) -> float:
        if t < 1:
            raise ValueError("round index must be >= 1")
        if self.kind == "reciprocal":
            return 1.0 / t
        return self.constant_value


@dataclass
class CovarianceStack:
    """Server belief state over the tracked parameter dimensions.

    cov[d] is the K x K cross-client covariance estimate for tracked
    dimension d (kept symmetric); means[k] is client k's estimated mean
    over the tracked dimensions.
    """

    cov: np.ndarray  # (D, K, K)
    means: np.ndarray  # (K, D)
    round: int = 1

    @classmethod
    def initial(cls, n_clients: int, n_dims: int, init_variance: float = 1.0) -> "CovarianceStack":
        cov = np.tile(init_variance * np.eye(n_clients), (n_dims, 1, 1))
        means = np.zeros((n_clients, n_dims))
        return cls(cov=cov, means=means, round=1)

    @property
    def n_dims(self) -> int:
        return self.cov.shape[0]

    @property
    def n_clients(self) -> int:
        return self.cov.shape[1]

    def validate(self, tol: float = 1e-12) -> None:
        if self.cov.ndim != 3 or self.cov.shape[1] != self.cov.shape[2]:
            raise ValueError("cov must be a stack of square matrices")
        if self.means.shape != (self.n_clients, self.n_dims):
            raise ValueError("means shape does not match cov stack")
        asym = np.abs(self.cov - np.swapaxes(self.cov, 1, 2)).max()
        if asym > tol:
            raise ValueError(f"covariance slices not symmetric (max asymmetry {asym:.3e})")
        diags = np.diagonal(self.cov, axis1=1, axis2=2)
        if np.any(diags < -tol):
            raise ValueError("negative covariance diagonal entry")


def value_vector_component(C, alpha) -> np.ndarray:
    """Per-client variance reduction for one dimension: v_k = ((C a)_k)^2 / C_kk.

    Raises ZeroDiagonal when a diagonal entry is numerically zero; callers
    that tolerate degenerate dimensions substitute 0 for those clients
    (see total_value).
    """
    C = np.asarray(C, dtype=float)
    a = _as_alpha(alpha)
    diag = np.diagonal(C)
    if np.any(diag < DIAG_EPS):
        bad = np.nonzero(diag < DIAG_EPS)[0]
        raise ZeroDiagonal(f"degenerate covariance diagonal at client index {bad.tolist()}")
    ca = C @ a
    return ca * ca / diag


def total_value(stack: CovarianceStack, alpha, keep_per_dim: bool = False) -> ValueVector:
    """Sum the per-dimension value vectors over every tracked dimension.

    Degenerate diagonals contribute 0 (a constant dimension carries no
    reducible uncertainty), so this never raises.
    """
    a = _as_alpha(alpha)
    ca = stack.cov @ a  # (D, K)
    diag = np.diagonal(stack.cov, axis1=1, axis2=2)  # (D, K)
    safe = diag >= DIAG_EPS
    per = np.where(safe, ca * ca / np.where(safe, diag, 1.0), 0.0)
    total = per.sum(axis=0)
    return ValueVector(total=total, per_dim=per if keep_per_dim else None)


def _subset_cholesky(C: np.ndarray, idx: np.ndarray) -> np.ndarray:
    sub = C[np.ix_(idx, idx)]
    try:
        return np.linalg.cholesky(sub)
    except np.linalg.LinAlgError as exc:
        raise SingularSubmatrix(
            f"covariance block for clients {idx.tolist()} is not positive definite"
        ) from exc


def variance_reduction_subset(C, alpha, subset) -> float:
    """Variance removed from the global model by observing the subset:
    (C a)_A^T (C_AA)^{-1} (C a)_A.
    """
    C = np.asarray(C, dtype=float)
    a = _as_alpha(alpha)
    idx = np.asarray(sorted(int(i) for i in subset), dtype=int)
    if idx.size == 0:
        raise ValueError("subset must be nonempty")
    b = (C @ a)[idx]
    L = _subset_cholesky(C, idx)
    z = np.linalg.solve(L, b)
    return float(z @ z)


def conditional_coeffs(C, alpha, subset) -> np.ndarray:
    """Least-squares coefficients of the global model on the observed subset:
    (C_AA)^{-1} (C a)_A. Satisfies coeffs . (C a)_A = variance_reduction_subset.
    """
    C = np.asarray(C, dtype=float)
    a = _as_alpha(alpha)
    idx = np.asarray(sorted(int(i) for i in subset), dtype=int)
    if idx.size == 0:
        raise ValueError("subset must be nonempty")
    b = (C @ a)[idx]
    L = _subset_cholesky(C, idx)
    z = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, z)


def pearson(C, k: int, j: int) -> float:
    """Correlation C_kj / sqrt(C_kk C_jj); exactly 1 for k == j."""
    if k == j:
        C = np.asarray(C, dtype=float)
        if C[k, k] < DIAG_EPS:
            raise ZeroDiagonal(f"degenerate covariance diagonal at client index [{k}]")
        return 1.0
    C = np.asarray(C, dtype=float)
    ckk, cjj = float(C[k, k]), float(C[j, j])
    if ckk < DIAG_EPS or cjj < DIAG_EPS:
        bad = [i for i, v in ((k, ckk), (j, cjj)) if v < DIAG_EPS]
        raise ZeroDiagonal(f"degenerate covariance diagonal at client index {bad}")
    return float(C[k, j] / (np.sqrt(ckk) * np.sqrt(cjj)))


def conditional_mean_update(rho: float, theta_sampled: np.ndarray) -> np.ndarray:
    """Belief update for an unobserved client given a correlated observation."""
    if abs(rho) > 1.0 + 1e-9:
        raise ValueError(f"correlation out of range: {rho}")
    return rho * np.asarray(theta_sampled, dtype=float)


def robbins_monro_update(C_prev, gamma_t: float, theta_d, mean_d) -> np.ndarray:
    """One stochastic-approximation step of the covariance estimate.

    Blends the previous estimate with the outer product of the newest
    deviation and re-symmetrizes to stop floating-point drift from breaking
    downstream SPD factorizations.
    """
    if not 0.0 < gamma_t <= 1.0:
        raise ValueError(f"step size must lie in (0, 1], got {gamma_t}")
    C_prev = np.asarray(C_prev, dtype=float)
    dev = np.asarray(theta_d, dtype=float) - np.asarray(mean_d, dtype=float)
    M = (1.0 - gamma_t) * C_prev + gamma_t * np.outer(dev, dev)
    return (M + M.T) / 2.0


def robbins_monro_update_stack(cov: np.ndarray, gamma_t: float, deviations: np.ndarray) -> np.ndarray:
    """Vectorized recursion over all tracked dimensions at once.

    deviations has shape (K, D); equivalent to calling robbins_monro_update
    per dimension.
    """
    if not 0.0 < gamma_t <= 1.0:
        raise ValueError(f"step size must lie in (0, 1], got {gamma_t}")
    outer = np.einsum("kd,jd->dkj", deviations, deviations)
    M = (1.0 - gamma_t) * cov + gamma_t * outer
    return (M + np.swapaxes(M, 1, 2)) / 2.0
