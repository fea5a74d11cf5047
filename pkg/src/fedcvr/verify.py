"""Built-in oracle checks for the `verify` subcommand.

Each check compares the closed-form statistics or the clustering pipeline
against an independent computation (Monte-Carlo regression, batch means,
planted partitions) at small K, and prints one pass/fail line.
"""
from __future__ import annotations

import numpy as np

from .coalition import adjusted_rand_index, homophily_matrix, spectral_cluster
from .policies import boltzmann_probs
from .stats import (
    robbins_monro_update,
    value_vector_component,
    variance_reduction_subset,
)


def random_spd(rng: np.random.Generator, k: int) -> np.ndarray:
    A = rng.standard_normal((k, k))
    return A @ A.T + k * np.eye(k) * 0.1


def random_simplex(rng: np.random.Generator, k: int) -> np.ndarray:
    w = rng.random(k) + 1e-3
    return w / w.sum()


def mc_variance_reduction(C, alpha, subset, n_samples: int, rng: np.random.Generator) -> float:
    """Monte-Carlo estimate of Var(theta_gl) - E[Var(theta_gl | theta_A)].

    Samples zero-mean Gaussians with covariance C and regresses the global
    model on the observed columns; the explained variance is the reduction.
    """
    L = np.linalg.cholesky(C)
    X = rng.standard_normal((n_samples, C.shape[0])) @ L.T
    target = X @ np.asarray(alpha, dtype=float)
    obs = X[:, sorted(subset)]
    coef, *_ = np.linalg.lstsq(obs, target, rcond=None)
    resid = target - obs @ coef
    return float(target.var() - resid.var())


def check_subset_formula(n_instances=25, n_samples=200_000, tol=0.03, seed=20240) -> tuple:
    rng = np.random.Generator(np.random.Philox(seed))
    worst = 0.0
    for _ in range(n_instances):
        k = int(rng.integers(2, 7))
        C = random_spd(rng, k)
        a = random_simplex(rng, k)
        size = int(rng.integers(1, k + 1))
        subset = sorted(rng.choice(k, size=size, replace=False).tolist())
        exact = variance_reduction_subset(C, a, subset)
        approx = mc_variance_reduction(C, a, subset, n_samples, rng)
        worst = max(worst, abs(approx - exact) / abs(exact))
    return worst <= tol, f"max relative MC error {worst:.4f} (tol {tol})"


def check_singleton_consistency(n_instances=2000, tol=1e-10, seed=20241) -> tuple:
    rng = np.random.Generator(np.random.Philox(seed))
    worst = 0.0
    for _ in range(n_instances):
        k = int(rng.integers(2, 7))
        C = random_spd(rng, k)
        a = random_simplex(rng, k)
        v = value_vector_component(C, a)
        for i in range(k):
            worst = max(worst, abs(variance_reduction_subset(C, a, [i]) - v[i]))
    return worst <= tol, f"max |subset({{k}}) - value_k| = {worst:.3e} (tol {tol})"


def check_batch_mean_identity(T=500, k=4, tol=1e-9, seed=20242) -> tuple:
    rng = np.random.Generator(np.random.Philox(seed))
    devs = rng.standard_normal((T, k))
    C = rng.standard_normal((k, k))
    C = (C + C.T) / 2
    for t, dev in enumerate(devs, start=1):
        C = robbins_monro_update(C, 1.0 / t, dev, np.zeros(k))
    batch = (devs[:, :, None] * devs[:, None, :]).mean(axis=0)
    err = float(np.abs(C - batch).max())
    return err <= tol, f"max |streaming - batch mean| = {err:.3e} (tol {tol})"


def check_planted_recovery(n_seeds=20, n_clients=20, seed=20243) -> tuple:
    hits = 0
    for s in range(n_seeds):
        rng = np.random.Generator(np.random.Philox([seed, s]))
        truth = np.array([0] * (n_clients // 2) + [1] * (n_clients - n_clients // 2))
        means = np.array([[0.0, 0.0], [10.0, 10.0]])
        params = means[truth] + 0.1 * rng.standard_normal((n_clients, 2))
        part = spectral_cluster(homophily_matrix(params, gamma=1.0), 2)
        hits += adjusted_rand_index(part.labels(n_clients), truth) == 1.0
    return hits == n_seeds, f"exact recovery on {hits}/{n_seeds} planted instances"


def check_boltzmann(n_vectors=200, seed=20244) -> tuple:
    rng = np.random.Generator(np.random.Philox(seed))
    worst_sum = 0.0
    ok = True
    for _ in range(n_vectors):
        k = int(rng.integers(2, 12))
        v = rng.standard_normal(k) * rng.uniform(0.1, 5.0)
        coalition = np.arange(k)
        p = boltzmann_probs(v, coalition, beta=1.0)
        worst_sum = max(worst_sum, abs(p.sum() - 1.0))
        ok &= np.allclose(boltzmann_probs(v, coalition, 0.0), 1.0 / k, atol=1e-12)
        ok &= np.allclose(boltzmann_probs(v + 7.25, coalition, 1.0), p, atol=1e-9)
        ok &= int(np.argmax(boltzmann_probs(3.0 * v, coalition, 1.0))) == int(np.argmax(p))
    ok &= worst_sum <= 1e-12
    return bool(ok), f"sum error {worst_sum:.2e}; beta=0/shift/scale properties hold: {bool(ok)}"


def check_homophily_rows(n_cases=50, seed=20245) -> tuple:
    rng = np.random.Generator(np.random.Philox(seed))
    worst = 0.0
    for _ in range(n_cases):
        k = int(rng.integers(2, 30))
        d = int(rng.integers(1, 6))
        params = rng.standard_normal((k, d)) * rng.uniform(0.1, 10.0)
        W = homophily_matrix(params, gamma=float(rng.uniform(0.01, 10.0))).entries
        worst = max(worst, float(np.abs(W.sum(axis=1) - 1.0).max()))
    return worst <= 1e-12, f"max row-sum error {worst:.2e}"


ALL_CHECKS = (
    ("subset variance-reduction formula vs Monte-Carlo", check_subset_formula),
    ("singleton subset equals value-vector entry", check_singleton_consistency),
    ("streaming covariance equals batch mean (1/t schedule)", check_batch_mean_identity),
    ("spectral clustering recovers planted coalitions", check_planted_recovery),
    ("Boltzmann probability properties", check_boltzmann),
    ("homophily rows are stochastic", check_homophily_rows),
)


def run_all(report=print) -> bool:
    all_ok = True
    for name, check in ALL_CHECKS:
        ok, detail = check()
        all_ok &= ok
        report(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return bool(all_ok)
