"""Client-selection strategies behind one interface.

Four policies: uniform random, Power-of-Choice (loss-greedy over a
weighted candidate pool), Active FL (masked softmax over valuations with
optional exploration), and FedCVR-Bolt (coalition detection plus
variance-reduction-driven Boltzmann sampling within each coalition).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coalition import KernelConfig, Partition, kernel_matrix, spectral_cluster
from .errors import InsufficientPool, ZeroVector
from .stats import AggregationWeights, CovarianceStack, ValueVector, total_value

POLICY_VARIANTS = ("uniform", "power_of_choice", "active_fl", "fedcvr_bolt")


@dataclass
class PolicyConfig:
    variant: str = "uniform"
    # power_of_choice: candidate pool size d (0 means "2 * P" at selection time)
    candidate_count: int = 0
    # active_fl
    alpha1: float = 0.8
    alpha2: float = 1.0
    alpha3: float = 0.0
    # fedcvr_bolt
    beta: float = 1.0
    warmup_rounds: int = 30
    kernel: KernelConfig = field(default_factory=KernelConfig)
    use_argmax: bool = False

    def __post_init__(self):
        if self.variant not in POLICY_VARIANTS:
            raise ValueError(f"unknown policy variant {self.variant!r}")
        if self.candidate_count < 0:
            raise ValueError("candidate_count must be >= 0")
        if not 0.0 <= self.alpha1 < 1.0:
            raise ValueError("alpha1 must lie in [0, 1)")
        if not 0.0 <= self.alpha3 <= 1.0:
            raise ValueError("alpha3 must lie in [0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.warmup_rounds < 0:
            raise ValueError("warmup_rounds must be >= 0")


@dataclass
class SelectionDecision:
    """One round's outcome: the chosen clients plus optional diagnostics."""

    selected: np.ndarray
    partition: Partition | None = None
    probs: list | None = None  # per-block probability vectors, aligned with partition.blocks
    values: ValueVector | None = None

    def __post_init__(self):
        self.selected = np.asarray(sorted(int(i) for i in self.selected), dtype=int)
        if len(set(self.selected.tolist())) != self.selected.size:
            raise ValueError("selected client ids must be distinct")


def boltzmann_probs(values, coalition, beta: float) -> np.ndarray:
    """Softmax of beta * value over the coalition, computed stably.

    Strictly positive, sums to 1; beta = 0 gives the uniform distribution.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    v = values.total if isinstance(values, ValueVector) else np.asarray(values, dtype=float)
    idx = np.asarray(list(coalition), dtype=int)
    if idx.size == 0:
        raise ValueError("coalition must be nonempty")
    logits = beta * v[idx]
    logits -= logits.max()
    e = np.exp(logits)
    return e / e.sum()


def select_uniform(n_clients: int, n_select: int, rng: np.random.Generator) -> SelectionDecision:
    """FedAvg baseline: uniform without-replacement sample."""
    if not 1 <= n_select <= n_clients:
        raise ValueError("need 1 <= n_select <= n_clients")
    chosen = rng.choice(n_clients, size=n_select, replace=False)
    return SelectionDecision(selected=chosen)


def select_power_of_choice(
    client_losses, alpha, d: int, n_select: int, rng: np.random.Generator
) -> SelectionDecision:
    """Draw d candidates with probability proportional to the aggregation
    weights, then keep the n_select with the highest loss (ties to the
    lowest client index)."""
    losses = np.asarray(client_losses, dtype=float)
    a = alpha.alpha if isinstance(alpha, AggregationWeights) else np.asarray(alpha, dtype=float)
    K = losses.shape[0]
    if not 1 <= n_select <= d <= K:
        raise ValueError("need 1 <= n_select <= d <= n_clients")
    candidates = rng.choice(K, size=d, replace=False, p=a / a.sum())
    order = np.lexsort((candidates, -losses[candidates]))
    return SelectionDecision(selected=candidates[order[:n_select]])


def select_active_fl(
    valuations,
    alpha1: float,
    alpha2: float,
    alpha3: float,
    n_select: int,
    rng: np.random.Generator,
    unseen=None,
) -> SelectionDecision:
    """Mask the lowest alpha1*K valuations, softmax-sample (1-alpha3)*P from
    the rest at temperature alpha2, and draw the remaining alpha3*P
    uniformly from clients never considered before."""
    vals = np.asarray(valuations, dtype=float)
    K = vals.shape[0]
    n_mask = int(np.floor(alpha1 * K))
    order = np.lexsort((np.arange(K), vals))  # ascending valuation, ties by index
    pool = np.asarray(sorted(order[n_mask:].tolist()), dtype=int)
    if pool.size < n_select:
        raise InsufficientPool(
            f"masking {n_mask} of {K} clients leaves {pool.size} < {n_select} candidates"
        )

    n_explore = int(round(alpha3 * n_select))
    n_exploit = n_select - n_explore

    chosen = []
    logits = alpha2 * vals[pool]
    logits -= logits.max()
    weights = np.exp(logits)
    for _ in range(n_exploit):
        p = weights / weights.sum()
        pick = int(rng.choice(pool.size, p=p))
        chosen.append(int(pool[pick]))
        weights[pick] = 0.0

    if n_explore > 0:
        unseen = np.asarray(sorted(unseen), dtype=int) if unseen is not None else np.empty(0, int)
        fresh = np.setdiff1d(unseen, np.asarray(chosen, dtype=int))
        take = min(n_explore, fresh.size)
        if take > 0:
            chosen.extend(int(i) for i in rng.choice(fresh, size=take, replace=False))
        shortfall = n_explore - take
        for _ in range(shortfall):  # unseen pool exhausted: top up from the softmax stage
            p = weights / weights.sum()
            pick = int(rng.choice(pool.size, p=p))
            chosen.append(int(pool[pick]))
            weights[pick] = 0.0

    return SelectionDecision(selected=np.asarray(chosen, dtype=int))


def select_fedcvr(
    stack: CovarianceStack,
    params,
    alpha,
    n_select: int,
    round_t: int,
    cfg: PolicyConfig,
    rng: np.random.Generator,
) -> SelectionDecision:
    """Coalition-based variance-reduction selection.

    During warm-up rounds this is a uniform sample with no partition.
    Afterwards: build the similarity kernel from the clients' tracked
    parameter vectors, spectral-cluster into n_select coalitions, compute
    the total value vector from the covariance stack, and pick one client
    per coalition - Boltzmann sampling by default, argmax (ties to the
    lowest index) when cfg.use_argmax is set.
    """
    P = np.asarray(params, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    K = P.shape[0]
    if not 1 <= n_select <= K:
        raise ValueError("need 1 <= n_select <= n_clients")

    if round_t <= cfg.warmup_rounds:
        return select_uniform(K, n_select, rng)

    feats = P
    if cfg.kernel.kind in ("cosine", "sigmoid"):
        norms = np.linalg.norm(P, axis=1, keepdims=True)
        feats = np.divide(P, norms, out=np.zeros_like(P), where=norms > 0)
    try:
        W = kernel_matrix(feats, cfg.kernel)
    except ZeroVector:
        W = kernel_matrix(feats, cfg.kernel, on_zero_norm="substitute")

    partition = spectral_cluster(W, n_select)
    partition.round = round_t
    values = total_value(stack, alpha)

    chosen = []
    probs = []
    for block in partition.blocks:
        pi = boltzmann_probs(values, block, cfg.beta)
        probs.append(pi)
        if cfg.use_argmax:
            chosen.append(block[int(np.argmax(values.total[block]))])
        else:
            chosen.append(int(rng.choice(block, p=pi)))

    return SelectionDecision(
        selected=np.asarray(chosen, dtype=int),
        partition=partition,
        probs=probs,
        values=values,
    )
