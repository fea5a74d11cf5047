"""Client-similarity matrices and coalition detection.

The default affinity is the row-stochastic RBF homophily matrix (influence
decays exponentially with squared model distance); cosine, laplacian and
sigmoid kernels are available for ablations. Coalitions come from spectral
clustering on the symmetric normalized Laplacian with a deterministic
k-means in the embedding space.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroVector

KERNEL_KINDS = ("homophily_rbf", "cosine", "laplacian", "sigmoid")

# Affinity rows summing to less than this have no usable neighbors.
DEGREE_EPS = 1e-12


@dataclass
class KernelConfig:
    kind: str = "homophily_rbf"
    gamma: float = 1.0
    sigmoid_offset: float = 0.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.gamma <= 0:
            raise ValueError("kernel gamma must be positive")


@dataclass
class SimilarityMatrix:
    entries: np.ndarray
    kind: str


@dataclass
class Partition:
    """Disjoint, covering, nonempty blocks of client indices for one round."""

    blocks: list
    round: int = 0

    def __post_init__(self):
        self.blocks = [sorted(int(i) for i in block) for block in self.blocks]
        self.blocks.sort(key=lambda block: block[0])

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def sizes(self) -> list:
        return [len(block) for block in self.blocks]

    def labels(self, n_clients: int) -> np.ndarray:
        out = np.full(n_clients, -1, dtype=int)
        for b, block in enumerate(self.blocks):
            out[block] = b
        return out

    def validate(self, n_clients: int) -> None:
        seen = sorted(i for block in self.blocks for i in block)
        if any(len(block) == 0 for block in self.blocks):
            raise ValueError("empty partition block")
        if seen != list(range(n_clients)):
            raise ValueError("blocks must partition the full client set")


def _param_matrix(params) -> np.ndarray:
    P = np.asarray(params, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    return P


def _sq_distances(P: np.ndarray) -> np.ndarray:
    sq = (P * P).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (P @ P.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def homophily_matrix(params, gamma: float) -> SimilarityMatrix:
    """Row-stochastic RBF influence matrix.

    W_kj = exp(-gamma ||theta_k - theta_j||^2) / sum_m exp(-gamma ||theta_k - theta_m||^2),
    computed with row-wise max-subtraction before exponentiation.
    """
    P = _param_matrix(params)
    if P.shape[0] < 2:
        raise ValueError("need at least two clients")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    logits = -gamma * _sq_distances(P)
    logits -= logits.max(axis=1, keepdims=True)
    W = np.exp(logits)
    W /= W.sum(axis=1, keepdims=True)
    return SimilarityMatrix(entries=W, kind="homophily_rbf")


def _l1_distances(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    d1 = np.zeros((n, n))
    for d in range(P.shape[1]):  # bounded memory for large (K, D)
        col = P[:, d]
        d1 += np.abs(col[:, None] - col[None, :])
    return d1


def kernel_matrix(params, config: KernelConfig, on_zero_norm: str = "raise") -> SimilarityMatrix:
    """Symmetric similarity matrix for the configured kernel.

    Cosine needs directions: with on_zero_norm="raise" a zero-norm client
    raises ZeroVector; with "substitute" its off-diagonal similarities are
    set to 0 (diagonal stays 1).
    """
    P = _param_matrix(params)
    kind = config.kind
    if kind == "homophily_rbf":
        return homophily_matrix(P, config.gamma)
    if kind == "laplacian":
        W = np.exp(-config.gamma * _l1_distances(P))
    elif kind == "sigmoid":
        W = np.tanh(config.gamma * (P @ P.T) + config.sigmoid_offset)
    elif kind == "cosine":
        norms = np.linalg.norm(P, axis=1)
        zero = norms < 1e-300
        if np.any(zero):
            if on_zero_norm == "raise":
                raise ZeroVector(np.nonzero(zero)[0])
            norms = np.where(zero, 1.0, norms)
        W = (P @ P.T) / (norms[:, None] * norms[None, :])
        np.clip(W, -1.0, 1.0, out=W)
        if np.any(zero):
            W[zero, :] = 0.0
            W[:, zero] = 0.0
        np.fill_diagonal(W, 1.0)
    else:  # pragma: no cover - KernelConfig already validates
        raise ValueError(f"unknown kernel kind {kind!r}")
    W = (W + W.T) / 2.0
    return SimilarityMatrix(entries=W, kind=kind)


def kmeans(points, n_clusters: int, iters: int = 300, seed: int = 0) -> np.ndarray:
    """Lloyd iterations with greedy farthest-point seeding.

    Seeding is data-deterministic (first center = point farthest from the
    data centroid, then farthest-from-nearest-center, ties to the lowest
    index), which keeps the result equivariant under client relabeling;
    the seed argument is accepted for interface stability. Empty clusters
    are repaired by moving in the point farthest from its own centroid.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not 1 <= n_clusters <= n:
        raise ValueError("need 1 <= n_clusters <= n_points")
    if n_clusters == 1:
        return np.zeros(n, dtype=int)

    center_idx = [int(np.argmax(((X - X.mean(axis=0)) ** 2).sum(axis=1)))]
    min_d = ((X - X[center_idx[0]]) ** 2).sum(axis=1)
    while len(center_idx) < n_clusters:
        nxt = int(np.argmax(min_d))
        center_idx.append(nxt)
        min_d = np.minimum(min_d, ((X - X[nxt]) ** 2).sum(axis=1))
    centers = X[center_idx].copy()

    labels = np.full(n, -1, dtype=int)
    for _ in range(max(1, iters)):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        new_labels = _repair_empty(X, centers, new_labels, n_clusters)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(n_clusters):
            centers[c] = X[labels == c].mean(axis=0)
    return labels


def _repair_empty(X: np.ndarray, centers: np.ndarray, labels: np.ndarray, n_clusters: int) -> np.ndarray:
    labels = labels.copy()
    counts = np.bincount(labels, minlength=n_clusters)
    for c in range(n_clusters):
        if counts[c] > 0:
            continue
        own_d = ((X - centers[labels]) ** 2).sum(axis=1)
        movable = counts[labels] > 1
        own_d = np.where(movable, own_d, -np.inf)
        pick = int(np.argmax(own_d))
        counts[labels[pick]] -= 1
        labels[pick] = c
        counts[c] += 1
    return labels


def spectral_cluster(W, n_blocks: int, kmeans_iters: int = 300, seed: int = 0) -> Partition:
    """Partition clients by spectral clustering on the affinity W.

    Symmetrizes the affinity, clamps negatives, zeroes the diagonal, forms
    the symmetric normalized Laplacian, embeds each client with the
    eigenvectors of the smallest n_blocks eigenvalues (rows normalized to
    unit length, zero rows left as zero), then runs k-means. Clients whose
    affinity row sums to ~0 become singleton blocks and clustering proceeds
    on the rest.
    """
    A = W.entries if isinstance(W, SimilarityMatrix) else np.asarray(W, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("affinity must be square")
    K = A.shape[0]
    if not 1 <= n_blocks <= K:
        raise ValueError("need 1 <= n_blocks <= n_clients")
    if n_blocks == 1:
        return Partition([list(range(K))])

    A = (A + A.T) / 2.0
    A = np.clip(A, 0.0, None)
    np.fill_diagonal(A, 0.0)

    degree = A.sum(axis=1)
    isolated = np.nonzero(degree <= DEGREE_EPS)[0]
    rest = np.nonzero(degree > DEGREE_EPS)[0]

    if rest.size == 0 or n_blocks - isolated.size < 1:
        # Pathological affinity: keep n_blocks - 1 singletons, lump the rest.
        singles = [int(i) for i in isolated[: n_blocks - 1]]
        blocks = [[i] for i in singles]
        blocks.append([i for i in range(K) if i not in set(singles)])
        return Partition(blocks)

    blocks = [[int(i)] for i in isolated]
    n_rest_blocks = n_blocks - isolated.size
    sub = A[np.ix_(rest, rest)]
    emb = _spectral_embedding(sub, n_rest_blocks)
    labels = kmeans(emb, n_rest_blocks, iters=kmeans_iters, seed=seed)
    for c in range(n_rest_blocks):
        blocks.append([int(i) for i in rest[labels == c]])
    return Partition(blocks)


def _spectral_embedding(A: np.ndarray, n_components: int) -> np.ndarray:
    degree = A.sum(axis=1)
    inv_sqrt = np.zeros_like(degree)
    safe = degree > DEGREE_EPS
    inv_sqrt[safe] = 1.0 / np.sqrt(degree[safe])
    L = np.eye(A.shape[0]) - inv_sqrt[:, None] * A * inv_sqrt[None, :]
    _, vecs = np.linalg.eigh(L)  # ascending eigenvalues
    emb = vecs[:, :n_components].copy()
    norms = np.linalg.norm(emb, axis=1)
    nonzero = norms > 0
    emb[nonzero] /= norms[nonzero, None]
    return emb


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Partition agreement in [-1, 1]; 1.0 means identical up to relabeling."""
    a = np.asarray(labels_a, dtype=int)
    b = np.asarray(labels_b, dtype=int)
    if a.shape != b.shape:
        raise ValueError("label vectors must have equal length")
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_cells = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_rows * sum_cols / total if total > 0 else 0.0
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))
