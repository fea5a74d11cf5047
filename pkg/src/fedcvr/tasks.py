"""Task definitions and synthetic data generation.

Heterogeneous linear regression: clients belong to latent clusters; inputs
and per-sample latent coefficient vectors are Gaussian with cluster-level
means/spreads and labels are their inner product. A Gaussian-mixture
multinomial-logistic task exercises the accuracy metric path.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import ConfigError


@dataclass
class ClientDataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    latents: np.ndarray | None = None  # per-sample coefficient vectors (debug mode)

    @property
    def n_train(self) -> int:
        return self.x_train.shape[0]

    @property
    def n_features(self) -> int:
        return self.x_train.shape[1]


@dataclass
class SyntheticRegressionConfig:
    clusters: int = 2
    clients: int = 100
    samples_per_client: int = 100
    input_dim: int = 1
    intercept: bool = False
    # Per-cluster generator constants. Defaults reproduce the non-IID
    # 1-D regime used throughout the harness; they are package defaults,
    # not published values.
    theta_means: np.ndarray = field(default_factory=lambda: np.array([[2.0], [-2.0]]))
    theta_stds: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))
    x_means: np.ndarray = field(default_factory=lambda: np.array([[1.0], [3.0]]))
    x_stds: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0]))
    train_fraction: float = 0.8
    seed: int = 0
    keep_latents: bool = False

    @property
    def model_dim(self) -> int:
        return self.input_dim + 1 if self.intercept else self.input_dim

    def __post_init__(self):
        self.theta_means = np.atleast_2d(np.asarray(self.theta_means, dtype=float))
        self.x_means = np.atleast_2d(np.asarray(self.x_means, dtype=float))
        self.theta_stds = np.asarray(self.theta_stds, dtype=float)
        self.x_stds = np.asarray(self.x_stds, dtype=float)
        if self.clusters < 1:
            raise ConfigError("clusters must be >= 1", key="task.clusters")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)", key="task.train_fraction")
        if self.theta_means.shape != (self.clusters, self.model_dim):
            raise ConfigError(
                f"theta_means must have shape ({self.clusters}, {self.model_dim}), "
                f"got {self.theta_means.shape}",
                key="task.theta_means",
            )
        if self.x_means.shape != (self.clusters, self.input_dim):
            raise ConfigError(
                f"x_means must have shape ({self.clusters}, {self.input_dim}), "
                f"got {self.x_means.shape}",
                key="task.x_means",
            )
        for name, arr in (("theta_stds", self.theta_stds), ("x_stds", self.x_stds)):
            if arr.shape != (self.clusters,):
                raise ConfigError(f"{name} must list one value per cluster", key=f"task.{name}")
            if np.any(arr < 0):
                raise ConfigError(f"{name} entries must be >= 0", key=f"task.{name}")


def _split_indices(n: int, train_fraction: float, rng: np.random.Generator):
    n_train = int(train_fraction * n)
    n_train = min(max(n_train, 1), n - 1)  # both splits stay nonempty
    perm = rng.permutation(n)
    return perm[:n_train], perm[n_train:]


def generate_synthetic_regression(cfg: SyntheticRegressionConfig):
    """Build one dataset per client plus the planted cluster labels.

    Labels use the bias-augmented features when intercept is set, so the
    latent coefficient vector spans all model coordinates. Planted labels
    are for diagnostics only and never reach the selection policies.
    """
    assign_rng = rngmod.stream(cfg.seed, "clusters")
    planted = assign_rng.integers(0, cfg.clusters, size=cfg.clients)

    datasets = []
    for k in range(cfg.clients):
        j = int(planted[k])
        crng = rngmod.stream(cfg.seed, "client", k)
        x = crng.normal(cfg.x_means[j], cfg.x_stds[j], size=(cfg.samples_per_client, cfg.input_dim))
        theta = crng.normal(
            cfg.theta_means[j], cfg.theta_stds[j], size=(cfg.samples_per_client, cfg.model_dim)
        )
        feats = np.hstack([x, np.ones((x.shape[0], 1))]) if cfg.intercept else x
        y = np.einsum("ij,ij->i", theta, feats)
        tr, te = _split_indices(cfg.samples_per_client, cfg.train_fraction, crng)
        datasets.append(
            ClientDataset(
                x_train=feats[tr],
                y_train=y[tr],
                x_test=feats[te],
                y_test=y[te],
                latents=theta if cfg.keep_latents else None,
            )
        )
    return datasets, planted


def regression_loss_and_grad(theta, x, y):
    """Mean squared error and its gradient: (2/n) X^T (X theta - y)."""
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = x @ theta - y
    n = y.shape[0]
    loss = float(r @ r) / n
    grad = (2.0 / n) * (x.T @ r)
    return loss, grad


def regression_test_loss(theta, x, y) -> float:
    r = np.asarray(x, float) @ np.asarray(theta, float) - np.asarray(y, float)
    return float(r @ r) / y.shape[0]


@dataclass
class SyntheticClassificationConfig:
    clusters: int = 2
    clients: int = 20
    samples_per_client: int = 60
    input_dim: int = 2
    class_count: int = 3
    separation: float = 4.0
    train_fraction: float = 0.8
    seed: int = 0

    @property
    def model_dim(self) -> int:
        return self.class_count * (self.input_dim + 1)  # bias column appended

    def __post_init__(self):
        if self.class_count < 2:
            raise ConfigError("class_count must be >= 2", key="task.class_count")
        if self.clusters < 1:
            raise ConfigError("clusters must be >= 1", key="task.clusters")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)", key="task.train_fraction")


def generate_synthetic_classification(cfg: SyntheticClassificationConfig):
    """Gaussian-mixture features with cluster-skewed class priors.

    Each latent client cluster carries its own Dirichlet-drawn prior over
    classes (the heterogeneity knob); features are unit-variance Gaussians
    around class means placed `separation` apart.
    """
    mean_rng = rngmod.stream(cfg.seed, "class-means")
    dirs = mean_rng.standard_normal((cfg.class_count, cfg.input_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    class_means = cfg.separation * dirs

    prior_rng = rngmod.stream(cfg.seed, "priors")
    priors = prior_rng.dirichlet(0.5 * np.ones(cfg.class_count), size=cfg.clusters)

    assign_rng = rngmod.stream(cfg.seed, "clusters")
    planted = assign_rng.integers(0, cfg.clusters, size=cfg.clients)

    datasets = []
    for k in range(cfg.clients):
        j = int(planted[k])
        crng = rngmod.stream(cfg.seed, "client", k)
        labels = crng.choice(cfg.class_count, size=cfg.samples_per_client, p=priors[j])
        x = class_means[labels] + crng.standard_normal((cfg.samples_per_client, cfg.input_dim))
        feats = np.hstack([x, np.ones((x.shape[0], 1))])
        tr, te = _split_indices(cfg.samples_per_client, cfg.train_fraction, crng)
        datasets.append(
            ClientDataset(
                x_train=feats[tr],
                y_train=labels[tr].astype(float),
                x_test=feats[te],
                y_test=labels[te].astype(float),
            )
        )
    return datasets, planted


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def logistic_loss_and_grad(theta, x, y, n_classes: int):
    """Multinomial cross-entropy and gradient for a flattened (C, F) matrix."""
    x = np.asarray(x, dtype=float)
    yi = np.asarray(y).astype(int)
    n, n_feat = x.shape
    Wm = np.asarray(theta, dtype=float).reshape(n_classes, n_feat)
    z = x @ Wm.T
    zmax = z.max(axis=1)
    lse = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), yi]))
    p = _softmax_rows(z)
    p[np.arange(n), yi] -= 1.0
    grad = (p.T @ x) / n
    return loss, grad.ravel()


def logistic_accuracy(theta, x, y, n_classes: int) -> float:
    x = np.asarray(x, dtype=float)
    Wm = np.asarray(theta, dtype=float).reshape(n_classes, x.shape[1])
    pred = (x @ Wm.T).argmax(axis=1)
    return float(np.mean(pred == np.asarray(y).astype(int)))


class RegressionTask:
    """Linear model under mean squared error."""

    has_accuracy = False

    def loss_and_grad(self, theta, x, y):
        return regression_loss_and_grad(theta, x, y)

    def test_metrics(self, theta, x, y):
        return regression_test_loss(theta, x, y), None


class ClassificationTask:
    """Multinomial logistic model under cross-entropy."""

    has_accuracy = True

    def __init__(self, n_classes: int):
        self.n_classes = n_classes

    def loss_and_grad(self, theta, x, y):
        return logistic_loss_and_grad(theta, x, y, self.n_classes)

    def test_metrics(self, theta, x, y):
        loss, _ = logistic_loss_and_grad(theta, x, y, self.n_classes)
        return loss, logistic_accuracy(theta, x, y, self.n_classes)


def save_datasets(path, datasets) -> None:
    """Columnar text dump: client_id, split, y, x_0..x_{D-1} (17 significant digits)."""
    n_feat = datasets[0].n_features
    header = "client_id,split,y," + ",".join(f"x_{d}" for d in range(n_feat))
    lines = [header]
    for cid, ds in enumerate(datasets):
        for split, xs, ys in (("train", ds.x_train, ds.y_train), ("test", ds.x_test, ds.y_test)):
            for row, target in zip(xs, ys):
                vals = ",".join(f"{v:.17g}" for v in row)
                lines.append(f"{cid},{split},{target:.17g},{vals}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_datasets(path):
    """Inverse of save_datasets; round-trips bitwise on the decimal text."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    if header[:3] != ["client_id", "split", "y"]:
        raise ValueError(f"unexpected header: {lines[0]!r}")
    buckets: dict = {}
    for ln in lines[1:]:
        parts = ln.split(",")
        cid = int(parts[0])
        split = parts[1]
        y = float(parts[2])
        x = [float(v) for v in parts[3:]]
        buckets.setdefault(cid, {"train": ([], []), "test": ([], [])})
        buckets[cid][split][0].append(x)
        buckets[cid][split][1].append(y)
    datasets = []
    for cid in sorted(buckets):
        tr_x, tr_y = buckets[cid]["train"]
        te_x, te_y = buckets[cid]["test"]
        datasets.append(
            ClientDataset(
                x_train=np.asarray(tr_x, dtype=float),
                y_train=np.asarray(tr_y, dtype=float),
                x_test=np.asarray(te_x, dtype=float),
                y_test=np.asarray(te_y, dtype=float),
            )
        )
    return datasets
