"""The simulation engine: clients, the server round loop, and experiments.

One round: the policy picks clients, each selected client runs local SGD
from the broadcast global model, the server refreshes its per-client mean
and covariance estimates from the observations, aggregates the updates
into the next global model, and emits metrics. Unobserved clients' models
carry over bitwise unchanged.
"""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from . import policies as pol
from .errors import NonFiniteLoss, ZeroDiagonal
from .rng import ExperimentStreams, stream
from .stats import (
    AggregationWeights,
    CovarianceStack,
    GammaSchedule,
    conditional_mean_update,
    pearson,
    robbins_monro_update_stack,
)
from .tasks import (
    ClassificationTask,
    RegressionTask,
    SyntheticClassificationConfig,
    SyntheticRegressionConfig,
    generate_synthetic_classification,
    generate_synthetic_regression,
)

RHO_SOURCES = ("inner_product", "pearson")


@dataclass
class TrainerConfig:
    local_steps: int = 10  # epochs of mini-batch SGD per round
    batch_size: int = 100
    eta: float = 0.01

    def __post_init__(self):
        if self.local_steps < 1:
            raise ValueError("local_steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")


@dataclass
class CovarianceConfig:
    init_variance: float = 1.0
    schedule: GammaSchedule = field(default_factory=GammaSchedule)
    rho_source: str = "inner_product"

    def __post_init__(self):
        if self.init_variance <= 0:
            raise ValueError("init_variance must be positive")
        if self.rho_source not in RHO_SOURCES:
            raise ValueError(f"unknown rho_source {self.rho_source!r}")


@dataclass
class ClientState:
    id: int
    data: object  # ClientDataset
    n_train: int
    theta: np.ndarray  # last model the server knows for this client


@dataclass
class ServerState:
    theta_gl: np.ndarray
    stack: CovarianceStack
    round: int
    tracked_dims: np.ndarray
    seen: np.ndarray | None = None  # clients selected at least once (Active FL history)

    def __post_init__(self):
        self.tracked_dims = np.asarray(self.tracked_dims, dtype=int)
        if self.seen is None:
            self.seen = np.zeros(self.stack.n_clients, dtype=bool)


@dataclass
class RoundMetrics:
    round: int
    global_test_loss: float
    global_test_acc: float | None
    per_client_losses: np.ndarray
    update_norm: float
    selected: list
    coalition_sizes: list
    wall_ms: float  # measured; the only field not reproducible across reruns


def local_train(theta_init, client: ClientState, cfg: TrainerConfig, rng, task) -> np.ndarray:
    """Mini-batch SGD on the client's training split; pure in its inputs.

    Runs cfg.local_steps shuffled passes; batches come from the given rng
    so results are independent of which order clients are processed in.
    """
    theta = np.array(theta_init, dtype=float, copy=True)
    x, y = client.data.x_train, client.data.y_train
    n = x.shape[0]
    for _ in range(cfg.local_steps):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grad = task.loss_and_grad(theta, x[idx], y[idx])
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise NonFiniteLoss(
                    f"client {client.id}: non-finite loss/gradient (eta too large?)"
                )
            theta -= cfg.eta * grad
    return theta


def aggregate(updates, counts) -> np.ndarray:
    """Weighted average of client updates, weights n_k / sum n_k.

    Summation runs in ascending client-id order so the result does not
    depend on the order updates were produced in.
    """
    if not updates:
        raise ValueError("no updates to aggregate")
    ids = np.asarray([cid for cid, _ in updates], dtype=int)
    counts = np.asarray(counts, dtype=float)
    order = np.argsort(ids, kind="stable")
    weights = counts / counts.sum()
    out = np.zeros_like(np.asarray(updates[0][1], dtype=float))
    for i in order:
        out += weights[i] * np.asarray(updates[i][1], dtype=float)
    return out


def track_subset(theta, tracked_dims) -> np.ndarray:
    """Gather the tracked coordinates in fixed order."""
    return np.asarray(theta, dtype=float)[np.asarray(tracked_dims, dtype=int)]


def evaluate_clients(theta, clients, task):
    """Per-client test loss (and accuracy) of one model, equal client weights."""
    losses = np.empty(len(clients))
    accs = np.empty(len(clients)) if task.has_accuracy else None
    for i, c in enumerate(clients):
        loss, acc = task.test_metrics(theta, c.data.x_test, c.data.y_test)
        losses[i] = loss
        if accs is not None:
            accs[i] = acc
    return losses, accs


def _normalized_rows(M: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    return np.divide(M, norms, out=np.zeros_like(M), where=norms > 0)


def _select(policy: pol.PolicyConfig, server, tracked_params, alpha, losses, n_select, rng):
    K = tracked_params.shape[0]
    if policy.variant == "uniform":
        return pol.select_uniform(K, n_select, rng)
    if policy.variant == "power_of_choice":
        d = policy.candidate_count if policy.candidate_count else min(2 * n_select, K)
        return pol.select_power_of_choice(losses, alpha, d, n_select, rng)
    if policy.variant == "active_fl":
        unseen = np.nonzero(~server.seen)[0]
        return pol.select_active_fl(
            losses, policy.alpha1, policy.alpha2, policy.alpha3, n_select, rng, unseen=unseen
        )
    return pol.select_fedcvr(server.stack, tracked_params, alpha, n_select, server.round, policy, rng)


def _update_beliefs(server, decision, tracked_prev, tracked_new, covariance: CovarianceConfig):
    """Refresh per-client means and every tracked dimension's covariance."""
    stack = server.stack
    if decision.partition is not None:
        if covariance.rho_source == "inner_product":
            normed = _normalized_rows(tracked_prev)
        for block in decision.partition.blocks:
            inside = np.intersect1d(decision.selected, block)
            j_p = int(inside[0])
            obs = tracked_new[j_p]
            for k in block:
                if k == j_p:
                    stack.means[k] = obs
                elif covariance.rho_source == "inner_product":
                    rho = float(normed[k] @ normed[j_p])
                    stack.means[k] = conditional_mean_update(np.clip(rho, -1.0, 1.0), obs)
                else:
                    stack.means[k] = _pearson_mean(stack, k, j_p, obs)
    else:
        for j in decision.selected:
            stack.means[j] = tracked_new[j]

    gamma_t = covariance.schedule.gamma(server.round)
    stack.cov = robbins_monro_update_stack(stack.cov, gamma_t, tracked_new - stack.means)
    stack.round = server.round + 1


def _pearson_mean(stack, k, j_p, obs):
    out = np.empty_like(obs)
    for d in range(stack.n_dims):
        try:
            rho = pearson(stack.cov[d], k, j_p)
        except ZeroDiagonal:
            rho = 0.0
        out[d] = np.clip(rho, -1.0, 1.0) * obs[d]
    return out


def run_round(
    server: ServerState,
    clients,
    policy: pol.PolicyConfig,
    trainer: TrainerConfig,
    task,
    alpha: AggregationWeights,
    n_select: int,
    streams: ExperimentStreams,
    covariance: CovarianceConfig,
    losses_at_current=None,
):
    """Advance the simulation by one communication round.

    Returns (RoundMetrics, per-client losses at the new global model); the
    second value feeds the next round's loss-aware policies without a
    second evaluation pass.
    """
    t0 = time.perf_counter()
    t = server.round
    if losses_at_current is None:
        losses_at_current, _ = evaluate_clients(server.theta_gl, clients, task)

    tracked_prev = np.stack([track_subset(c.theta, server.tracked_dims) for c in clients])
    decision = _select(policy, server, tracked_prev, alpha, losses_at_current, n_select, streams.policy)

    updates = []
    for j in decision.selected:
        j = int(j)
        theta_j = local_train(server.theta_gl, clients[j], trainer, streams.train(t, j), task)
        updates.append((j, theta_j))

    tracked_new = tracked_prev.copy()
    for j, theta_j in updates:
        clients[j].theta = theta_j
        tracked_new[j] = track_subset(theta_j, server.tracked_dims)
        server.seen[j] = True

    _update_beliefs(server, decision, tracked_prev, tracked_new, covariance)

    theta_next = aggregate(updates, [clients[j].n_train for j, _ in updates])
    update_norm = float(np.linalg.norm(theta_next - server.theta_gl)) / trainer.eta
    server.theta_gl = theta_next
    server.round = t + 1

    losses_after, accs_after = evaluate_clients(theta_next, clients, task)
    wall_ms = (time.perf_counter() - t0) * 1000.0
    metrics = RoundMetrics(
        round=t,
        global_test_loss=float(losses_after.mean()),
        global_test_acc=float(accs_after.mean()) if accs_after is not None else None,
        per_client_losses=losses_after,
        update_norm=update_norm,
        selected=decision.selected.tolist(),
        coalition_sizes=decision.partition.sizes() if decision.partition is not None else [],
        wall_ms=wall_ms,
    )
    return metrics, losses_after


@dataclass
class ExperimentResult:
    rounds: list
    final_loss_mean: float
    final_loss_std: float
    final_acc_mean: float | None
    final_acc_std: float | None
    planted: np.ndarray | None = None


def build_task(task_cfg):
    if isinstance(task_cfg, SyntheticRegressionConfig):
        datasets, planted = generate_synthetic_regression(task_cfg)
        return RegressionTask(), datasets, planted, task_cfg.model_dim
    if isinstance(task_cfg, SyntheticClassificationConfig):
        datasets, planted = generate_synthetic_classification(task_cfg)
        return ClassificationTask(task_cfg.class_count), datasets, planted, task_cfg.model_dim
    raise TypeError(f"unsupported task config {type(task_cfg).__name__}")


def run_experiment(cfg, seed: int) -> ExperimentResult:
    """Run T-1 rounds under one (config, seed) cell and summarize.

    cfg is an ExperimentConfig (see fedcvr.config). The data stream is
    derived from the seed independently of the policy stream, so changing
    the policy never perturbs generation.
    """
    streams = ExperimentStreams(seed)
    task_cfg = dataclasses.replace(cfg.task, seed=streams.data_seed())
    task, datasets, planted, model_dim = build_task(task_cfg)

    theta0 = cfg.init_scale * streams.init().standard_normal(model_dim)
    if model_dim <= cfg.tracked_full_limit:
        tracked = np.arange(model_dim)
    else:
        tracked = np.sort(
            streams.tracked().choice(model_dim, size=cfg.tracked_subset_size, replace=False)
        )

    clients = [
        ClientState(id=k, data=ds, n_train=ds.n_train, theta=theta0.copy())
        for k, ds in enumerate(datasets)
    ]
    alpha = AggregationWeights.from_counts([c.n_train for c in clients])
    server = ServerState(
        theta_gl=theta0,
        stack=CovarianceStack.initial(len(clients), tracked.size, cfg.covariance.init_variance),
        round=1,
        tracked_dims=tracked,
    )

    losses, accs = evaluate_clients(server.theta_gl, clients, task)
    trace = []
    for _ in range(1, cfg.rounds):
        metrics, losses = run_round(
            server,
            clients,
            cfg.policy,
            cfg.trainer,
            task,
            alpha,
            cfg.participants,
            streams,
            cfg.covariance,
            losses_at_current=losses,
        )
        trace.append(metrics)

    if trace:
        final_losses = trace[-1].per_client_losses
        final_acc = trace[-1].global_test_acc
    else:
        final_losses = losses
        final_acc = float(accs.mean()) if accs is not None else None

    acc_std = None
    if task.has_accuracy:
        if trace:
            _, acc_per_client = evaluate_clients(server.theta_gl, clients, task)
        else:
            acc_per_client = accs
        acc_std = float(acc_per_client.std())
    return ExperimentResult(
        rounds=trace,
        final_loss_mean=float(final_losses.mean()),
        final_loss_std=float(final_losses.std()),
        final_acc_mean=final_acc,
        final_acc_std=acc_std,
        planted=planted,
    )
