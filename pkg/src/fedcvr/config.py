"""Experiment configuration: a flat key/value text format with dotted keys.

Example:

    label = regression_noniid_d1
    seeds = 1, 2, 3
    task.kind = regression
    task.clusters = 2
    task.theta_means = 2.0 | -2.0
    run.rounds = 100
    run.participants = 10
    trainer.eta = 0.01
    policy.variant = fedcvr_bolt

Scalar lists are comma-separated; per-cluster vectors separate clusters
with '|' and components with commas. '#' starts a comment.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .coalition import KERNEL_KINDS, KernelConfig
from .errors import ConfigError
from .policies import POLICY_VARIANTS, PolicyConfig
from .runtime import CovarianceConfig, TrainerConfig
from .stats import GammaSchedule
from .tasks import SyntheticClassificationConfig, SyntheticRegressionConfig


@dataclass
class ExperimentConfig:
    task: object  # SyntheticRegressionConfig | SyntheticClassificationConfig
    label: str = "experiment"
    rounds: int = 100  # total budget T; the loop runs rounds 1..T-1
    participants: int = 10
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    covariance: CovarianceConfig = field(default_factory=CovarianceConfig)
    tracked_full_limit: int = 512
    tracked_subset_size: int = 300
    init_scale: float = 0.01
    seeds: tuple = (1,)

    @property
    def n_clients(self) -> int:
        return self.task.clients

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.rounds < 1:
            raise ConfigError("run.rounds must be >= 1", key="run.rounds")
        if not 1 <= self.participants <= self.n_clients:
            raise ConfigError(
                "run.participants must lie in [1, task.clients]", key="run.participants"
            )
        if not self.seeds:
            raise ConfigError("seeds must be nonempty", key="seeds")


def parse_config_text(text: str):
    """Parse key/value lines into {key: (line_number, raw_value)}."""
    entries: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError("empty key", line=lineno)
        if key in entries:
            raise ConfigError("duplicate key", key=key, line=lineno)
        entries[key] = (lineno, value.strip())
    return entries


def parse_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


class _Reader:
    """Typed extraction with line/key diagnostics; tracks unknown keys."""

    def __init__(self, entries):
        self.entries = entries
        self.used = set()

    def _raw(self, key, default):
        if key not in self.entries:
            if default is _REQUIRED:
                raise ConfigError("missing required key", key=key)
            return None, default
        self.used.add(key)
        return self.entries[key]

    def _convert(self, key, kind, default):
        line, raw = self._raw(key, default)
        if line is None:
            return raw
        try:
            return kind(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), key=key, line=line) from exc

    def str_(self, key, default=None, choices=None):
        val = self._convert(key, str, default)
        if choices is not None and val not in choices:
            line = self.entries.get(key, (None,))[0]
            raise ConfigError(f"expected one of {sorted(choices)}, got {val!r}", key=key, line=line)
        return val

    def int_(self, key, default=None):
        return self._convert(key, lambda s: int(str(s).strip()), default)

    def float_(self, key, default=None):
        return self._convert(key, lambda s: float(str(s).strip()), default)

    def bool_(self, key, default=None):
        def to_bool(s):
            s = str(s).strip().lower()
            if s in ("true", "yes", "1"):
                return True
            if s in ("false", "no", "0"):
                return False
            raise ValueError(f"expected a boolean, got {s!r}")

        return self._convert(key, to_bool, default)

    def float_list(self, key, default=None):
        return self._convert(
            key, lambda s: [float(p.strip()) for p in str(s).split(",") if p.strip()], default
        )

    def int_list(self, key, default=None):
        return self._convert(
            key, lambda s: [int(p.strip()) for p in str(s).split(",") if p.strip()], default
        )

    def vectors(self, key, default=None):
        """'a, b | c, d' -> [[a, b], [c, d]] (one vector per cluster)."""

        def to_vectors(s):
            return [
                [float(p.strip()) for p in group.split(",") if p.strip()]
                for group in str(s).split("|")
            ]

        return self._convert(key, to_vectors, default)

    def str_list(self, key, default=None, sep="|"):
        return self._convert(
            key, lambda s: [p.strip() for p in str(s).split(sep) if p.strip()], default
        )

    def reject_unknown(self):
        unknown = sorted(set(self.entries) - self.used)
        if unknown:
            key = unknown[0]
            raise ConfigError("unknown key", key=key, line=self.entries[key][0])


class _Required:
    pass


_REQUIRED = _Required()


def _build_task(r: _Reader):
    kind = r.str_("task.kind", default="regression", choices=("regression", "classification"))
    clusters = r.int_("task.clusters", default=2)
    clients = r.int_("task.clients", default=100)
    samples = r.int_("task.samples_per_client", default=100)
    input_dim = r.int_("task.input_dim", default=1)
    train_fraction = r.float_("task.train_fraction", default=0.8)
    if kind == "classification":
        return SyntheticClassificationConfig(
            clusters=clusters,
            clients=clients,
            samples_per_client=samples,
            input_dim=input_dim,
            class_count=r.int_("task.class_count", default=3),
            separation=r.float_("task.separation", default=4.0),
            train_fraction=train_fraction,
        )
    intercept = r.bool_("task.intercept", default=False)
    model_dim = input_dim + 1 if intercept else input_dim
    theta_means = r.vectors("task.theta_means", default=None)
    x_means = r.vectors("task.x_means", default=None)
    if theta_means is None:
        base = np.linspace(2.0, -2.0, clusters) if clusters > 1 else np.array([2.0])
        theta_means = [[m] * model_dim for m in base]
    if x_means is None:
        base = np.linspace(1.0, 3.0, clusters) if clusters > 1 else np.array([1.0])
        x_means = [[m] * input_dim for m in base]
    return SyntheticRegressionConfig(
        clusters=clusters,
        clients=clients,
        samples_per_client=samples,
        input_dim=input_dim,
        intercept=intercept,
        theta_means=np.asarray(theta_means, dtype=float),
        theta_stds=np.asarray(r.float_list("task.theta_stds", default=[0.5] * clusters)),
        x_means=np.asarray(x_means, dtype=float),
        x_stds=np.asarray(r.float_list("task.x_stds", default=[1.0] * clusters)),
        train_fraction=train_fraction,
    )


def build_experiment_config(entries) -> ExperimentConfig:
    r = _Reader(entries)
    task = _build_task(r)

    trainer = TrainerConfig(
        local_steps=r.int_("trainer.local_steps", default=10),
        batch_size=r.int_("trainer.batch_size", default=100),
        eta=r.float_("trainer.eta", default=0.01),
    )
    kernel = KernelConfig(
        kind=r.str_("policy.kernel", default="homophily_rbf", choices=KERNEL_KINDS),
        gamma=r.float_("policy.gamma", default=1.0),
        sigmoid_offset=r.float_("policy.sigmoid_offset", default=0.0),
    )
    policy = PolicyConfig(
        variant=r.str_("policy.variant", default="uniform", choices=POLICY_VARIANTS),
        candidate_count=r.int_("policy.candidate_count", default=0),
        alpha1=r.float_("policy.alpha1", default=0.8),
        alpha2=r.float_("policy.alpha2", default=1.0),
        alpha3=r.float_("policy.alpha3", default=0.0),
        beta=r.float_("policy.beta", default=1.0),
        warmup_rounds=r.int_("policy.warmup_rounds", default=30),
        use_argmax=r.bool_("policy.use_argmax", default=False),
        kernel=kernel,
    )
    covariance = CovarianceConfig(
        init_variance=r.float_("covariance.init_variance", default=1.0),
        schedule=GammaSchedule(
            kind=r.str_("covariance.gamma_schedule", default="reciprocal",
                        choices=("reciprocal", "constant")),
            constant_value=r.float_("covariance.gamma_constant", default=1.0),
        ),
        rho_source=r.str_("covariance.rho_source", default="inner_product",
                          choices=("inner_product", "pearson")),
    )
    cfg = ExperimentConfig(
        task=task,
        label=r.str_("label", default="experiment"),
        rounds=r.int_("run.rounds", default=100),
        participants=r.int_("run.participants", default=10),
        trainer=trainer,
        policy=policy,
        covariance=covariance,
        tracked_full_limit=r.int_("tracked.full_limit", default=512),
        tracked_subset_size=r.int_("tracked.subset_size", default=300),
        init_scale=r.float_("run.init_scale", default=0.01),
        seeds=tuple(r.int_list("seeds", default=[1])),
    )
    r.reject_unknown()
    return cfg


def load_experiment_config(path) -> ExperimentConfig:
    return build_experiment_config(parse_config_file(path))


def load_matrix_config(path):
    """A matrix file crosses setting configs with policy variants.

        matrix.settings = configs/iid.cfg | configs/noniid.cfg
        matrix.policies = uniform | power_of_choice | active_fl | fedcvr_bolt

    Setting paths are relative to the matrix file. Returns a list of
    (setting_label, policy_variant, ExperimentConfig) cells.
    """
    entries = parse_config_file(path)
    r = _Reader(entries)
    settings = r.str_list("matrix.settings", default=_REQUIRED)
    variants = r.str_list("matrix.policies", default=list(POLICY_VARIANTS))
    r.reject_unknown()

    base_dir = os.path.dirname(os.path.abspath(path))
    cells = []
    for rel in settings:
        setting_path = rel if os.path.isabs(rel) else os.path.join(base_dir, rel)
        base_cfg = load_experiment_config(setting_path)
        for variant in variants:
            if variant not in POLICY_VARIANTS:
                raise ConfigError(f"unknown policy variant {variant!r}", key="matrix.policies")
            cfg = replace(base_cfg, policy=replace(base_cfg.policy, variant=variant))
            cells.append((base_cfg.label, variant, cfg))
    return cells
