"""Experiment configuration: a flat, line-oriented key=value document.

Example:

    # 4 async workers on a noisy quadratic
    objective.kind = quadratic
    objective.dim = 20
    objective.noise_sigma = 4.0
    workers = 4
    strategy.kind = global_accum
    strategy.global = 4
    optimizer.alpha = 0.01
    budget.updates = 2000
    seed = 7

Keys use dotted section prefixes but the document is flat: no nesting, one
key per line, `#` lines are comments. Unknown keys are rejected with their
line number, as are syntax and type errors; semantic violations (G < 1,
negative sigma, ...) are reported with the constraint named. parse and
serialize round-trip to an equal config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .core import ComputeTimeModel
from .optim import AdamConfig
from .simulator import Strategy

__all__ = [
    "ObjectiveSpec",
    "ExperimentConfig",
    "ConfigError",
    "parse_config",
    "serialize_config",
    "default_config",
]


class ConfigError(ValueError):
    """Configuration rejected; .line is the 1-based line number when the
    problem is tied to a specific input line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which toy objective to build and its generation parameters.

    dim/cond/noise_sigma/theta_star_scale apply to the quadratic (dim also
    to linreg); target_noise to linreg; in_dim/hidden/classes/spread to the
    mlp. samples is the dataset size (per class for the mlp).
    """

    kind: str = "quadratic"
    dim: int = 20
    cond: float = 10.0
    noise_sigma: float = 0.0
    theta_star_scale: float = 5.0
    samples: int = 256
    target_noise: float = 0.0
    in_dim: int = 4
    hidden: int = 8
    classes: int = 3
    spread: float = 0.5

    def __post_init__(self):
        if self.kind not in ("quadratic", "linreg", "mlp"):
            raise ValueError(f"objective.kind must be quadratic, linreg or mlp, got {self.kind!r}")
        if self.dim < 1:
            raise ValueError("objective.dim must be >= 1")
        if self.cond < 1:
            raise ValueError("objective.cond must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("objective.noise_sigma must be >= 0")
        if self.samples < 1:
            raise ValueError("objective.samples must be >= 1")
        if self.target_noise < 0:
            raise ValueError("objective.target_noise must be >= 0")
        if min(self.in_dim, self.hidden) < 1 or self.classes < 2:
            raise ValueError("mlp needs in_dim, hidden >= 1 and classes >= 2")
        if self.spread <= 0:
            raise ValueError("objective.spread must be > 0")


@dataclass(frozen=True)
class ExperimentConfig:
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    workers: int = 4
    strategy: Strategy = field(default_factory=Strategy.asynchronous)
    optimizer_kind: str = "adam"
    adam: AdamConfig = field(default_factory=AdamConfig)
    schedule_warmup: int = 0
    schedule_decay: str = "inverse-sqrt"
    schedule_batch_scale: float = 0.0
    compute: ComputeTimeModel = field(
        default_factory=lambda: ComputeTimeModel.constant(1.0)
    )
    comm_latency: float = 0.0
    combine: str = "mean"
    batch_budget: int = 8
    batch_cost_max: int = 1
    budget_updates: int = 1000
    budget_sim_time: float = 0.0
    seed: int = 0
    probe_seed: int = 9999
    probe_samples: int = 64
    parallel: bool = False
    parallel_time_scale: float = 1.0
    stats_warmup_pushes: int | None = None
    thresholds: tuple = (0.5, 0.1, 0.01)
    thresholds_absolute: tuple = ()
    thresholds_target: float = 0.0
    out_dir: str = ""

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.optimizer_kind not in ("adam", "sgd"):
            raise ValueError(f"optimizer.kind must be adam or sgd, got {self.optimizer_kind!r}")
        if self.schedule_warmup < 0:
            raise ValueError("schedule.warmup must be >= 0")
        if self.schedule_decay not in ("inverse-sqrt", "none"):
            raise ValueError(f"schedule.decay must be inverse-sqrt or none, got {self.schedule_decay!r}")
        if self.schedule_batch_scale < 0:
            raise ValueError("schedule.batch_scale must be >= 0")
        if self.comm_latency < 0:
            raise ValueError("comm.latency must be >= 0")
        if self.combine not in ("mean", "sum"):
            raise ValueError(f"combine must be mean or sum, got {self.combine!r}")
        if self.batch_budget < 1:
            raise ValueError("batch.budget must be >= 1")
        if self.batch_cost_max < 1:
            raise ValueError("batch.cost_max must be >= 1")
        if self.budget_updates < 1:
            raise ValueError("budget.updates must be >= 1")
        if self.budget_sim_time < 0:
            raise ValueError("budget.sim_time must be >= 0 (0 disables it)")
        if self.probe_samples < 1:
            raise ValueError("probe.samples must be >= 1")
        if self.parallel_time_scale <= 0:
            raise ValueError("parallel.time_scale must be > 0")
        if self.stats_warmup_pushes is not None and self.stats_warmup_pushes < 0:
            raise ValueError("stats.warmup_pushes must be >= 0")
        for f_ in self.thresholds:
            if not 0 < f_ <= 1:
                raise ValueError("thresholds fractions must be in (0, 1]")
        for a in self.thresholds_absolute:
            if not math.isfinite(a):
                raise ValueError("thresholds.absolute values must be finite")


def default_config(**updates) -> ExperimentConfig:
    """ExperimentConfig with defaults, overridden by keyword arguments
    (field names of ExperimentConfig)."""
    return replace(ExperimentConfig(), **updates)


# key -> (type tag, default-emitter). Type tags: int, float, bool, str,
# float_list. Defaults are taken from the dataclasses so the two never
# drift apart.
_SCHEMA = {
    "objective.kind": "str",
    "objective.dim": "int",
    "objective.cond": "float",
    "objective.noise_sigma": "float",
    "objective.theta_star_scale": "float",
    "objective.samples": "int",
    "objective.target_noise": "float",
    "objective.in_dim": "int",
    "objective.hidden": "int",
    "objective.classes": "int",
    "objective.spread": "float",
    "workers": "int",
    "strategy": "str",
    "strategy.kind": "str",
    "strategy.local": "int",
    "strategy.global": "int",
    "strategy.pull_every": "int",
    "optimizer.kind": "str",
    "optimizer.alpha": "float",
    "optimizer.beta1": "float",
    "optimizer.beta2": "float",
    "optimizer.epsilon": "float",
    "schedule.warmup": "int",
    "schedule.decay": "str",
    "schedule.batch_scale": "float",
    "compute.kind": "str",
    "compute.mean": "float",
    "compute.std": "float",
    "comm.latency": "float",
    "combine": "str",
    "batch.budget": "int",
    "batch.cost_max": "int",
    "budget.updates": "int",
    "budget.sim_time": "float",
    "seed": "int",
    "probe.seed": "int",
    "probe.samples": "int",
    "parallel": "bool",
    "parallel.time_scale": "float",
    "stats.warmup_pushes": "int",
    "thresholds": "float_list",
    "thresholds.absolute": "float_list",
    "thresholds.target": "float",
    "out_dir": "str",
}

_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _convert(key: str, raw: str, line: int):
    tag = _SCHEMA[key]
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            if raw.lower() not in _BOOL_WORDS:
                raise ValueError
            return _BOOL_WORDS[raw.lower()]
        if tag == "float_list":
            if not raw:
                return ()
            return tuple(float(x.strip()) for x in raw.split(","))
        return raw
    except ValueError:
        raise ConfigError(f"{key} expects a {tag} value, got {raw!r}", line) from None


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse a config document, apply documented defaults, validate.

    overrides, when given, maps keys to raw string values applied on top
    of the document (the CLI's --seed/--out-dir/--parallel flags).
    """
    values: dict[str, object] = {}
    seen: dict[str, int] = {}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("expected key = value", lineno)
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ConfigError(
                f"duplicate key {key!r} (first set on line {seen[key]})", lineno
            )
        seen[key] = lineno
        values[key] = _convert(key, raw, lineno)
    for key, raw in (overrides or {}).items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown override key {key!r}")
        # an override in one strategy style supersedes the other style
        if key == "strategy":
            for k in list(values):
                if k.startswith("strategy."):
                    del values[k]
        elif key.startswith("strategy."):
            values.pop("strategy", None)
        values[key] = _convert(key, str(raw), 0)
    return _assemble(values)


def _assemble(v: dict) -> ExperimentConfig:
    d = ExperimentConfig()  # defaults donor
    try:
        objective = ObjectiveSpec(
            kind=v.get("objective.kind", d.objective.kind),
            dim=v.get("objective.dim", d.objective.dim),
            cond=v.get("objective.cond", d.objective.cond),
            noise_sigma=v.get("objective.noise_sigma", d.objective.noise_sigma),
            theta_star_scale=v.get(
                "objective.theta_star_scale", d.objective.theta_star_scale
            ),
            samples=v.get("objective.samples", d.objective.samples),
            target_noise=v.get("objective.target_noise", d.objective.target_noise),
            in_dim=v.get("objective.in_dim", d.objective.in_dim),
            hidden=v.get("objective.hidden", d.objective.hidden),
            classes=v.get("objective.classes", d.objective.classes),
            spread=v.get("objective.spread", d.objective.spread),
        )
        component_keys = [
            k
            for k in ("strategy.kind", "strategy.local", "strategy.global", "strategy.pull_every")
            if k in v
        ]
        if "strategy" in v:
            # label form, e.g. "combined-2-2"; convenient for sweeps
            if component_keys:
                raise ValueError(
                    f"strategy (label form) conflicts with {component_keys[0]}; use one style"
                )
            strategy = Strategy.parse(v["strategy"])
        else:
            strategy = Strategy(
                kind=v.get("strategy.kind", "async"),
                local=v.get("strategy.local", 1),
                global_count=v.get("strategy.global", 1),
                pull_every=v.get("strategy.pull_every", 1),
            )
        adam = AdamConfig(
            alpha=v.get("optimizer.alpha", d.adam.alpha),
            beta1=v.get("optimizer.beta1", d.adam.beta1),
            beta2=v.get("optimizer.beta2", d.adam.beta2),
            epsilon=v.get("optimizer.epsilon", d.adam.epsilon),
        )
        compute = ComputeTimeModel(
            kind=v.get("compute.kind", d.compute.kind),
            mean=v.get("compute.mean", d.compute.mean),
            std=v.get("compute.std", d.compute.std),
        )
        return ExperimentConfig(
            objective=objective,
            workers=v.get("workers", d.workers),
            strategy=strategy,
            optimizer_kind=v.get("optimizer.kind", d.optimizer_kind),
            adam=adam,
            schedule_warmup=v.get("schedule.warmup", d.schedule_warmup),
            schedule_decay=v.get("schedule.decay", d.schedule_decay),
            schedule_batch_scale=v.get("schedule.batch_scale", d.schedule_batch_scale),
            compute=compute,
            comm_latency=v.get("comm.latency", d.comm_latency),
            combine=v.get("combine", d.combine),
            batch_budget=v.get("batch.budget", d.batch_budget),
            batch_cost_max=v.get("batch.cost_max", d.batch_cost_max),
            budget_updates=v.get("budget.updates", d.budget_updates),
            budget_sim_time=v.get("budget.sim_time", d.budget_sim_time),
            seed=v.get("seed", d.seed),
            probe_seed=v.get("probe.seed", d.probe_seed),
            probe_samples=v.get("probe.samples", d.probe_samples),
            parallel=v.get("parallel", d.parallel),
            parallel_time_scale=v.get("parallel.time_scale", d.parallel_time_scale),
            stats_warmup_pushes=v.get("stats.warmup_pushes", d.stats_warmup_pushes),
            thresholds=v.get("thresholds", d.thresholds),
            thresholds_absolute=v.get("thresholds.absolute", d.thresholds_absolute),
            thresholds_target=v.get("thresholds.target", d.thresholds_target),
            out_dir=v.get("out_dir", d.out_dir),
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(repr(float(x)) for x in value)
    return str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Emit a document that parse_config maps back to an equal config.
    Optional fields at their unset defaults (stats.warmup_pushes, empty
    threshold list, empty out_dir) are omitted."""
    o, s = cfg.objective, cfg.strategy
    pairs = [
        ("objective.kind", o.kind),
        ("objective.dim", o.dim),
        ("objective.cond", o.cond),
        ("objective.noise_sigma", o.noise_sigma),
        ("objective.theta_star_scale", o.theta_star_scale),
        ("objective.samples", o.samples),
        ("objective.target_noise", o.target_noise),
        ("objective.in_dim", o.in_dim),
        ("objective.hidden", o.hidden),
        ("objective.classes", o.classes),
        ("objective.spread", o.spread),
        ("workers", cfg.workers),
        ("strategy.kind", s.kind),
        ("strategy.local", s.local),
        ("strategy.global", s.global_count),
        ("strategy.pull_every", s.pull_every),
        ("optimizer.kind", cfg.optimizer_kind),
        ("optimizer.alpha", cfg.adam.alpha),
        ("optimizer.beta1", cfg.adam.beta1),
        ("optimizer.beta2", cfg.adam.beta2),
        ("optimizer.epsilon", cfg.adam.epsilon),
        ("schedule.warmup", cfg.schedule_warmup),
        ("schedule.decay", cfg.schedule_decay),
        ("schedule.batch_scale", cfg.schedule_batch_scale),
        ("compute.kind", cfg.compute.kind),
        ("compute.mean", cfg.compute.mean),
        ("compute.std", cfg.compute.std),
        ("comm.latency", cfg.comm_latency),
        ("combine", cfg.combine),
        ("batch.budget", cfg.batch_budget),
        ("batch.cost_max", cfg.batch_cost_max),
        ("budget.updates", cfg.budget_updates),
        ("budget.sim_time", cfg.budget_sim_time),
        ("seed", cfg.seed),
        ("probe.seed", cfg.probe_seed),
        ("probe.samples", cfg.probe_samples),
        ("parallel", cfg.parallel),
        ("parallel.time_scale", cfg.parallel_time_scale),
        ("thresholds", cfg.thresholds),
        ("thresholds.target", cfg.thresholds_target),
    ]
    if cfg.stats_warmup_pushes is not None:
        pairs.append(("stats.warmup_pushes", cfg.stats_warmup_pushes))
    if cfg.thresholds_absolute:
        pairs.append(("thresholds.absolute", cfg.thresholds_absolute))
    if cfg.out_dir:
        pairs.append(("out_dir", cfg.out_dir))
    return "".join(f"{k} = {_format(val)}\n" for k, val in pairs)
