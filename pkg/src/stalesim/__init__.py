"""Deterministic parameter-server SGD simulator.

Study gradient staleness, Adam's behavior under noisy and stale gradients,
and local/global gradient accumulation on toy objectives, with a
reproducible discrete-event scheduler and an optional genuinely threaded
executor over the same state machine.
"""

from .config import (
    ConfigError,
    ExperimentConfig,
    ObjectiveSpec,
    default_config,
    parse_config,
    serialize_config,
)
from .core import ComputeTimeModel, LrSchedule, RngStream, sample_compute_time
from .harness import (
    SummaryReport,
    run_experiment,
    selftest_adam_table,
    selftest_gradients,
    selftest_staleness_table,
    summarize,
    sweep,
)
from .models import (
    Batch,
    LinearRegression,
    Mlp,
    Objective,
    Quadratic,
    Sample,
    dynamic_batcher,
    finite_diff_grad,
)
from .optim import (
    AdamConfig,
    AdamState,
    GradStreamStats,
    adam_direction,
    adam_step,
    predicted_efficiency,
    sgd_step,
)
from .simulator import (
    DivergenceError,
    GradientMsg,
    RunTrace,
    Strategy,
    TraceRow,
    run_parallel,
    run_simulation,
    staleness_summary,
)

__version__ = "0.1.0"

__all__ = [
    "AdamConfig",
    "AdamState",
    "Batch",
    "ComputeTimeModel",
    "ConfigError",
    "DivergenceError",
    "ExperimentConfig",
    "GradStreamStats",
    "GradientMsg",
    "LinearRegression",
    "LrSchedule",
    "Mlp",
    "Objective",
    "ObjectiveSpec",
    "Quadratic",
    "RngStream",
    "RunTrace",
    "Sample",
    "Strategy",
    "SummaryReport",
    "TraceRow",
    "adam_direction",
    "adam_step",
    "default_config",
    "dynamic_batcher",
    "finite_diff_grad",
    "parse_config",
    "predicted_efficiency",
    "run_experiment",
    "run_parallel",
    "run_simulation",
    "sample_compute_time",
    "selftest_adam_table",
    "selftest_gradients",
    "selftest_staleness_table",
    "serialize_config",
    "sgd_step",
    "staleness_summary",
    "summarize",
    "sweep",
    "__version__",
]
