"""Distributed online gradient descent with gradient tracking, and a
multi-agent meta-learner built on it."""
from .datasets import LabeledDataset, load_dataset, sample_batches
from .distributed import (
    ALGORITHMS,
    AgentState,
    RoundMetrics,
    RunResult,
    dogd_round,
    erm_minimizer,
    eta_bound,
    gt_round,
    ogd_round,
    run_distributed,
)
from .errors import (
    BadMagic,
    ConfigInvalid,
    DimensionMismatch,
    DogdlabError,
    DomainViolation,
    EmptyBatch,
    InsufficientData,
    InvariantViolation,
    IoError,
    NoConvergence,
    RetryExhausted,
    ShapeMismatch,
    StepSizeNonPositive,
    TruncatedFile,
)
from .harness import ExperimentConfig, emit_csv, run_experiment
from .losses import (
    LogisticBatch,
    LogisticLoss,
    RidgeLoss,
    RidgeSample,
    RidgeStream,
    bregman_l2,
    f_init,
    f_rate,
    gen_ridge_stream,
)
from .meta import MetaRunResult, Task, TaskStream, aruba_run, atar, gen_task_stream, maoml_run
from .oco import EwooLearner, OgdLearner, Projection, ewoo_step, ogd_step, within_task_run
from .topology import (
    Graph,
    WeightMatrix,
    build_complete_graph,
    build_random_graph,
    metropolis_weights,
    spectral_gap,
)

__version__ = "0.1.0"
