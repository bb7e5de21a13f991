"""Personalized multi-tier federated learning, simulated deterministically.

A three-level training loop (devices, team servers, global server) built on
quadratic-penalty personalization, plus the oracles and bound checks that
certify its convergence behaviour at desk scale.
"""

from .baselines import FedAvgConfig, run_fedavg
from .data import (
    LabeledDataset,
    Partition,
    SyntheticSpec,
    gen_synthetic,
    load_idx_images,
    load_idx_labels,
    partition_non_iid,
    split_train_val,
)
from .engine import (
    Hyperparams,
    PermflConfig,
    RunResult,
    device_solve,
    device_step,
    exact_prox_run,
    global_aggregate,
    global_step,
    run_permfl,
    team_aggregate,
    team_step,
)
from .envelope import (
    ProxProblem,
    closed_form_prox,
    envelope_value,
    inexact_envelope_grad,
    prox_gd,
)
from .errors import (
    ConfigurationError,
    EvaluationError,
    FormatError,
    NumericError,
    PartitionError,
    PermflError,
    UnsupportedOperationError,
)
from .metrics import MetricsRecord, evaluate_gm, evaluate_pm, parse_dat, write_dat
from .models import (
    Batch,
    LossModel,
    MclrModel,
    MclrSpec,
    MlpModel,
    MlpSpec,
    QuadraticModel,
    QuadraticSpec,
    finite_diff_grad,
)
from .topology import (
    ParticipationMode,
    ParticipationPolicy,
    Topology,
    form_teams_by_label,
    form_teams_random,
    sample_round,
)
from .validate import (
    BoundReport,
    ConvexityConstants,
    check_nonconvex,
    check_strongly_convex,
    estimate_convexity_constants,
    mu_tilde_F,
    mu_tilde_f,
    suggest_inner_iters,
)

__version__ = "0.1.0"
