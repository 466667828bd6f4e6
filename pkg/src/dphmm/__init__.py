"""Differentially private release of per-timestep answers over a Markov model."""

from .errors import (
    CannotProtectError,
    DimensionMismatchError,
    DPHMMError,
    ImpossibleObservationError,
    InvalidBeliefError,
    InvalidModelError,
    MissingInputError,
    ModelInconsistencyError,
    UnsupportedDimensionError,
)
from .geometry import (
    DifferenceSet,
    MeasurementQuery,
    Polytope,
    contains,
    difference_set,
    hull_measure,
    hull_of_points,
    k_norm,
    sample_uniform,
    sensitivity_hull,
)
from .harness import (
    ExperimentConfig,
    MetricsRow,
    generate_grid_world,
    read_metrics,
    run_experiment,
    smooth,
    write_metrics,
)
from .markov import (
    BeliefState,
    Constraint,
    MarkovModel,
    extract_constraint,
    learn_model,
    posterior_update,
    propagate,
)
from .mechanisms import (
    MechanismConfig,
    NoisyAnswer,
    cross_polytope,
    knorm_density,
    knorm_sample,
    l1_sensitivity,
    laplace_density,
    laplace_sample,
)
from .policy import GraphSpec, PolicyGraph, build_policy, restrict
from .protection import (
    ProtectionReport,
    degree_of_protection,
    greedy_repair,
    min_repair_2d,
    protection_report,
)
from .release import (
    AuditResult,
    PrivacyLedger,
    ReleaseSession,
    audit_blowfish_database,
    compose,
    constrained_dp_factor,
    release_step,
)

__version__ = "0.1.0"
