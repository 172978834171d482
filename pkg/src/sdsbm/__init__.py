"""Dynamic mixed-membership block models for temporal labeled interaction data.

Per-epoch membership and block-interaction simplices fitted by EM, coupled
across epochs by a Dirichlet prior whose concentration follows a
count-weighted kernel average of the neighbouring epochs.  Includes synthetic
generators with planted trajectories, a held-out evaluation harness, event
file ingestion, and model archives.
"""

from .archive import ModelArchive
from .data import Dataset, Observation
from .em import FitConfig, FitReport, fit, m_step_p, m_step_theta, responsibilities
from .errors import ContractError, DegenerateParameterError, IngestError, SdsbmError
from .evaluation import (
    DEFAULT_BETA_GRID,
    EvalResult,
    FittedModel,
    ScoreTable,
    SplitPlan,
    average_precision,
    coverage_error_normalized,
    cross_validate,
    flow_matrix,
    membership_flows,
    rmse_aligned,
    roc_auc,
    score_test_set,
    write_results,
)
from .ingest import IngestResult, ingest
from .model import (
    BlockTensor,
    DegenerateParametersWarning,
    MembershipTensor,
    edge_probability,
    log_posterior,
)
from .prior import (
    DirichletMode,
    NeighbourAverage,
    PriorConfig,
    TemporalCoupling,
    concentration,
    dirichlet_mode,
    kernel_weight,
    neighbour_average,
)
from .synthetic import (
    GroundTruth,
    PatternSpec,
    block_matrix,
    even_schedule,
    generate_memberships,
    mean_entropy,
    sample_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "BlockTensor",
    "ContractError",
    "DEFAULT_BETA_GRID",
    "Dataset",
    "DegenerateParameterError",
    "DegenerateParametersWarning",
    "DirichletMode",
    "EvalResult",
    "FitConfig",
    "FitReport",
    "FittedModel",
    "GroundTruth",
    "IngestError",
    "IngestResult",
    "MembershipTensor",
    "ModelArchive",
    "NeighbourAverage",
    "Observation",
    "PatternSpec",
    "PriorConfig",
    "ScoreTable",
    "SdsbmError",
    "SplitPlan",
    "TemporalCoupling",
    "average_precision",
    "block_matrix",
    "concentration",
    "coverage_error_normalized",
    "cross_validate",
    "dirichlet_mode",
    "edge_probability",
    "even_schedule",
    "fit",
    "flow_matrix",
    "generate_memberships",
    "ingest",
    "kernel_weight",
    "log_posterior",
    "m_step_p",
    "m_step_theta",
    "mean_entropy",
    "membership_flows",
    "neighbour_average",
    "responsibilities",
    "rmse_aligned",
    "roc_auc",
    "sample_dataset",
    "score_test_set",
    "write_results",
]
