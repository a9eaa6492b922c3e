"""Hierarchical multi-granularity classification with exact tree marginals."""

__version__ = "0.1.0"

from .estimator import HierarchicalResidualClassifier
from .inference import batch_marginals, log_partition, marginals, row_log_scores
from .loss import ce_loss, combinatorial_loss, hier_loss, total_loss
from .statespace import brute_force_state_space, build_state_space, satisfies_constraints
from .taxonomy import Taxonomy, load_taxonomy, parse_taxonomy

__all__ = [
    "HierarchicalResidualClassifier",
    "Taxonomy",
    "batch_marginals",
    "brute_force_state_space",
    "build_state_space",
    "ce_loss",
    "combinatorial_loss",
    "hier_loss",
    "load_taxonomy",
    "log_partition",
    "marginals",
    "parse_taxonomy",
    "row_log_scores",
    "satisfies_constraints",
    "total_loss",
]
