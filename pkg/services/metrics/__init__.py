"""
Disentanglement metrics.
"""

from services.metrics.information import (
    discrete_entropy,
    discrete_mutual_information,
    discretize_codes,
    mutual_information_matrix,
)
from services.metrics.report import evaluate_representation, representation_sample
from services.metrics.scores import (
    dci_from_importance,
    dci_scores,
    mig_score,
    modularity_from_mi,
    modularity_score,
    sap_score,
)

__all__ = [
    "dci_from_importance",
    "dci_scores",
    "discrete_entropy",
    "discrete_mutual_information",
    "discretize_codes",
    "evaluate_representation",
    "mig_score",
    "modularity_from_mi",
    "modularity_score",
    "mutual_information_matrix",
    "representation_sample",
    "sap_score",
]
