"""
Representation Report
Version: 1.0

Draws a (codes, factors) sample from a dataset through an encoder and
computes every disentanglement score in one pass.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np

from schemas import GbtConfig, MetricReport
from services.errors import ContractViolationError
from services.metrics.information import DEFAULT_BINS, discretize_codes, mutual_information_matrix
from services.metrics.scores import dci_scores, mig_score, modularity_from_mi, sap_score

logger = logging.getLogger(__name__)


def representation_sample(encoder, dataset, n: int, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior means and factor indices of n random records (all when n >= len)."""
    if len(dataset) == 0:
        raise ContractViolationError("cannot sample codes from an empty dataset")
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(len(dataset), size=min(n, len(dataset)), replace=False))
    codes = np.asarray(encoder.encode_means(dataset.images[rows]), dtype=np.float64)
    return codes, dataset.factors[rows]


def evaluate_representation(
    codes: np.ndarray,
    factors: np.ndarray,
    factor_names: Optional[Sequence[str]] = None,
    bins: int = DEFAULT_BINS,
    gbt_config: Optional[GbtConfig] = None,
    seed: int = 0,
) -> MetricReport:
    codes = np.asarray(codes, dtype=np.float64)
    factors = np.asarray(factors)
    names = list(factor_names) if factor_names is not None else [f"factor{k}" for k in range(factors.shape[1])]
    if len(names) != factors.shape[1]:
        raise ContractViolationError(f"{len(names)} factor names for {factors.shape[1]} factors")

    mi = mutual_information_matrix(discretize_codes(codes, bins), factors)
    mig = mig_score(codes, factors, bins, mi=mi)
    dci = dci_scores(codes, factors, gbt_config, seed=seed)
    sap = sap_score(codes, factors)
    modularity = modularity_from_mi(mi)

    report = MetricReport(
        mig=mig.score,
        dci_disentanglement=dci.disentanglement,
        dci_completeness=dci.completeness,
        dci_informativeness=dci.informativeness,
        sap=sap.score,
        modularity=modularity,
        factor_names=names,
        mig_gaps={name: (None if math.isnan(g) else float(g)) for name, g in zip(names, mig.gaps)},
        mutual_information=mi.tolist(),
        importance=dci.importance.tolist(),
        importance_factors=[names[k] for k in dci.factor_indices],
        num_samples=int(codes.shape[0]),
        bins=bins,
    )
    logger.info(
        f"Metrics on {codes.shape[0]} samples: MIG={report.mig:.3f} DCI={report.dci_disentanglement:.3f} "
        f"SAP={report.sap:.3f} modularity={report.modularity:.3f}"
    )
    return report
