"""
Downstream regressors, OOD splits and transfer scoring.
"""

from services.downstream.decomposition import factor_decomposition, write_decomposition
from services.downstream.gbt import GbtModel, gbt_fit, gbt_importance, gbt_predict
from services.downstream.mlp import MlpModel, mlp_fit, mlp_predict
from services.downstream.splits import build_ood_split
from services.downstream.transfer import (
    CodeCache,
    TransferDataSource,
    evaluate_all_transfers,
    evaluate_transfer,
    make_regressor,
    transfer_errors,
)

__all__ = [
    "CodeCache",
    "GbtModel",
    "MlpModel",
    "TransferDataSource",
    "build_ood_split",
    "evaluate_all_transfers",
    "evaluate_transfer",
    "factor_decomposition",
    "gbt_fit",
    "gbt_importance",
    "gbt_predict",
    "make_regressor",
    "mlp_fit",
    "mlp_predict",
    "transfer_errors",
    "write_decomposition",
]
