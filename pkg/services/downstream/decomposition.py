"""
Factor Decomposition
Version: 1.0

Per-factor transfer error grouped by (scenario, regressor, noise flag):
mean and population standard deviation over models, exported as CSV.
"""

from pathlib import Path
from typing import Iterable, Union

import pandas as pd

from schemas import TransferReport
from services.errors import ContractViolationError, FormatError

DECOMPOSITION_COLUMNS = ["scenario", "regressor", "noise_enabled", "factor", "mean_mae", "std_mae", "count"]


def factor_decomposition(reports: Iterable[TransferReport]) -> pd.DataFrame:
    rows = [
        {
            "scenario": report.scenario.value,
            "regressor": report.regressor.value,
            "noise_enabled": report.noise_enabled,
            "factor": factor,
            "mae": mae,
        }
        for report in reports
        for factor, mae in report.per_factor.items()
    ]
    if not rows:
        raise ContractViolationError("factor decomposition needs at least one report")
    frame = pd.DataFrame(rows)
    grouped = frame.groupby(["scenario", "regressor", "noise_enabled", "factor"], sort=True)["mae"]
    table = grouped.agg(mean_mae="mean", std_mae=lambda s: s.std(ddof=0), count="size").reset_index()
    return table[DECOMPOSITION_COLUMNS]


def write_decomposition(table: pd.DataFrame, path: Union[str, Path]) -> None:
    try:
        table.to_csv(path, index=False)
    except OSError as e:
        raise FormatError(f"cannot write decomposition: {e}", str(path)) from e
