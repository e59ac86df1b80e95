"""
Sweep Report
Version: 1.0

Turns a record set into plot-ready tables:
    correlations    Spearman of {ELBO, recon loss, metrics} x {metrics, transfer} per supervision
    summaries       quantiles of every quantity per supervision (violin data)
    scatter         (ELBO, recon loss) vs (MIG, DCI) per model
    noise_effects   noise flag vs transfer error, with a paired sign test
    decomposition   per-factor transfer error by scenario, regressor and noise

Failed records are excluded. The tables are a pure function of the
record set: records are deduplicated by hash and sorted first.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Union

import pandas as pd

from schemas import ModelRecord, RegressorKind, Scenario, TransferReport
from services.downstream.decomposition import factor_decomposition
from services.errors import FormatError
from services.harness.stats import sign_test, spearman

logger = logging.getLogger(__name__)

MIN_GROUP_SIZE = 3
UNSUPERVISED_COLUMNS = ["elbo", "recon_loss"]
SCATTER_COLUMNS = ["elbo", "recon_loss", "mig", "dci"]
QUANTILES = (0.0, 0.25, 0.5, 0.75, 1.0)
PAIR_KEYS = ["supervision", "beta", "warmup_steps", "latent_dim", "seed"]
TRANSFER_PREFIX = "transfer:"


@dataclass
class AggregateReport:
    correlations: pd.DataFrame
    summaries: pd.DataFrame
    scatter: pd.DataFrame
    noise_effects: pd.DataFrame
    decomposition: pd.DataFrame
    skipped_groups: List[str] = field(default_factory=list)


def _completed(records: Iterable[ModelRecord]) -> List[ModelRecord]:
    by_hash: Dict[str, ModelRecord] = {}
    for record in records:
        if record.status == "completed":
            by_hash[record.config_hash] = record
    return [by_hash[h] for h in sorted(by_hash)]


def records_frame(records: Iterable[ModelRecord]) -> pd.DataFrame:
    """One row per completed model; metric columns by name, transfer columns prefixed."""
    rows = []
    for record in _completed(records):
        row = {
            "config_hash": record.config_hash,
            "seed": record.seed,
            "supervision": record.supervision.value,
            "beta": record.beta,
            "warmup_steps": record.warmup_steps,
            "latent_dim": record.latent_dim,
            "noise_enabled": record.noise_enabled,
            "elbo": record.elbo,
            "recon_loss": record.recon_loss,
            "kl": record.kl,
        }
        row.update(record.metrics)
        row.update({f"{TRANSFER_PREFIX}{key}": value for key, value in record.transfer.items()})
        rows.append(row)
    return pd.DataFrame(rows)


def _metric_columns(frame: pd.DataFrame) -> List[str]:
    fixed = set(PAIR_KEYS) | {"config_hash", "noise_enabled", "elbo", "recon_loss", "kl"}
    return sorted(c for c in frame.columns if c not in fixed and not c.startswith(TRANSFER_PREFIX))


def _transfer_columns(frame: pd.DataFrame) -> List[str]:
    return sorted(c for c in frame.columns if c.startswith(TRANSFER_PREFIX))


# ============================================================================
# TABLES
# ============================================================================

def correlation_table(frame: pd.DataFrame, skipped: List[str]) -> pd.DataFrame:
    rows = []
    metrics = _metric_columns(frame)
    targets = metrics + _transfer_columns(frame)
    for supervision, group in frame.groupby("supervision", sort=True):
        if len(group) < MIN_GROUP_SIZE:
            skipped.append(str(supervision))
            logger.warning(f"Report: supervision group '{supervision}' has {len(group)} records, skipped")
            continue
        for row_name in UNSUPERVISED_COLUMNS + metrics:
            for column in targets:
                if column == row_name:
                    continue
                rho = spearman(group[row_name].to_numpy(), group[column].to_numpy())
                rows.append({
                    "supervision": supervision,
                    "row": row_name,
                    "column": column.removeprefix(TRANSFER_PREFIX),
                    "rho": rho,
                    "n": len(group),
                })
    return pd.DataFrame(rows, columns=["supervision", "row", "column", "rho", "n"])


def summary_table(frame: pd.DataFrame) -> pd.DataFrame:
    rows = []
    quantities = UNSUPERVISED_COLUMNS + ["kl"] + _metric_columns(frame) + _transfer_columns(frame)
    for supervision, group in frame.groupby("supervision", sort=True):
        for quantity in quantities:
            values = group[quantity].dropna()
            if values.empty:
                continue
            row = {"supervision": supervision, "quantity": quantity.removeprefix(TRANSFER_PREFIX)}
            for q in QUANTILES:
                row[f"q{int(q * 100)}"] = float(values.quantile(q))
            row["mean"] = float(values.mean())
            row["count"] = int(values.size)
            rows.append(row)
    return pd.DataFrame(rows)


def scatter_table(frame: pd.DataFrame) -> pd.DataFrame:
    columns = ["config_hash", "supervision", "noise_enabled"] + [c for c in SCATTER_COLUMNS if c in frame.columns]
    return frame[columns].reset_index(drop=True)


def noise_effects(records: Iterable[ModelRecord]) -> pd.DataFrame:
    """
    Effect of input noise on every transfer column.

    rho is the Spearman correlation between the noise flag and the error
    over all models; the sign test pairs noise on/off models that agree on
    every other hyperparameter and the seed (noise_better counts pairs
    where noise lowered the error).
    """
    frame = records_frame(records)
    rows = []
    if frame.empty:
        return pd.DataFrame(rows)
    for column in _transfer_columns(frame):
        data = frame[PAIR_KEYS + ["noise_enabled", column]].dropna()
        rho = spearman(data["noise_enabled"].astype(float), data[column]) if len(data) >= 3 else math.nan
        on = data[data["noise_enabled"]].set_index(PAIR_KEYS)[column]
        off = data[~data["noise_enabled"]].set_index(PAIR_KEYS)[column]
        paired = pd.concat([on.rename("on"), off.rename("off")], axis=1, join="inner")
        test = sign_test((paired["off"] - paired["on"]).to_numpy())
        rows.append({
            "transfer": column.removeprefix(TRANSFER_PREFIX),
            "rho": rho,
            "pairs": test.pairs,
            "noise_better": test.positives,
            "noise_worse": test.negatives,
            "p_value": test.p_value,
            "mean_on": float(paired["on"].mean()) if len(paired) else math.nan,
            "mean_off": float(paired["off"].mean()) if len(paired) else math.nan,
        })
    return pd.DataFrame(rows)


def transfer_reports(records: Iterable[ModelRecord]) -> List[TransferReport]:
    reports = []
    for record in _completed(records):
        for key, per_factor in sorted(record.transfer_per_factor.items()):
            scenario, regressor = key.split("/")
            reports.append(TransferReport.from_errors(
                record.config_hash,
                Scenario.parse(scenario),
                RegressorKind(regressor),
                per_factor,
                noise_enabled=record.noise_enabled,
            ))
    return reports


def aggregate_report(records: Iterable[ModelRecord]) -> AggregateReport:
    records = list(records)
    frame = records_frame(records)
    skipped: List[str] = []
    if frame.empty:
        logger.warning("Report: no completed records")
        empty = pd.DataFrame()
        return AggregateReport(empty, empty, empty, empty, empty, skipped)
    reports = transfer_reports(records)
    return AggregateReport(
        correlations=correlation_table(frame, skipped),
        summaries=summary_table(frame),
        scatter=scatter_table(frame),
        noise_effects=noise_effects(records),
        decomposition=factor_decomposition(reports) if reports else pd.DataFrame(),
        skipped_groups=skipped,
    )


def write_report(report: AggregateReport, out_dir: Union[str, Path]) -> List[Path]:
    out_dir = Path(out_dir)
    tables = {
        "correlations.csv": report.correlations,
        "summaries.csv": report.summaries,
        "scatter.csv": report.scatter,
        "noise_effects.csv": report.noise_effects,
        "decomposition.csv": report.decomposition,
    }
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, table in tables.items():
            path = out_dir / name
            table.to_csv(path, index=False)
            written.append(path)
    except OSError as e:
        raise FormatError(f"cannot write report: {e}", str(out_dir)) from e
    logger.info(f"Wrote {len(written)} report tables to {out_dir}")
    return written
