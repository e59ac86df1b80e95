"""
Experiment harness: sweeps, record files, rank statistics and reports.
"""

from services.harness.records import RecordStore
from services.harness.report import AggregateReport, aggregate_report, noise_effects, write_report
from services.harness.stats import SignTestResult, sign_test, spearman
from services.harness.sweep import SweepData, run_sweep

__all__ = [
    "AggregateReport",
    "RecordStore",
    "SignTestResult",
    "SweepData",
    "aggregate_report",
    "noise_effects",
    "run_sweep",
    "sign_test",
    "spearman",
    "write_report",
]
