#!/usr/bin/env python3
"""
DESK ACCEPTANCE RUN
===================
Generates the desk datasets, runs a small sweep and prints the
sign-and-threshold checks:

    feasibility   feasible fraction in (0.5, 1), joint 2/3 MI > 0.01 nats
    weak > unsup  median DCI of weakly supervised models >= 0.7 and above unsupervised
    selection     Spearman(ELBO, DCI) > 0.3 among weakly supervised models
    OOD1          Spearman(DCI, GBT transfer error) < -0.3 in every OOD1 scenario
    noise         noise lowers OOD2 error for most pairs, no OOD1 effect (p > 0.05)

Usage:
    python scripts/train_and_evaluate.py [--out runs/desk] [--workers 4] [--quick]
"""

import argparse
import logging
import os
import statistics
import sys
from typing import Dict, List, Tuple

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from pathlib import Path

from config import load_lab_config
from schemas import ENCODER_TRAIN_HUES, HELD_OUT_HUES, ModelRecord, Scenario, Supervision
from services.harness.report import aggregate_report, noise_effects, write_report
from services.harness.stats import spearman
from services.harness.sweep import SweepData, run_sweep
from services.scene.dataset_io import write_dataset
from services.scene.factors import HUE_FACTOR
from services.scene.feasibility import enumerate_feasible, pair_mutual_information
from services.scene.sampler import generate_records

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
    handlers=[logging.StreamHandler(sys.stdout)]
)
logger = logging.getLogger("desk")


def print_header(text: str):
    """Print a formatted header."""
    print("\n" + "=" * 70)
    print(f"  {text}")
    print("=" * 70)


def print_check(name: str, passed: bool, detail: str):
    print(f"[{'PASS' if passed else 'FAIL'}] {name:28} {detail}")


# ============================================================================
# STAGES
# ============================================================================

def generate_datasets(config, out: Path, count: int, workers: int) -> SweepData:
    spec = config.factor_spec()
    train_hues = spec.restricted(HUE_FACTOR, spec.hue_indices(ENCODER_TRAIN_HUES))
    held_out = spec.restricted(HUE_FACTOR, spec.hue_indices(HELD_OUT_HUES))
    jobs = {
        "observations": dict(count=count, seed=0, allowed=train_hues),
        "pairs": dict(count=count // 2, seed=1, allowed=train_hues, pairs=True),
        "held_out": dict(count=max(count // 10, 1000), seed=2, allowed=held_out),
        "shifted": dict(count=max(count // 10, 1000), seed=3, allowed=train_hues, shift=config.shift),
    }
    paths = {}
    for name, kwargs in jobs.items():
        path = out / f"{name}.dlds"
        paths[name] = str(path)
        if path.exists():
            print(f"      {name}: reusing {path}")
            continue
        dataset = generate_records(spec, config.scene, workers=workers, **kwargs)
        write_dataset(dataset, spec, path, seed=kwargs["seed"], resolution=config.scene.resolution)
    return SweepData(**paths)


def check_feasibility(config) -> List[Tuple[str, bool, str]]:
    spec = config.factor_spec()
    full = enumerate_feasible(spec, config.scene)
    pair = enumerate_feasible(spec, config.scene, pair=("middle_joint", "lower_joint"))
    mi = pair_mutual_information(pair.density)
    return [
        ("feasible fraction", 0.5 < full.fraction < 1.0, f"{full.fraction:.3f}"),
        ("joint 2/3 MI", mi > 0.01, f"{mi:.4f} nats"),
    ]


def _column(records: List[ModelRecord], supervision: Supervision, key: str) -> List[float]:
    return [r.metrics[key] for r in records if r.supervision == supervision and r.status == "completed"]


def check_records(records: List[ModelRecord]) -> List[Tuple[str, bool, str]]:
    checks = []
    weak = [r for r in records if r.status == "completed" and r.supervision == Supervision.WEAK]
    weak_dci = _column(records, Supervision.WEAK, "dci")
    unsup_dci = _column(records, Supervision.UNSUPERVISED, "dci")
    if weak_dci and unsup_dci:
        med_w, med_u = statistics.median(weak_dci), statistics.median(unsup_dci)
        checks.append(("weak supervision DCI", med_w >= 0.7 and med_w > med_u, f"{med_w:.3f} vs {med_u:.3f}"))

    if len(weak) >= 3:
        rho = spearman([r.elbo for r in weak], [r.metrics["dci"] for r in weak])
        checks.append(("ELBO vs DCI (weak)", rho > 0.3, f"rho={rho:.3f}"))

    completed = [r for r in records if r.status == "completed"]
    if len(completed) >= 3:
        for scenario in (Scenario.OOD1_A, Scenario.OOD1_B, Scenario.OOD1_C):
            for regressor in ("gbt", "mlp"):
                key = f"{scenario.slug}/{regressor}"
                rho = spearman([r.metrics["dci"] for r in completed], [r.transfer[key] for r in completed])
                if regressor == "gbt":
                    checks.append((f"DCI vs {key}", rho < -0.3, f"rho={rho:.3f}"))
                else:
                    print(f"[INFO] {'DCI vs ' + key:28} rho={rho:.3f} (sign only)")

    effects = noise_effects(records)
    if not effects.empty:
        by_key: Dict[str, dict] = {row["transfer"]: row for row in effects.to_dict("records")}
        for key, row in sorted(by_key.items()):
            if key.startswith("ood2"):
                helped = row["noise_better"] > row["noise_worse"] and row["mean_on"] < row["mean_off"]
                checks.append((f"noise on {key}", helped, f"{row['noise_better']}/{row['pairs']} pairs better"))
            else:
                checks.append((f"no noise effect {key}", row["p_value"] > 0.05, f"p={row['p_value']:.3f}"))
    return checks


def main() -> int:
    parser = argparse.ArgumentParser(description="Desk-scale acceptance run")
    parser.add_argument("--config", help="INI config (sweep, train, model sections)")
    parser.add_argument("--out", default="runs/desk")
    parser.add_argument("--count", type=int, default=50000)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--quick", action="store_true", help="tiny run to smoke-test the pipeline")
    args = parser.parse_args()

    config = load_lab_config(args.config)
    if args.quick:
        config.sweep = config.sweep.model_copy(update={
            "betas": [1.0], "warmup_steps": [0], "latent_dims": [10], "seeds": [0],
            "train": config.sweep.train.model_copy(update={"total_steps": 200, "log_interval": 50}),
            "metric_samples": 500, "transfer_train_size": 500, "transfer_eval_size": 250,
            "mlp": config.sweep.mlp.model_copy(update={"epochs": 2}),
        })
        args.count = min(args.count, 2000)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    print_header("DATASET STRUCTURE")
    for check in check_feasibility(config):
        print_check(*check)

    print_header("GENERATING DATASETS")
    data = generate_datasets(config, out, args.count, args.workers)

    print_header(f"SWEEP ({config.sweep.grid_size} models, {args.workers} workers)")
    records = run_sweep(
        config.sweep, data, out / "records.jsonl",
        workers=args.workers, scene=config.scene, shift=config.shift, artifacts=out / "models",
    )
    write_report(aggregate_report(records), out / "report")

    print_header("ACCEPTANCE CHECKS")
    checks = check_records(records)
    for check in checks:
        print_check(*check)
    failed = [name for name, passed, _ in checks if not passed]
    print(f"\n{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
