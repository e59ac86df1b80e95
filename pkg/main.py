"""
disentlab - Command Line Entry Point
Version: 1.0

Subcommands:
    generate       render a dataset (observations or weak-supervision pairs)
    density        feasible-count table of two factors (CSV)
    train          train one beta-VAE, write checkpoint and curve
    eval-metrics   disentanglement scores of a checkpoint
    eval-transfer  one OOD scenario with one regressor
    sweep          train and evaluate a hyperparameter grid
    report         correlation tables and plot data from sweep records
    traverse       latent traversal grid (.npy)
    sample         prior samples (.npy)
    reconstruct    input reconstructions (.npy)
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

# Configure logging FIRST
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
    handlers=[logging.StreamHandler(sys.stdout)]
)

logger = logging.getLogger(__name__)

from config import LabConfig, get_settings, load_lab_config
from schemas import RegressorKind, Scenario, Supervision
from services.downstream.transfer import TransferDataSource, evaluate_transfer
from services.errors import LabError
from services.harness.records import RecordStore
from services.harness.report import aggregate_report, write_report
from services.harness.sweep import SweepData, run_sweep
from services.metrics.report import evaluate_representation, representation_sample
from services.scene.dataset_io import load_dataset, write_dataset
from services.scene.factors import HUE_FACTOR
from services.scene.feasibility import enumerate_feasible, feasibility_density, pair_mutual_information
from services.scene.sampler import generate_records
from services.serialization import stable_hash, write_json
from services.vae.checkpoint import load_checkpoint, save_checkpoint
from services.vae.trainer import train

settings = get_settings()
logging.getLogger().setLevel(settings.DISENTLAB_LOG_LEVEL)


def data_path(arg: str) -> Path:
    """Paths that do not exist as given are looked up under DISENTLAB_DATA_DIR."""
    path = Path(arg)
    if path.is_absolute() or path.exists():
        return path
    return settings.data_dir / path


def _csv_floats(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    return [float(part) for part in text.split(",") if part.strip()]


def _csv_ints(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    return [int(part) for part in text.split(",") if part.strip()]


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_generate(args, config: LabConfig) -> None:
    spec = config.factor_spec()
    gen = config.generate
    count = args.count if args.count is not None else gen.count
    seed = args.seed if args.seed is not None else gen.seed
    pairs = args.pairs or gen.pairs
    hues = _csv_floats(args.hues) or gen.hues
    workers = args.workers or gen.workers
    allowed = spec.restricted(HUE_FACTOR, spec.hue_indices(hues)) if hues else None
    shift = config.shift if args.shift else None

    dataset = generate_records(
        spec, config.scene, count, seed=seed, pairs=pairs, shift=shift,
        allowed=allowed, shard_size=gen.shard_size, workers=workers,
    )
    extra = {"hues": hues, "shift": shift, "scene": config.scene}
    write_dataset(
        dataset, spec, data_path(args.out), seed=seed,
        config_hash=stable_hash({"scene": config.scene, "spec": spec, "shift": shift, "hues": hues}),
        resolution=config.scene.resolution, extra=extra,
    )
    if pairs:
        logger.info(f"Changed-factor histogram: {np.bincount(dataset.changed, minlength=spec.num_factors).tolist()}")


def cmd_density(args, config: LabConfig) -> None:
    spec = config.factor_spec()
    fixed = {}
    for item in args.fix or []:
        name, _, index = item.partition("=")
        fixed[name] = int(index)
    density = feasibility_density(spec, config.scene, args.a, args.b, fixed=fixed)
    frame = pd.DataFrame(
        density,
        index=pd.Index(spec.factor(args.a).values(), name=args.a),
        columns=pd.Index(spec.factor(args.b).values(), name=args.b),
    )
    frame.to_csv(args.out)
    logger.info(f"Mutual information {args.a}/{args.b}: {pair_mutual_information(density):.4f} nats")
    if not fixed:
        summary = enumerate_feasible(spec, config.scene)
        logger.info(f"Feasible fraction of the full grid: {summary.fraction:.4f}")


def cmd_train(args, config: LabConfig) -> None:
    dataset = load_dataset(data_path(args.data))
    train_config = config.train.model_copy(update={"seed": args.seed}) if args.seed is not None else config.train
    model_config = config.model
    if args.supervision:
        model_config = model_config.model_copy(update={"supervision": Supervision(args.supervision)})
    result = train(dataset, model_config, train_config, config.noise)
    out = Path(args.out)
    save_checkpoint(out / "model.ckpt", result.model, train_config, config.noise, result.final_step)
    result.curve.to_csv(out / "curve.csv", index=False)
    logger.info(f"Training curve written to {out / 'curve.csv'}")


def cmd_eval_metrics(args, config: LabConfig) -> None:
    checkpoint = load_checkpoint(args.checkpoint)
    dataset = load_dataset(data_path(args.data))
    codes, factors = representation_sample(checkpoint.model, dataset, args.n, seed=args.seed)
    report = evaluate_representation(
        codes, factors, dataset.spec.names, bins=args.bins, gbt_config=config.gbt, seed=args.seed
    )
    write_json(args.out, report)


def cmd_eval_transfer(args, config: LabConfig) -> None:
    checkpoint = load_checkpoint(args.checkpoint)
    source = TransferDataSource(
        load_dataset(data_path(args.data)),
        scene=config.scene,
        shift=config.shift,
        held_out=load_dataset(data_path(args.held_out)) if args.held_out else None,
        shifted=load_dataset(data_path(args.shifted)) if args.shifted else None,
        seed=args.seed,
        pool_size=args.eval_size,
    )
    split = source.split(Scenario.parse(args.scenario), train_size=args.train_size, eval_size=args.eval_size)
    report = evaluate_transfer(
        checkpoint.model, split, RegressorKind(args.regressor), source,
        model_id=Path(args.checkpoint).stem,
        noise_enabled=checkpoint.model.config.noise_enabled,
        gbt_config=config.gbt,
        mlp_config=config.mlp,
    )
    write_json(args.out, report)


def cmd_sweep(args, config: LabConfig) -> None:
    data = SweepData(
        observations=str(data_path(args.data)),
        pairs=str(data_path(args.pairs)) if args.pairs else None,
        held_out=str(data_path(args.held_out)) if args.held_out else None,
        shifted=str(data_path(args.shifted)) if args.shifted else None,
    )
    records = run_sweep(
        config.sweep, data, args.records,
        workers=args.workers or settings.DISENTLAB_WORKERS,
        scene=config.scene,
        shift=config.shift,
        artifacts=args.artifacts,
    )
    failed = sum(1 for r in records if r.status != "completed")
    logger.info(f"Sweep finished: {len(records)} records, {failed} failed")


def cmd_report(args, config: LabConfig) -> None:
    report = aggregate_report(RecordStore(args.records).latest())
    write_report(report, args.out)
    if report.skipped_groups:
        logger.warning(f"Groups skipped for size: {report.skipped_groups}")


def cmd_traverse(args, config: LabConfig) -> None:
    model = load_checkpoint(args.checkpoint).model
    dataset = load_dataset(data_path(args.data))
    grid = model.latent_traversal(
        dataset.images[args.index], dims=_csv_ints(args.dims), values_per_dim=args.values, span=args.span
    )
    np.save(args.out, grid)
    logger.info(f"Traversal grid {grid.shape} written to {args.out}")


def cmd_sample(args, config: LabConfig) -> None:
    model = load_checkpoint(args.checkpoint).model
    samples = model.sample_from_prior(args.n, args.seed)
    np.save(args.out, samples)
    logger.info(f"{args.n} samples written to {args.out}")


def cmd_reconstruct(args, config: LabConfig) -> None:
    model = load_checkpoint(args.checkpoint).model
    dataset = load_dataset(data_path(args.data))
    images = dataset.images[:args.n]
    np.save(args.out, np.stack([images.astype(np.float32) / 255.0, model.reconstruct(images)], axis=1))
    logger.info(f"{len(images)} (input, reconstruction) pairs written to {args.out}")


# ============================================================================
# PARSER
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="disentlab", description=__doc__.split("\n\n")[0].strip())
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (defaults for every omitted section)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="render a dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, help="observations, or pairs with --pairs")
    p.add_argument("--seed", type=int)
    p.add_argument("--pairs", action="store_true")
    p.add_argument("--hues", help="comma-separated cube hues to restrict to (degrees)")
    p.add_argument("--shift", action="store_true", help="render through the domain shift")
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("density", parents=[common], help="feasible-count table of two factors")
    p.add_argument("--a", default="middle_joint")
    p.add_argument("--b", default="lower_joint")
    p.add_argument("--fix", action="append", help="name=index slice, repeatable")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_density)

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--supervision", choices=[s.value for s in Supervision])
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval-metrics", parents=[common], help="disentanglement scores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval_metrics)

    p = sub.add_parser("eval-transfer", parents=[common], help="one OOD transfer scenario")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scenario", required=True, choices=[s.slug for s in Scenario] + [s.value for s in Scenario])
    p.add_argument("--regressor", default="gbt", choices=[r.value for r in RegressorKind])
    p.add_argument("--held-out", dest="held_out")
    p.add_argument("--shifted")
    p.add_argument("--train-size", dest="train_size", type=int, default=10000)
    p.add_argument("--eval-size", dest="eval_size", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval_transfer)

    p = sub.add_parser("sweep", parents=[common], help="train and evaluate a grid")
    p.add_argument("--data", required=True)
    p.add_argument("--pairs")
    p.add_argument("--held-out", dest="held_out")
    p.add_argument("--shifted")
    p.add_argument("--records", required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--artifacts")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="tables from sweep records")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("traverse", parents=[common], help="latent traversal grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--dims")
    p.add_argument("--values", type=int, default=7)
    p.add_argument("--span", type=float, default=2.0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_traverse)

    p = sub.add_parser("sample", parents=[common], help="prior samples")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("reconstruct", parents=[common], help="input reconstructions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_reconstruct)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_lab_config(args.config)
        args.handler(args, config)
    except LabError as e:
        logger.error(f"{args.command} failed: {e}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
