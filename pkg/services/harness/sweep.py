"""
Sweep Runner
Version: 1.0

Trains and evaluates every grid point of a SweepSpec:
    train -> beta=1 ELBO -> disentanglement metrics -> 5 scenarios x 2 regressors
Jobs run in a process pool behind an asyncio semaphore; records are
appended by a single writer in grid order, so the record file does not
depend on the worker count. Completed config hashes are skipped on rerun.

Lifecycle events (job_started, job_completed, job_failed, sweep_resumed)
are printed as one JSON object per line.
"""

import asyncio
import logging
import sys
import time
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Union

import orjson

from schemas import (
    DomainShift,
    ModelConfig,
    ModelRecord,
    SceneConfig,
    Supervision,
    SweepSpec,
    TrainConfig,
    TransferReport,
)
from services.downstream.transfer import TransferDataSource, evaluate_all_transfers
from services.errors import ConfigError
from services.harness.records import RecordStore
from services.metrics.report import evaluate_representation, representation_sample
from services.scene.dataset_io import load_dataset
from services.scene.sampler import GeneratedDataset
from services.serialization import stable_hash
from services.vae.checkpoint import save_checkpoint
from services.vae.trainer import train

logger = logging.getLogger(__name__)

EVALUATION_SEED = 0


def log_event(level: str, event: str, data: Optional[dict] = None) -> None:
    """JSON structured event line on stdout."""
    sys.stdout.write(orjson.dumps({
        "ts": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S"),
        "level": level,
        "event": event,
        "worker": "sweep",
        **(data or {}),
    }).decode() + "\n")
    sys.stdout.flush()


@dataclass(frozen=True)
class SweepData:
    """Dataset files of one sweep. Missing OOD2 pools are rendered on demand."""
    observations: str
    pairs: Optional[str] = None
    held_out: Optional[str] = None
    shifted: Optional[str] = None


@dataclass
class SweepJob:
    index: int
    config_hash: str
    model: ModelConfig
    train: TrainConfig
    spec: SweepSpec
    data: SweepData
    scene_json: str
    shift_json: str
    artifacts: Optional[str]


def job_hash(model: ModelConfig, train_config: TrainConfig, spec: SweepSpec) -> str:
    return stable_hash({
        "model": model,
        "train": train_config,
        "noise": spec.noise_config if model.noise_enabled else None,
        "gbt": spec.gbt,
        "mlp": spec.mlp,
        "metric_samples": spec.metric_samples,
        "transfer_sizes": [spec.transfer_train_size, spec.transfer_eval_size],
    })


def build_jobs(
    spec: SweepSpec,
    data: SweepData,
    scene: SceneConfig,
    shift: DomainShift,
    artifacts: Optional[Union[str, Path]] = None,
) -> List[SweepJob]:
    jobs = []
    for index, (model, seed) in enumerate(spec.grid()):
        if model.supervision == Supervision.WEAK and data.pairs is None:
            raise ConfigError("the sweep grid contains weak supervision but no pair dataset was given")
        train_config = TrainConfig(**{**spec.train.model_dump(), "seed": seed})
        jobs.append(SweepJob(
            index=index,
            config_hash=job_hash(model, train_config, spec),
            model=model,
            train=train_config,
            spec=spec,
            data=data,
            scene_json=scene.model_dump_json(),
            shift_json=shift.model_dump_json(),
            artifacts=str(artifacts) if artifacts is not None else None,
        ))
    return jobs


# ============================================================================
# ONE JOB (runs inside a worker process)
# ============================================================================

@lru_cache(maxsize=8)
def _dataset(path: str) -> GeneratedDataset:
    return load_dataset(path)


@lru_cache(maxsize=2)
def _transfer_source(data: SweepData, scene_json: str, shift_json: str, pool_size: int) -> TransferDataSource:
    return TransferDataSource(
        _dataset(data.observations),
        scene=SceneConfig.model_validate_json(scene_json),
        shift=DomainShift.model_validate_json(shift_json),
        held_out=_dataset(data.held_out) if data.held_out else None,
        shifted=_dataset(data.shifted) if data.shifted else None,
        seed=EVALUATION_SEED,
        pool_size=pool_size,
    )


def transfer_key(report: TransferReport) -> str:
    return f"{report.scenario.slug}/{report.regressor.value}"


def _base_record(job: SweepJob) -> dict:
    return {
        "config_hash": job.config_hash,
        "seed": job.train.seed,
        "supervision": job.model.supervision,
        "beta": job.model.beta,
        "warmup_steps": job.model.warmup_steps,
        "latent_dim": job.model.latent_dim,
        "noise_enabled": job.model.noise_enabled,
    }


def run_job(job: SweepJob) -> ModelRecord:
    """Train and evaluate one grid point; failures become failed records."""
    spec = job.spec
    try:
        observations = _dataset(job.data.observations)
        training_data = _dataset(job.data.pairs) if job.model.supervision == Supervision.WEAK else observations
        result = train(training_data, job.model, job.train, spec.noise_config)
        model = result.model
        if job.artifacts:
            model_dir = Path(job.artifacts) / job.config_hash
            save_checkpoint(model_dir / "model.ckpt", model, job.train, spec.noise_config, result.final_step)
            result.curve.to_csv(model_dir / "curve.csv", index=False)

        codes, factors = representation_sample(model, observations, spec.metric_samples, seed=EVALUATION_SEED)
        elbo, recon, kl = model.evaluate_elbo(observations.images[:spec.metric_samples], seed=EVALUATION_SEED)
        metrics = evaluate_representation(
            codes, factors, observations.spec.names, gbt_config=spec.gbt, seed=EVALUATION_SEED
        )

        source = _transfer_source(job.data, job.scene_json, job.shift_json, spec.transfer_eval_size)
        reports = evaluate_all_transfers(
            model, source,
            model_id=job.config_hash,
            noise_enabled=job.model.noise_enabled,
            gbt_config=spec.gbt,
            mlp_config=spec.mlp,
            train_size=spec.transfer_train_size,
            eval_size=spec.transfer_eval_size,
        )
        return ModelRecord(
            **_base_record(job),
            elbo=elbo,
            recon_loss=-recon,
            kl=kl,
            metrics=metrics.scores,
            transfer={transfer_key(r): r.aggregate for r in reports},
            transfer_per_factor={transfer_key(r): dict(r.per_factor) for r in reports},
        )
    except Exception as e:
        logger.error(f"Job {job.index} ({job.config_hash}) failed: {e}", exc_info=True)
        return failed_record(job, e)


def failed_record(job: SweepJob, error: BaseException) -> ModelRecord:
    return ModelRecord(**_base_record(job), status="failed", error=f"{type(error).__name__}: {error}")


# ============================================================================
# ORCHESTRATION
# ============================================================================

async def _run_jobs(
    jobs: List[SweepJob],
    workers: int,
    store: RecordStore,
    executor: Optional[Executor] = None,
) -> List[ModelRecord]:
    loop = asyncio.get_running_loop()
    semaphore = asyncio.Semaphore(workers)
    finished: Dict[int, ModelRecord] = {}
    written: List[ModelRecord] = []
    next_position = 0
    owned = executor is None and workers > 1
    if owned:
        executor = ProcessPoolExecutor(max_workers=workers)

    async def run_one(position: int, job: SweepJob):
        async with semaphore:
            log_event("info", "job_started", {"index": job.index, "config_hash": job.config_hash})
            started = time.monotonic()
            if executor is None:
                record = run_job(job)
            else:
                try:
                    record = await loop.run_in_executor(executor, run_job, job)
                except Exception as e:
                    # broken pool or unpicklable job: the worker never produced a record
                    logger.error(f"Job {job.index} ({job.config_hash}) lost in executor: {e}", exc_info=True)
                    record = failed_record(job, e)
            elapsed = round(time.monotonic() - started, 1)
            if record.status == "completed":
                log_event("info", "job_completed", {
                    "index": job.index, "config_hash": job.config_hash, "seconds": elapsed,
                    "elbo": record.elbo, "dci": record.metrics.get("dci"),
                })
            else:
                log_event("error", "job_failed", {
                    "index": job.index, "config_hash": job.config_hash, "error": record.error,
                })
            return position, record

    try:
        tasks = [asyncio.create_task(run_one(p, job)) for p, job in enumerate(jobs)]
        for completed in asyncio.as_completed(tasks):
            position, record = await completed
            finished[position] = record
            # single writer: flush the contiguous prefix in grid order
            while next_position in finished:
                store.append(finished[next_position])
                written.append(finished.pop(next_position))
                next_position += 1
    finally:
        if owned:
            executor.shutdown(wait=True)
    return written


def run_sweep(
    spec: SweepSpec,
    data: SweepData,
    records_path: Union[str, Path],
    workers: int = 1,
    scene: Optional[SceneConfig] = None,
    shift: Optional[DomainShift] = None,
    artifacts: Optional[Union[str, Path]] = None,
    executor: Optional[Executor] = None,
) -> List[ModelRecord]:
    """
    Run (or resume) a sweep.

    Args:
        spec: Hyperparameter grid and shared per-model settings
        data: Dataset files (observations; pairs for weak supervision)
        records_path: JSON-lines record file, appended to
        workers: Parallel model slots
        scene, shift: Rendering of generated OOD2 pools
        artifacts: Directory for per-model checkpoints and curves
        executor: Runs the jobs instead of a process pool of `workers`
            (left open; the caller shuts it down)

    Returns:
        The latest record of every grid point
    """
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    scene = scene or SceneConfig(resolution=spec.model.resolution)
    shift = shift or DomainShift()
    store = RecordStore(records_path)
    jobs = build_jobs(spec, data, scene, shift, artifacts)
    done = store.completed_hashes()
    pending = [job for job in jobs if job.config_hash not in done]
    if done:
        log_event("info", "sweep_resumed", {
            "completed": len(jobs) - len(pending), "pending": len(pending), "records": str(records_path),
        })
    logger.info(f"Sweep: {len(jobs)} grid points, {len(pending)} to run on {workers} worker(s)")
    asyncio.run(_run_jobs(pending, workers, store, executor))

    latest = {r.config_hash: r for r in store.latest()}
    return [latest[job.config_hash] for job in jobs if job.config_hash in latest]
