"""Pipeline: data generation, pretrain, probe and λ-ablation orchestration.

The cli subcommands are thin wrappers around these functions; ablation grid
points run the same ``generate -> pretrain -> probe`` composition as the
individual subcommands.
"""
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from superinfo.config import LossWeights, ProbeConfig, RunConfig, SuperInfoConfig, SyntheticSpec
from superinfo.data import DatasetContainer, generate_synthetic, load_container, save_container
from superinfo.rng import Rng
from superinfo.runtime.adapters import JsonlSink
from superinfo.runtime.evaluation import ProbeResult, mean_accuracy, probe_bundle, transfer_eval
from superinfo.runtime.trainer import TrainState, load_checkpoint, pretrain, save_checkpoint

logger = logging.getLogger(__name__)

ABLATION_COLUMNS = ['lambda1', 'lambda2', 'lambda3', 'lambda4', 'seed',
                    'source_acc', 'transfer_acc_mean']
THREADS_ENV = 'SUPERINFO_THREADS'


class SuperInfoRuntimeError(Exception):
    pass


# ── data ─────────────────────────────────────────────────────────────────────

def generate_datasets(spec: SyntheticSpec, seed: int) -> Dict[str, DatasetContainer]:
    """Containers ``train``/``test``, plus ``transfer_train``/``transfer_test`` if configured."""
    paired = generate_synthetic(spec, Rng(seed).substream('data'))
    train, test = paired.split(spec.n_test)
    out = {'train': train.container('source'), 'test': test.container('source')}
    if paired.transfer_labels is not None:
        out['transfer_train'] = train.container('transfer')
        out['transfer_test'] = test.container('transfer')
    return out


def write_datasets(containers: Dict[str, DatasetContainer], out_dir) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, container in containers.items():
        path = out_dir / f'{name}.sids'
        save_container(container, path)
        logger.info('wrote %s (%d samples)', path, container.n)
        paths.append(path)
    return paths


def load_dataset(path) -> DatasetContainer:
    if not Path(path).exists():
        raise FileNotFoundError(f'dataset not found: {path}')
    return load_container(path)


# ── pretrain / probe ─────────────────────────────────────────────────────────

def run_pretrain(config: SuperInfoConfig, data: DatasetContainer,
                 checkpoint_path=None, metrics_path=None,
                 resume_path=None) -> TrainState:
    """Pretrain (optionally resuming), stream metrics and write the final checkpoint."""
    state = None
    if resume_path is not None:
        if not Path(resume_path).exists():
            raise FileNotFoundError(f'checkpoint not found: {resume_path}')
        state = load_checkpoint(resume_path)
        logger.info('resuming run %s at epoch %d', state.run_id, state.epoch)
    sinks = []
    if metrics_path is not None:
        sinks.append(JsonlSink(metrics_path))
    try:
        state = pretrain(config, data, sinks=sinks, state=state,
                         checkpoint_path=checkpoint_path)
    finally:
        for sink in sinks:
            sink.close()
    if checkpoint_path is not None:
        save_checkpoint(state, checkpoint_path)
    return state


def run_probe(checkpoint_path, train: DatasetContainer, test: DatasetContainer,
              config: Optional[ProbeConfig] = None) -> ProbeResult:
    if not Path(checkpoint_path).exists():
        raise FileNotFoundError(f'checkpoint not found: {checkpoint_path}')
    state = load_checkpoint(checkpoint_path)
    return probe_bundle(state.bundle, train, test, config)


def write_probe_result(result: ProbeResult, path) -> None:
    Path(path).write_text(result.model_dump_json(indent=2) + '\n', encoding='utf-8')


# ── ablation ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class AblationPoint:
    lambdas: Tuple[float, float, float, float]
    seed: int


def ablation_points(grid: Sequence[Tuple[float, ...]], base_seed: int,
                    seeds: int = 1) -> List[AblationPoint]:
    """Grid order first, then seeds ``base_seed .. base_seed + seeds - 1``."""
    if seeds < 1:
        raise SuperInfoRuntimeError(f'seeds must be at least 1, got {seeds}')
    return [AblationPoint(tuple(float(x) for x in lambdas), base_seed + i)
            for lambdas in grid for i in range(seeds)]


def run_ablation_point(run_cfg: RunConfig, point: AblationPoint) -> Dict[str, float]:
    """One pretrain + probe run; data and init depend only on ``point.seed``."""
    data = generate_datasets(run_cfg.data, point.seed)
    weights = LossWeights.from_tuple(point.lambdas, tau=run_cfg.loss.tau)
    config = run_cfg.superinfo_config(input_dim=data['train'].dim, weights=weights,
                                      seed=point.seed)
    state = pretrain(config, data['train'])
    source = probe_bundle(state.bundle, data['train'], data['test'], run_cfg.probe)
    pairs = [(data['transfer_train'], data['transfer_test'])] if 'transfer_train' in data else []
    transfer_mean = mean_accuracy(transfer_eval(state.bundle, pairs, run_cfg.probe))
    logger.info('lambdas=%s seed=%d source_acc=%.4f', point.lambdas, point.seed,
                source.accuracy)
    row = dict(zip(ABLATION_COLUMNS[:4], point.lambdas))
    row.update(seed=point.seed, source_acc=source.accuracy,
               transfer_acc_mean=math.nan if transfer_mean is None else transfer_mean)
    return row


def _point_worker(args) -> Dict[str, float]:
    run_cfg, point = args
    return run_ablation_point(run_cfg, point)


def max_jobs(requested: int) -> int:
    """``requested`` capped by ``SUPERINFO_THREADS`` when it is set."""
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            requested = min(requested, max(1, int(cap)))
        except ValueError:
            logger.warning('ignoring non-integer %s=%r', THREADS_ENV, cap)
    return max(1, requested)


def run_ablation(run_cfg: RunConfig, grid: Sequence[Tuple[float, ...]], seeds: int = 1,
                 jobs: int = 1) -> pd.DataFrame:
    """Rows in grid order regardless of which worker finishes first."""
    points = ablation_points(grid, run_cfg.seed, seeds)
    jobs = min(max_jobs(jobs), len(points))
    logger.info('ablation: %d grid points x %d seeds on %d worker(s)', len(grid), seeds, jobs)
    if jobs == 1:
        rows = [run_ablation_point(run_cfg, p) for p in points]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_point_worker, [(run_cfg, p) for p in points]))
    return pd.DataFrame(rows, columns=ABLATION_COLUMNS)


def write_ablation_csv(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, lineterminator='\n', float_format='%.17g')
