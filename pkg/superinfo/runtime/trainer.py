"""Pretraining loop: two augmented views per sample, SuperInfo loss, Adam.

Checkpoint layout (little-endian)::

    b'SINF' | u32 version=1 | u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 dtype (0=f32, 1=f64), u8 rank,
                u64 dims, raw payload
    u64 epoch | 32-byte rng state | u32 length + UTF-8 config echo

Tensors are ``param.<name>``, ``adam.m.<name>``, ``adam.v.<name>`` and the
scalar ``adam.step``.
"""
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from superinfo.config import ConfigError, SuperInfoConfig
from superinfo.data import DataError, DatasetContainer, batch_iter
from superinfo.formats import FormatError, Reader, Writer, check_header
from superinfo.losses import compute_breakdown
from superinfo.models import ModelBundle, ModelError, init_bundle
from superinfo.rng import STATE_BYTES, Rng
from superinfo.tensor import Tape, backward

logger = logging.getLogger(__name__)

CKPT_MAGIC = b'SINF'
CKPT_VERSION = 1
DTYPE_CODES = {'f32': 0, 'f64': 1}
_CODE_DTYPES = {0: '<f4', 1: '<f8'}
LOSS_FIELDS = ('l_cl', 'l_kl_1', 'l_kl_2', 'l_re_1', 'l_re_2', 'l_total')


class NonFiniteLossError(Exception):
    """Raised when a loss component or the gradient norm stops being finite."""

    def __init__(self, component: str, epoch: int, step: int, value: float):
        self.component = component
        self.epoch = epoch
        self.step = step
        self.value = value
        super().__init__(f'non-finite {component} ({value}) at epoch {epoch}, step {step}')


class MetricsRecord(BaseModel):
    """One training step, or an epoch summary when ``step == -1``."""

    model_config = ConfigDict(extra='forbid', frozen=True)

    run_id: str
    epoch: int
    step: int
    l_cl: float
    l_kl_1: float
    l_kl_2: float
    l_re_1: float
    l_re_2: float
    l_total: float
    grad_norm: float
    wall_ms: float
    seed: int


# ── Adam ─────────────────────────────────────────────────────────────────────

def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
              lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bias-corrected Adam update; returns (param, m, v) without mutating inputs."""
    if t < 1:
        raise ValueError(f'adam step count starts at 1, got {t}')
    dtype = param.dtype
    m = (beta1 * m + (1.0 - beta1) * grad).astype(dtype)
    v = (beta2 * v + (1.0 - beta2) * grad * grad).astype(dtype)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param = (param - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(dtype)
    return param, m, v


class AdamState:
    """First and second moments per parameter name, plus the step count."""

    def __init__(self, m: Dict[str, np.ndarray], v: Dict[str, np.ndarray], step: int = 0):
        self.m = m
        self.v = v
        self.step = step

    @classmethod
    def zeros(cls, bundle: ModelBundle) -> 'AdamState':
        m = {n: np.zeros_like(p.data) for n, p in bundle.named_parameters()}
        v = {n: np.zeros_like(p.data) for n, p in bundle.named_parameters()}
        return cls(m, v, 0)

    def update(self, named: Sequence, grads, config: SuperInfoConfig) -> None:
        self.step += 1
        for name, p in named:
            new, self.m[name], self.v[name] = adam_step(
                p.data, grads[p], self.m[name], self.v[name], self.step,
                config.learning_rate, config.beta1, config.beta2, config.eps)
            p.assign_(new)


# ── state ────────────────────────────────────────────────────────────────────

@dataclass
class TrainState:
    config: SuperInfoConfig
    bundle: ModelBundle
    adam: AdamState
    rng: Rng
    epoch: int = 0

    @property
    def run_id(self) -> str:
        return self.config.run_id


def init_state(config: SuperInfoConfig) -> TrainState:
    """Fresh bundle from the ``init`` stream; shuffling and augmentation use ``augment``."""
    root = Rng(config.seed)
    try:
        bundle = init_bundle(root.substream('init'), config.model, config.dtype)
    except ModelError as e:
        raise ConfigError(str(e)) from None
    return TrainState(config, bundle, AdamState.zeros(bundle), root.substream('augment'))


def _emit(sinks, record: MetricsRecord) -> None:
    for sink in sinks:
        sink.write(record)


def _flush(sinks) -> None:
    for sink in sinks:
        sink.flush()


def pretrain(config: SuperInfoConfig, dataset: DatasetContainer, sinks: Sequence = (),
             state: Optional[TrainState] = None,
             checkpoint_path: Optional[str] = None) -> TrainState:
    """Run epochs ``state.epoch .. config.epochs - 1`` and return the final state.

    Every step and every epoch summary is written to each sink. A non-finite
    loss component emits its record, flushes the sinks and raises
    NonFiniteLossError.
    """
    if dataset.n == 0:
        raise DataError('cannot pretrain on an empty dataset')
    if config.model.input_dim is None:
        config = config.model_copy(update={
            'model': config.model.model_copy(update={'input_dim': dataset.dim})})
    if config.model.input_dim != dataset.dim:
        raise DataError(f'model input_dim {config.model.input_dim} != data dim {dataset.dim}')
    if state is None:
        state = init_state(config)
    elif state.config.run_id != config.run_id:
        raise ConfigError('checkpoint was trained with a different config '
                          f'(run {state.config.run_id}, requested {config.run_id})')
    else:
        state.config = config
    run_id = state.run_id
    trainable = state.bundle.trainable(config.freeze_heads)
    params = [p for _, p in trainable]

    try:
        for epoch in range(state.epoch, config.epochs):
            step_records: List[MetricsRecord] = []
            for batch in batch_iter(dataset, config.batch_size, state.rng, config.augmentation):
                started = time.perf_counter()
                with Tape() as tape:
                    breakdown = compute_breakdown(state.bundle, batch.view1, batch.view2,
                                                  config.weights, config.recon_target)
                values = breakdown.to_dict()
                bad = next((k for k in LOSS_FIELDS if not math.isfinite(values[k])), None)
                grad_norm = math.nan
                if bad is None:
                    grads = backward(breakdown.l_total, tape, params)
                    grad_norm = math.sqrt(sum(float(np.sum(np.square(grads[p], dtype=np.float64)))
                                              for p in params))
                    if not math.isfinite(grad_norm):
                        bad = 'grad_norm'
                step = state.adam.step + 1
                wall = (time.perf_counter() - started) * 1000.0 if config.log_wall_time else 0.0
                record = MetricsRecord(run_id=run_id, epoch=epoch, step=step, grad_norm=grad_norm,
                                       wall_ms=wall, seed=config.seed, **values)
                if bad is not None:
                    _emit(sinks, record)
                    _flush(sinks)
                    value = grad_norm if bad == 'grad_norm' else values[bad]
                    logger.error('non-finite %s at epoch %d step %d', bad, epoch, step)
                    raise NonFiniteLossError(bad, epoch, step, value)
                state.adam.update(trainable, grads, config)
                _emit(sinks, record)
                step_records.append(record)
                logger.debug('epoch %d step %d l_total=%.6f grad_norm=%.4g',
                             epoch, step, values['l_total'], grad_norm)

            summary = _epoch_summary(run_id, epoch, config.seed, step_records)
            _emit(sinks, summary)
            state.epoch = epoch + 1
            logger.info('epoch %d/%d l_total=%.6f l_cl=%.6f', epoch + 1, config.epochs,
                        summary.l_total, summary.l_cl)
            if checkpoint_path and config.checkpoint_every and \
                    state.epoch % config.checkpoint_every == 0:
                save_checkpoint(state, checkpoint_path)
    finally:
        _flush(sinks)
    return state


def _epoch_summary(run_id: str, epoch: int, seed: int,
                   records: Sequence[MetricsRecord]) -> MetricsRecord:
    keys = LOSS_FIELDS + ('grad_norm', 'wall_ms')
    means = {k: float(np.mean([getattr(r, k) for r in records])) if records else 0.0
             for k in keys}
    return MetricsRecord(run_id=run_id, epoch=epoch, step=-1, seed=seed, **means)


# ── checkpoints ──────────────────────────────────────────────────────────────

def _write_tensor(w: Writer, name: str, arr: np.ndarray) -> None:
    code = DTYPE_CODES['f32'] if arr.dtype == np.float32 else DTYPE_CODES['f64']
    w.text(name, width='u16')
    w.u8(code)
    w.u8(arr.ndim)
    for d in arr.shape:
        w.u64(d)
    w.array(arr, _CODE_DTYPES[code])


def save_checkpoint(state: TrainState, path) -> None:
    tensors: List[Tuple[str, np.ndarray]] = []
    for name, p in state.bundle.named_parameters():
        tensors.append((f'param.{name}', p.data))
    for name, _ in state.bundle.named_parameters():
        tensors.append((f'adam.m.{name}', state.adam.m[name]))
        tensors.append((f'adam.v.{name}', state.adam.v[name]))
    tensors.append(('adam.step', np.asarray(float(state.adam.step), dtype=np.float64)))

    w = Writer()
    w.raw(CKPT_MAGIC)
    w.u32(CKPT_VERSION)
    w.u32(len(tensors))
    for name, arr in tensors:
        _write_tensor(w, name, arr)
    w.u64(state.epoch)
    w.raw(state.rng.state_bytes())
    w.text(state.config.echo())
    Path(path).write_bytes(w.getvalue())


def load_checkpoint(path) -> TrainState:
    r = Reader(Path(path).read_bytes(), what=str(path))
    check_header(r, CKPT_MAGIC, CKPT_VERSION)
    count = r.u32()
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.text(width='u16')
        code = r.u8()
        if code not in _CODE_DTYPES:
            raise FormatError(f'{path}: tensor {name!r} has unknown dtype code {code}')
        rank = r.u8()
        shape = tuple(r.u64() for _ in range(rank))
        if name in tensors:
            raise FormatError(f'{path}: duplicate tensor {name!r}')
        tensors[name] = r.array(shape, _CODE_DTYPES[code]).astype(
            np.float32 if code == 0 else np.float64)
    epoch = r.u64()
    rng_state = r.take(STATE_BYTES)
    echo = r.text()
    if r.remaining:
        raise FormatError(f'{path}: {r.remaining} unexpected trailing bytes')

    try:
        config = SuperInfoConfig.from_echo(echo)
    except ConfigError as e:
        raise FormatError(f'{path}: corrupt config echo: {e}') from None
    params = {k[len('param.'):]: v for k, v in tensors.items() if k.startswith('param.')}
    try:
        bundle = ModelBundle.from_arrays(params)
    except ModelError as e:
        raise FormatError(f'{path}: {e}') from None
    names = [n for n, _ in bundle.named_parameters()]
    try:
        m = {n: tensors[f'adam.m.{n}'] for n in names}
        v = {n: tensors[f'adam.v.{n}'] for n in names}
        step_arr = tensors['adam.step']
    except KeyError as e:
        raise FormatError(f'{path}: missing optimizer tensor {e}') from None
    for n in names:
        if m[n].shape != params[n].shape or v[n].shape != params[n].shape:
            raise FormatError(f'{path}: optimizer moments for {n!r} do not match its shape')
    step = float(step_arr.reshape(-1)[0]) if step_arr.size == 1 else float('nan')
    if not (np.isfinite(step) and step >= 0 and step.is_integer()):
        raise FormatError(f'{path}: adam.step must be a non-negative integer')
    try:
        rng = Rng.from_state_bytes(rng_state, seed=config.seed)
    except ValueError as e:
        raise FormatError(f'{path}: {e}') from None
    return TrainState(config, bundle, AdamState(m, v, int(step)), rng, epoch)
