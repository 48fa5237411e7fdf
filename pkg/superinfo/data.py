"""Synthetic two-view data, the ``SIDS`` dataset container and the
two-augmentation batch sampler.

Container layout (little-endian)::

    b'SIDS' | u32 version=1 | u64 n_samples | u8 shape_kind
    shape_kind 0 (vector) or 2 (paired vectors): u32 D
    shape_kind 1 (image): u32 C, u32 H, u32 W
    u8 has_labels | f32 samples (paired: all view-1 rows, then all view-2 rows)
    [u32 labels] | u32 metadata length | UTF-8 JSON metadata
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from superinfo.config import AugmentationConfig, SyntheticSpec
from superinfo.formats import FormatError, Reader, Writer, check_header
from superinfo.rng import Rng

logger = logging.getLogger(__name__)

MAGIC = b'SIDS'
VERSION = 1
SHAPE_VECTOR, SHAPE_IMAGE, SHAPE_PAIRED = 0, 1, 2


class DataError(Exception):
    """Raised for datasets that cannot feed the requested operation."""
    pass


# ── container ────────────────────────────────────────────────────────────────

@dataclass
class DatasetContainer:
    """Samples (n x D or n x C x H x W, f32), optional second view and labels."""

    samples: np.ndarray
    labels: Optional[np.ndarray] = None
    view2: Optional[np.ndarray] = None
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if self.samples.ndim not in (2, 4):
            raise DataError(f'samples must be n x D or n x C x H x W, got {self.samples.shape}')
        if self.view2 is not None:
            self.view2 = np.ascontiguousarray(self.view2, dtype=np.float32)
            if self.view2.shape != self.samples.shape or self.samples.ndim != 2:
                raise DataError(f'paired views need equal n x D shapes, got '
                                f'{self.samples.shape} and {self.view2.shape}')
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.uint32)
            if self.labels.shape != (self.n,):
                raise DataError(f'{self.labels.size} labels for {self.n} samples')
            n_classes = self.metadata.get('n_classes')
            if n_classes is not None and (isinstance(n_classes, bool) or
                                          not isinstance(n_classes, int)):
                raise DataError(f'metadata n_classes must be an integer, got {n_classes!r}')
            if n_classes is not None and self.n and int(self.labels.max()) >= n_classes:
                raise DataError(f'label {int(self.labels.max())} outside [0, {n_classes})')

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def shape_kind(self) -> int:
        if self.view2 is not None:
            return SHAPE_PAIRED
        return SHAPE_IMAGE if self.samples.ndim == 4 else SHAPE_VECTOR

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return self.samples.shape[1:]

    @property
    def dim(self) -> int:
        return int(np.prod(self.sample_shape))

    @property
    def is_paired(self) -> bool:
        return self.view2 is not None

    def features(self, view: int = 1) -> np.ndarray:
        """Rows flattened to n x D."""
        src = self.samples if view == 1 or self.view2 is None else self.view2
        return src.reshape(self.n, -1)

    def subset(self, index) -> 'DatasetContainer':
        index = np.asarray(index, dtype=np.int64)
        return DatasetContainer(
            self.samples[index],
            None if self.labels is None else self.labels[index],
            None if self.view2 is None else self.view2[index],
            dict(self.metadata),
        )


def save_container(container: DatasetContainer, path) -> None:
    w = Writer()
    w.raw(MAGIC)
    w.u32(VERSION)
    w.u64(container.n)
    w.u8(container.shape_kind)
    for d in container.sample_shape:
        w.u32(d)
    w.u8(1 if container.labels is not None else 0)
    w.array(container.samples, '<f4')
    if container.view2 is not None:
        w.array(container.view2, '<f4')
    if container.labels is not None:
        w.array(container.labels, '<u4')
    meta = dict(container.metadata, format_version=VERSION)
    w.text(json.dumps(meta, sort_keys=True, separators=(',', ':')))
    Path(path).write_bytes(w.getvalue())


def load_container(path) -> DatasetContainer:
    r = Reader(Path(path).read_bytes(), what=str(path))
    check_header(r, MAGIC, VERSION)
    n = r.u64()
    kind = r.u8()
    if kind in (SHAPE_VECTOR, SHAPE_PAIRED):
        shape = (r.u32(),)
    elif kind == SHAPE_IMAGE:
        shape = (r.u32(), r.u32(), r.u32())
    else:
        raise FormatError(f'{path}: unknown shape kind {kind}')
    has_labels = r.u8()
    if has_labels not in (0, 1):
        raise FormatError(f'{path}: has_labels must be 0 or 1, got {has_labels}')
    samples = r.array((n,) + shape, '<f4')
    view2 = r.array((n,) + shape, '<f4') if kind == SHAPE_PAIRED else None
    labels = r.array((n,), '<u4') if has_labels else None
    try:
        meta = json.loads(r.text())
    except json.JSONDecodeError as e:
        raise FormatError(f'{path}: corrupt metadata block: {e}') from None
    if not isinstance(meta, dict):
        raise FormatError(f'{path}: metadata block must be a JSON object')
    if r.remaining:
        raise FormatError(f'{path}: {r.remaining} unexpected trailing bytes')
    try:
        return DatasetContainer(samples.astype(np.float32), labels, view2, meta)
    except DataError as e:
        raise FormatError(f'{path}: {e}') from None


# ── synthetic generation ─────────────────────────────────────────────────────

@dataclass
class PairedDataset:
    """Two views of the same latent samples plus source (and transfer) labels."""

    view1: np.ndarray
    view2: np.ndarray
    labels: np.ndarray
    transfer_labels: Optional[np.ndarray] = None
    spec: Optional[SyntheticSpec] = None
    latents: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.view1.shape[0]

    def split(self, n_test: int) -> Tuple['PairedDataset', 'PairedDataset']:
        """First ``n - n_test`` rows train, last ``n_test`` rows test."""
        if not 0 <= n_test <= self.n:
            raise DataError(f'cannot hold out {n_test} of {self.n} samples')
        cut = self.n - n_test
        return self._rows(slice(0, cut)), self._rows(slice(cut, self.n))

    def _rows(self, sl: slice) -> 'PairedDataset':
        return PairedDataset(
            self.view1[sl], self.view2[sl], self.labels[sl],
            None if self.transfer_labels is None else self.transfer_labels[sl],
            self.spec, {k: v[sl] for k, v in self.latents.items()},
        )

    def container(self, target: str = 'source') -> DatasetContainer:
        if target == 'source':
            labels, n_classes = self.labels, self.spec.n_classes if self.spec else None
        elif target == 'transfer':
            if self.transfer_labels is None:
                raise DataError('dataset has no transfer labels')
            labels = self.transfer_labels
            n_classes = self.spec.n_transfer_classes if self.spec else None
        else:
            raise DataError(f"label target must be 'source' or 'transfer', got {target!r}")
        meta = {'labels': target}
        if n_classes is not None:
            meta['n_classes'] = n_classes
        if self.spec is not None:
            meta['spec'] = self.spec.model_dump()
        return DatasetContainer(self.view1, labels, self.view2, meta)


def _unit_codes(rng: Rng, k: int, d: int) -> np.ndarray:
    codes = rng.normal((k, d))
    if d:
        norms = np.linalg.norm(codes, axis=1, keepdims=True)
        codes = codes / np.where(norms > 0, norms, 1.0)
    return codes


def _orthogonal(rng: Rng, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal((d, d)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def generate_synthetic(spec: SyntheticSpec, rng: Rng) -> PairedDataset:
    """``n_samples + n_test`` rows of the block-structured two-view benchmark.

    Class codes and mixing matrices come from ``spec.mixing_seed``; per-sample
    draws come from ``rng``. Each view is an orthogonal mix of
    [shared code + jitter | specific code + jitter | nuisance] plus noise.
    The shared jitter is drawn once and appears in both views.
    """
    k, d = spec.n_classes, spec.dim
    n = spec.n_samples + spec.n_test
    fixed = Rng(spec.mixing_seed)
    shared_codes = _unit_codes(fixed, k, spec.d_shared)
    specific_codes = (_unit_codes(fixed, k, spec.d_specific),
                      _unit_codes(fixed, k, spec.d_specific))
    mix1 = _orthogonal(fixed, d)
    mix2 = mix1 if spec.identical_mixing else _orthogonal(fixed, d)
    kt = spec.n_transfer_classes
    transfer_codes = (_unit_codes(fixed, kt, spec.d_specific),
                      _unit_codes(fixed, kt, spec.d_specific)) if kt else None

    labels = rng.integers(n, k)
    shared = shared_codes[labels] + spec.jitter_std * rng.normal((n, spec.d_shared))
    transfer = rng.integers(n, kt) if kt else None
    views, latents = [], {'labels': labels, 'shared': shared}
    for i, mix in enumerate((mix1, mix2)):
        specific = specific_codes[i][labels] + spec.jitter_std * rng.normal((n, spec.d_specific))
        if transfer is not None:
            specific = specific + transfer_codes[i][transfer]
        nuisance = spec.nuisance_scale * rng.normal((n, spec.d_nuisance))
        blocks = np.concatenate([shared, specific, nuisance], axis=1)
        latents[f'specific{i + 1}'] = specific
        latents[f'nuisance{i + 1}'] = nuisance
        views.append(blocks @ mix.T)
    for i in range(2):
        views[i] = (views[i] + spec.noise_std * rng.normal((n, d))).astype(np.float32)
    logger.debug('generated %d samples, D=%d, classes=%d', n, d, k)
    return PairedDataset(
        views[0], views[1], labels.astype(np.uint32),
        None if transfer is None else transfer.astype(np.uint32), spec, latents,
    )


# ── augmentation ─────────────────────────────────────────────────────────────

def _nearest_resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    ch, cw = img.shape[1], img.shape[2]
    rows = np.minimum((np.arange(height) * ch) // height, ch - 1)
    cols = np.minimum((np.arange(width) * cw) // width, cw - 1)
    return img[:, rows][:, :, cols]


def augment(sample: np.ndarray, config: AugmentationConfig, rng: Rng) -> np.ndarray:
    """One random view of a D-vector or C x H x W image.

    Images: crop-resize (nearest neighbour), horizontal flip, per-channel
    scale, additive noise. Vectors: one global scale, additive noise.
    """
    x = np.asarray(sample)
    dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float32
    x = x.astype(dtype, copy=True)
    if x.ndim == 3:
        c, h, w = x.shape
        frac = float(rng.uniform(1, *config.crop_fraction)[0])
        ch, cw = max(1, int(round(frac * h))), max(1, int(round(frac * w)))
        top = int(rng.integers(1, h - ch + 1)[0])
        left = int(rng.integers(1, w - cw + 1)[0])
        x = _nearest_resize(x[:, top:top + ch, left:left + cw], h, w)
        if rng.uniform(1)[0] < config.flip_prob:
            x = x[:, :, ::-1]
        scale = rng.uniform(c, *config.channel_scale).reshape(c, 1, 1)
    elif x.ndim == 1:
        scale = rng.uniform(1, *config.channel_scale)
    else:
        raise DataError(f'augment expects a D-vector or C x H x W image, got {x.shape}')
    x = x * scale.astype(dtype)
    noise = rng.normal(x.shape) * config.pixel_noise_std
    return np.ascontiguousarray(x + noise.astype(dtype))


def augment_batch(samples: np.ndarray, config: AugmentationConfig, rng: Rng) -> np.ndarray:
    samples = np.asarray(samples)
    if samples.ndim == 2:
        n, d = samples.shape
        scale = rng.uniform(n, *config.channel_scale).reshape(n, 1)
        noise = rng.normal((n, d)) * config.pixel_noise_std
        return (samples * scale + noise).astype(samples.dtype)
    return np.stack([augment(s, config, rng) for s in samples]) if len(samples) else samples.copy()


@dataclass
class ViewBatch:
    """Two augmented views (N x D each) of the rows ``indices``."""

    indices: np.ndarray
    view1: np.ndarray
    view2: np.ndarray

    def __len__(self):
        return len(self.indices)


def batches_per_epoch(n: int, batch_size: int) -> int:
    return n // batch_size


def batch_iter(dataset: DatasetContainer, batch_size: int, rng: Rng,
               config: AugmentationConfig) -> Iterator[ViewBatch]:
    """One epoch of shuffled batches; the final partial batch is dropped.

    Paired datasets augment view 1 and view 2 separately; single-view data is
    augmented twice.
    """
    if batch_size < 2:
        raise DataError(f'batch size must be at least 2, got {batch_size}')
    if dataset.n < batch_size:
        raise DataError(f'dataset has {dataset.n} samples, fewer than batch size {batch_size}')
    order = rng.permutation(dataset.n)
    second = dataset.view2 if dataset.is_paired else dataset.samples
    for b in range(batches_per_epoch(dataset.n, batch_size)):
        idx = order[b * batch_size:(b + 1) * batch_size]
        x1 = augment_batch(dataset.samples[idx], config, rng).reshape(len(idx), -1)
        x2 = augment_batch(second[idx], config, rng).reshape(len(idx), -1)
        yield ViewBatch(idx, x1, x2)
