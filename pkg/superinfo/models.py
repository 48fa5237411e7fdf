"""The five networks of a SuperInfo run: encoder f, projector g, Gaussian
heads q_mu / q_logvar and decoder r, all plain ReLU MLPs.

Weights are stored (fan_in, fan_out) and layers compute ``x @ W + b``.
"""
import math
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from superinfo.config import ModelSpec
from superinfo.rng import Rng
from superinfo import tensor as T
from superinfo.tensor import ShapeError, Tensor

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0
NETWORKS = ('f', 'g', 'q_mu', 'q_logvar', 'r')
HEADS = ('q_mu', 'q_logvar', 'r')


class ModelError(Exception):
    """Raised for inconsistent network dimensions or parameter sets."""
    pass


class MLP:
    """Affine layers with ReLU between them and identity on the output."""

    def __init__(self, weights: Sequence[Tensor], biases: Sequence[Tensor]):
        if not weights or len(weights) != len(biases):
            raise ModelError('an MLP needs at least one layer and one bias per weight')
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.data.ndim != 2 or b.data.ndim != 1:
                raise ModelError(f'layer {i}: weight must be 2-D and bias 1-D, got '
                                 f'{w.shape} and {b.shape}')
            if b.shape != (w.shape[1],):
                raise ModelError(f'layer {i}: bias {b.shape} does not match weight {w.shape}')
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise ModelError(f'layer {i}: input {w.shape[0]} != previous output '
                                 f'{weights[i - 1].shape[1]}')
        self.weights = list(weights)
        self.biases = list(biases)

    @classmethod
    def init(cls, rng: Rng, dims: Sequence[int], dtype: str = 'f32') -> 'MLP':
        """He-normal weights (std sqrt(2 / fan_in)), zero biases, drawn layer by layer."""
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ModelError(f'invalid layer dims {list(dims)}')
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            std = math.sqrt(2.0 / fan_in)
            weights.append(T.rng_normal(rng, (fan_in, fan_out), 0.0, std, dtype=dtype,
                                        requires_grad=True))
            biases.append(T.zeros((fan_out,), dtype=dtype, requires_grad=True))
        return cls(weights, biases)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def dims(self) -> List[int]:
        return [self.in_dim] + [w.shape[1] for w in self.weights]

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = T.add(T.matmul(x, w), b)
            if i < last:
                x = T.relu(x)
        return x

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f'{prefix}.{i}.weight', w
            yield f'{prefix}.{i}.bias', b


class ModelBundle:
    """Parameter container for f, g, q_mu, q_logvar and r."""

    def __init__(self, f: MLP, g: MLP, q_mu: MLP, q_logvar: MLP, r: MLP):
        self.f, self.g, self.q_mu, self.q_logvar, self.r = f, g, q_mu, q_logvar, r
        self.check()

    def check(self) -> None:
        h = self.f.out_dim
        for name in ('g', 'q_mu', 'q_logvar', 'r'):
            if getattr(self, name).in_dim != h:
                raise ModelError(f'{name} expects width {getattr(self, name).in_dim}, '
                                 f'encoder produces {h}')
        for name in ('q_mu', 'q_logvar'):
            if getattr(self, name).out_dim != h:
                raise ModelError(f'{name} must map {h} -> {h}')
        if self.r.out_dim != self.f.in_dim:
            raise ModelError(f'decoder output {self.r.out_dim} != input dim {self.f.in_dim}')
        dtypes = {p.dtype for _, p in self.named_parameters()}
        if len(dtypes) != 1:
            raise ModelError(f'mixed parameter dtypes {sorted(dtypes)}')
        for name, p in self.named_parameters():
            if not np.all(np.isfinite(p.data)):
                raise ModelError(f'parameter {name} has non-finite values')

    @property
    def input_dim(self) -> int:
        return self.f.in_dim

    @property
    def repr_dim(self) -> int:
        return self.f.out_dim

    @property
    def proj_dim(self) -> int:
        return self.g.out_dim

    @property
    def dtype(self) -> str:
        return self.f.weights[0].dtype

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        out = []
        for net in NETWORKS:
            out.extend(getattr(self, net).named_parameters(net))
        return out

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable(self, freeze_heads: bool = False) -> List[Tuple[str, Tensor]]:
        """Parameters the optimizer updates; with ``freeze_heads`` only f and g."""
        if not freeze_heads:
            return self.named_parameters()
        return [(n, p) for n, p in self.named_parameters() if n.split('.')[0] not in HEADS]

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.numpy() for name, p in self.named_parameters()}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> 'ModelBundle':
        nets = {}
        for net in NETWORKS:
            weights, biases = [], []
            i = 0
            while f'{net}.{i}.weight' in arrays:
                w, b = arrays[f'{net}.{i}.weight'], arrays.get(f'{net}.{i}.bias')
                if b is None:
                    raise ModelError(f'missing parameter {net}.{i}.bias')
                weights.append(Tensor(w, requires_grad=True))
                biases.append(Tensor(b, requires_grad=True))
                i += 1
            if not weights:
                raise ModelError(f'no parameters for network {net!r}')
            nets[net] = MLP(weights, biases)
        known = {n for net_name, net in nets.items() for n, _ in net.named_parameters(net_name)}
        extra = set(arrays) - known
        if extra:
            raise ModelError(f'unexpected parameters: {sorted(extra)}')
        return cls(**nets)

    def copy(self) -> 'ModelBundle':
        return ModelBundle.from_arrays(self.to_arrays())

    def spec(self) -> ModelSpec:
        return ModelSpec(
            input_dim=self.input_dim,
            encoder_widths=self.f.dims[1:-1],
            repr_dim=self.repr_dim,
            proj_dim=self.proj_dim,
            proj_widths=self.g.dims[1:-1],
            decoder_widths=self.r.dims[1:-1],
        )

    def __repr__(self):
        return (f'<ModelBundle D={self.input_dim} H={self.repr_dim} P={self.proj_dim} '
                f'dtype={self.dtype}>')


def init_bundle(rng: Rng, spec: ModelSpec, dtype: str = 'f32') -> ModelBundle:
    """Fresh bundle; networks are drawn in the order f, g, q_mu, q_logvar, r."""
    if spec.input_dim is None:
        raise ModelError('model input_dim is not set')
    d, h, p = spec.input_dim, spec.repr_dim, spec.proj_dim
    f = MLP.init(rng, [d] + list(spec.encoder_widths) + [h], dtype)
    g = MLP.init(rng, [h] + list(spec.proj_widths) + [p], dtype)
    q_mu = MLP.init(rng, [h, h], dtype)
    q_logvar = MLP.init(rng, [h, h], dtype)
    r = MLP.init(rng, [h] + list(spec.decoder_widths) + [d], dtype)
    return ModelBundle(f, g, q_mu, q_logvar, r)


def _expect_width(op: str, x: Tensor, width: int) -> None:
    if x.data.ndim != 2 or x.shape[1] != width:
        raise ShapeError(op, [x.shape, (width,)], f'expects batch x {width} input')


def encode(bundle: ModelBundle, v: Tensor) -> Tensor:
    _expect_width('encode', v, bundle.input_dim)
    return bundle.f(v)


def project(bundle: ModelBundle, h: Tensor) -> Tensor:
    _expect_width('project', h, bundle.repr_dim)
    return bundle.g(h)


def gaussian_heads(bundle: ModelBundle, h: Tensor) -> Tuple[Tensor, Tensor]:
    """(mu, logvar) with logvar clamped to [-10, 10]."""
    _expect_width('gaussian_heads', h, bundle.repr_dim)
    mu = bundle.q_mu(h)
    logvar = T.clip(bundle.q_logvar(h), LOGVAR_MIN, LOGVAR_MAX)
    return mu, logvar


def decode(bundle: ModelBundle, h: Tensor) -> Tensor:
    _expect_width('decode', h, bundle.repr_dim)
    return bundle.r(h)
