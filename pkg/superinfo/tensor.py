"""Dense tensors with reverse-mode automatic differentiation.

Every primitive computes its result with numpy and, when an input requires
grad and a Tape is active, records a node holding the closure that maps the
output gradient to input gradients. ``backward`` replays the tape in reverse.

Supported primitives
--------------------
- elementwise : add, sub, mul (row-broadcast right operand), scale, square,
                exp, log, relu, clip
- reductions  : sum (all or per row), mean
- matrix      : matmul, transpose, concat_rows, gather_rows
- row-wise    : softmax_rows, log_softmax_rows, l2_normalize_rows
"""
import threading
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp, softmax

from superinfo.rng import Rng

DTYPES = {'f32': np.float32, 'f64': np.float64}
NORM_EPS = 1e-12


class TensorError(Exception):
    """Base class for tensor engine failures."""
    pass


class ShapeError(TensorError):
    """Raised when operand shapes do not satisfy a primitive's rule."""

    def __init__(self, primitive: str, dims: Sequence[Tuple[int, ...]], rule: str = ''):
        self.primitive = primitive
        self.dims = [tuple(d) for d in dims]
        msg = f'{primitive}: incompatible shapes {self.dims}'
        if rule:
            msg += f' ({rule})'
        super().__init__(msg)


class DomainError(TensorError):
    """Raised when a primitive is applied outside its mathematical domain."""
    pass


class BackwardError(TensorError):
    """Raised for an invalid backward pass."""
    pass


class GradientCheckError(TensorError):
    """Raised when the finite-difference oracle cannot be evaluated."""
    pass


# ── Tensor ───────────────────────────────────────────────────────────────────

def _dtype_code(dtype) -> str:
    for code, np_dtype in DTYPES.items():
        if np.dtype(dtype) == np.dtype(np_dtype):
            return code
    raise TensorError(f'unsupported dtype {dtype!r}; expected one of {sorted(DTYPES)}')


class Tensor:
    """Row-major numeric array with an optional gradient buffer."""

    __slots__ = ('data', 'requires_grad', 'grad', 'name')

    def __init__(self, data, dtype: Optional[str] = None, requires_grad: bool = False,
                 name: Optional[str] = None):
        if dtype is None:
            dtype = _dtype_code(data.dtype) if isinstance(data, np.ndarray) and \
                data.dtype in (np.float32, np.float64) else 'f64'
        if dtype not in DTYPES:
            raise TensorError(f'unsupported dtype {dtype!r}; expected one of {sorted(DTYPES)}')
        self.data = np.array(data, dtype=DTYPES[dtype], order='C')
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> str:
        return _dtype_code(self.data.dtype)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise TensorError(f'item() needs a single element, shape is {self.shape}')
        return float(self.data.reshape(-1)[0])

    def assign_(self, values: np.ndarray) -> None:
        """In-place overwrite used by optimizers; shape and dtype are preserved."""
        values = np.asarray(values)
        if values.shape != self.data.shape:
            raise ShapeError('assign_', [self.data.shape, values.shape], 'same shape')
        self.data[...] = values

    def detach(self) -> 'Tensor':
        return Tensor(self.data.copy(), dtype=self.dtype, name=self.name)

    def __add__(self, other):
        return add(self, _lift(other, self))

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ' requires_grad' if self.requires_grad else ''
        return f'<Tensor shape={self.shape} dtype={self.dtype}{flag}>'


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value), dtype=like.dtype)


def tensor(data, dtype: str = 'f64', requires_grad: bool = False,
           name: Optional[str] = None) -> Tensor:
    return Tensor(data, dtype=dtype, requires_grad=requires_grad, name=name)


def zeros(shape, dtype: str = 'f64', requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), dtype=dtype, requires_grad=requires_grad)


def ones(shape, dtype: str = 'f64', requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), dtype=dtype, requires_grad=requires_grad)


def rng_normal(rng: Rng, shape, mean: float = 0.0, std: float = 1.0,
               dtype: str = 'f64', requires_grad: bool = False) -> Tensor:
    return Tensor(rng.normal(shape, mean, std), dtype=dtype, requires_grad=requires_grad)


def rng_uniform(rng: Rng, shape, lo: float = 0.0, hi: float = 1.0,
                dtype: str = 'f64', requires_grad: bool = False) -> Tensor:
    return Tensor(rng.uniform(shape, lo, hi), dtype=dtype, requires_grad=requires_grad)


# ── Tape ─────────────────────────────────────────────────────────────────────

class Node:
    __slots__ = ('kind', 'inputs', 'output', 'backward')

    def __init__(self, kind: str, inputs: Sequence[Tensor], output: Tensor,
                 backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.kind = kind
        self.inputs = tuple(inputs)
        self.output = output
        self.backward = backward


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, 'stack'):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional['Tape']:
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed primitives; one backward pass per forward.

    A tape is single-threaded. Use it as a context manager so primitives
    executed inside the block are recorded.
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self.consumed = False

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def __len__(self):
        return len(self.nodes)

    def __enter__(self) -> 'Tape':
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()


class no_grad:
    """Suspend recording on the current thread."""

    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, *exc):
        _stack().pop()


def _emit(kind: str, inputs: Sequence[Tensor], out_data: np.ndarray,
          backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, dtype=inputs[0].dtype, requires_grad=needs_grad)
    if needs_grad:
        tape = active_tape()
        if tape is not None:
            tape.record(Node(kind, inputs, out, backward))
    return out


def _same_dtype(kind: str, *inputs: Tensor) -> None:
    codes = {t.dtype for t in inputs}
    if len(codes) > 1:
        raise TensorError(f'{kind}: mixed dtypes {sorted(codes)}')


def _need_2d(kind: str, *inputs: Tensor) -> None:
    for t in inputs:
        if t.data.ndim != 2:
            raise ShapeError(kind, [x.shape for x in inputs], 'expects 2-D operands')


# ── elementwise ──────────────────────────────────────────────────────────────

def _broadcast_kind(kind: str, a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return 'same'
    if b.data.ndim == 0:
        return 'scalar'
    if a.data.ndim == 2 and (b.shape == (a.shape[1],) or b.shape == (1, a.shape[1])):
        return 'row'
    raise ShapeError(kind, [a.shape, b.shape], 'same shape or row-vector right operand')


def _reduce_to(grad: np.ndarray, mode: str, shape: Tuple[int, ...]) -> np.ndarray:
    if mode == 'same':
        return grad
    if mode == 'scalar':
        return np.asarray(grad.sum(), dtype=grad.dtype)
    return grad.sum(axis=0).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype('add', a, b)
    mode = _broadcast_kind('add', a, b)
    return _emit('add', (a, b), a.data + b.data,
                 lambda g: (g, _reduce_to(g, mode, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype('sub', a, b)
    mode = _broadcast_kind('sub', a, b)
    return _emit('sub', (a, b), a.data - b.data,
                 lambda g: (g, -_reduce_to(g, mode, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype('mul', a, b)
    mode = _broadcast_kind('mul', a, b)
    return _emit('mul', (a, b), a.data * b.data,
                 lambda g: (g * b.data, _reduce_to(g * a.data, mode, b.shape)))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit('scale', (x,), x.data * c, lambda g: (g * c,))


def square(x: Tensor) -> Tensor:
    return _emit('square', (x,), x.data * x.data, lambda g: (2.0 * x.data * g,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _emit('exp', (x,), y, lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError(f'log: non-positive input (min={float(x.data.min())})')
    return _emit('log', (x,), np.log(x.data), lambda g: (g / x.data,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit('relu', (x,), np.where(mask, x.data, 0).astype(x.data.dtype),
                 lambda g: (g * mask,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _emit('clip', (x,), np.clip(x.data, lo, hi), lambda g: (g * inside,))


# ── reductions ───────────────────────────────────────────────────────────────

def sum(x: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    if axis is None:
        return _emit('sum', (x,), np.asarray(x.data.sum(), dtype=x.data.dtype),
                     lambda g: (np.broadcast_to(g, x.shape).copy(),))
    if axis != 1:
        raise TensorError('sum: only axis=None or axis=1 (row sums) are supported')
    _need_2d('sum', x)
    return _emit('sum', (x,), x.data.sum(axis=1),
                 lambda g: (np.repeat(g[:, None], x.shape[1], axis=1),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    if n == 0:
        raise ShapeError('mean', [x.shape], 'needs at least one element')
    return _emit('mean', (x,), np.asarray(x.data.mean(), dtype=x.data.dtype),
                 lambda g: (np.full(x.shape, g / n, dtype=x.data.dtype),))


# ── matrix ───────────────────────────────────────────────────────────────────

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype('matmul', a, b)
    _need_2d('matmul', a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError('matmul', [a.shape, b.shape], 'inner dimensions differ')
    return _emit('matmul', (a, b), a.data @ b.data,
                 lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(x: Tensor) -> Tensor:
    _need_2d('transpose', x)
    return _emit('transpose', (x,), x.data.T.copy(), lambda g: (g.T,))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError('concat_rows', [], 'needs at least one operand')
    _same_dtype('concat_rows', *parts)
    _need_2d('concat_rows', *parts)
    if len({p.shape[1] for p in parts}) != 1:
        raise ShapeError('concat_rows', [p.shape for p in parts], 'column counts differ')
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _emit('concat_rows', parts, np.concatenate([p.data for p in parts], axis=0),
                 backward)


def gather_rows(x: Tensor, index) -> Tensor:
    _need_2d('gather_rows', x)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError('gather_rows', [x.shape, index.shape], 'row index out of range')

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _emit('gather_rows', (x,), x.data[index], backward)


# ── row-wise ─────────────────────────────────────────────────────────────────

def softmax_rows(x: Tensor) -> Tensor:
    _need_2d('softmax_rows', x)
    y = softmax(x.data, axis=1).astype(x.data.dtype)

    def backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _emit('softmax_rows', (x,), y, backward)


def log_softmax_rows(x: Tensor) -> Tensor:
    _need_2d('log_softmax_rows', x)
    y = (x.data - logsumexp(x.data, axis=1, keepdims=True)).astype(x.data.dtype)

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=1, keepdims=True),)

    return _emit('log_softmax_rows', (x,), y, backward)


def l2_normalize_rows(x: Tensor) -> Tensor:
    """Rows divided by (L2 norm + 1e-12); zero rows stay zero."""
    _need_2d('l2_normalize_rows', x)
    r = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    n = r + NORM_EPS
    y = x.data / n

    def backward(g):
        dot = (g * x.data).sum(axis=1, keepdims=True)
        safe_r = np.where(r > 0, r, 1.0)
        return (g / n - x.data * dot / (n * n * safe_r),)

    return _emit('l2_normalize_rows', (x,), y, backward)


PRIMITIVES: Dict[str, Callable[..., Tensor]] = {
    'add': add, 'sub': sub, 'mul': mul, 'matmul': matmul, 'relu': relu,
    'exp': exp, 'log': log, 'square': square, 'sum': sum, 'mean': mean,
    'softmax_rows': softmax_rows, 'log_softmax_rows': log_softmax_rows,
    'l2_normalize_rows': l2_normalize_rows, 'concat_rows': concat_rows,
    'transpose': transpose, 'gather_rows': gather_rows, 'scale': scale, 'clip': clip,
}


def primitive_forward(kind: str, *inputs, **params) -> Tensor:
    """Dispatch a primitive by name, e.g. ``primitive_forward('matmul', a, b)``."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise TensorError(f'unknown primitive {kind!r}') from None
    return fn(*inputs, **params)


# ── backward ─────────────────────────────────────────────────────────────────

class GradientMap:
    """Gradients keyed by tensor identity."""

    def __init__(self):
        self._grads: Dict[int, np.ndarray] = {}
        self._tensors: Dict[int, Tensor] = {}

    def _set(self, t: Tensor, g: np.ndarray) -> None:
        self._grads[id(t)] = g
        self._tensors[id(t)] = t

    def __getitem__(self, t: Tensor) -> np.ndarray:
        return self._grads[id(t)]

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def __len__(self):
        return len(self._grads)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._tensors.values())

    def items(self):
        return [(self._tensors[k], g) for k, g in self._grads.items()]


def backward(loss: Tensor, tape: Tape,
             params: Optional[Sequence[Tensor]] = None) -> GradientMap:
    """Reverse pass from a scalar loss.

    Each requires-grad leaf on the tape (or each tensor in ``params``) gets
    d loss / d leaf; leaves the loss does not reach get zeros. The gradient is
    also stored on ``leaf.grad``.
    """
    if loss.size != 1:
        raise BackwardError(f'backward needs a scalar loss, got shape {loss.shape}')
    if tape.consumed:
        raise BackwardError('tape already consumed; run the forward pass again')
    tape.consumed = True

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = set()
    leaves: Dict[int, Tensor] = {}
    for node in tape.nodes:
        produced.add(id(node.output))
    for node in tape.nodes:
        for t in node.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t

    for node in reversed(tape.nodes):
        g = grads.get(id(node.output))
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.asarray(gi, dtype=t.data.dtype).copy()

    targets = list(params) if params is not None else list(leaves.values())
    result = GradientMap()
    for t in targets:
        g = grads.get(id(t))
        if g is None:
            g = np.zeros_like(t.data)
        g = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
        t.grad = g
        result._set(t, g)
    return result


def finite_diff_check(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                      skip_kinks: bool = False, min_magnitude: float = 0.0,
                      denom_floor: float = 1e-12) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is |a - n| / (|a| + |n| + denom_floor).
    ``skip_kinks`` drops coordinates whose value lies within ``eps`` of 0
    (relu's non-differentiable point); ``min_magnitude`` drops coordinates
    where both gradients are smaller than it.
    """
    with Tape() as tape:
        loss = fn()
    _finite_value(loss)
    grads = backward(loss, tape, params)

    worst = 0.0
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            analytic = grads[p].reshape(-1)
            for i in range(flat.size):
                x0 = flat[i]
                if skip_kinks and abs(float(x0)) < eps:
                    continue
                flat[i] = x0 + eps
                f_plus = _finite_value(fn())
                flat[i] = x0 - eps
                f_minus = _finite_value(fn())
                flat[i] = x0
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = float(analytic[i])
                if max(abs(a), abs(numeric)) < min_magnitude:
                    continue
                rel = abs(a - numeric) / (abs(a) + abs(numeric) + denom_floor)
                worst = max(worst, rel)
    return worst


def _finite_value(value: Union[Tensor, float]) -> float:
    v = value.item() if isinstance(value, Tensor) else float(value)
    if not np.isfinite(v):
        raise GradientCheckError(f'function value is not finite: {v}')
    return v
