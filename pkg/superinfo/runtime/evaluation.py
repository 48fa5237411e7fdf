"""Linear-probe evaluation of frozen encoder features."""
import logging
import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from superinfo.config import ProbeConfig
from superinfo.data import DatasetContainer
from superinfo.models import ModelBundle, encode
from superinfo import tensor as T
from superinfo.tensor import ShapeError, Tensor

logger = logging.getLogger(__name__)


class ProbeError(Exception):
    """Raised when a probe cannot be fit or scored."""
    pass


class ProbeResult(BaseModel):
    model_config = ConfigDict(extra='forbid')

    accuracy: float
    per_class: List[Optional[float]]
    confusion: List[List[int]]
    n_train: int
    n_test: int
    seed: int
    converged: bool
    loss: float


def extract_features(bundle: ModelBundle,
                     dataset: Union[DatasetContainer, np.ndarray]) -> np.ndarray:
    """Encoder output h for every row (view 1 of paired data); no augmentation."""
    x = dataset.features(1) if isinstance(dataset, DatasetContainer) else np.asarray(dataset)
    if x.ndim != 2 or x.shape[1] != bundle.input_dim:
        raise ShapeError('extract_features', [x.shape, (bundle.input_dim,)],
                         'dataset width must equal the encoder input dim')
    with T.no_grad():
        h = encode(bundle, Tensor(x, dtype=bundle.dtype))
    return h.data.astype(np.float64)


def _standardize(train: np.ndarray, test: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (train - mean) / std, (test - mean) / std


def linear_probe(x_train: np.ndarray, y_train: np.ndarray, x_test: np.ndarray,
                 y_test: np.ndarray, config: Optional[ProbeConfig] = None) -> ProbeResult:
    """Softmax regression fit by full-batch gradient descent from zero weights.

    Predictions take the argmax logit; ties go to the lowest class index.
    """
    config = config or ProbeConfig()
    x_train = np.asarray(x_train, dtype=np.float64)
    x_test = np.asarray(x_test, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    y_test = np.asarray(y_test, dtype=np.int64)
    if x_train.ndim != 2 or x_test.ndim != 2 or x_train.shape[1] != x_test.shape[1]:
        raise ShapeError('linear_probe', [x_train.shape, x_test.shape], 'equal feature widths')
    if len(y_train) != len(x_train) or len(y_test) != len(x_test):
        raise ShapeError('linear_probe', [x_train.shape, y_train.shape, x_test.shape,
                                          y_test.shape], 'one label per row')
    if len(np.unique(y_train)) < 2:
        raise ProbeError('training labels contain fewer than 2 classes')
    if len(y_test) == 0:
        raise ProbeError('empty test set')
    if config.standardize:
        x_train, x_test = _standardize(x_train, x_test)

    k = int(max(y_train.max(), y_test.max())) + 1
    n, d = x_train.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y_train] = 1.0
    xs = Tensor(x_train, dtype='f64')
    targets = Tensor(onehot, dtype='f64')
    w = T.zeros((d, k), dtype='f64', requires_grad=True)
    b = T.zeros((k,), dtype='f64', requires_grad=True)

    loss_value, grad_norm = math.nan, math.inf
    for _ in range(config.iterations):
        with T.Tape() as tape:
            logp = T.log_softmax_rows(T.add(T.matmul(xs, w), b))
            loss = T.scale(T.mean(T.sum(T.mul(logp, targets), axis=1)), -1.0)
        grads = T.backward(loss, tape, [w, b])
        loss_value = loss.item()
        grad_norm = math.sqrt(float(np.sum(grads[w] ** 2) + np.sum(grads[b] ** 2)))
        w.assign_(w.data - config.lr * grads[w])
        b.assign_(b.data - config.lr * grads[b])

    logits = x_test @ w.data + b.data
    pred = np.argmax(logits, axis=1)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (y_test, pred), 1)
    totals = confusion.sum(axis=1)
    per_class = [float(confusion[c, c] / totals[c]) if totals[c] else None for c in range(k)]
    accuracy = float(np.trace(confusion) / len(y_test))
    converged = grad_norm < config.tol
    logger.debug('probe: accuracy=%.4f loss=%.6f grad_norm=%.3g', accuracy, loss_value, grad_norm)
    return ProbeResult(
        accuracy=accuracy, per_class=per_class, confusion=confusion.tolist(),
        n_train=n, n_test=len(y_test), seed=config.seed, converged=converged, loss=loss_value,
    )


def probe_bundle(bundle: ModelBundle, train: DatasetContainer, test: DatasetContainer,
                 config: Optional[ProbeConfig] = None) -> ProbeResult:
    if train.labels is None or test.labels is None:
        raise ProbeError('probe datasets must carry labels')
    return linear_probe(extract_features(bundle, train), train.labels,
                        extract_features(bundle, test), test.labels, config)


def transfer_eval(bundle: ModelBundle,
                  datasets: Sequence[Tuple[DatasetContainer, DatasetContainer]],
                  config: Optional[ProbeConfig] = None) -> List[ProbeResult]:
    """Probe each (train, test) pair on the frozen encoder."""
    return [probe_bundle(bundle, train, test, config) for train, test in datasets]


def mean_accuracy(results: Sequence[ProbeResult]) -> Optional[float]:
    if not results:
        return None
    return float(np.mean([r.accuracy for r in results]))
