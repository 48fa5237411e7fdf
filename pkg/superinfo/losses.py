"""SuperInfo loss: NT-Xent contrastive term, closed-form Gaussian KL to N(0, I)
and cross-view reconstruction, combined with four non-negative weights.

    L = L_CL + λ1·KL(v1) + λ2·KL(v2) + λ3·RE(v1 | z2) + λ4·RE(v2 | z1)
"""
import math
from dataclasses import dataclass, fields
from typing import Dict, Iterable, Union

import numpy as np

from superinfo.config import LossWeights
from superinfo.models import ModelBundle, decode, encode, gaussian_heads, project
from superinfo.rng import Rng
from superinfo import tensor as T
from superinfo.tensor import ShapeError, Tensor


MASK_VALUE = -1e9
RECON_TARGETS = ('cross', 'self')

Scalar = Union[Tensor, float]


class LossError(Exception):
    """Raised when a loss term is undefined for its inputs."""
    pass


# ── components ───────────────────────────────────────────────────────────────

def nt_xent(z1: Tensor, z2: Tensor, tau: float = 0.5) -> Tensor:
    """Normalized-temperature cross entropy over the 2N embeddings.

    Anchor k's positive is its partner from the other view; the remaining
    2N - 2 embeddings are negatives; self-similarity is masked out.
    """
    if z1.shape != z2.shape or z1.data.ndim != 2:
        raise ShapeError('nt_xent', [z1.shape, z2.shape], 'equal N x P batches')
    n = z1.shape[0]
    if n < 2:
        raise LossError(f'nt_xent needs at least 2 pairs for negatives, got {n}')
    if tau <= 0:
        raise LossError(f'temperature must be positive, got {tau}')
    z = T.l2_normalize_rows(T.concat_rows([z1, z2]))
    logits = T.scale(T.matmul(z, T.transpose(z)), 1.0 / tau)
    mask = np.zeros((2 * n, 2 * n))
    np.fill_diagonal(mask, MASK_VALUE)
    logits = T.add(logits, Tensor(mask, dtype=z1.dtype))
    partner = np.concatenate([np.arange(n, 2 * n), np.arange(0, n)])
    positives = np.zeros((2 * n, 2 * n))
    positives[np.arange(2 * n), partner] = 1.0
    picked = T.sum(T.mul(T.log_softmax_rows(logits), Tensor(positives, dtype=z1.dtype)), axis=1)
    return T.scale(T.mean(picked), -1.0)


def gaussian_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, e^logvar) || N(0, I)) summed over dims, averaged over the batch."""
    if mu.shape != logvar.shape or mu.data.ndim != 2:
        raise ShapeError('gaussian_kl', [mu.shape, logvar.shape], 'equal batch x H shapes')
    batch = mu.shape[0]
    if batch == 0:
        raise LossError('gaussian_kl of an empty batch')
    one = Tensor(np.asarray(1.0), dtype=mu.dtype)
    inner = T.sub(T.sub(T.add(logvar, one), T.square(mu)), T.exp(logvar))
    return T.scale(T.sum(inner), -0.5 / batch)


def recon_loss(v: Tensor, v_hat: Tensor) -> Tensor:
    """Squared L2 distance summed over features, averaged over the batch."""
    if v.shape != v_hat.shape or v.data.ndim != 2:
        raise ShapeError('recon_loss', [v.shape, v_hat.shape], 'equal batch x D shapes')
    batch = v.shape[0]
    if batch == 0:
        raise LossError('recon_loss of an empty batch')
    return T.scale(T.sum(T.square(T.sub(v_hat, v))), 1.0 / batch)


# ── combination ──────────────────────────────────────────────────────────────

@dataclass
class LossBreakdown:
    l_cl: Scalar
    l_kl_1: Scalar
    l_kl_2: Scalar
    l_re_1: Scalar
    l_re_2: Scalar
    l_total: Scalar = 0.0

    def to_dict(self) -> Dict[str, float]:
        return {f.name: _as_float(getattr(self, f.name)) for f in fields(self)}

    def parts(self):
        return (self.l_cl, self.l_kl_1, self.l_kl_2, self.l_re_1, self.l_re_2)


def _as_float(x: Scalar) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


def superinfo_total(parts: Union[LossBreakdown, Iterable[Scalar]],
                    weights: LossWeights) -> LossBreakdown:
    """l_total = l_cl + λ1·l_kl_1 + λ2·l_kl_2 + λ3·l_re_1 + λ4·l_re_2.

    Tensor parts give a differentiable total; float parts give a float.
    """
    values = parts.parts() if isinstance(parts, LossBreakdown) else tuple(parts)
    if len(values) != 5:
        raise LossError(f'expected 5 loss parts, got {len(values)}')
    l_cl, kl1, kl2, re1, re2 = values
    terms = list(zip(weights.as_tuple(), (kl1, kl2, re1, re2)))
    if all(isinstance(v, Tensor) for v in values):
        total = l_cl
        for lam, part in terms:
            total = T.add(total, T.scale(part, lam))
    else:
        total = _as_float(l_cl)
        for lam, part in terms:
            total = total + lam * _as_float(part)
    return LossBreakdown(l_cl, kl1, kl2, re1, re2, total)


def compute_breakdown(bundle: ModelBundle, view1, view2, weights: LossWeights,
                      recon_target: str = 'cross') -> LossBreakdown:
    """One batch through f, g, the Gaussian heads and r.

    ``cross`` reconstructs view 1 from view 2's representation and vice
    versa; ``self`` reconstructs each view from its own representation.
    """
    if recon_target not in RECON_TARGETS:
        raise LossError(f'recon_target must be one of {RECON_TARGETS}, got {recon_target!r}')
    v1 = view1 if isinstance(view1, Tensor) else Tensor(view1, dtype=bundle.dtype)
    v2 = view2 if isinstance(view2, Tensor) else Tensor(view2, dtype=bundle.dtype)
    h1, h2 = encode(bundle, v1), encode(bundle, v2)
    z1, z2 = project(bundle, h1), project(bundle, h2)
    mu1, logvar1 = gaussian_heads(bundle, h1)
    mu2, logvar2 = gaussian_heads(bundle, h2)
    if recon_target == 'cross':
        re1 = recon_loss(v1, decode(bundle, h2))
        re2 = recon_loss(v2, decode(bundle, h1))
    else:
        re1 = recon_loss(v1, decode(bundle, h1))
        re2 = recon_loss(v2, decode(bundle, h2))
    parts = (nt_xent(z1, z2, weights.tau), gaussian_kl(mu1, logvar1),
             gaussian_kl(mu2, logvar2), re1, re2)
    return superinfo_total(parts, weights)


# ── estimates and oracles ────────────────────────────────────────────────────

def infonce_estimate(loss: float, n: int) -> float:
    """Mutual-information estimate ln n - loss implied by an InfoNCE value."""
    return math.log(n) - float(loss)


def monte_carlo_kl(rng: Rng, mu, var, n: int = 1_000_000) -> float:
    """Sample estimate of KL(N(mu, var) || N(0, I)) for a diagonal Gaussian."""
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    var = np.atleast_1d(np.asarray(var, dtype=np.float64))
    if np.any(var <= 0):
        raise LossError('variances must be positive')
    eps = rng.normal((n, mu.size))
    z = mu + np.sqrt(var) * eps
    log_ratio = -0.5 * np.log(var) - 0.5 * eps * eps + 0.5 * z * z
    return float(log_ratio.sum(axis=1).mean())


def linear_gaussian_kl_bound(weight: float, noise_std: float) -> float:
    """KL upper bound on I(v; z) for z = w v + e, v ~ N(0, 1), e ~ N(0, s^2).

    Averages the closed-form KL over the two-point design v = ±1, which has
    the same second moment as N(0, 1); the KL is quadratic in v, so the
    average equals the expectation.
    """
    if noise_std <= 0:
        raise LossError(f'noise_std must be positive, got {noise_std}')
    mu = Tensor(np.array([[weight], [-weight]]), dtype='f64')
    logvar = Tensor(np.full((2, 1), 2.0 * math.log(noise_std)), dtype='f64')
    with T.no_grad():
        return gaussian_kl(mu, logvar).item()
