"""Numerical identity and bound suites behind ``superinfo mi-check``.

Every suite draws its own random joints from ``Rng(seed).substream(name)``
and reports the largest residual it saw against a fixed tolerance.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from superinfo import info
from superinfo.config import LossWeights
from superinfo.info import JointDistribution
from superinfo.losses import gaussian_kl, linear_gaussian_kl_bound, monte_carlo_kl
from superinfo.rng import Rng
from superinfo.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

MAX_STATES = 8
KL_CONFIGS = 50
LINEAR_GAUSSIAN_CONFIGS = 20


@dataclass
class SuiteResult:
    name: str
    max_residual: float
    tol: float
    trials: int

    @property
    def passed(self) -> bool:
        return math.isfinite(self.max_residual) and self.max_residual <= self.tol

    def line(self) -> str:
        tag = 'pass' if self.passed else 'fail'
        return (f'[{tag}] {self.name} max_residual={self.max_residual:.3e} '
                f'tol={self.tol:.0e} trials={self.trials}')


# ── joint builders ───────────────────────────────────────────────────────────

def _card(rng: Rng, lo: int = 2, hi: int = MAX_STATES) -> int:
    return lo + int(rng.integers(1, hi - lo + 1)[0])


def random_kernel(rng: Rng, parent_cards, card: int) -> np.ndarray:
    """Conditional table p(child | parents) with flat-Dirichlet rows."""
    w = -np.log1p(-rng.uniform(tuple(parent_cards) + (card,)))
    return w / w.sum(axis=-1, keepdims=True)


def random_joint(rng: Rng, names) -> JointDistribution:
    return JointDistribution.random(rng, names, [_card(rng) for _ in names])


def with_representation(rng: Rng, joint: JointDistribution, name: str,
                        parent: str) -> JointDistribution:
    """Append ``name`` generated from ``parent`` alone."""
    card = _card(rng)
    return joint.extend(name, card, parent,
                        random_kernel(rng, (joint.cardinality(parent),), card))


def shared_view_joint(rng: Rng) -> JointDistribution:
    """Views v1 = (s, n1), v2 = (s, n2) with a label T depending on s only.

    Returns the marginal over (s, T, v1, v2); ``s`` is a sufficient
    representation of v1 for v2.
    """
    cs, c1, c2 = _card(rng, 2, 4), _card(rng, 2, 4), _card(rng, 2, 4)
    ct = _card(rng, 2, 4)
    joint = JointDistribution.random(rng, ['s'], [cs])
    joint = joint.extend('n1', c1, 's', np.broadcast_to(random_kernel(rng, (), c1), (cs, c1)))
    joint = joint.extend('n2', c2, 's', np.broadcast_to(random_kernel(rng, (), c2), (cs, c2)))
    joint = joint.extend('T', ct, 's', random_kernel(rng, (cs,), ct))
    joint = joint.derive('v1', cs * c1, ['s', 'n1'], lambda s, n: s * c1 + n)
    joint = joint.derive('v2', cs * c2, ['s', 'n2'], lambda s, n: s * c2 + n)
    return joint.marginal(['s', 'T', 'v1', 'v2'])


def _names(role):
    return (role,) if isinstance(role, str) else tuple(role)


# unclamped entropy combinations, for the non-negativity suite
def _raw_mi(joint, a, b) -> float:
    a, b = _names(a), _names(b)
    return info.entropy(joint, a) + info.entropy(joint, b) - info.entropy(joint, a + b)


def _raw_cmi(joint, a, b, c) -> float:
    a, b, c = _names(a), _names(b), _names(c)
    return (info.entropy(joint, a + c) + info.entropy(joint, b + c)
            - info.entropy(joint, a + b + c) - info.entropy(joint, c))


# ── suites ───────────────────────────────────────────────────────────────────

def _symmetry(rng, trials):
    worst = 0.0
    for _ in range(trials):
        j = random_joint(rng, ['A', 'B', 'C'])
        ab = abs(info.mutual_info(j, 'A', 'B') - info.mutual_info(j, 'B', 'A'))
        acb = abs(info.mutual_info(j, ['A', 'C'], 'B') - info.mutual_info(j, 'B', ['A', 'C']))
        worst = max(worst, ab, acb)
    return worst


def _nonnegativity(rng, trials):
    worst = 0.0
    for _ in range(trials):
        j = random_joint(rng, ['A', 'B', 'C'])
        worst = max(worst, -_raw_mi(j, 'A', 'B'), -_raw_cmi(j, 'A', 'B', 'C'))
    return worst


def _chain_rule(rng, trials):
    worst = 0.0
    for _ in range(trials):
        j = random_joint(rng, ['A', 'B', 'C', 'D'][:3 + int(rng.integers(1, 2)[0])])
        lhs = info.mutual_info(j, ['A', 'B'], 'C')
        rhs = info.mutual_info(j, 'B', 'C') + info.conditional_mi(j, 'A', 'C', 'B')
        worst = max(worst, abs(lhs - rhs))
    return worst


def _interaction(rng, trials):
    worst = 0.0
    for _ in range(trials):
        j = random_joint(rng, ['A', 'B', 'C'])
        a = info.interaction_info(j, 'A', 'B', 'C')
        other = info.mutual_info(j, 'A', 'C') - info.conditional_mi(j, 'A', 'C', 'B')
        worst = max(worst, abs(a - other))
    return worst


def _supervised_decomposition(rng, trials):
    worst = 0.0
    for _ in range(trials):
        j = with_representation(rng, random_joint(rng, ['x', 'y']), 'z', 'x')
        worst = max(worst, info.decompose_predictive_superfluous(j, 'x', 'y', 'z').residual)
    return worst


def _multiview_decomposition(rng, trials):
    worst = 0.0
    for _ in range(trials):
        j = with_representation(rng, random_joint(rng, ['v1', 'v2']), 'z1', 'v1')
        worst = max(worst, info.decompose_predictive_superfluous(j, 'v1', 'v2', 'z1').residual)
    return worst


def _data_processing(rng, trials):
    worst = 0.0
    for _ in range(trials):
        j = random_joint(rng, ['v1', 'v2'])
        card = _card(rng)
        table = rng.integers(j.cardinality('v1'), card)
        j = j.derive('z1', card, 'v1', lambda v: int(table[v]))
        excess = info.mutual_info(j, 'z1', 'v2') - info.mutual_info(j, 'v1', 'v2')
        worst = max(worst, excess, 0.0)
    return worst


def _sufficiency(rng, trials):
    worst = 0.0
    for _ in range(trials):
        j = shared_view_joint(rng)
        worst = max(worst, abs(info.sufficiency_check(j, 'v1', 'v2', 's').gap))
        worst = max(worst, info.supervised_sufficiency_check(j, 'v1', 'T', 's').gap)
    return worst


def _bayes_ordering(rng, trials):
    worst = 0.0
    for _ in range(trials):
        j = shared_view_joint(rng)
        report = info.bayes_bounds(j, 'v1', 'v2', 's', 'T')
        worst = max(worst, report.sufficient_bound - report.minimal_bound, 0.0)
        for b in (report.representation_bound, report.sufficient_bound, report.minimal_bound):
            worst = max(worst, -b, b - (1.0 - 1.0 / report.cardinality_T))
    return worst


def _objective_equivalence(rng, trials):
    worst = 0.0
    for _ in range(trials):
        j = random_joint(rng, ['v1', 'v2'])
        j = with_representation(rng, j, 'z1', 'v1')
        j = with_representation(rng, j, 'z2', 'v2')
        la, lb = rng.uniform(2)
        conditional = info.conditional_objective(j, 'v1', 'v2', 'z1', 'z2', la, lb)
        decoupled = info.decoupled_objective(j, 'v1', 'v2', 'z1', 'z2',
                                       LossWeights.symmetric(la, lb).as_tuple())
        worst = max(worst, abs(conditional - decoupled))
    return worst


def _linear_gaussian_bound(rng, trials):
    worst = 0.0
    for _ in range(LINEAR_GAUSSIAN_CONFIGS):
        w = float(rng.uniform(1, -3.0, 3.0)[0])
        s = float(rng.uniform(1, 0.2, 2.0)[0])
        worst = max(worst, info.gaussian_linear_mi(w, s) - linear_gaussian_kl_bound(w, s), 0.0)
    return worst


def make_kl_suite(samples: int) -> Callable[[Rng, int], float]:
    def _kl_monte_carlo(rng, trials):
        worst = 0.0
        for _ in range(KL_CONFIGS):
            mu = float(rng.uniform(1, -1.0, 1.0)[0])
            var = float(rng.uniform(1, 0.5, 2.0)[0])
            with no_grad():
                closed = gaussian_kl(Tensor([[mu]], dtype='f64'),
                                     Tensor([[math.log(var)]], dtype='f64')).item()
            worst = max(worst, abs(closed - monte_carlo_kl(rng, mu, var, samples)))
        return worst
    return _kl_monte_carlo


SUITES = [
    ('symmetry', _symmetry, 1e-12),
    ('nonnegativity', _nonnegativity, 1e-12),
    ('chain_rule', _chain_rule, 1e-10),
    ('interaction', _interaction, 1e-10),
    ('supervised_decomposition', _supervised_decomposition, 1e-10),
    ('multiview_decomposition', _multiview_decomposition, 1e-10),
    ('data_processing', _data_processing, 1e-10),
    ('sufficiency', _sufficiency, 1e-10),
    ('bayes_bound_ordering', _bayes_ordering, 1e-10),
    ('objective_equivalence', _objective_equivalence, 1e-10),
    ('linear_gaussian_kl_bound', _linear_gaussian_bound, 1e-6),
]


def run_suites(trials: int = 100, seed: int = 0, mc_samples: int = 1_000_000,
               only: Optional[List[str]] = None) -> List[SuiteResult]:
    if trials < 1:
        raise ValueError(f'trials must be at least 1, got {trials}')
    root = Rng(seed)
    suites = SUITES + [('kl_monte_carlo', make_kl_suite(mc_samples), 1e-2)]
    results = []
    for name, fn, tol in suites:
        if only and name not in only:
            continue
        residual = fn(root.substream(name), trials)
        result = SuiteResult(name, float(residual), tol, trials)
        logger.info(result.line())
        results.append(result)
    return results


def run_joint_suites(joint: JointDistribution) -> List[SuiteResult]:
    """Property checks on a user-supplied joint, over every ordered role assignment."""
    names = joint.names
    if len(names) < 2:
        raise info.DistributionError('a joint needs at least 2 variables for the identity checks')
    pairs = list(itertools.permutations(names, 2))
    triples = list(itertools.permutations(names, 3))
    checks: Dict[str, List[float]] = {'symmetry': [], 'nonnegativity': [],
                                      'chain_rule': [], 'interaction': []}
    for a, b in pairs:
        checks['symmetry'].append(abs(info.mutual_info(joint, a, b)
                                         - info.mutual_info(joint, b, a)))
        checks['nonnegativity'].append(max(-_raw_mi(joint, a, b), 0.0))
    for a, b, c in triples:
        checks['nonnegativity'].append(max(-_raw_cmi(joint, a, b, c), 0.0))
        lhs = info.mutual_info(joint, [a, b], c)
        rhs = info.mutual_info(joint, b, c) + info.conditional_mi(joint, a, c, b)
        checks['chain_rule'].append(abs(lhs - rhs))
        p4 = info.interaction_info(joint, a, b, c)
        checks['interaction'].append(abs(p4 - (info.mutual_info(joint, a, c)
                                                  - info.conditional_mi(joint, a, c, b))))
    tols = {name: tol for name, _, tol in SUITES}
    return [SuiteResult(f'joint_{name}', max(vals) if vals else 0.0, tols[name],
                        len(vals))
            for name, vals in checks.items() if vals]
