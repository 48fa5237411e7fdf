"""Exact information quantities on enumerable joint distributions.

All quantities are in nats. Variable roles (the A, B, C of I(A;B|C)) are a
single variable name or a sequence of names forming a composite variable.
"""
import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import entr

from superinfo.rng import Rng

MAX_CARDINALITY = 16
MAX_VARIABLES = 6
SUM_TOL = 1e-12
CSV_RENORMALIZE_TOL = 1e-9
NEGATIVE_TOL = 1e-12

Role = Union[str, Sequence[str]]


class DistributionError(Exception):
    """Raised for invalid joint tables or invalid variable roles."""
    pass


# ── reports ──────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class DecompositionReport:
    total: float
    predictive: float
    superfluous: float
    residual: float


@dataclass(frozen=True)
class SufficiencyReport:
    is_sufficient: bool
    gap: float


@dataclass(frozen=True)
class BayesBoundReport:
    entropy_T: float
    representation_bound: float
    sufficient_bound: float
    minimal_bound: float
    cardinality_T: int

    @property
    def eq9_bound(self) -> float:
        return self.representation_bound

    @property
    def eq10_bound(self) -> float:
        return self.sufficient_bound

    @property
    def eq11_bound(self) -> float:
        return self.minimal_bound


# ── joint distribution ───────────────────────────────────────────────────────

class JointDistribution:
    """Probability table over named finite variables (one axis per variable)."""

    def __init__(self, names: Sequence[str], table: np.ndarray):
        names = list(names)
        table = np.array(table, dtype=np.float64)
        if len(set(names)) != len(names):
            raise DistributionError(f'duplicate variable names: {names}')
        if table.ndim != len(names):
            raise DistributionError(
                f'table has {table.ndim} axes but {len(names)} variables were named')
        if len(names) > MAX_VARIABLES:
            raise DistributionError(f'at most {MAX_VARIABLES} variables, got {len(names)}')
        for name, card in zip(names, table.shape):
            if not 1 <= card <= MAX_CARDINALITY:
                raise DistributionError(
                    f'variable {name!r} has cardinality {card}; allowed 1..{MAX_CARDINALITY}')
        if not np.all(np.isfinite(table)) or np.any(table < 0):
            raise DistributionError('probabilities must be finite and non-negative')
        total = float(table.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise DistributionError(f'probabilities sum to {total!r}, not 1')
        self.names: Tuple[str, ...] = tuple(names)
        self.table = table
        self.table.flags.writeable = False

    @property
    def cardinalities(self) -> Tuple[int, ...]:
        return self.table.shape

    @property
    def variables(self) -> List[Tuple[str, int]]:
        return list(zip(self.names, self.cardinalities))

    def cardinality(self, role: Role) -> int:
        return int(np.prod([self.table.shape[a] for a in self._axes(role)]))

    def _axes(self, role: Role) -> Tuple[int, ...]:
        names = (role,) if isinstance(role, str) else tuple(role)
        if not names:
            raise DistributionError('empty variable set')
        _no_repeats(names)
        axes = []
        for n in names:
            if n not in self.names:
                raise DistributionError(f'unknown variable {n!r}; have {list(self.names)}')
            axes.append(self.names.index(n))
        return tuple(axes)

    def marginal_table(self, role: Role) -> np.ndarray:
        axes = self._axes(role)
        others = tuple(a for a in range(self.table.ndim) if a not in axes)
        kept = self.table.sum(axis=others) if others else self.table
        remaining = sorted(axes)
        return np.transpose(kept, [remaining.index(a) for a in axes])

    def marginal(self, role: Role) -> 'JointDistribution':
        names = (role,) if isinstance(role, str) else tuple(role)
        return JointDistribution(names, self.marginal_table(role))

    # ── builders ─────────────────────────────────────────────────────────────

    @classmethod
    def random(cls, rng: Rng, names: Sequence[str], cards: Sequence[int]) -> 'JointDistribution':
        """Flat-Dirichlet random table (normalized exponential draws)."""
        cards = tuple(int(c) for c in cards)
        weights = -np.log1p(-rng.uniform(cards))
        return cls(names, weights / weights.sum())

    def extend(self, name: str, card: int, parents: Role,
               kernel: np.ndarray) -> 'JointDistribution':
        """Append ``name`` drawn from p(name | parents) = kernel[parents..., name].

        The new variable depends on ``parents`` only, so it is conditionally
        independent of every other variable given its parents.
        """
        parent_axes = self._axes(parents)
        kernel = np.asarray(kernel, dtype=np.float64)
        expected = tuple(self.table.shape[a] for a in parent_axes) + (card,)
        if kernel.shape != expected:
            raise DistributionError(f'kernel shape {kernel.shape}, expected {expected}')
        if np.any(kernel < 0) or not np.allclose(kernel.sum(axis=-1), 1.0, atol=1e-12, rtol=0):
            raise DistributionError('kernel rows must be non-negative and sum to 1')
        order = np.argsort(parent_axes)
        aligned = np.transpose(kernel, list(order) + [len(parent_axes)])
        shape = [1] * self.table.ndim + [card]
        for a in parent_axes:
            shape[a] = self.table.shape[a]
        table = self.table[..., None] * aligned.reshape(shape)
        return JointDistribution(self.names + (name,), table / table.sum())

    def derive(self, name: str, card: int, parents: Role,
               fn: Callable[..., int]) -> 'JointDistribution':
        """Append a deterministic function of ``parents``."""
        parent_axes = self._axes(parents)
        parent_cards = tuple(self.table.shape[a] for a in parent_axes)
        kernel = np.zeros(parent_cards + (card,))
        for idx in np.ndindex(*parent_cards):
            value = int(fn(*idx))
            if not 0 <= value < card:
                raise DistributionError(f'derived value {value} outside [0, {card})')
            kernel[idx + (value,)] = 1.0
        return self.extend(name, card, parents, kernel)

    # ── CSV ──────────────────────────────────────────────────────────────────

    @classmethod
    def read_csv(cls, path) -> 'JointDistribution':
        """Read ``var:<name>:<cardinality>,...,p`` rows; missing outcomes are 0."""
        try:
            frame = pd.read_csv(path, float_precision='round_trip')
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise DistributionError(f'unreadable joint CSV {path}: {e}') from e
        columns = list(frame.columns)
        if not columns or columns[-1] != 'p':
            raise DistributionError("last CSV column must be 'p'")
        names, cards = [], []
        for col in columns[:-1]:
            parts = str(col).split(':')
            if len(parts) != 3 or parts[0] != 'var' or not parts[2].isdigit():
                raise DistributionError(f'bad header column {col!r}; expected var:<name>:<card>')
            names.append(parts[1])
            cards.append(int(parts[2]))
        if any(not 1 <= c <= MAX_CARDINALITY for c in cards):
            raise DistributionError(f'cardinalities {cards} outside 1..{MAX_CARDINALITY}')
        table = np.zeros(cards)
        seen = set()
        for line, row in enumerate(frame.itertuples(index=False), start=2):
            idx = tuple(_outcome_index(v, line) for v in row[:-1])
            if any(not 0 <= i < c for i, c in zip(idx, cards)):
                raise DistributionError(f'outcome {idx} outside cardinalities {cards}')
            if idx in seen:
                raise DistributionError(f'duplicate outcome {idx}')
            seen.add(idx)
            table[idx] = _probability(row[-1], line)
        if not np.all(np.isfinite(table)) or np.any(table < 0):
            raise DistributionError('probabilities must be finite and non-negative')
        total = float(table.sum())
        if abs(total - 1.0) > CSV_RENORMALIZE_TOL:
            raise DistributionError(f'probabilities sum to {total!r}; refusing to renormalize')
        return cls(names, table / total)

    def to_csv(self, path) -> None:
        header = [f'var:{n}:{c}' for n, c in self.variables] + ['p']
        rows = [list(idx) + [float(self.table[idx])]
                for idx in np.ndindex(*self.cardinalities)]
        pd.DataFrame(rows, columns=header).to_csv(path, index=False)

    def __repr__(self):
        return f'<JointDistribution {self.variables}>'


# ── core quantities ──────────────────────────────────────────────────────────

def _role_names(role: Role) -> Tuple[str, ...]:
    return (role,) if isinstance(role, str) else tuple(role)


def _outcome_index(value, line: int) -> int:
    try:
        f = float(value)
    except (TypeError, ValueError):
        f = math.nan
    if not f.is_integer():
        raise DistributionError(f'CSV line {line}: outcome index {value!r} is not an integer')
    return int(f)


def _probability(value, line: int) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise DistributionError(f'CSV line {line}: probability {value!r} is not a number') from None


def _no_repeats(names: Sequence[str]) -> None:
    repeated = sorted({n for n in names if list(names).count(n) > 1})
    if repeated:
        raise DistributionError(f'variable set repeats {repeated}')


def _disjoint(*roles: Role) -> None:
    seen = set()
    for role in roles:
        _no_repeats(_role_names(role))
        names = set(_role_names(role))
        if names & seen:
            raise DistributionError(f'variable sets overlap on {sorted(names & seen)}')
        seen |= names


def _nonneg(value: float, what: str) -> float:
    if value < -NEGATIVE_TOL:
        raise DistributionError(f'{what} = {value!r} is negative beyond tolerance')
    return max(value, 0.0)


def entropy(joint: JointDistribution, subset: Role) -> float:
    """H(subset) = -sum p ln p over the marginal, with 0 ln 0 = 0."""
    return float(entr(joint.marginal_table(subset)).sum())


def _union(*roles: Role) -> Tuple[str, ...]:
    out: List[str] = []
    for role in roles:
        out.extend(_role_names(role))
    return tuple(out)


def mutual_info(joint: JointDistribution, a: Role, b: Role) -> float:
    _disjoint(a, b)
    value = entropy(joint, a) + entropy(joint, b) - entropy(joint, _union(a, b))
    return _nonneg(value, 'I(A;B)')


def conditional_mi(joint: JointDistribution, a: Role, b: Role, c: Role) -> float:
    """I(A;B|C) = sum_c p(c) I(A;B | C=c), computed through entropies."""
    _disjoint(a, b, c)
    value = (entropy(joint, _union(a, c)) + entropy(joint, _union(b, c))
             - entropy(joint, _union(a, b, c)) - entropy(joint, c))
    return _nonneg(value, 'I(A;B|C)')


def interaction_info(joint: JointDistribution, a: Role, b: Role, c: Role) -> float:
    """I(A;B;C) = I(B;C) - I(B;C|A); may be negative."""
    _disjoint(a, b, c)
    return mutual_info(joint, b, c) - conditional_mi(joint, b, c, a)


def decompose_predictive_superfluous(joint: JointDistribution, source: Role, other: Role,
                                     representation: Role) -> DecompositionReport:
    """Split I(source; repr) into I(other; repr) + I(source; repr | other).

    The residual is zero when the representation depends on ``source`` only;
    a violated assumption shows up as a non-zero residual.
    """
    _disjoint(source, other, representation)
    total = mutual_info(joint, source, representation)
    predictive = mutual_info(joint, other, representation)
    superfluous = conditional_mi(joint, source, representation, other)
    return DecompositionReport(total, predictive, superfluous,
                               abs(total - predictive - superfluous))


def sufficiency_check(joint: JointDistribution, v1: Role, v2: Role, z1: Role,
                      tol: float = 1e-10) -> SufficiencyReport:
    """z1 is sufficient of v1 for v2 iff I(z1;v2) = I(v1;v2)."""
    _disjoint(v1, v2, z1)
    gap = mutual_info(joint, v1, v2) - mutual_info(joint, z1, v2)
    return SufficiencyReport(gap <= tol, gap)


def supervised_sufficiency_check(joint: JointDistribution, x: Role, y: Role, z: Role,
                                 tol: float = 1e-10) -> SufficiencyReport:
    """z is sufficient of x for the label y iff I(x;y|z) = 0."""
    gap = conditional_mi(joint, x, y, z)
    return SufficiencyReport(gap <= tol, gap)


def threshold(x: float, cardinality: int) -> float:
    """Clamp a Bayes error bound to [0, 1 - 1/|T|]."""
    return min(max(x, 0.0), 1.0 - 1.0 / cardinality)


def bayes_bounds(joint: JointDistribution, v1: Role, v2: Role, z1: Role,
                 target: Role) -> BayesBoundReport:
    """Clamped upper bounds on the Bayes error of predicting ``target``.

    The representation bound uses its own interaction term, the sufficient
    bound the views' interaction term, and the minimal bound drops I(z1;T|v2)
    (minimal sufficient representation).
    """
    _disjoint(v1, v2, z1, target)
    card = joint.cardinality(target)
    if card < 2:
        raise DistributionError(f'target needs at least 2 outcomes, has {card}')
    h_t = entropy(joint, target)
    cond = conditional_mi(joint, z1, target, v2)
    inter_z = interaction_info(joint, z1, v2, target)
    inter_v = interaction_info(joint, v1, v2, target)

    def bound(exponent: float) -> float:
        return threshold(1.0 - math.exp(-exponent), card)

    return BayesBoundReport(
        entropy_T=h_t,
        representation_bound=bound(h_t - cond - inter_z),
        sufficient_bound=bound(h_t - cond - inter_v),
        minimal_bound=bound(h_t - inter_v),
        cardinality_T=card,
    )


def gaussian_linear_mi(weight: float, noise_std: float) -> float:
    """I(v; z) for z = w v + e, v ~ N(0, 1), e ~ N(0, s^2)."""
    if noise_std <= 0:
        raise DistributionError(f'noise_std must be positive, got {noise_std}')
    return 0.5 * math.log1p(weight * weight / (noise_std * noise_std))


# ── objectives ───────────────────────────────────────────────────────────────

def conditional_objective(joint: JointDistribution, v1: Role, v2: Role, z1: Role, z2: Role,
                          lambda_a: float, lambda_b: float) -> float:
    """I(z1;z2) - la I(v1;z1|v2) - lb I(v2;z2|v1)."""
    return (mutual_info(joint, z1, z2)
            - lambda_a * conditional_mi(joint, v1, z1, v2)
            - lambda_b * conditional_mi(joint, v2, z2, v1))


def decoupled_objective(joint: JointDistribution, v1: Role, v2: Role, z1: Role, z2: Role,
                        lambdas: Iterable[float]) -> float:
    """I(z1;z2) - l1 I(v1;z1) - l2 I(v2;z2) + l3 I(v1;z2) + l4 I(v2;z1)."""
    l1, l2, l3, l4 = (float(x) for x in lambdas)
    return (mutual_info(joint, z1, z2)
            - l1 * mutual_info(joint, v1, z1) - l2 * mutual_info(joint, v2, z2)
            + l3 * mutual_info(joint, v1, z2) + l4 * mutual_info(joint, v2, z1))
