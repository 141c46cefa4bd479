"""Dirichlet-multinomial marginal likelihood for complete discrete data.

The marginal likelihood of a DAG factorises over families; each family
score is a product over observed parent instantiations of gamma-function
ratios. Everything is kept in natural-log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .bn import Dag, VariableSet
from .errors import ChildInParents, UnknownVariable, ValidationError, VariableMismatch

__all__ = [
    "Dataset",
    "CountTable",
    "DirichletSpec",
    "ScoreCache",
    "FamilyScorer",
    "tabulate_counts",
    "family_score_log",
    "model_loglik",
    "delta_loglik",
]

lgamma = math.lgamma


@dataclass(frozen=True, eq=False)
class Dataset:
    """Complete data: ``rows[r, v]`` is the category index of variable ``v``.

    ``labels`` optionally maps each variable's indices back to the category
    labels read from (or written to) CSV.
    """

    variables: VariableSet
    rows: np.ndarray
    labels: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        if rows.ndim == 1 and rows.size == 0:
            rows = rows.reshape(0, len(self.variables))
        if rows.ndim != 2 or rows.shape[1] != len(self.variables):
            raise ValidationError(f"rows must have shape (N, {len(self.variables)}), got {rows.shape}")
        if rows.size:
            dom = np.asarray(self.variables.domains)
            if (rows < 0).any() or (rows >= dom).any():
                raise ValidationError("category index outside its variable's domain")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @classmethod
    def empty(cls, variables: VariableSet) -> "Dataset":
        return cls(variables, np.zeros((0, len(variables)), dtype=np.int64))


@dataclass(frozen=True)
class CountTable:
    """Counts ``N_ijk`` for one family.

    ``configs`` holds the mixed-radix codes of the parent instantiations
    that occur in the data (last parent varies fastest); ``counts[j, k]``
    is the number of rows with that instantiation and child value ``k``.
    """

    child: int
    parents: tuple[int, ...]
    arity: int
    n_configs: int
    configs: np.ndarray
    counts: np.ndarray

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class DirichletSpec:
    """Dirichlet hyperparameters.

    By default every ``alpha_ijk`` equals ``alpha`` (1.0). Giving ``ess``
    (a number, or a per-variable mapping) switches that variable to
    ``alpha_ijk = ess / (q_i * r_i)``.
    """

    alpha: float = 1.0
    ess: float | Mapping[str, float] | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValidationError("alpha must be positive")
        values = self.ess.values() if isinstance(self.ess, Mapping) else [self.ess]
        if any(v is not None and not v > 0 for v in values):
            raise ValidationError("equivalent sample size must be positive")

    def alpha_ijk(self, name: str, arity: int, n_configs: int) -> float:
        ess = self.ess.get(name) if isinstance(self.ess, Mapping) else self.ess
        if ess is None:
            return self.alpha
        return ess / (arity * n_configs)


def _resolve(variables: VariableSet, v) -> int:
    if isinstance(v, (int, np.integer)):
        if not 0 <= v < len(variables):
            raise UnknownVariable(f"variable index {v} out of range")
        return int(v)
    if v not in variables.names:
        raise UnknownVariable(f"unknown variable {v!r}")
    return variables.names.index(v)


def tabulate_counts(data: Dataset, child, parents: Sequence = ()) -> CountTable:
    """Count child values per observed parent instantiation."""
    c = _resolve(data.variables, child)
    ps = tuple(sorted(_resolve(data.variables, p) for p in parents))
    if c in ps:
        raise ChildInParents(f"{data.variables.names[c]} cannot be its own parent")
    if len(set(ps)) != len(ps):
        raise ValidationError("duplicate parents")
    dom = data.variables.domains
    arity = dom[c]
    n_configs = math.prod(dom[p] for p in ps)
    rows = data.rows
    code = np.zeros(rows.shape[0], dtype=np.int64)
    for p in ps:
        code = code * dom[p] + rows[:, p]
    cells = code * arity + rows[:, c]
    uniq, freq = np.unique(cells, return_counts=True)
    configs, slot = np.unique(uniq // arity, return_inverse=True)
    counts = np.zeros((configs.size, arity), dtype=np.int64)
    counts[slot, uniq % arity] = freq
    return CountTable(c, ps, arity, n_configs, configs, counts)


def family_score_log(counts: CountTable, alpha: float | DirichletSpec = 1.0, name: str | None = None) -> float:
    """Log marginal likelihood of one family.

    ``sum_j [lgamma(a_ij) - lgamma(a_ij + N_ij)
    + sum_k (lgamma(a_ijk + N_ijk) - lgamma(a_ijk))]``; unobserved parent
    instantiations contribute nothing.
    """
    if isinstance(alpha, DirichletSpec):
        a = alpha.alpha_ijk(name or "", counts.arity, counts.n_configs)
    else:
        a = float(alpha)
        if not a > 0:
            raise ValidationError("alpha must be positive")
    a_ij = a * counts.arity
    lg_a = lgamma(a)
    lg_aij = lgamma(a_ij)
    total = 0.0
    for row in counts.counts.tolist():
        n_ij = 0
        for n_ijk in row:
            if n_ijk:
                total += lgamma(a + n_ijk) - lg_a
                n_ij += n_ijk
        total += lg_aij - lgamma(a_ij + n_ij)
    return total


class ScoreCache:
    """Family-score cache keyed by ``(child, parent bitmask)``.

    Unbounded unless ``max_entries`` is set, in which case inserts beyond
    the cap are dropped. Concurrent inserts of the same key store the same
    value, so no locking is needed; hit/miss counters are best-effort.
    """

    def __init__(self, max_entries: int | None = None):
        self._store: dict[tuple[int, int], float] = {}
        self.max_entries = max_entries
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._store)

    def __contains__(self, key) -> bool:
        return key in self._store

    def get(self, key):
        return self._store.get(key)

    def put(self, key, value: float) -> None:
        if self.max_entries is None or len(self._store) < self.max_entries:
            self._store.setdefault(key, value)

    def clear(self) -> None:
        self._store.clear()
        self.hits = self.misses = 0


class FamilyScorer:
    """Scores DAGs on a fixed dataset; usable as a chain scorer.

    ``evaluations`` counts family-score requests (cached or not), which
    makes the cancellation in :meth:`delta` observable.
    """

    def __init__(self, data: Dataset, alpha: DirichletSpec | None = None, cache: ScoreCache | None | bool = True):
        self.data = data
        self.alpha = alpha or DirichletSpec()
        if cache is True:
            cache = ScoreCache()
        self.cache = cache if isinstance(cache, ScoreCache) else None
        self.evaluations = 0

    def family(self, child: int, parent_mask: int) -> float:
        self.evaluations += 1
        key = (child, parent_mask)
        cache = self.cache
        if cache is not None:
            value = cache._store.get(key)
            if value is not None:
                cache.hits += 1
                return value
            cache.misses += 1
        parents = [i for i in range(len(self.data.variables)) if (parent_mask >> i) & 1]
        table = tabulate_counts(self.data, child, parents)
        value = family_score_log(table, self.alpha, self.data.variables.names[child])
        if cache is not None:
            cache.put(key, value)
        return value

    def _check(self, dag: Dag) -> None:
        if dag.names != self.data.variables.names:
            raise VariableMismatch(f"DAG variables {dag.names} differ from data {self.data.variables.names}")

    def loglik(self, dag: Dag) -> float:
        self._check(dag)
        return math.fsum(self.family(v, mask) for v, mask in enumerate(dag.parents))

    def delta(self, dag_i: Dag, dag_star: Dag) -> float:
        """``loglik(dag_star) - loglik(dag_i)``, touching only families that differ."""
        if dag_i.names != dag_star.names:
            raise VariableMismatch("DAGs over different variables")
        total = 0.0
        for v, (a, b) in enumerate(zip(dag_i.parents, dag_star.parents)):
            if a != b:
                total += self.family(v, b) - self.family(v, a)
        return total


def model_loglik(dag: Dag, data: Dataset, alpha: DirichletSpec | None = None, cache: ScoreCache | None = None) -> float:
    """Log marginal likelihood of ``dag``: sum of its family scores."""
    return FamilyScorer(data, alpha, cache if cache is not None else False).loglik(dag)


def delta_loglik(
    dag_i: Dag, dag_star: Dag, data: Dataset, alpha: DirichletSpec | None = None, cache: ScoreCache | None = None
) -> float:
    """Log Bayes factor of ``dag_star`` against ``dag_i``."""
    scorer = FamilyScorer(data, alpha, cache if cache is not None else False)
    scorer._check(dag_i)
    return scorer.delta(dag_i, dag_star)
