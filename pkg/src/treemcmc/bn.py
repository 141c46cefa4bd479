"""Bayesian-network structures as choice-point programs.

Two priors are provided. The pairwise prior visits every unordered pair of
variables once and picks "Y parent of X", "Y child of X" or "no edge";
choices that close a directed cycle or break a hard constraint end the
derivation in failure. The ordered prior only ever offers choices that keep
the graph consistent with a fixed variable ordering and the constraints,
so it has no failure leaves.

Parent sets and ancestor sets are stored as integer bitmasks over the
variable order.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import InconsistentConstraints, ValidationError
from .tree import FAILURE, ChoicePoint, ChoiceProgram, Success

__all__ = [
    "VariableSet",
    "Dag",
    "CycleDetected",
    "CYCLE",
    "EdgeParams",
    "Constraints",
    "try_add_edge",
    "pair_order",
    "count_dags",
    "PairwiseProgram",
    "OrderedProgram",
    "build_pairwise_program",
    "build_ordered_program",
]

_NAME = re.compile(r"^[A-Za-z0-9_.]+$")
UNIFORM = (1 / 3, 1 / 3, 1 / 3)


def _bits(mask: int) -> tuple[int, ...]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


@dataclass(frozen=True)
class VariableSet:
    names: tuple[str, ...]
    domains: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "domains", tuple(int(d) for d in self.domains))
        if len(set(self.names)) != len(self.names):
            raise ValidationError(f"duplicate variable names in {self.names}")
        if len(self.domains) != len(self.names):
            raise ValidationError("one domain size per variable is required")
        for name, size in zip(self.names, self.domains):
            if not _NAME.match(name):
                raise ValidationError(f"bad variable name {name!r} (letters, digits, '_' and '.' only)")
            if size < 2:
                raise ValidationError(f"variable {name} needs at least 2 categories, got {size}")

    @classmethod
    def binary(cls, names: Iterable[str]) -> "VariableSet":
        names = tuple(names)
        return cls(names, (2,) * len(names))

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown variable {name!r}") from None


class CycleDetected:
    """Returned (not raised) when an edge would close a directed cycle."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "CYCLE"


CYCLE = CycleDetected()


class Dag:
    """A DAG over named variables, as per-variable parent bitmasks.

    Equality and hashing use only the names and parent sets. Ancestor
    bitmasks are kept when built through :func:`try_add_edge` and computed
    on demand otherwise.
    """

    __slots__ = ("names", "parents", "_anc", "_hash")

    def __init__(self, names: Sequence[str], parents: Sequence[int], ancestors: Sequence[int] | None = None):
        self.names = tuple(names)
        self.parents = tuple(parents)
        self._anc = tuple(ancestors) if ancestors is not None else None
        self._hash = None

    @classmethod
    def empty(cls, names: Sequence[str]) -> "Dag":
        n = len(names)
        return cls(names, (0,) * n, (0,) * n)

    @classmethod
    def from_edges(cls, names: Sequence[str], edges: Iterable[tuple[str, str]]) -> "Dag":
        names = tuple(names)
        parents = [0] * len(names)
        for p, c in edges:
            parents[names.index(c)] |= 1 << names.index(p)
        dag = cls(names, parents)
        if not dag.is_acyclic():
            raise ValidationError(f"edges {sorted(edges)} contain a directed cycle")
        return dag

    @classmethod
    def parse(cls, text: str, names: Sequence[str]) -> "Dag":
        """Inverse of ``str``: ``"B-[L] L-[] S-[B]"``."""
        names = tuple(names)
        parents = [0] * len(names)
        seen = []
        for token in text.split():
            m = re.fullmatch(r"([^\[\]]+)-\[([^\[\]]*)\]", token)
            if m is None:
                raise ValidationError(f"bad family {token!r} in model {text!r}")
            child = m.group(1)
            if child not in names:
                raise ValidationError(f"unknown variable {child!r} in model {text!r}")
            seen.append(child)
            for p in filter(None, m.group(2).split(",")):
                if p not in names:
                    raise ValidationError(f"unknown variable {p!r} in model {text!r}")
                parents[names.index(child)] |= 1 << names.index(p)
        if tuple(seen) != names:
            raise ValidationError(f"model {text!r} does not list families in order {names}")
        return cls(names, parents)

    def __eq__(self, other):
        if not isinstance(other, Dag):
            return NotImplemented
        return self.parents == other.parents and self.names == other.names

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.names, self.parents))
        return self._hash

    def __str__(self):
        return " ".join(
            f"{name}-[{','.join(self.names[p] for p in _bits(mask))}]"
            for name, mask in zip(self.names, self.parents)
        )

    def __repr__(self):
        return f"Dag({str(self)!r})"

    @property
    def ancestors(self) -> tuple[int, ...]:
        if self._anc is None:
            self._anc = self._closure()
        return self._anc

    def _closure(self) -> tuple[int, ...]:
        anc = list(self.parents)
        changed = True
        while changed:
            changed = False
            for v in range(len(anc)):
                new = anc[v]
                for p in _bits(anc[v]):
                    new |= anc[p]
                if new != anc[v]:
                    anc[v] = new
                    changed = True
        return tuple(anc)

    def is_acyclic(self) -> bool:
        return all(not (a >> v) & 1 for v, a in enumerate(self.ancestors))

    def parent_indices(self, v: int) -> tuple[int, ...]:
        return _bits(self.parents[v])

    def families(self) -> list[tuple[str, tuple[str, ...]]]:
        return [(name, tuple(self.names[p] for p in _bits(mask))) for name, mask in zip(self.names, self.parents)]

    def ancestor_sets(self) -> dict[str, tuple[str, ...]]:
        return {name: tuple(self.names[a] for a in _bits(mask)) for name, mask in zip(self.names, self.ancestors)}

    def edges(self) -> list[tuple[str, str]]:
        return [(self.names[p], self.names[c]) for c, mask in enumerate(self.parents) for p in _bits(mask)]

    def has_edge(self, parent: int, child: int) -> bool:
        return bool((self.parents[child] >> parent) & 1)

    def n_edges(self) -> int:
        return sum(m.bit_count() for m in self.parents)

    def reversed(self) -> "Dag":
        parents = [0] * len(self.names)
        for c, mask in enumerate(self.parents):
            for p in _bits(mask):
                parents[p] |= 1 << c
        return Dag(self.names, parents)


def try_add_edge(dag: Dag, source: int, target: int) -> Dag | CycleDetected:
    """Add ``source -> target``, updating ancestor sets of ``target`` and its descendants."""
    if source == target:
        raise ValidationError("self-loops are not allowed")
    anc = dag.ancestors
    if (anc[source] >> target) & 1:
        return CYCLE
    gained = anc[source] | (1 << source)
    new_anc = tuple(
        a | gained if (w == target or (a >> target) & 1) else a for w, a in enumerate(anc)
    )
    parents = list(dag.parents)
    parents[target] |= 1 << source
    return Dag(dag.names, parents, new_anc)


def pair_order(n: int) -> list[tuple[int, int]]:
    """Pairs visited by the programs: each variable against its predecessors, nearest first.

    For three variables (0, 1, 2) this is (0,1), (1,2), (0,2).
    """
    return [(i, j) for j in range(1, n) for i in range(j - 1, -1, -1)]


def count_dags(n: int) -> int:
    """Number of labelled DAGs on ``n`` nodes (inclusion-exclusion recurrence)."""
    if n < 0:
        raise ValidationError("n must be non-negative")
    if n > 12:
        raise OverflowError("count_dags supports n <= 12")
    a = [1]
    for m in range(1, n + 1):
        a.append(
            sum((-1) ** (k + 1) * math.comb(m, k) * 2 ** (k * (m - k)) * a[m - k] for k in range(1, m + 1))
        )
    return a[n]


def _check_triple(t, where: str) -> tuple[float, float, float]:
    t = tuple(float(x) for x in t)
    if len(t) != 3 or any(x < 0 for x in t) or abs(math.fsum(t) - 1.0) > 1e-12:
        raise ValidationError(f"{where}: edge probabilities must be 3 non-negative numbers summing to 1, got {t}")
    return t


@dataclass(frozen=True)
class EdgeParams:
    """Edge-outcome probabilities per pair.

    For the pair ``(X, Y)`` the triple is (Y parent of X, Y child of X, no
    edge). ``per_pair`` overrides ``default``; an override given for
    ``(Y, X)`` is read with its first two entries swapped.
    """

    default: tuple[float, float, float] = UNIFORM
    per_pair: Mapping[tuple[str, str], tuple[float, float, float]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "default", _check_triple(self.default, "default"))
        checked = {}
        for key, t in self.per_pair.items():
            if (key[1], key[0]) in checked:
                raise ValidationError(f"pair {key} given twice")
            checked[tuple(key)] = _check_triple(t, f"pair {key}")
        object.__setattr__(self, "per_pair", checked)

    def for_pair(self, x: str, y: str) -> tuple[float, float, float]:
        if (x, y) in self.per_pair:
            return self.per_pair[(x, y)]
        if (y, x) in self.per_pair:
            p1, p2, p3 = self.per_pair[(y, x)]
            return (p2, p1, p3)
        return self.default


@dataclass(frozen=True)
class Constraints:
    ordering: tuple[str, ...] | None = None
    max_parents: int | None = None
    forced_parents: Mapping[str, frozenset] = field(default_factory=dict)
    forbidden: frozenset = frozenset()
    required: frozenset = frozenset()

    def __post_init__(self):
        if self.ordering is not None:
            object.__setattr__(self, "ordering", tuple(self.ordering))
        object.__setattr__(self, "forced_parents", {k: frozenset(v) for k, v in self.forced_parents.items()})
        object.__setattr__(self, "forbidden", frozenset(tuple(e) for e in self.forbidden))
        object.__setattr__(self, "required", frozenset(tuple(e) for e in self.required))
        if self.max_parents is not None and self.max_parents < 0:
            raise InconsistentConstraints("max_parents must be non-negative")
        both = self.required & self.forbidden
        if both:
            raise InconsistentConstraints(f"edges both required and forbidden: {sorted(both)}")
        for a, b in self.required:
            if (b, a) in self.required:
                raise InconsistentConstraints(f"edges {a}->{b} and {b}->{a} both required")
        for child, ps in self.forced_parents.items():
            if self.max_parents is not None and len(ps) > self.max_parents:
                raise InconsistentConstraints(f"{child} forced to {len(ps)} parents, above max_parents")
            for p in ps:
                if (p, child) in self.forbidden:
                    raise InconsistentConstraints(f"forced parent {p} of {child} is forbidden")
        for p, c in self.required:
            if c in self.forced_parents and p not in self.forced_parents[c]:
                raise InconsistentConstraints(f"required edge {p}->{c} contradicts forced parents of {c}")
        if self.ordering is not None:
            pos = {v: i for i, v in enumerate(self.ordering)}
            for p, c in self.all_required():
                if p in pos and c in pos and pos[p] > pos[c]:
                    raise InconsistentConstraints(f"required edge {p}->{c} violates the ordering")
        if self.max_parents is not None:
            counts: dict[str, int] = {}
            for _, c in self.all_required():
                counts[c] = counts.get(c, 0) + 1
            over = [c for c, k in counts.items() if k > self.max_parents]
            if over:
                raise InconsistentConstraints(f"required parents exceed max_parents for {over}")

    def all_required(self) -> set[tuple[str, str]]:
        req = set(self.required)
        for c, ps in self.forced_parents.items():
            req.update((p, c) for p in ps)
        return req

    def check_variables(self, variables: VariableSet) -> None:
        names = set(variables.names)
        mentioned = set(self.forced_parents)
        for ps in self.forced_parents.values():
            mentioned |= ps
        for e in self.forbidden | self.required:
            mentioned |= set(e)
        if self.ordering is not None:
            if sorted(self.ordering) != sorted(variables.names):
                raise InconsistentConstraints("ordering must list every variable exactly once")
        unknown = mentioned - names
        if unknown:
            raise InconsistentConstraints(f"constraints mention unknown variables {sorted(unknown)}")
        for p, c in self.forbidden | self.required:
            if p == c:
                raise InconsistentConstraints(f"self-loop {p}->{c} in constraints")

    def violations(self, dag: Dag) -> list[str]:
        """Human-readable list of constraints ``dag`` breaks (empty if none)."""
        out = []
        edges = set(dag.edges())
        fams = dict(dag.families())
        if self.ordering is not None:
            pos = {v: i for i, v in enumerate(self.ordering)}
            out += [f"{p}->{c} against ordering" for p, c in edges if pos[p] > pos[c]]
        if self.max_parents is not None:
            out += [f"{c} has {len(ps)} parents" for c, ps in fams.items() if len(ps) > self.max_parents]
        for c, ps in self.forced_parents.items():
            if set(fams[c]) != set(ps):
                out.append(f"{c} has parents {fams[c]}, forced {sorted(ps)}")
        out += [f"forbidden {p}->{c}" for p, c in self.forbidden & edges]
        out += [f"missing required {p}->{c}" for p, c in self.required - edges]
        if not dag.is_acyclic():
            out.append("cycle")
        return out


_DEAD = ("dead",)


class PairwiseProgram(ChoiceProgram):
    """Pairwise-edge prior; cycles and constraint breaches are failures.

    Every pair is a three-way choice point with the raw pair probabilities,
    so the tree has depth ``n(n-1)/2`` and zero-probability branches stay
    present (they are simply never sampled).
    """

    def __init__(self, variables: VariableSet, params: EdgeParams, constraints: Constraints):
        constraints.check_variables(variables)
        self.variables = variables
        self.params = params
        self.constraints = constraints
        names = variables.names
        n = len(names)
        self.pairs = pair_order(n)
        self.max_depth = len(self.pairs)
        self._probs = [params.for_pair(names[i], names[j]) for i, j in self.pairs]
        idx = {v: k for k, v in enumerate(names)}
        pos = {idx[v]: k for k, v in enumerate(constraints.ordering)} if constraints.ordering else None
        forced = {idx[c]: {idx[p] for p in ps} for c, ps in constraints.forced_parents.items()}
        forbidden = {(idx[p], idx[c]) for p, c in constraints.forbidden}
        required = {(idx[p], idx[c]) for p, c in constraints.all_required()}
        self._max_parents = constraints.max_parents

        def edge_ok(u, v):
            if (u, v) in forbidden or (v, u) in required:
                return False
            if pos is not None and pos[u] > pos[v]:
                return False
            return not (v in forced and u not in forced[v])

        self._allowed = []
        for i, j in self.pairs:
            none_ok = (i, j) not in required and (j, i) not in required
            self._allowed.append((edge_ok(j, i), edge_ok(i, j), none_ok))

    def root(self):
        return (0, Dag.empty(self.variables.names))

    def expand(self, state):
        if state is _DEAD:
            return FAILURE
        k, dag = state
        if k == len(self.pairs):
            return Success(dag)
        return ChoicePoint(self._probs[k], lambda c: self._step(k, dag, c))

    def _step(self, k, dag, c):
        if not self._allowed[k][c]:
            return _DEAD
        if c == 2:
            return (k + 1, dag)
        i, j = self.pairs[k]
        u, v = (j, i) if c == 0 else (i, j)
        if self._max_parents is not None and dag.parents[v].bit_count() >= self._max_parents:
            return _DEAD
        new = try_add_edge(dag, u, v)
        if new is CYCLE:
            return _DEAD
        return (k + 1, new)


class OrderedProgram(ChoiceProgram):
    """Failure-free prior over DAGs consistent with a total order.

    For each pair only "earlier parent of later" or "no edge" is offered,
    with the pair's two probabilities rescaled to sum to one. Outcomes ruled
    out by constraints (forbidden edge, exhausted parent budget, forced
    parent sets) are dropped and the rest renormalised; a pair left with a
    single outcome is applied without a choice point.
    """

    def __init__(self, variables: VariableSet, order: Sequence[str], params: EdgeParams, constraints: Constraints):
        order = tuple(order)
        constraints.check_variables(variables)
        if sorted(order) != sorted(variables.names):
            raise InconsistentConstraints("order must list every variable exactly once")
        if constraints.ordering is not None and tuple(constraints.ordering) != order:
            raise InconsistentConstraints("constraint ordering differs from the program order")
        pos_name = {v: i for i, v in enumerate(order)}
        for p, c in constraints.all_required():
            if pos_name[p] > pos_name[c]:
                raise InconsistentConstraints(f"required edge {p}->{c} violates the order")
        self.variables = variables
        self.order = order
        self.params = params
        self.constraints = constraints
        names = variables.names
        n = len(names)
        idx = {v: k for k, v in enumerate(names)}
        pos = {idx[v]: k for k, v in enumerate(order)}
        forced = {idx[c]: {idx[p] for p in ps} for c, ps in constraints.forced_parents.items()}
        forbidden = {(idx[p], idx[c]) for p, c in constraints.forbidden}
        required = {(idx[p], idx[c]) for p, c in constraints.all_required()}
        self._max_parents = constraints.max_parents
        self.pairs = pair_order(n)

        # per pair: (source, target, kind, p_edge, p_none); kind in {"req", "no", "free"}
        self._plan = []
        for i, j in self.pairs:
            p1, p2, p3 = params.for_pair(names[i], names[j])
            if pos[i] < pos[j]:
                u, v, pe = i, j, p2
            else:
                u, v, pe = j, i, p1
            if (u, v) in required:
                kind = "req"
            elif (u, v) in forbidden or v in forced or pe == 0.0:
                kind = "no"
            else:
                kind = "free"
            self._plan.append((u, v, kind, pe, p3))

        # required parents of each variable still to come after pair k
        self._pending = []
        for k in range(len(self.pairs)):
            counts = [0] * n
            for u, v, kind, _, _ in self._plan[k + 1:]:
                if kind == "req":
                    counts[v] += 1
            self._pending.append(tuple(counts))
        self.max_depth = sum(1 for _, _, kind, pe, pn in self._plan if kind == "free" and pe > 0 and pn > 0)

    def _edge_allowed(self, k, dag, v) -> bool:
        if self._max_parents is None:
            return True
        return dag.parents[v].bit_count() + self._pending[k][v] < self._max_parents

    def _advance(self, k, dag):
        npairs = len(self.pairs)
        while k < npairs:
            u, v, kind, pe, pn = self._plan[k]
            if kind == "req":
                dag = _with_edge(dag, u, v)
            elif kind == "free" and self._edge_allowed(k, dag, v):
                if pe > 0.0 and pn > 0.0:
                    return (k, dag)
                if pe > 0.0:
                    dag = _with_edge(dag, u, v)
            k += 1
        return (k, dag)

    def root(self):
        return self._advance(0, Dag(self.variables.names, (0,) * len(self.variables)))

    def expand(self, state):
        k, dag = state
        if k == len(self.pairs):
            return Success(dag)
        u, v, _, pe, pn = self._plan[k]
        total = pe + pn
        return ChoicePoint(
            (pe / total, pn / total),
            lambda c: self._advance(k + 1, _with_edge(dag, u, v) if c == 0 else dag),
        )


def _with_edge(dag: Dag, u: int, v: int) -> Dag:
    parents = list(dag.parents)
    parents[v] |= 1 << u
    return Dag(dag.names, parents)


def build_pairwise_program(
    variables: VariableSet,
    params: EdgeParams | None = None,
    constraints: Constraints | None = None,
) -> PairwiseProgram:
    return PairwiseProgram(variables, params or EdgeParams(), constraints or Constraints())


def build_ordered_program(
    variables: VariableSet,
    order: Sequence[str] | None = None,
    params: EdgeParams | None = None,
    constraints: Constraints | None = None,
) -> OrderedProgram:
    constraints = constraints or Constraints()
    if order is None:
        order = constraints.ordering if constraints.ordering is not None else variables.names
    return OrderedProgram(variables, order, params or EdgeParams(), constraints)
