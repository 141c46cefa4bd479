"""Data generation, exact posteriors and trace summaries."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .bn import Dag, VariableSet
from .chain import Trace
from .errors import EmptyTrace, FeatureMismatch, ValidationError
from .scoring import Dataset, DirichletSpec, FamilyScorer
from .tree import ChoiceProgram, TreeSummary, enumerate_tree

__all__ = [
    "CptBn",
    "forward_sample",
    "exact_posterior",
    "posterior_table",
    "PosteriorRow",
    "MarginalReport",
    "edge_marginals",
    "model_edge_marginals",
    "Comparison",
    "compare_runs",
    "recover_graph",
    "to_dot",
]


@dataclass(frozen=True, eq=False)
class CptBn:
    """A DAG with one conditional probability table per variable.

    ``cpts[v]`` has shape ``(q_v, r_v)``; row ``j`` is the distribution of
    ``v`` given parent instantiation ``j`` (mixed radix over the parents in
    variable order, last parent fastest).
    """

    variables: VariableSet
    dag: Dag
    cpts: tuple[np.ndarray, ...]
    labels: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self):
        if self.dag.names != self.variables.names:
            raise ValidationError("DAG and variable set disagree")
        if not self.dag.is_acyclic():
            raise ValidationError("network structure is cyclic")
        if len(self.cpts) != len(self.variables):
            raise ValidationError("one CPT per variable is required")
        cpts = []
        dom = self.variables.domains
        for v, table in enumerate(self.cpts):
            name = self.variables.names[v]
            table = np.asarray(table, dtype=float)
            q = math.prod(dom[p] for p in self.dag.parent_indices(v))
            if table.shape != (q, dom[v]):
                raise ValidationError(f"CPT of {name} has shape {table.shape}, expected {(q, dom[v])}")
            if (table < 0).any():
                raise ValidationError(f"CPT of {name} has negative entries")
            sums = table.sum(axis=1)
            bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-9)
            if bad.size:
                raise ValidationError(f"CPT of {name}: row {bad[0]} sums to {sums[bad[0]]:.6g}, not 1")
            table.setflags(write=False)
            cpts.append(table)
        object.__setattr__(self, "cpts", tuple(cpts))

    def topological_order(self) -> list[int]:
        order, placed = [], 0
        remaining = list(range(len(self.variables)))
        while remaining:
            for v in remaining:
                if self.dag.parents[v] & ~placed == 0:
                    order.append(v)
                    placed |= 1 << v
                    remaining.remove(v)
                    break
        return order


def forward_sample(bn: CptBn, n: int, rng: np.random.Generator | int) -> Dataset:
    """Ancestral sampling of ``n`` complete rows."""
    if n < 0:
        raise ValidationError("n must be non-negative")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    dom = bn.variables.domains
    rows = np.zeros((n, len(dom)), dtype=np.int64)
    for v in bn.topological_order():
        code = np.zeros(n, dtype=np.int64)
        for p in bn.dag.parent_indices(v):
            code = code * dom[p] + rows[:, p]
        cdf = np.cumsum(bn.cpts[v], axis=1)[code]
        u = rng.random(n)
        rows[:, v] = np.minimum((u[:, None] >= cdf).sum(axis=1), dom[v] - 1)
    return Dataset(bn.variables, rows, bn.labels)


@dataclass(frozen=True)
class PosteriorRow:
    model: object
    prior: float
    loglik: float
    posterior: float


def posterior_table(
    program: ChoiceProgram,
    data: Dataset,
    alpha: DirichletSpec | None = None,
    max_leaves: int = 10**7,
    summary: TreeSummary | None = None,
) -> list[PosteriorRow]:
    """Exact posterior over every model of an enumerable program.

    Rows are sorted by posterior (descending), ties by model text.
    """
    if summary is None:
        summary = enumerate_tree(program, max_leaves=max_leaves)
    scorer = FamilyScorer(data, alpha)
    models = list(summary.model_prior)
    logliks = [scorer.loglik(m) for m in models]
    logw = [math.log(summary.model_prior[m]) + ll for m, ll in zip(models, logliks)]
    top = max(logw)
    weights = [math.exp(w - top) for w in logw]
    total = math.fsum(weights)
    rows = [
        PosteriorRow(m, summary.model_prior[m], ll, w / total)
        for m, ll, w in zip(models, logliks, weights)
    ]
    rows.sort(key=lambda r: (-r.posterior, str(r.model)))
    return rows


def exact_posterior(
    program: ChoiceProgram, data: Dataset, alpha: DirichletSpec | None = None, max_leaves: int = 10**7
) -> dict:
    """Map each model to its exact posterior probability."""
    return {r.model: r.posterior for r in posterior_table(program, data, alpha, max_leaves)}


@dataclass
class MarginalReport:
    """Posterior parent->child probabilities over all ordered pairs."""

    names: tuple[str, ...]
    probs: dict[tuple[str, str], float]
    n_samples: int

    def __getitem__(self, edge: tuple[str, str]) -> float:
        return self.probs[edge]

    def features(self) -> list[tuple[str, str]]:
        return [(p, c) for c in self.names for p in self.names if p != c]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# samples\t{self.n_samples}\n")
            fh.write("parent\tchild\tprobability\n")
            for p, c in self.features():
                fh.write(f"{p}\t{c}\t{self.probs[(p, c)]!r}\n")

    @classmethod
    def read(cls, path) -> "MarginalReport":
        names: list[str] = []
        probs: dict[tuple[str, str], float] = {}
        n_samples = 0
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if line.startswith("# samples\t"):
                    n_samples = int(line.split("\t")[1])
                    continue
                if not line or line.startswith("#") or line == "parent\tchild\tprobability":
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ValidationError(f"{path}:{lineno}: expected parent, child, probability")
                p, c = parts[0], parts[1]
                try:
                    value = float(parts[2])
                except ValueError:
                    raise ValidationError(f"{path}:{lineno}: bad probability {parts[2]!r}") from None
                if not 0.0 <= value <= 1.0:
                    raise ValidationError(f"{path}:{lineno}: probability {value} outside [0, 1]")
                for v in (c, p):
                    if v not in names:
                        names.append(v)
                probs[(p, c)] = value
        if not probs:
            raise ValidationError(f"{path}: no features")
        return cls(tuple(names), probs, n_samples)


def _report_from_weights(names: Sequence[str], weighted: Iterable[tuple[Dag, float]], n_samples: int) -> MarginalReport:
    names = tuple(names)
    n = len(names)
    acc = [[0.0] * n for _ in range(n)]
    total = 0.0
    for dag, w in weighted:
        total += w
        for c, mask in enumerate(dag.parents):
            p = 0
            while mask:
                if mask & 1:
                    acc[p][c] += w
                mask >>= 1
                p += 1
    probs = {(names[p], names[c]): acc[p][c] / total for c in range(n) for p in range(n) if p != c}
    return MarginalReport(names, probs, n_samples)


def edge_marginals(trace: Trace | Sequence[Dag]) -> MarginalReport:
    """Fraction of retained samples containing each parent->child edge."""
    models = trace.models if isinstance(trace, Trace) else list(trace)
    if not models:
        raise EmptyTrace("trace has no retained samples")
    counts = Counter(models)
    first = models[0]
    return _report_from_weights(first.names, ((m, float(k)) for m, k in counts.items()), len(models))


def model_edge_marginals(distribution: dict) -> MarginalReport:
    """Edge marginals under an explicit model distribution (prior or exact posterior)."""
    if not distribution:
        raise EmptyTrace("empty distribution")
    first = next(iter(distribution))
    return _report_from_weights(first.names, distribution.items(), 0)


@dataclass
class Comparison:
    rows: list[tuple[tuple[str, str], float, float]]
    max_abs_diff: float
    worst: tuple[str, str] | None = None

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# parent\tchild\tp_run1\tp_run2\n")
            for (p, c), a, b in self.rows:
                fh.write(f"{p}\t{c}\t{a!r}\t{b!r}\n")


def compare_runs(a: MarginalReport, b: MarginalReport) -> Comparison:
    """Pair up two reports feature by feature and find the largest gap."""
    if set(a.names) != set(b.names) or set(a.probs) != set(b.probs):
        raise FeatureMismatch("reports cover different variables or features")
    rows = []
    worst, gap = None, 0.0
    for feature in a.features():
        pa, pb = a.probs[feature], b.probs[feature]
        rows.append((feature, pa, pb))
        if abs(pa - pb) > gap:
            worst, gap = feature, abs(pa - pb)
    return Comparison(rows, gap, worst)


def recover_graph(report: MarginalReport, threshold: float) -> list[tuple[str, str]]:
    """Edges whose marginal is strictly above ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold}")
    return [f for f in report.features() if report.probs[f] > threshold]


def to_dot(edges: Iterable[tuple[str, str]], names: Sequence[str], name: str = "recovered") -> str:
    """Graphviz DOT text for a directed graph."""
    lines = [f"digraph {name} {{"]
    lines += [f"  {v};" for v in names]
    lines += [f"  {p} -> {c};" for p, c in edges]
    lines.append("}")
    return "\n".join(lines) + "\n"
