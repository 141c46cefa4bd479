"""Text formats: key-value config files, network specs and CSV datasets.

Key-value files hold one ``key = value`` per line; ``#`` starts a comment.
Probabilities may be written as decimals or fractions (``1/3``).

Prior/constraint config keys::

    variables = A S T L B E X D     optional; defaults to the data header
    domains.X = 3                   optional category count
    labels.X = no yes               optional label order (fixes indices)
    prior = pairwise | ordered      default pairwise
    edge_probs = p1 p2 p3           default 1/3 1/3 1/3
    edge_probs.X.Y = p1 p2 p3       per pair: Y parent of X, Y child of X, none
    ordering = A S T L B E X D      program order (ordered) or constraint (pairwise)
    max_parents = 2
    forced_parents.E = T L
    forbidden = A->D B->X
    required = S->L
    alpha = 1                       uniform Dirichlet parameter
    ess = 10 / ess.X = 10           equivalent sample size (overrides alpha)

Network spec keys (for forward sampling)::

    variables = S L B
    labels.X = no yes | domains.X = 2
    parents.L = S
    cpt.L = 0.99 0.01 | 0.9 0.1     rows per parent instantiation

CPT rows follow the parents in variable order, last parent fastest.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .analysis import CptBn
from .bn import (
    Constraints,
    Dag,
    EdgeParams,
    VariableSet,
    build_ordered_program,
    build_pairwise_program,
    count_dags,
)
from .errors import ValidationError
from .scoring import Dataset, DirichletSpec

__all__ = [
    "read_kv",
    "parse_kv",
    "PriorConfig",
    "read_prior_config",
    "parse_prior_config",
    "read_bn_spec",
    "parse_bn_spec",
    "read_dataset",
    "write_dataset",
]


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValidationError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ValidationError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    return parse_kv(text, str(path))


def _number(token: str, key: str) -> float:
    try:
        return float(Fraction(token))
    except (ValueError, ZeroDivisionError):
        raise ValidationError(f"{key}: {token!r} is not a number") from None


def _numbers(value: str, key: str) -> list[float]:
    return [_number(t, key) for t in value.split()]


def _int(value: str, key: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ValidationError(f"{key}: {value!r} is not an integer") from None


def _edges(value: str, key: str) -> set[tuple[str, str]]:
    out = set()
    for token in value.replace(",", " ").split():
        if "->" not in token:
            raise ValidationError(f"{key}: edge {token!r} must look like X->Y")
        p, c = token.split("->", 1)
        out.add((p, c))
    return out


@dataclass
class PriorConfig:
    names: tuple[str, ...] | None = None
    domains: dict[str, int] = field(default_factory=dict)
    labels: dict[str, tuple[str, ...]] = field(default_factory=dict)
    kind: str = "pairwise"
    params: EdgeParams = field(default_factory=EdgeParams)
    constraints: Constraints = field(default_factory=Constraints)
    dirichlet: DirichletSpec = field(default_factory=DirichletSpec)

    def build_program(self, variables: VariableSet):
        if self.kind == "ordered":
            return build_ordered_program(variables, self.constraints.ordering, self.params, self.constraints)
        return build_pairwise_program(variables, self.params, self.constraints)

    def space_size(self, variables: VariableSet) -> int:
        """Upper bound on the number of models the prior can yield."""
        n = len(variables)
        if self.kind == "ordered":
            return 2 ** (n * (n - 1) // 2)
        if n > 12:
            return 3 ** (n * (n - 1) // 2)
        return count_dags(n)


def parse_prior_config(kv: dict[str, str]) -> PriorConfig:
    cfg = PriorConfig()
    per_pair = {}
    forced = {}
    ess_per = {}
    constraint_args: dict = {}
    default_probs = None
    for key, value in kv.items():
        if key == "variables":
            cfg.names = tuple(value.split())
        elif key.startswith("domains."):
            cfg.domains[key[8:]] = _int(value, key)
        elif key.startswith("labels."):
            cfg.labels[key[7:]] = tuple(value.split())
        elif key == "prior":
            if value not in ("pairwise", "ordered"):
                raise ValidationError(f"prior must be 'pairwise' or 'ordered', got {value!r}")
            cfg.kind = value
        elif key == "edge_probs":
            default_probs = tuple(_numbers(value, key))
        elif key.startswith("edge_probs."):
            pair = key[11:].split(".")
            if len(pair) != 2:
                raise ValidationError(f"{key}: expected edge_probs.X.Y")
            per_pair[tuple(pair)] = tuple(_numbers(value, key))
        elif key == "ordering":
            constraint_args["ordering"] = tuple(value.split())
        elif key == "max_parents":
            constraint_args["max_parents"] = _int(value, key)
        elif key.startswith("forced_parents."):
            forced[key[15:]] = frozenset(value.replace(",", " ").split())
        elif key == "forbidden":
            constraint_args["forbidden"] = frozenset(_edges(value, key))
        elif key == "required":
            constraint_args["required"] = frozenset(_edges(value, key))
        elif key == "alpha":
            cfg.dirichlet = DirichletSpec(_number(value, key), cfg.dirichlet.ess)
        elif key == "ess":
            ess_per[None] = _number(value, key)
        elif key.startswith("ess."):
            ess_per[key[4:]] = _number(value, key)
        else:
            raise ValidationError(f"unknown config key {key!r}")
    params_kwargs = {"per_pair": per_pair}
    if default_probs is not None:
        params_kwargs["default"] = default_probs
    cfg.params = EdgeParams(**params_kwargs)
    cfg.constraints = Constraints(forced_parents=forced, **constraint_args)
    if ess_per:
        if None in ess_per and len(ess_per) > 1:
            raise ValidationError("give either ess or ess.X keys, not both")
        ess = ess_per[None] if None in ess_per else ess_per
        cfg.dirichlet = DirichletSpec(cfg.dirichlet.alpha, ess)
    return cfg


def read_prior_config(path) -> PriorConfig:
    return parse_prior_config(read_kv(path))


def _domain_and_labels(name: str, kv_labels: dict, kv_domains: dict, fallback: int | None):
    labels = kv_labels.get(name)
    size = kv_domains.get(name)
    if labels is not None:
        if len(set(labels)) != len(labels):
            raise ValidationError(f"labels.{name} has duplicates")
        if size is not None and size != len(labels):
            raise ValidationError(f"domains.{name} disagrees with labels.{name}")
        return len(labels), labels
    if size is None:
        size = fallback
    if size is None:
        raise ValidationError(f"domain size of {name} unknown")
    return size, tuple(str(k) for k in range(size))


def parse_bn_spec(kv: dict[str, str]) -> CptBn:
    if "variables" not in kv:
        raise ValidationError("network spec needs a 'variables' key")
    names = tuple(kv["variables"].split())
    labels_kv, domains_kv, parents_kv, cpt_kv = {}, {}, {}, {}
    for key, value in kv.items():
        if key == "variables":
            continue
        head, _, var = key.partition(".")
        if head not in ("labels", "domains", "parents", "cpt") or not var:
            raise ValidationError(f"unknown network spec key {key!r}")
        if var not in names:
            raise ValidationError(f"{key}: unknown variable {var!r}")
        if head == "labels":
            labels_kv[var] = tuple(value.split())
        elif head == "domains":
            domains_kv[var] = _int(value, key)
        elif head == "parents":
            parents_kv[var] = value.replace(",", " ").split()
        else:
            rows = [r.split() for r in value.split("|")]
            cpt_kv[var] = [[_number(t, key) for t in r] for r in rows]
    missing = [v for v in names if v not in cpt_kv]
    if missing:
        raise ValidationError(f"missing cpt for {missing}")
    sizes, labels = [], []
    for v in names:
        size, lab = _domain_and_labels(v, labels_kv, domains_kv, len(cpt_kv[v][0]))
        sizes.append(size)
        labels.append(lab)
    variables = VariableSet(names, sizes)
    edges = []
    for child, ps in parents_kv.items():
        for p in ps:
            if p not in names:
                raise ValidationError(f"parents.{child}: unknown variable {p!r}")
            edges.append((p, child))
    dag = Dag.from_edges(names, edges)
    cpts = []
    for v, name in enumerate(names):
        rows = cpt_kv[name]
        if any(len(r) != sizes[v] for r in rows):
            raise ValidationError(f"cpt.{name}: every row needs {sizes[v]} entries")
        cpts.append(np.array(rows, dtype=float))
    return CptBn(variables, dag, tuple(cpts), tuple(labels))


def read_bn_spec(path) -> CptBn:
    return parse_bn_spec(read_kv(path))


def write_dataset(data: Dataset, path) -> None:
    labels = data.labels or tuple(tuple(str(k) for k in range(r)) for r in data.variables.domains)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(data.variables.names)
        for row in data.rows.tolist():
            writer.writerow([labels[v][k] for v, k in enumerate(row)])


def read_dataset(path, config: PriorConfig | None = None) -> Dataset:
    """Load a CSV of category labels.

    Labels map to indices in order of first appearance unless the config
    fixes them with ``labels.X``. Columns are reordered to the config's
    ``variables`` when given.
    """
    config = config or PriorConfig()
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        records = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            rec = [x.strip() for x in rec]
            if len(rec) != len(header) or any(x == "" for x in rec):
                raise ValidationError(f"{path}:{lineno}: missing or extra fields")
            records.append(rec)
    if len(set(header)) != len(header):
        raise ValidationError(f"{path}: duplicate column names")
    names = config.names or tuple(header)
    if sorted(names) != sorted(header):
        raise ValidationError(f"{path}: columns {header} do not match variables {list(names)}")
    cols = [header.index(v) for v in names]

    sizes, labels = [], []
    rows = np.zeros((len(records), len(names)), dtype=np.int64)
    for v, (name, col) in enumerate(zip(names, cols)):
        fixed = config.labels.get(name)
        if fixed is not None:
            lookup = {lab: k for k, lab in enumerate(fixed)}
        else:
            lookup = {}
            for rec in records:
                lookup.setdefault(rec[col], len(lookup))
        for r, rec in enumerate(records):
            try:
                rows[r, v] = lookup[rec[col]]
            except KeyError:
                raise ValidationError(f"{path}: label {rec[col]!r} not in labels.{name}") from None
        seen = tuple(lookup)
        size = len(seen)
        if name in config.domains:
            if config.domains[name] < size:
                raise ValidationError(f"domains.{name} = {config.domains[name]} but {size} labels seen")
            size = config.domains[name]
            seen = seen + tuple(f"<{k}>" for k in range(len(seen), size))
        if size < 2 and not records:
            size, seen = 2, seen + tuple(f"<{k}>" for k in range(len(seen), 2))
        if size < 2:
            raise ValidationError(f"variable {name} shows fewer than 2 categories; set domains.{name} or labels.{name}")
        sizes.append(size)
        labels.append(seen)
    return Dataset(VariableSet(names, sizes), rows, tuple(labels))
