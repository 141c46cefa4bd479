"""Metropolis-Hastings over derivations of a probability tree.

Candidates are generated by backtracking up the current derivation and
sampling a fresh path down from the prior, with the branch just left
blocked for the first downward step. Because the proposal is built from the
prior, the acceptance ratio needs only leaf depths, the two branch
probabilities at the common ancestor and the likelihood ratio.

A choice point whose taken branch has probability one (every alternative
has zero mass) is *degenerate*: nothing can be proposed from it, so
backtracking passes through it without spending a step. Trees without such
points behave exactly as the plain algorithm.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterator, Protocol

from .errors import NoUnblockedBranch, SameLeaf, ValidationError
from .tree import ChoicePoint, ChoiceProgram, Derivation, descend, pick_branch, replay, sample_prior

__all__ = [
    "Proposal",
    "ChainState",
    "ChainConfig",
    "FixedKernel",
    "CyclicKernel",
    "Trace",
    "TraceRecord",
    "ConstantScorer",
    "propose",
    "proposal_between",
    "proposal_prob_log",
    "acceptance_log",
    "pb_schedule",
    "mh_step",
    "run_chain",
]

NEG_INF = float("-inf")
MAX_DEPTH = 10**4


class Scorer(Protocol):
    def loglik(self, model: Any) -> float:
        ...

    def delta(self, model_i: Any, model_star: Any) -> float:
        ...


class ConstantScorer:
    """Flat likelihood; the chain then targets the prior."""

    def loglik(self, model):
        return 0.0

    def delta(self, model_i, model_star):
        return 0.0


@dataclass(frozen=True)
class Proposal:
    """One candidate move.

    ``skipped_i``/``skipped_star`` count degenerate choice points strictly
    below the common ancestor on each path; they are zero in trees where
    every choice point offers an alternative.
    """

    candidate: Derivation
    common_depth: int
    n_i: int
    n_star: int
    p_i: float
    p_star: float
    failed: bool
    skipped_i: int = 0
    skipped_star: int = 0


def _is_degenerate(p: float) -> bool:
    return p >= 1.0


def _common_prefix(a: Derivation, b: Derivation) -> int:
    d = 0
    for x, y in zip(a.choices, b.choices):
        if x != y:
            break
        d += 1
    return d


def proposal_between(current: Derivation, candidate: Derivation) -> Proposal:
    """Assemble the :class:`Proposal` that moves ``current`` to ``candidate``."""
    d = _common_prefix(current, candidate)
    if d >= current.depth or d >= candidate.depth:
        raise SameLeaf("derivations coincide or one is a prefix of the other")
    return Proposal(
        candidate=candidate,
        common_depth=d,
        n_i=current.depth,
        n_star=candidate.depth,
        p_i=current.branch_probs[d],
        p_star=candidate.branch_probs[d],
        failed=not candidate.successful,
        skipped_i=sum(1 for p in current.branch_probs[d + 1:] if _is_degenerate(p)),
        skipped_star=sum(1 for p in candidate.branch_probs[d + 1:] if _is_degenerate(p)),
    )


def propose(
    program: ChoiceProgram,
    current: Derivation,
    p_b: float,
    rng,
    max_depth: int = MAX_DEPTH,
) -> Proposal:
    """Backtrack from ``current`` and sample a new leaf below the stop node.

    One step up is unconditional, each further step is taken with
    probability ``p_b``, and stopping is forced at the top of the tree.
    """
    states = current.states
    if states is None:
        states = replay(program, current.choices).states
    probs = current.branch_probs
    open_nodes = [s for s in range(current.depth) if not _is_degenerate(probs[s])]
    if not open_nodes:
        raise NoUnblockedBranch("no choice point on the path offers an alternative branch")
    k = len(open_nodes) - 1
    while k > 0 and rng.random() < p_b:
        k -= 1
    d = open_nodes[k]

    point = program.expand(states[d])
    assert isinstance(point, ChoicePoint)
    blocked = current.choices[d]
    i = pick_branch(point.probs, rng.random(), blocked)
    if i < 0:
        raise NoUnblockedBranch(f"choice point at depth {d} has no positive unblocked branch")
    candidate = descend(
        program,
        list(states[: d + 1]) + [point.child(i)],
        list(current.choices[:d]) + [i],
        list(probs[:d]) + [point.probs[i]],
        rng,
        max_depth,
    )
    return Proposal(
        candidate=candidate,
        common_depth=d,
        n_i=current.depth,
        n_star=candidate.depth,
        p_i=probs[d],
        p_star=point.probs[i],
        failed=not candidate.successful,
        skipped_i=current.depth - d - 1 - (len(open_nodes) - 1 - k),
        skipped_star=sum(1 for p in candidate.branch_probs[d + 1:] if _is_degenerate(p)),
    )


def proposal_prob_log(program: ChoiceProgram | None, source: Derivation, target: Derivation, p_b: float) -> float:
    """Log probability that :func:`propose` moves ``source`` to ``target``.

    Sum of three terms: the backtrack factor, the prior probability of the
    path from the common ancestor down to ``target`` and the renormalisation
    for the blocked branch. ``program`` is accepted for interface symmetry;
    both derivations already carry their branch probabilities.
    """
    d = _common_prefix(source, target)
    if d >= source.depth or d >= target.depth:
        raise SameLeaf("source and target are the same leaf")
    p_i = source.branch_probs[d]
    if _is_degenerate(p_i):
        return NEG_INF
    below = sum(1 for p in source.branch_probs[d + 1:] if not _is_degenerate(p))
    at_top = all(_is_degenerate(p) for p in source.branch_probs[:d])
    out = below * math.log(p_b)
    if not at_top:
        out += math.log1p(-p_b)
    for p in target.branch_probs[d:]:
        if p <= 0.0:
            return NEG_INF
        out += math.log(p)
    return out - math.log1p(-p_i)


def acceptance_log(prop: Proposal, loglik_i: float, loglik_star: float, p_b: float) -> float:
    """Log acceptance probability, in [-inf, 0].

    ``min(0, k*log(p_b) + log(1-p_i) - log(1-p_star) + loglik_star - loglik_i)``
    where ``k`` is the difference in (non-degenerate) depth between the
    candidate and current leaves. Failure candidates are never accepted.
    """
    if prop.failed:
        return NEG_INF
    if loglik_star == NEG_INF:
        return NEG_INF
    if loglik_i == NEG_INF:
        return 0.0
    steps = (prop.n_star - prop.skipped_star) - (prop.n_i - prop.skipped_i)
    a = (
        steps * math.log(p_b)
        + math.log1p(-prop.p_i)
        - math.log1p(-prop.p_star)
        + loglik_star
        - loglik_i
    )
    return a if a < 0.0 else 0.0


def pb_schedule(iteration: int, depth: int) -> float:
    """Cyclic backtrack probability ``1 - 2**-n`` with ``n`` cycling 1..depth."""
    if depth < 1:
        raise ValidationError("cycle depth must be at least 1")
    n = (iteration - 1) % depth + 1
    return 1.0 - 2.0 ** (-n)


@dataclass(frozen=True)
class FixedKernel:
    p_b: float

    def __post_init__(self):
        if not 0.0 < self.p_b < 1.0:
            raise ValidationError(f"backtrack probability must lie in (0, 1), got {self.p_b}")

    def p_b_at(self, iteration: int) -> float:
        return self.p_b

    def describe(self) -> str:
        return f"fixed({self.p_b})"


@dataclass(frozen=True)
class CyclicKernel:
    depth: int | None = None

    def __post_init__(self):
        if self.depth is not None and self.depth < 1:
            raise ValidationError("cycle depth must be at least 1")

    def p_b_at(self, iteration: int) -> float:
        return pb_schedule(iteration, self.depth)

    def describe(self) -> str:
        return f"cyclic({self.depth})"


@dataclass(frozen=True)
class ChainConfig:
    iterations: int
    burn_in: int = 0
    seed: int = 0
    kernel: FixedKernel | CyclicKernel = field(default_factory=CyclicKernel)
    record_every: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValidationError(
                f"burn-in ({self.burn_in}) must be non-negative and below iterations ({self.iterations})"
            )
        if self.record_every < 1:
            raise ValidationError("record_every must be at least 1")
        if not isinstance(self.kernel, (FixedKernel, CyclicKernel)):
            raise ValidationError("kernel must be FixedKernel or CyclicKernel")


@dataclass(frozen=True)
class ChainState:
    derivation: Derivation
    loglik: float
    iteration: int = 0
    accepted_count: int = 0
    accepted: bool = False

    @property
    def model(self):
        return self.derivation.model


def mh_step(state: ChainState, program: ChoiceProgram, scorer, p_b: float, rng) -> ChainState:
    """One Metropolis-Hastings transition.

    Failure candidates are rejected without scoring or drawing; every other
    candidate consumes exactly one uniform for the accept test.
    """
    prop = propose(program, state.derivation, p_b, rng)
    if prop.failed:
        return replace(state, iteration=state.iteration + 1, accepted=False)
    new_model = prop.candidate.model
    delta = scorer.delta(state.derivation.model, new_model)
    log_alpha = acceptance_log(prop, 0.0, delta, p_b)
    u = rng.random()
    if u < math.exp(log_alpha):
        return ChainState(
            prop.candidate,
            scorer.loglik(new_model),
            state.iteration + 1,
            state.accepted_count + 1,
            True,
        )
    return replace(state, iteration=state.iteration + 1, accepted=False)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    model: Any
    loglik: float
    accepted: bool


TRACE_HEADER = "iteration\tmodel\tloglik\taccepted"


class Trace:
    """Retained chain output: models only, never derivations."""

    def __init__(self):
        self.iterations: list[int] = []
        self.models: list[Any] = []
        self.logliks: list[float] = []
        self.accepted: list[bool] = []
        self.total_iterations = 0
        self.total_accepted = 0

    def append(self, iteration: int, model, loglik: float, accepted: bool) -> None:
        self.iterations.append(iteration)
        self.models.append(model)
        self.logliks.append(loglik)
        self.accepted.append(accepted)

    def __len__(self) -> int:
        return len(self.models)

    def __iter__(self) -> Iterator[TraceRecord]:
        for rec in zip(self.iterations, self.models, self.logliks, self.accepted):
            yield TraceRecord(*rec)

    @property
    def acceptance_rate(self) -> float:
        return self.total_accepted / self.total_iterations if self.total_iterations else 0.0

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(TRACE_HEADER + "\n")
            for it, m, ll, acc in zip(self.iterations, self.models, self.logliks, self.accepted):
                fh.write(f"{it}\t{m}\t{ll!r}\t{int(acc)}\n")

    @classmethod
    def read(cls, path, parse_model: Callable[[str], Any] = str) -> "Trace":
        trace = cls()
        cache: dict[str, Any] = {}
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if header != TRACE_HEADER:
                raise ValidationError(f"{path}: not a trace file (header {header!r})")
            for lineno, line in enumerate(fh, start=2):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 4:
                    raise ValidationError(f"{path}:{lineno}: expected 4 fields")
                text = parts[1]
                if text not in cache:
                    cache[text] = parse_model(text)
                trace.append(int(parts[0]), cache[text], float(parts[2]), parts[3] == "1")
        return trace


def run_chain(program: ChoiceProgram, scorer, config: ChainConfig, rng=None, progress=None) -> Trace:
    """Run a chain started from a prior draw and return the retained trace.

    ``rng`` defaults to ``random.Random(config.seed)``. A cyclic kernel
    without an explicit depth cycles over ``program.max_depth``.
    """
    if rng is None:
        rng = random.Random(config.seed)
    kernel = config.kernel
    if isinstance(kernel, CyclicKernel) and kernel.depth is None:
        if not program.max_depth:
            raise ValidationError("program has no max_depth; give the cyclic kernel a depth")
        kernel = CyclicKernel(program.max_depth)

    derivation, model = sample_prior(program, rng)
    state = ChainState(derivation, scorer.loglik(model))
    trace = Trace()
    burn_in, stride = config.burn_in, config.record_every
    started = time.perf_counter()
    for t in range(1, config.iterations + 1):
        state = mh_step(state, program, scorer, kernel.p_b_at(t), rng)
        if t > burn_in and (t - burn_in) % stride == 0:
            trace.append(t, state.derivation.model, state.loglik, state.accepted)
        if progress is not None and t % 100000 == 0:
            progress(t, state, time.perf_counter() - started)
    trace.total_iterations = config.iterations
    trace.total_accepted = state.accepted_count
    return trace
