"""Probability trees given implicitly by replayable choice-point programs.

A program never materialises its tree. It exposes a root state and an
``expand`` function mapping a state to one of

* :class:`ChoicePoint` -- a multinomial choice over successor states,
* :class:`Success` -- a leaf yielding a model,
* :data:`FAILURE` -- a dead-end leaf.

A derivation is a root-to-node path recorded as branch indices; models are
recovered by replaying the path. Three distributions live on such a tree:
the raw branch product (``psi``), the success-conditioned derivation
distribution and the induced distribution over models.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Sequence

from .errors import (
    ExtendPastLeaf,
    IndexOutOfRange,
    LimitExceeded,
    MaxRetriesExceeded,
    NonterminatingTree,
    ValidationError,
    ZeroProbabilityBranch,
)

__all__ = [
    "ChoicePoint",
    "Success",
    "FAILURE",
    "PARTIAL",
    "ChoiceProgram",
    "Derivation",
    "TreeSummary",
    "replay",
    "psi_log",
    "sample_prior",
    "enumerate_tree",
    "pick_branch",
    "descend",
    "CgTreeProgram",
    "ExplicitTreeProgram",
]

NEG_INF = float("-inf")
PROB_SUM_TOL = 1e-12


class ChoicePoint:
    """A choice point: branch probabilities plus a successor constructor.

    Successors are built on demand through ``child(i)``; ``branches`` gives
    the eager ``(probability, successor)`` list.
    """

    __slots__ = ("probs", "_child")

    def __init__(self, probs: Sequence[float], child: Callable[[int], Any]):
        self.probs = tuple(probs)
        self._child = child

    def child(self, index: int) -> Any:
        return self._child(index)

    @property
    def branches(self) -> list[tuple[float, Any]]:
        return [(p, self._child(i)) for i, p in enumerate(self.probs)]

    def __len__(self) -> int:
        return len(self.probs)

    def __repr__(self) -> str:
        return f"ChoicePoint({self.probs!r})"


@dataclass(frozen=True)
class Success:
    model: Any


class _Marker:
    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return self.name

    def __reduce__(self):
        return self.name


FAILURE = _Marker("FAILURE")
PARTIAL = _Marker("PARTIAL")


class ChoiceProgram(ABC):
    """Implicit probability tree.

    Subclasses implement :meth:`root` and :meth:`expand`. ``expand`` must be
    deterministic, and at every choice point the probabilities must be
    non-negative and sum to one.

    ``max_depth`` is an upper bound on leaf depth when known (used as the
    default cycle length of the cyclic backtrack kernel).
    """

    max_depth: int | None = None

    @abstractmethod
    def root(self) -> Any:
        ...

    @abstractmethod
    def expand(self, state: Any) -> ChoicePoint | Success | _Marker:
        ...


@dataclass(frozen=True)
class Derivation:
    """A root-to-node path.

    ``states`` caches the program states visited (``len(choices) + 1`` of
    them); it is an accelerator only and takes no part in equality.
    """

    choices: tuple[int, ...]
    branch_probs: tuple[float, ...]
    terminal: Any = PARTIAL
    states: tuple | None = field(default=None, compare=False, repr=False)

    @property
    def depth(self) -> int:
        return len(self.choices)

    @property
    def successful(self) -> bool:
        return isinstance(self.terminal, Success)

    @property
    def failed(self) -> bool:
        return self.terminal is FAILURE

    @property
    def complete(self) -> bool:
        return self.terminal is not PARTIAL

    @property
    def model(self) -> Any:
        if not isinstance(self.terminal, Success):
            raise ValueError("derivation does not yield a model")
        return self.terminal.model


def _check_probs(probs: Sequence[float]) -> None:
    if any(p < 0.0 for p in probs) or abs(math.fsum(probs) - 1.0) > PROB_SUM_TOL:
        raise ValidationError(f"invalid branch probabilities {probs!r}")


def replay(program: ChoiceProgram, choices: Sequence[int]) -> Derivation:
    """Follow ``choices`` from the root and record what was visited."""
    state = program.root()
    states = [state]
    probs: list[float] = []
    outcome = program.expand(state)
    for step, index in enumerate(choices):
        if not isinstance(outcome, ChoicePoint):
            raise ExtendPastLeaf(f"choice {step} continues past a leaf")
        if not 0 <= index < len(outcome.probs):
            raise IndexOutOfRange(
                f"choice {step}: index {index} but only {len(outcome.probs)} branches"
            )
        probs.append(outcome.probs[index])
        state = outcome.child(index)
        states.append(state)
        outcome = program.expand(state)
    terminal = PARTIAL if isinstance(outcome, ChoicePoint) else outcome
    return Derivation(tuple(choices), tuple(probs), terminal, tuple(states))


def psi_log(derivation: Derivation, strict: bool = False) -> float:
    """Log of the product of branch probabilities along ``derivation``.

    A zero-probability branch gives ``-inf``; with ``strict=True`` it raises
    :class:`ZeroProbabilityBranch` instead.
    """
    total = 0.0
    for p in derivation.branch_probs:
        if p <= 0.0:
            if strict:
                raise ZeroProbabilityBranch(f"derivation {derivation.choices} has a zero branch")
            return NEG_INF
        total += math.log(p)
    return total


def pick_branch(probs: Sequence[float], u: float, blocked: int = -1) -> int:
    """Index selected by uniform ``u`` in [0, 1) among positive branches.

    With ``blocked`` set, that branch is excluded and the remainder
    renormalised. Returns -1 if no positive unblocked branch exists.
    """
    if blocked >= 0:
        u *= math.fsum(p for i, p in enumerate(probs) if i != blocked)
    acc = 0.0
    last = -1
    for i, p in enumerate(probs):
        if p > 0.0 and i != blocked:
            acc += p
            last = i
            if u < acc:
                return i
    return last


def descend(
    program: ChoiceProgram,
    states: list,
    choices: list[int],
    probs: list[float],
    rng,
    max_depth: int,
) -> Derivation:
    """Extend a partial path to a leaf by sampling branches from the prior.

    The lists are consumed (extended in place); ``states[-1]`` is the node
    to descend from.
    """
    outcome = program.expand(states[-1])
    while isinstance(outcome, ChoicePoint):
        if len(choices) >= max_depth:
            raise NonterminatingTree(f"no leaf within depth {max_depth}")
        i = pick_branch(outcome.probs, rng.random())
        if i < 0:
            raise ZeroProbabilityBranch("choice point without a positive branch")
        choices.append(i)
        probs.append(outcome.probs[i])
        state = outcome.child(i)
        states.append(state)
        outcome = program.expand(state)
    return Derivation(tuple(choices), tuple(probs), outcome, tuple(states))


def sample_prior(
    program: ChoiceProgram,
    rng,
    max_retries: int = 10**6,
    max_depth: int = 10**4,
) -> tuple[Derivation, Any]:
    """Draw a successful derivation by rejection from the prior.

    Failure leaves are discarded, so the result follows the
    success-conditioned derivation distribution. ``rng`` needs a
    ``random()`` method returning floats in [0, 1).
    """
    root = program.root()
    for _ in range(max_retries):
        d = descend(program, [root], [], [], rng, max_depth)
        if d.successful:
            return d, d.model
    raise MaxRetriesExceeded(f"no successful derivation in {max_retries} attempts")


@dataclass
class TreeSummary:
    leaves: list[tuple[Derivation, float]]
    z: float
    model_prior: dict[Hashable, float]

    @property
    def successful_leaves(self) -> list[tuple[Derivation, float]]:
        return [(d, w) for d, w in self.leaves if d.successful]

    @property
    def failure_leaves(self) -> list[tuple[Derivation, float]]:
        return [(d, w) for d, w in self.leaves if d.failed]

    @property
    def failure_mass(self) -> float:
        return math.fsum(w for d, w in self.leaves if d.failed)


def enumerate_tree(
    program: ChoiceProgram,
    max_leaves: int = 10**7,
    max_depth: int = 10**4,
) -> TreeSummary:
    """Exhaustive depth-first traversal of a finite tree.

    Zero-probability branches are skipped. Models reached by several
    derivations accumulate their conditioned masses.
    """
    leaves: list[tuple[Derivation, float]] = []
    # (state, choices, probs, psi)
    stack = [(program.root(), (), (), 1.0)]
    while stack:
        state, choices, probs, psi = stack.pop()
        outcome = program.expand(state)
        if isinstance(outcome, ChoicePoint):
            if len(choices) >= max_depth:
                raise LimitExceeded(f"tree deeper than {max_depth}")
            children = []
            for i, p in enumerate(outcome.probs):
                if p > 0.0:
                    children.append((outcome.child(i), choices + (i,), probs + (p,), psi * p))
            stack.extend(reversed(children))
        else:
            leaves.append((Derivation(choices, probs, outcome), psi))
            if len(leaves) > max_leaves:
                raise LimitExceeded(f"more than {max_leaves} leaves")

    z = math.fsum(w for d, w in leaves if d.successful)
    if z <= 0.0:
        raise ValidationError("tree has no successful leaf with positive probability")
    masses: dict[Hashable, list[float]] = defaultdict(list)
    for d, w in leaves:
        if d.successful:
            masses[d.model].append(w)
    model_prior = {m: math.fsum(ws) / z for m, ws in masses.items()}
    return TreeSummary(leaves, z, model_prior)


class CgTreeProgram(ChoiceProgram):
    """Two binary choices, each orienting the A-B edge.

    Choosing A->B (probability ``p_ab``) or B->A at both points; mixed
    choices yield the undirected graph ``"A-B"``, so that model has two
    derivations.
    """

    max_depth = 2

    def __init__(self, p_ab: float = 0.5):
        if not 0.0 <= p_ab <= 1.0:
            raise ValidationError("p_ab must lie in [0, 1]")
        self.probs = (p_ab, 1.0 - p_ab)

    def root(self):
        return ()

    def expand(self, state):
        if len(state) < 2:
            return ChoicePoint(self.probs, lambda i: state + (i,))
        a, b = state
        if a == b:
            return Success("A->B" if a == 0 else "B->A")
        return Success("A-B")


class ExplicitTreeProgram(ChoiceProgram):
    """A tree written out as nested Python data.

    A node is either a list of ``(probability, subtree)`` pairs, the string
    ``"fail"``, or any other hashable value (a successful leaf yielding that
    value). Handy for small test trees with leaves at uneven depths.
    """

    def __init__(self, spec):
        self.spec = spec
        self.max_depth = self._depth(spec)

    @classmethod
    def _depth(cls, node) -> int:
        if isinstance(node, list):
            return 1 + max(cls._depth(sub) for _, sub in node)
        return 0

    def root(self):
        return ()

    def _node(self, path):
        node = self.spec
        for i in path:
            node = node[i][1]
        return node

    def expand(self, state):
        node = self._node(state)
        if isinstance(node, list):
            return ChoicePoint([p for p, _ in node], lambda i: state + (i,))
        if node == "fail":
            return FAILURE
        return Success(node)
