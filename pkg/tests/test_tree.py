import math
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import BLS, P1, P2, P3, bntree, leaf, leaf_choices
from treemcmc.bn import Dag
from treemcmc.errors import (
    ExtendPastLeaf,
    IndexOutOfRange,
    LimitExceeded,
    MaxRetriesExceeded,
    NonterminatingTree,
    ZeroProbabilityBranch,
)
from treemcmc.tree import (
    FAILURE,
    PARTIAL,
    CgTreeProgram,
    ChoicePoint,
    ChoiceProgram,
    Derivation,
    ExplicitTreeProgram,
    Success,
    enumerate_tree,
    psi_log,
    replay,
    sample_prior,
)


def random_triple(rng):
    w = [rng.uniform(0.05, 1.0) for _ in range(3)]
    s = sum(w)
    return (w[0] / s, w[1] / s, 1.0 - w[0] / s - w[1] / s)


class Geometric(ChoiceProgram):
    """Infinite tree: stop with probability 1/2 at every level."""

    def root(self):
        return 0

    def expand(self, state):
        if state < 0:
            return Success(-state)
        return ChoicePoint((0.5, 0.5), lambda i: -(state + 1) if i == 0 else state + 1)


class Reversed(ChoiceProgram):
    """Same tree with every choice point's branches listed in reverse."""

    def __init__(self, inner):
        self.inner = inner

    def root(self):
        return self.inner.root()

    def expand(self, state):
        out = self.inner.expand(state)
        if isinstance(out, ChoicePoint):
            k = len(out.probs)
            return ChoicePoint(out.probs[::-1], lambda i: out.child(k - 1 - i))
        return out


class TestReplay:
    def test_empty_path_is_partial_root(self, uniform_tree):
        d = replay(uniform_tree, [])
        assert d.terminal is PARTIAL
        assert d.depth == 0 and d.branch_probs == ()

    @pytest.mark.parametrize("number", [2, 13])
    def test_cyclic_leaves_fail(self, uniform_tree, number):
        assert replay(uniform_tree, leaf_choices(number)).terminal is FAILURE

    def test_index_out_of_range(self, uniform_tree):
        with pytest.raises(IndexOutOfRange):
            replay(uniform_tree, [5])

    def test_extend_past_leaf(self, uniform_tree):
        with pytest.raises(ExtendPastLeaf):
            replay(uniform_tree, [0, 0, 0, 0])

    def test_records_branch_probabilities(self):
        prog = bntree(0.2, 0.5, 0.3)
        d = replay(prog, [P1, P3, P2])
        assert d.branch_probs == (0.2, 0.3, 0.5)
        assert d.states is not None and len(d.states) == 4

    def test_bn8_family_list(self, uniform_tree):
        d = leaf(uniform_tree, 8)
        assert d.model == Dag.parse("B-[L] L-[] S-[B]", BLS.names)


class TestPsi:
    def test_leaf_two(self):
        p1, p2, p3 = 0.2, 0.5, 0.3
        d = leaf(bntree(p1, p2, p3), 2)
        assert psi_log(d) == pytest.approx(math.log(p1 * p1 * p2), abs=1e-14)

    def test_uniform_leaf_two(self, uniform_tree):
        assert psi_log(leaf(uniform_tree, 2)) == pytest.approx(math.log(1 / 27), abs=1e-14)

    def test_empty_product(self, uniform_tree):
        assert psi_log(replay(uniform_tree, [])) == 0.0

    def test_all_uniform_leaves(self, uniform_tree):
        for n in range(1, 28):
            assert psi_log(leaf(uniform_tree, n)) == pytest.approx(math.log(1 / 27), abs=1e-14)

    def test_zero_branch(self):
        d = replay(bntree(0.0, 0.5, 0.5), [P1, P2, P3])
        assert psi_log(d) == float("-inf")
        with pytest.raises(ZeroProbabilityBranch):
            psi_log(d, strict=True)

    @given(st.lists(st.integers(0, 2), min_size=3, max_size=3), st.integers(0, 3))
    def test_prefix_suffix_additivity(self, choices, cut):
        prog = bntree(0.2, 0.45, 0.35)
        whole = replay(prog, choices)
        prefix = replay(prog, choices[:cut])
        suffix = Derivation(tuple(choices[cut:]), whole.branch_probs[cut:])
        assert psi_log(prefix) + psi_log(suffix) == pytest.approx(psi_log(whole), abs=1e-12)


class TestSamplePrior:
    def test_no_edge_certain(self):
        prog = bntree(0.0, 0.0, 1.0)
        rng = random.Random(0)
        for _ in range(50):
            _, model = sample_prior(prog, rng)
            assert model == Dag.empty(BLS.names)

    def test_p1_zero_gives_ordering_models(self, uniform_tree):
        allowed = {leaf(uniform_tree, n).model for n in (14, 15, 17, 18, 23, 24, 26, 27)}
        prog = bntree(0.0, 0.5, 0.5)
        rng = random.Random(1)
        seen = {sample_prior(prog, rng)[1] for _ in range(500)}
        assert seen == allowed

    def test_uniform_frequencies(self, uniform_tree):
        rng = random.Random(2024)
        n = 100_000
        counts = Counter(sample_prior(uniform_tree, rng)[1] for _ in range(n))
        assert len(counts) == 25
        assert max(abs(c / n - 1 / 25) for c in counts.values()) <= 0.01

    def test_matches_enumeration_random_params(self):
        prog = bntree(0.5, 0.2, 0.3)
        exact = enumerate_tree(prog).model_prior
        rng = random.Random(7)
        n = 100_000
        counts = Counter(sample_prior(prog, rng)[1] for _ in range(n))
        assert max(abs(counts[m] / n - p) for m, p in exact.items()) <= 0.015

    def test_max_retries(self):
        prog = ExplicitTreeProgram([(0.5, "fail"), (0.5, "fail")])
        with pytest.raises(MaxRetriesExceeded):
            sample_prior(prog, random.Random(0), max_retries=100)

    def test_nonterminating(self):
        class Endless(ChoiceProgram):
            def root(self):
                return 0

            def expand(self, state):
                return ChoicePoint((1.0,), lambda i: state + 1)

        with pytest.raises(NonterminatingTree):
            sample_prior(Endless(), random.Random(0), max_depth=50)

    def test_infinite_tree_sampling(self):
        rng = random.Random(3)
        draws = [sample_prior(Geometric(), rng)[1] for _ in range(20000)]
        assert sum(d == 1 for d in draws) / len(draws) == pytest.approx(0.5, abs=0.015)


class TestEnumerate:
    def test_uniform_bntree(self, uniform_tree):
        s = enumerate_tree(uniform_tree)
        assert s.z == pytest.approx(25 / 27, abs=1e-12)
        assert len(s.successful_leaves) == 25
        assert len(s.failure_leaves) == 2
        assert all(p == pytest.approx(1 / 25, abs=1e-12) for p in s.model_prior.values())
        assert [d.choices for d, _ in s.failure_leaves] == [leaf_choices(2), leaf_choices(13)]

    def test_cgtree_undirected_mass(self):
        p1 = 0.3
        s = enumerate_tree(CgTreeProgram(p1))
        assert len(s.successful_leaves) == 4 and len(s.model_prior) == 3
        assert s.model_prior["A-B"] == pytest.approx(2 * p1 * (1 - p1), abs=1e-15)
        assert s.model_prior["A->B"] == pytest.approx(p1 * p1, abs=1e-15)

    def test_totally_connected(self, uniform_tree):
        s = enumerate_tree(bntree(0.5, 0.5, 0.0))
        expected = {leaf(uniform_tree, n).model for n in (1, 4, 5, 10, 11, 14)}
        assert len(s.successful_leaves) == 6
        assert set(s.model_prior) == expected

    def test_leaf_limit(self):
        with pytest.raises(LimitExceeded):
            enumerate_tree(bntree(), max_leaves=10)

    def test_depth_limit(self):
        with pytest.raises(LimitExceeded):
            enumerate_tree(Geometric(), max_depth=30)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6))
    def test_mass_partition(self, seed):
        rng = random.Random(seed)
        s = enumerate_tree(bntree(*random_triple(rng)))
        assert math.fsum(w for _, w in s.leaves) == pytest.approx(1.0, abs=1e-10)
        assert s.z + s.failure_mass == pytest.approx(1.0, abs=1e-10)
        assert math.fsum(s.model_prior.values()) == pytest.approx(1.0, abs=1e-10)

    def test_order_invariance(self):
        for prog in (CgTreeProgram(0.37), bntree(0.2, 0.5, 0.3)):
            a = enumerate_tree(prog).model_prior
            b = enumerate_tree(Reversed(prog)).model_prior
            assert a == b

    def test_explicit_tree_uneven(self):
        spec = [(0.5, [(0.4, "a"), (0.6, "fail")]), (0.5, "b")]
        s = enumerate_tree(ExplicitTreeProgram(spec))
        assert s.z == pytest.approx(0.7)
        assert s.model_prior["a"] == pytest.approx(0.2 / 0.7)
