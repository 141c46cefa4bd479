import itertools
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import BLS, bntree, leaf
from treemcmc.bn import (
    CYCLE,
    Constraints,
    Dag,
    EdgeParams,
    VariableSet,
    build_ordered_program,
    build_pairwise_program,
    count_dags,
    pair_order,
    try_add_edge,
)
from treemcmc.errors import InconsistentConstraints, ValidationError
from treemcmc.fixtures import ASIA8_ORDER
from treemcmc.tree import enumerate_tree, sample_prior


def all_dags(names):
    """Every labelled DAG on ``names`` by brute force over parent bitmasks."""
    n = len(names)
    out = []
    for masks in itertools.product(range(1 << n), repeat=n):
        if any((m >> v) & 1 for v, m in enumerate(masks)):
            continue
        dag = Dag(names, masks)
        if dag.is_acyclic():
            out.append(dag)
    return out


def brute_closure(dag):
    n = len(dag.names)
    reach = [[dag.has_edge(p, c) for c in range(n)] for p in range(n)]
    for k in range(n):
        for i in range(n):
            for j in range(n):
                reach[i][j] = reach[i][j] or (reach[i][k] and reach[k][j])
    return tuple(sum(1 << p for p in range(n) if reach[p][c]) for c in range(n))


class TestVariableSet:
    def test_duplicates(self):
        with pytest.raises(ValidationError):
            VariableSet(("A", "A"), (2, 2))

    def test_small_domain(self):
        with pytest.raises(ValidationError):
            VariableSet(("A",), (1,))

    def test_index(self):
        assert BLS.index("S") == 2


class TestTryAddEdge:
    def test_two_cycle(self):
        dag = try_add_edge(Dag.empty(("A", "B")), 0, 1)
        assert try_add_edge(dag, 1, 0) is CYCLE

    def test_bn8_ancestor_sets(self):
        b, l, s = 0, 1, 2
        dag = try_add_edge(Dag.empty(BLS.names), l, b)
        dag = try_add_edge(dag, b, s)
        assert dag.ancestor_sets() == {"B": ("L",), "L": (), "S": ("B", "L")}

    def test_implied_ancestor(self):
        dag = Dag.empty(("A", "B", "C"))
        for u, v in [(0, 1), (1, 2), (0, 2)]:
            dag = try_add_edge(dag, u, v)
        assert dag.ancestors == brute_closure(dag)

    def test_self_loop(self):
        with pytest.raises(ValidationError):
            try_add_edge(Dag.empty(("A", "B")), 1, 1)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), max_size=20))
    def test_closure_matches_brute_force(self, edges):
        dag = Dag.empty(tuple("ABCDEF"))
        for u, v in edges:
            if u == v:
                continue
            new = try_add_edge(dag, u, v)
            if new is CYCLE:
                assert (dag.ancestors[u] >> v) & 1
                continue
            dag = new
            assert dag.ancestors == brute_closure(dag)
            assert dag.is_acyclic()


class TestCountDags:
    @pytest.mark.parametrize("n, want", [(0, 1), (1, 1), (2, 3), (3, 25), (4, 543), (5, 29281), (8, 783702329343)])
    def test_values(self, n, want):
        assert count_dags(n) == want

    def test_limits(self):
        with pytest.raises(OverflowError):
            count_dags(13)
        with pytest.raises(ValidationError):
            count_dags(-1)

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_brute_force(self, n):
        assert len(all_dags(tuple("ABCD"[:n]))) == count_dags(n)


class TestPairwiseProgram:
    def test_pair_order(self):
        assert pair_order(3) == [(0, 1), (1, 2), (0, 2)]
        assert len(pair_order(8)) == 28

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_models_are_all_dags(self, n):
        names = tuple("ABCD"[:n])
        prog = build_pairwise_program(VariableSet.binary(names), EdgeParams((0.3, 0.3, 0.4)))
        s = enumerate_tree(prog)
        assert len(s.model_prior) == len(s.successful_leaves) == count_dags(n)
        assert set(s.model_prior) == set(all_dags(names))
        assert prog.max_depth == math.comb(n, 2)

    def test_no_edge_probability_zero(self, uniform_tree):
        s = enumerate_tree(bntree(0.5, 0.5, 0.0))
        assert len(s.successful_leaves) == 6
        assert all(m.n_edges() == 3 for m in s.model_prior)

    def test_p1_zero_gives_ordering_set(self, uniform_tree):
        s = enumerate_tree(bntree(0.0, 0.5, 0.5))
        assert len(s.model_prior) == 8
        order = Constraints(ordering=("B", "L", "S"))
        assert all(order.violations(m) == [] for m in s.model_prior)

    def test_edge_reversal_symmetry(self):
        s = enumerate_tree(bntree(0.25, 0.25, 0.5))
        for m, p in s.model_prior.items():
            assert s.model_prior[m.reversed()] == pytest.approx(p, abs=1e-15)

    def test_sparsity_preference(self):
        empty = Dag.empty(BLS.names)
        one = Dag.from_edges(BLS.names, [("S", "L")])
        ratios = []
        for p3 in (0.2, 0.4, 0.6, 0.8):
            prior = enumerate_tree(bntree((1 - p3) / 2, (1 - p3) / 2, p3)).model_prior
            ratios.append(prior[empty] / prior[one])
        assert all(a < b for a, b in zip(ratios, ratios[1:]))

    def test_per_pair_override(self):
        params = EdgeParams(per_pair={("S", "L"): (1.0, 0.0, 0.0)})
        # L parent of S, read for the visited pair (L, S) with the first two swapped
        assert params.for_pair("L", "S") == (0.0, 1.0, 0.0)
        s = enumerate_tree(build_pairwise_program(BLS, params))
        assert all(m.has_edge(1, 2) for m in s.model_prior)

    def test_bad_params(self):
        with pytest.raises(ValidationError):
            EdgeParams((0.5, 0.5, 0.5))
        with pytest.raises(ValidationError):
            EdgeParams((1.2, -0.2, 0.0))

    def test_constraint_failure_at_choice(self):
        prog = build_pairwise_program(BLS, constraints=Constraints(forbidden={("S", "L")}))
        s = enumerate_tree(prog)
        assert all(not m.has_edge(2, 1) for m in s.model_prior)
        # the whole S->L subtree (mass 1/3) fails, plus the cyclic leaf 13
        assert s.z == pytest.approx(1 - 1 / 3 - 1 / 27, abs=1e-12)
        assert len(s.model_prior) == 25 - 8

    def test_max_parents_fails(self):
        prog = build_pairwise_program(BLS, constraints=Constraints(max_parents=1))
        s = enumerate_tree(prog)
        assert all(bin(p).count("1") <= 1 for m in s.model_prior for p in m.parents)
        assert len(s.model_prior) == 25 - 9


class TestOrderedProgram:
    def test_eight_leaves(self):
        prog = build_ordered_program(BLS, ("B", "L", "S"))
        s = enumerate_tree(prog)
        assert len(s.successful_leaves) == 8 and not s.failure_leaves
        uniform = enumerate_tree(bntree(0.0, 0.5, 0.5)).model_prior
        assert set(s.model_prior) == set(uniform)
        assert all(p == pytest.approx(1 / 8) for p in s.model_prior.values())

    def test_k2_draws(self):
        vs = VariableSet.binary(ASIA8_ORDER)
        prog = build_ordered_program(vs, constraints=Constraints(ordering=ASIA8_ORDER, max_parents=2))
        rng = random.Random(0)
        for _ in range(10_000):
            _, dag = sample_prior(prog, rng)
            assert max(m.bit_count() for m in dag.parents) <= 2

    def test_forced_parents(self):
        vs = VariableSet.binary(ASIA8_ORDER)
        cons = Constraints(ordering=ASIA8_ORDER, max_parents=3, forced_parents={"E": {"T", "L"}})
        prog = build_ordered_program(vs, constraints=cons)
        rng = random.Random(1)
        for _ in range(2000):
            _, dag = sample_prior(prog, rng)
            assert dict(dag.families())["E"] == ("T", "L")
            assert cons.violations(dag) == []

    def test_order_conflict(self):
        with pytest.raises(InconsistentConstraints):
            build_ordered_program(BLS, ("B", "L", "S"), constraints=Constraints(required={("S", "B")}))
        with pytest.raises(InconsistentConstraints):
            build_ordered_program(BLS, ("B", "L"))


class TestConstraints:
    def test_required_and_forbidden(self):
        with pytest.raises(InconsistentConstraints):
            Constraints(required={("A", "B")}, forbidden={("A", "B")})

    def test_forced_above_budget(self):
        with pytest.raises(InconsistentConstraints):
            Constraints(max_parents=1, forced_parents={"E": {"T", "L"}})

    def test_unknown_variable(self):
        with pytest.raises(InconsistentConstraints):
            build_pairwise_program(BLS, constraints=Constraints(forbidden={("B", "Q")}))

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_soundness_and_completeness(self, data):
        names = ("A", "B", "C", "D")
        vs = VariableSet.binary(names)
        pairs = [(a, b) for a in names for b in names if a != b]
        order = tuple(data.draw(st.permutations(names)))
        pos = {v: i for i, v in enumerate(order)}
        forward = [(a, b) for a, b in pairs if pos[a] < pos[b]]
        required = set(data.draw(st.lists(st.sampled_from(forward), max_size=2)))
        forbidden = set(data.draw(st.lists(st.sampled_from(pairs), max_size=3))) - required
        k = data.draw(st.sampled_from([None, 1, 2, 3]))
        try:
            cons = Constraints(ordering=order, max_parents=k, forbidden=forbidden, required=required)
        except InconsistentConstraints:
            return
        legal = {d for d in all_dags(names) if cons.violations(d) == []}
        for prog in (
            build_pairwise_program(vs, EdgeParams((0.3, 0.3, 0.4)), cons),
            build_ordered_program(vs, constraints=cons),
        ):
            s = enumerate_tree(prog)
            assert set(s.model_prior) == legal
        assert not enumerate_tree(build_ordered_program(vs, constraints=cons)).failure_leaves


class TestDagText:
    def test_roundtrip(self, uniform_tree):
        for n in (1, 8, 14, 27):
            m = leaf(uniform_tree, n).model
            assert Dag.parse(str(m), BLS.names) == m

    def test_canonical_string(self):
        dag = Dag.from_edges(("A", "B", "C"), [("C", "A"), ("B", "A")])
        assert str(dag) == "A-[B,C] B-[] C-[]"

    def test_parse_errors(self):
        with pytest.raises(ValidationError):
            Dag.parse("B-[Q] L-[] S-[]", BLS.names)
        with pytest.raises(ValidationError):
            Dag.parse("L-[] B-[] S-[]", BLS.names)

    def test_from_edges_rejects_cycle(self):
        with pytest.raises(ValidationError):
            Dag.from_edges(("A", "B"), [("A", "B"), ("B", "A")])
