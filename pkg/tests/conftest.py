import pytest

from treemcmc.bn import EdgeParams, VariableSet, build_pairwise_program
from treemcmc.tree import replay

BLS = VariableSet.binary(["B", "L", "S"])

# Outcome order at every pair: Y parent of X, Y child of X, no edge.
P1, P2, P3 = 0, 1, 2

CRITERIA: list[str] = []


def bntree(p1=1 / 3, p2=1 / 3, p3=1 / 3):
    """Three-variable pairwise tree; pairs visited (B,L), (L,S), (B,S)."""
    return build_pairwise_program(BLS, EdgeParams((p1, p2, p3)))


def leaf_choices(number):
    """Choice indices of leaf ``number`` (1..27, left to right)."""
    k = number - 1
    return (k // 9, (k // 3) % 3, k % 3)


def leaf(program, number):
    return replay(program, leaf_choices(number))


class ScriptedRng:
    """Replays a fixed list of uniforms."""

    def __init__(self, values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)


def record_criterion(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    CRITERIA.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture
def uniform_tree():
    return bntree()


def polya_family_log(rows, child, parents, domains, alpha=1.0):
    """Family score as a sequential product of urn predictive probabilities."""
    import math

    seen = {}
    total = 0.0
    for row in rows:
        j = tuple(row[p] for p in parents)
        counts = seen.setdefault(j, [0] * domains[child])
        total += math.log((alpha + counts[row[child]]) / (alpha * domains[child] + sum(counts)))
        counts[row[child]] += 1
    return total


def random_family_instance(rng):
    """(VariableSet, rows, child, parents) with <= 3 parents, <= 4 categories, <= 50 rows."""
    n_parents = rng.randint(0, 3)
    n_vars = n_parents + 1 + rng.randint(0, 1)
    names = [f"V{i}" for i in range(n_vars)]
    domains = [rng.randint(2, 4) for _ in names]
    rows = [[rng.randrange(d) for d in domains] for _ in range(rng.randint(0, 50))]
    child = rng.randrange(n_vars)
    parents = sorted(rng.sample([v for v in range(n_vars) if v != child], n_parents))
    return VariableSet(names, domains), rows, child, parents


def record_note(detail):
    line = f"[INFO] {detail}"
    CRITERIA.append(line)
    print(line)
