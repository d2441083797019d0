import itertools

import numpy as np
import pytest
from hypothesis import settings, strategies as st

from weavematch.instance import Matching, PreferenceInstance

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_instance(n: int, rng: np.random.Generator) -> PreferenceInstance:
    pa = np.array([rng.permutation(n) for _ in range(n)])
    pb = np.array([rng.permutation(n) for _ in range(n)])
    return PreferenceInstance(pa, pb)


def identical_lists(n: int = 3) -> PreferenceInstance:
    rows = [list(range(n))] * n
    return PreferenceInstance(rows, rows)


@st.composite
def instances(draw, min_n: int = 1, max_n: int = 6):
    n = draw(st.integers(min_n, max_n))
    perm = st.permutations(list(range(n)))
    pa = [draw(perm) for _ in range(n)]
    pb = [draw(perm) for _ in range(n)]
    return PreferenceInstance(pa, pb)


def naive_blocking_pairs(inst: PreferenceInstance, m: Matching):
    """Double loop over every (a_v, b_w) straight from the definition."""
    ra, rb = inst.rank_a, inst.rank_b
    partner_b = {b: a for a, b in enumerate(m.pairs) if b >= 0}
    out = []
    for v in range(inst.n):
        for w in range(inst.m):
            if m.pairs[v] == w:
                continue
            j = m.pairs[v]
            i = partner_b.get(w, -1)
            a_prefers = j < 0 or ra[v, w] < ra[v, j]
            b_prefers = i < 0 or rb[w, v] < rb[w, i]
            if a_prefers and b_prefers:
                out.append((v, w))
    return out


def all_perfect_matchings(n: int):
    for p in itertools.permutations(range(n)):
        yield Matching.from_permutation(p)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def verdict(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    assert ok, f"criterion {criterion} failed: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
