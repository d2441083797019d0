import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from weavematch.instance import (
    UNASSIGNED, Matching, PreferenceInstance, cost_report, find_blocking_pairs, is_stable,
    lists_from_ranks, rank_to_score, ranks_from_lists, scale_ranks,
)

from conftest import all_perfect_matchings, identical_lists, instances, naive_blocking_pairs


def test_score_examples():
    assert rank_to_score(np.array(5), 5, 0.1) == pytest.approx(0.1)
    assert rank_to_score(np.array(1), 5, 0.1) == pytest.approx(0.82)
    assert rank_to_score(np.array(3), 5, 0.1) == pytest.approx(0.46)


@pytest.mark.parametrize("c", [0.0, 1.0, -0.1, 1.5])
def test_score_rejects_bad_cmin(c):
    with pytest.raises(ValueError):
        scale_ranks(identical_lists(), c)


@given(instances(), st.floats(0.01, 0.99))
def test_score_order_matches_rank_order(inst, c):
    sm = scale_ranks(inst, c)
    for ranks, scores in ((inst.rank_a, sm.s_a), (inst.rank_b, sm.s_b)):
        assert np.all(scores <= 1.0) and np.all(scores >= c - 1e-12)
        order_r = np.argsort(ranks, axis=1)
        order_s = np.argsort(-scores, axis=1, kind="stable")
        assert np.array_equal(order_r, order_s)


@given(instances())
def test_ranks_and_lists_round_trip(inst):
    assert np.array_equal(lists_from_ranks(ranks_from_lists(inst.prefs_a)), inst.prefs_a)
    assert inst.rank_a.min() == 1 and inst.rank_a.max() == inst.m


def test_rejects_non_permutation():
    with pytest.raises(ValueError):
        PreferenceInstance([[0, 0], [0, 1]], [[0, 1], [1, 0]])
    with pytest.raises(ValueError):
        PreferenceInstance([[0, 1], [1, 0]], [[0, 1, 2], [1, 0, 2]])


def test_unequal_sides_are_representable():
    inst = PreferenceInstance([[0, 1], [1, 0], [0, 1]], [[0, 1, 2], [2, 1, 0]])
    assert (inst.n, inst.m) == (3, 2)
    with pytest.raises(ValueError):
        PreferenceInstance([[0, 1, 2], [2, 1, 0]], [[0, 1], [1, 0], [0, 1]])


def test_instance_json_round_trip(tmp_path, rng):
    from conftest import random_instance
    inst = random_instance(6, rng)
    inst = PreferenceInstance(inst.prefs_a, inst.prefs_b, "UU", [3, 4])
    p = tmp_path / "i.json"
    inst.save(p)
    back = PreferenceInstance.load(p)
    assert back == inst
    d = json.loads(p.read_text())
    assert set(d) == {"version", "n", "m", "prefs_a", "prefs_b", "distribution", "seed"}
    assert min(min(r) for r in d["prefs_a"]) == 0
    p2 = tmp_path / "j.json"
    back.save(p2)
    assert p.read_bytes() == p2.read_bytes()


def test_blocking_pair_examples():
    inst = identical_lists(3)
    diag = Matching.from_permutation([0, 1, 2])
    swap = Matching.from_permutation([1, 0, 2])
    assert find_blocking_pairs(inst, diag) == []
    assert find_blocking_pairs(inst, swap) == [(0, 0)]
    assert is_stable(inst, diag) and not is_stable(inst, swap)
    one = PreferenceInstance([[0]], [[0]])
    assert find_blocking_pairs(one, Matching.from_permutation([0])) == []
    assert is_stable(one, Matching.from_permutation([0]))


def test_identical_lists_has_single_stable_matching():
    inst = identical_lists(3)
    stable = [m for m in all_perfect_matchings(3) if is_stable(inst, m)]
    assert [m.pairs for m in stable] == [(0, 1, 2)]


@given(instances(max_n=5), st.data())
def test_blocking_pairs_match_naive_definition(inst, data):
    perm = data.draw(st.permutations(list(range(inst.n))))
    m = Matching.from_permutation(perm)
    assert sorted(find_blocking_pairs(inst, m)) == sorted(naive_blocking_pairs(inst, m))


@given(instances(max_n=5), st.data())
def test_blocking_pairs_on_partial_matchings(inst, data):
    perm = list(data.draw(st.permutations(list(range(inst.n)))))
    drop = data.draw(st.sets(st.integers(0, inst.n - 1)))
    m = Matching(tuple(UNASSIGNED if i in drop else p for i, p in enumerate(perm)), inst.m)
    assert sorted(find_blocking_pairs(inst, m)) == sorted(naive_blocking_pairs(inst, m))


def test_cost_examples():
    c = cost_report(identical_lists(3), Matching.from_permutation([0, 1, 2]))
    assert (c.p_a, c.p_b, c.seq, c.egal, c.bal, c.reg) == (6, 6, 0, 12, 6, 3)
    one = cost_report(PreferenceInstance([[0]], [[0]]), Matching.from_permutation([0]))
    assert (one.seq, one.egal, one.bal, one.reg) == (0, 2, 1, 1)


@given(instances(), st.data())
def test_balance_identity(inst, data):
    m = Matching.from_permutation(data.draw(st.permutations(list(range(inst.n)))))
    c = cost_report(inst, m)
    assert 2 * c.bal == c.seq + c.egal
    assert c.egal == c.p_a + c.p_b and c.seq == abs(c.p_a - c.p_b)
    assert c.reg == max(max(inst.rank_a[i, j], inst.rank_b[j, i]) for i, j in enumerate(m.pairs))


def test_cost_rejects_imperfect():
    with pytest.raises(ValueError):
        cost_report(identical_lists(3), Matching((0, UNASSIGNED, 2), 3))


def test_matching_validation_and_formats():
    with pytest.raises(ValueError):
        Matching((0, 0, 1), 3)
    with pytest.raises(ValueError):
        Matching((0, 3), 3)
    m = Matching.from_permutation([2, 0, 1])
    assert m.is_perfect and m.partner_of_b() == [1, 2, 0]
    assert Matching.from_matrix(m.to_matrix()) == m
    assert Matching.from_dict(json.loads(json.dumps(m.to_dict()))) == m
    partial = Matching((1, UNASSIGNED), 2)
    assert not partial.is_perfect
    assert partial.to_matrix().sum() == 1
