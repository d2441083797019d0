"""Algorithmic baselines and brute-force oracles for stable matching.

All solvers expect square instances with complete lists and break ties
towards the lowest index.  ``dacc`` and ``power_balance`` are reference
heuristics built on deferred acceptance; they always return a stable
matching but are not certified reproductions of the published procedures.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .instance import CostReport, Matching, PreferenceInstance, cost_report

COST_KINDS = ("seq", "bal", "egal", "reg")
ENUM_LIMIT = 9


class SizeLimitError(ValueError):
    pass


def _require_square(inst: PreferenceInstance) -> None:
    if inst.n != inst.m:
        raise ValueError("solver requires n == m")


def _check_cost(kind: str) -> None:
    if kind not in COST_KINDS:
        raise ValueError(f"unknown cost kind {kind!r}; choose from {COST_KINDS}")


# ---------------------------------------------------------------- Gale-Shapley

def _deferred_acceptance(prop_lists: np.ndarray, recv_ranks: np.ndarray) -> list[int]:
    n = len(prop_lists)
    nxt = [0] * n
    held = [-1] * n  # receiver -> proposer
    free = list(range(n - 1, -1, -1))
    while free:
        p = free.pop()
        r = int(prop_lists[p][nxt[p]])
        nxt[p] += 1
        cur = held[r]
        if cur < 0:
            held[r] = p
        elif recv_ranks[r][p] < recv_ranks[r][cur]:
            held[r] = p
            free.append(cur)
        else:
            free.append(p)
    out = [0] * n
    for r, p in enumerate(held):
        out[p] = r
    return out


def gale_shapley(inst: PreferenceInstance, proposing_side: str = "a") -> Matching:
    """Proposer-optimal stable matching via deferred acceptance."""
    _require_square(inst)
    if proposing_side == "a":
        return Matching.from_permutation(_deferred_acceptance(inst.prefs_a, inst.rank_b))
    if proposing_side == "b":
        b_to_a = _deferred_acceptance(inst.prefs_b, inst.rank_a)
        pairs = [0] * inst.n
        for j, i in enumerate(b_to_a):
            pairs[i] = j
        return Matching.from_permutation(pairs)
    raise ValueError("proposing_side must be 'a' or 'b'")


def gs_best(inst: PreferenceInstance, cost_kind: str = "seq") -> Matching:
    """The better of the two one-sided GS outcomes; ties keep the A-proposing one."""
    _check_cost(cost_kind)
    ma = gale_shapley(inst, "a")
    mb = gale_shapley(inst, "b")
    if cost_report(inst, mb).get(cost_kind) < cost_report(inst, ma).get(cost_kind):
        return mb
    return ma


# ---------------------------------------------------------------- enumeration

@lru_cache(maxsize=None)
def _permutations(n: int) -> np.ndarray:
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64).reshape(-1, n)
    perms.setflags(write=False)
    return perms


def stable_permutation_mask(inst: PreferenceInstance, perms: np.ndarray, chunk: int = 20000) -> np.ndarray:
    """Boolean mask over rows of ``perms`` (a_i -> b_perm[i]) marking stable matchings."""
    n = inst.n
    ra, rb = inst.rank_a, inst.rank_b
    idx = np.arange(n)
    out = np.empty(len(perms), dtype=bool)
    for s in range(0, len(perms), chunk):
        p = perms[s:s + chunk]
        inv = np.argsort(p, axis=1)
        cur_a = ra[idx, p]  # (k, n) rank a_v gives its partner
        cur_b = rb[idx, inv]  # (k, n) rank b_w gives its partner
        a_wants = ra[None, :, :] < cur_a[:, :, None]  # (k, v, w)
        b_wants = rb.T[None, :, :] < cur_b[:, None, :]
        out[s:s + chunk] = ~(a_wants & b_wants).any(axis=(1, 2))
    return out


@dataclass(frozen=True)
class StableSet:
    matchings: tuple[Matching, ...]
    costs: tuple[CostReport, ...]

    def __len__(self) -> int:
        return len(self.matchings)


def enumerate_stable(inst: PreferenceInstance, limit: int = ENUM_LIMIT) -> StableSet:
    """Every stable matching of the instance, in lexicographic order."""
    _require_square(inst)
    if inst.n > limit:
        raise SizeLimitError(f"exhaustive enumeration limited to n <= {limit}, got {inst.n}")
    perms = _permutations(inst.n)
    stable = perms[stable_permutation_mask(inst, perms)]
    ms = tuple(Matching.from_permutation(p) for p in stable)
    return StableSet(ms, tuple(cost_report(inst, m) for m in ms))


def oracle_optimal(inst: PreferenceInstance, cost_kind: str = "seq", limit: int = ENUM_LIMIT) -> tuple[Matching, int]:
    """Minimum-cost stable matching; ties resolved to the lexicographically smallest."""
    _check_cost(cost_kind)
    ss = enumerate_stable(inst, limit)
    values = [c.get(cost_kind) for c in ss.costs]
    k = int(np.argmin(values))  # first minimum == lexicographically smallest
    return ss.matchings[k], values[k]


def polymin(inst: PreferenceInstance, limit: int = ENUM_LIMIT) -> Matching:
    """Minimum-regret stable matching, egalitarian cost as the secondary key."""
    ss = enumerate_stable(inst, limit)
    keys = [(c.reg, c.egal) for c in ss.costs]
    return ss.matchings[min(range(len(keys)), key=keys.__getitem__)]


# ---------------------------------------------------------------- DACC

def dacc(inst: PreferenceInstance) -> Matching:
    """Deferred acceptance with compensation chains, agents entering a1, b1, a2, b2, ...

    When an agent enters, it proposes down its list among agents already present;
    an accepted proposal displaces the receiver's partner, who resumes proposing
    from just below the partner it lost.  The matching stays stable on the set of
    present agents after every entry, so the final matching is stable.
    """
    _require_square(inst)
    n = inst.n
    lists = (inst.prefs_a, inst.prefs_b)
    ranks = (inst.rank_a, inst.rank_b)
    partner = ([-1] * n, [-1] * n)
    present = ([False] * n, [False] * n)
    budget = 4 * n ** 4 + 16
    events = 0

    def run_chain(side: int, agent: int) -> None:
        nonlocal events
        other = 1 - side
        start = 0
        while True:
            nxt = -1
            lost = -1
            for pos in range(start, n):
                r = int(lists[side][agent][pos])
                if not present[other][r]:
                    continue
                events += 1
                if events > budget:
                    raise RuntimeError("dacc exceeded its proposal budget")
                held = partner[other][r]
                if held < 0 or ranks[other][r][agent] < ranks[other][r][held]:
                    partner[other][r] = agent
                    partner[side][agent] = r
                    if held >= 0:
                        partner[side][held] = -1
                        nxt, lost = held, r
                    break
            if nxt < 0:
                return
            agent = nxt
            start = int(ranks[side][agent][lost])  # 1-based rank == next list position

    for k in range(n):
        for side in (0, 1):
            present[side][k] = True
            run_chain(side, k)
    return Matching.from_permutation(partner[0])


# ---------------------------------------------------------------- PowerBalance

def _break_marriage(inst: PreferenceInstance, pairs: list[int], side: str, agent: int, budget: list[int]) -> list[int] | None:
    """McVitie-Wilson break-marriage: ``agent`` (on ``side``) leaves its partner and
    its side proposes onwards.  Returns the next stable matching (in A->B form) or
    None when the chain fails."""
    if side == "a":
        lists, ranks_recv = inst.prefs_a, inst.rank_b
        prop_partner = list(pairs)
    else:
        lists, ranks_recv = inst.prefs_b, inst.rank_a
        prop_partner = [0] * inst.n
        for i, j in enumerate(pairs):
            prop_partner[j] = i
    prop_ranks = inst.rank_a if side == "a" else inst.rank_b
    n = inst.n
    held = [0] * n
    for p, r in enumerate(prop_partner):
        held[r] = p
    jilted = prop_partner[agent]
    held[jilted] = -1
    threshold = agent  # jilted only accepts proposers it ranks above ``agent``
    prop = agent
    start = int(prop_ranks[prop][jilted])
    while True:
        accepted = False
        for pos in range(start, n):
            budget[0] -= 1
            if budget[0] < 0:
                return None
            r = int(lists[prop][pos])
            cur = held[r]
            if r == jilted:
                if ranks_recv[r][prop] < ranks_recv[r][threshold]:
                    held[r] = prop
                    prop_partner[prop] = r
                    out = prop_partner
                    if side == "a":
                        return out
                    pairs_a = [0] * n
                    for j, i in enumerate(out):
                        pairs_a[i] = j
                    return pairs_a
                continue
            if ranks_recv[r][prop] < ranks_recv[r][cur]:
                held[r] = prop
                prop_partner[prop] = r
                prop, start = cur, int(prop_ranks[cur][r])
                accepted = True
                break
        if not accepted:
            return None


def _strengths(inst: PreferenceInstance, pairs: list[int]) -> tuple[int, int]:
    c = cost_report(inst, Matching.from_permutation(pairs))
    return c.p_a, c.p_b


def power_balance(inst: PreferenceInstance, max_rounds: int | None = None, cost_kind: str = "seq") -> Matching:
    """Balance-seeking walk over stable matchings: the more satisfied side proposes.

    Starts from the A-optimal matching.  While side A is strictly stronger
    (smaller rank sum), one A-agent breaks its marriage and A proposes onwards,
    which moves to a stable matching worse for A and better for B.  The walk
    stops once B becomes at least as strong (or no chain succeeds, or the
    proposal budget of ``max_rounds`` events runs out) and returns the better of
    the last two matchings under ``cost_kind``.
    """
    _require_square(inst)
    _check_cost(cost_kind)
    n = inst.n
    budget = [4 * n * n if max_rounds is None else int(max_rounds)]
    cur = list(gale_shapley(inst, "a").pairs)
    prev = cur
    while True:
        pa, pb = _strengths(inst, cur)
        if pa >= pb:
            break
        step = None
        for a in range(n):
            step = _break_marriage(inst, cur, "a", a, budget)
            if step is not None or budget[0] < 0:
                break
        if step is None:
            break
        prev, cur = cur, step
    cands = [Matching.from_permutation(cur), Matching.from_permutation(prev)]
    return min(cands, key=lambda m: cost_report(inst, m).get(cost_kind))


# ---------------------------------------------------------------- Hungarian

def hungarian(cost) -> Matching:
    """Minimum-cost perfect assignment, O(n^3) shortest augmenting paths with potentials."""
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("cost matrix must be square")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix must be finite")
    n = c.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    col_owner = np.zeros(n + 1, dtype=np.int64)  # column j (1-based) -> row (1-based), 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        col_owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_owner[j0]
            free = ~used[1:]
            reduced = c[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[col_owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if col_owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            col_owner[j0] = col_owner[j1]
            j0 = j1
    pairs = [0] * n
    for j in range(1, n + 1):
        pairs[col_owner[j] - 1] = j - 1
    return Matching.from_permutation(pairs)


def assignment_cost(cost, m: Matching) -> float:
    c = np.asarray(cost, dtype=np.float64)
    return float(c[np.arange(m.n), list(m.pairs)].sum())


SOLVERS = {
    "gs": lambda inst, kind: gale_shapley(inst, "a"),
    "gs_best": lambda inst, kind: gs_best(inst, kind),
    "dacc": lambda inst, kind: dacc(inst),
    "powerbalance": lambda inst, kind: power_balance(inst, cost_kind=kind),
    "polymin": lambda inst, kind: polymin(inst),
    "oracle": lambda inst, kind: oracle_optimal(inst, kind)[0],
}


def solve(inst: PreferenceInstance, algo: str, cost_kind: str = "seq") -> Matching:
    try:
        fn = SOLVERS[algo]
    except KeyError:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {sorted(SOLVERS)}") from None
    _check_cost(cost_kind)
    return fn(inst, cost_kind)
