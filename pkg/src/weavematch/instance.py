"""Preference instances, matchings, stability and fairness costs.

Ranks are 1-based (rank 1 = most preferred).  Agent indices are 0-based
everywhere in code and in serialized files.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

FORMAT_VERSION = 1
DEFAULT_C_MIN = 0.1

UNASSIGNED = -1


def _check_lists(lists: np.ndarray, n_candidates: int, side: str) -> None:
    expected = np.arange(n_candidates)
    for i, row in enumerate(lists):
        if not np.array_equal(np.sort(row), expected):
            raise ValueError(f"prefs_{side}[{i}] is not a permutation of 0..{n_candidates - 1}")


def ranks_from_lists(lists: np.ndarray) -> np.ndarray:
    """Invert preference lists into 1-based rank tables (works on batches)."""
    lists = np.asarray(lists)
    ranks = np.empty_like(lists)
    k = lists.shape[-1]
    np.put_along_axis(ranks, lists, np.broadcast_to(np.arange(1, k + 1), lists.shape), axis=-1)
    return ranks


def lists_from_ranks(ranks: np.ndarray) -> np.ndarray:
    return np.argsort(np.asarray(ranks), axis=-1, kind="stable")


@dataclass(frozen=True)
class PreferenceInstance:
    """Two-sided preference profile.

    ``prefs_a[i]`` lists side-B indices in a_i's order of preference, most
    preferred first; ``prefs_b[j]`` likewise over side-A indices.
    """

    prefs_a: np.ndarray
    prefs_b: np.ndarray
    distribution: str | None = None
    seed: Any = None
    rank_a: np.ndarray = field(init=False, repr=False, compare=False)
    rank_b: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        pa = np.array(self.prefs_a, dtype=np.int64)
        pb = np.array(self.prefs_b, dtype=np.int64)
        if pa.ndim != 2 or pb.ndim != 2:
            raise ValueError("preference tables must be 2-D")
        n, m = pa.shape
        if pb.shape != (m, n):
            raise ValueError(f"prefs_b has shape {pb.shape}, expected {(m, n)}")
        if m > n:
            raise ValueError("side B may not be larger than side A")
        _check_lists(pa, m, "a")
        _check_lists(pb, n, "b")
        pa.setflags(write=False)
        pb.setflags(write=False)
        ra = ranks_from_lists(pa)
        rb = ranks_from_lists(pb)
        ra.setflags(write=False)
        rb.setflags(write=False)
        object.__setattr__(self, "prefs_a", pa)
        object.__setattr__(self, "prefs_b", pb)
        object.__setattr__(self, "rank_a", ra)
        object.__setattr__(self, "rank_b", rb)

    @property
    def n(self) -> int:
        return self.prefs_a.shape[0]

    @property
    def m(self) -> int:
        return self.prefs_a.shape[1]

    @classmethod
    def from_ranks(cls, rank_a, rank_b, **kw) -> "PreferenceInstance":
        return cls(lists_from_ranks(rank_a), lists_from_ranks(rank_b), **kw)

    def swapped(self) -> "PreferenceInstance":
        """The same instance with the roles of the two sides exchanged."""
        return PreferenceInstance(self.prefs_b, self.prefs_a, self.distribution, self.seed)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PreferenceInstance):
            return NotImplemented
        return (
            np.array_equal(self.prefs_a, other.prefs_a)
            and np.array_equal(self.prefs_b, other.prefs_b)
            and self.distribution == other.distribution
            and self.seed == other.seed
        )

    __hash__ = None  # type: ignore[assignment]

    # serialization

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "n": self.n,
            "m": self.m,
            "prefs_a": self.prefs_a.tolist(),
            "prefs_b": self.prefs_b.tolist(),
            "distribution": self.distribution,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreferenceInstance":
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported instance format version {d.get('version')!r}")
        inst = cls(d["prefs_a"], d["prefs_b"], d.get("distribution"), d.get("seed"))
        if inst.n != d["n"] or inst.m != d["m"]:
            raise ValueError("declared size does not match preference tables")
        return inst

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "PreferenceInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ScoreMatrices:
    s_a: np.ndarray  # (n, m)
    s_b: np.ndarray  # (m, n)
    c_min: float


def rank_to_score(ranks: np.ndarray, n: int, c_min: float = DEFAULT_C_MIN) -> np.ndarray:
    """Linear map of 1-based ranks onto (0, 1]: rank 1 is highest, rank n gives c_min."""
    if not 0.0 < c_min < 1.0:
        raise ValueError(f"c_min must lie in (0, 1), got {c_min}")
    return (1.0 - c_min) * (n - np.asarray(ranks, dtype=np.float64)) / n + c_min


def scale_ranks(inst: PreferenceInstance, c_min: float = DEFAULT_C_MIN) -> ScoreMatrices:
    # The normaliser is the list length of each side, which is N for square instances.
    return ScoreMatrices(
        rank_to_score(inst.rank_a, inst.m, c_min),
        rank_to_score(inst.rank_b, inst.n, c_min),
        c_min,
    )


@dataclass(frozen=True)
class Matching:
    """``pairs[i]`` is the side-B partner of a_i, or -1 when a_i is unassigned."""

    pairs: tuple[int, ...]
    m: int

    def __post_init__(self) -> None:
        pairs = tuple(int(p) for p in self.pairs)
        taken = [p for p in pairs if p != UNASSIGNED]
        if any(p < UNASSIGNED or p >= self.m for p in pairs):
            raise ValueError("partner index out of range")
        if len(set(taken)) != len(taken):
            raise ValueError("a side-B agent is assigned twice")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def from_permutation(cls, perm: Sequence[int]) -> "Matching":
        return cls(tuple(perm), len(perm))

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "Matching":
        mat = np.asarray(mat)
        if ((mat != 0) & (mat != 1)).any():
            raise ValueError("matching matrix must be binary")
        if (mat.sum(1) > 1).any() or (mat.sum(0) > 1).any():
            raise ValueError("row or column sum exceeds one")
        pairs = [int(np.flatnonzero(r)[0]) if r.any() else UNASSIGNED for r in mat]
        return cls(tuple(pairs), mat.shape[1])

    @property
    def n(self) -> int:
        return len(self.pairs)

    @property
    def is_perfect(self) -> bool:
        return self.n == self.m and UNASSIGNED not in self.pairs

    def partner_of_b(self) -> list[int]:
        inv = [UNASSIGNED] * self.m
        for i, j in enumerate(self.pairs):
            if j != UNASSIGNED:
                inv[j] = i
        return inv

    def to_matrix(self) -> np.ndarray:
        mat = np.zeros((self.n, self.m), dtype=np.int64)
        for i, j in enumerate(self.pairs):
            if j != UNASSIGNED:
                mat[i, j] = 1
        return mat

    def to_dict(self) -> dict:
        return {"version": FORMAT_VERSION, "pairs": list(self.pairs)}

    @classmethod
    def from_dict(cls, d: dict, m: int | None = None) -> "Matching":
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported matching format version {d.get('version')!r}")
        pairs = d["pairs"]
        return cls(tuple(pairs), len(pairs) if m is None else m)


@dataclass(frozen=True)
class CostReport:
    p_a: int
    p_b: int
    seq: int
    reg: int
    egal: int
    bal: int

    def get(self, kind: str) -> int:
        return getattr(self, COST_FIELDS[kind])


COST_FIELDS = {"seq": "seq", "bal": "bal", "egal": "egal", "reg": "reg"}


def find_blocking_pairs(inst: PreferenceInstance, m: Matching) -> list[tuple[int, int]]:
    """All pairs (v, w) not in ``m`` that both strictly prefer each other to their partners.

    An unassigned agent prefers any partner to being alone.
    """
    ra, rb = inst.rank_a, inst.rank_b
    pa = np.asarray(m.pairs)
    pb = np.asarray(m.partner_of_b())
    # rank of current partner; unassigned agents get a rank worse than any real one
    cur_a = np.where(pa >= 0, ra[np.arange(inst.n), np.maximum(pa, 0)], inst.m + 1)
    cur_b = np.where(pb >= 0, rb[np.arange(inst.m), np.maximum(pb, 0)], inst.n + 1)
    a_wants = ra < cur_a[:, None]  # (n, m): a_v prefers b_w
    b_wants = rb.T < cur_b[None, :]  # (n, m): b_w prefers a_v
    v, w = np.nonzero(a_wants & b_wants)
    return [(int(x), int(y)) for x, y in zip(v, w)]


def is_stable(inst: PreferenceInstance, m: Matching) -> bool:
    return not find_blocking_pairs(inst, m)


def cost_report(inst: PreferenceInstance, m: Matching) -> CostReport:
    if not m.is_perfect or m.n != inst.n or m.m != inst.m:
        raise ValueError("fairness costs are defined only for perfect matchings")
    idx = np.arange(inst.n)
    pairs = np.asarray(m.pairs)
    ranks_a = inst.rank_a[idx, pairs]
    ranks_b = inst.rank_b[pairs, idx]
    p_a = int(ranks_a.sum())
    p_b = int(ranks_b.sum())
    return CostReport(
        p_a=p_a,
        p_b=p_b,
        seq=abs(p_a - p_b),
        reg=int(max(ranks_a.max(), ranks_b.max())),
        egal=p_a + p_b,
        bal=max(p_a, p_b),
    )
