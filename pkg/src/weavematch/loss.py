"""Relaxed objectives for (fair) stable matching on soft assignment matrices.

Functions accept a single ``(N, M)`` matrix or a batch ``(B, N, M)`` and
return one value per instance.
Score tensors are the rank-scaled preference matrices, never raw ranks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOSS_KINDS = ("sm", "fsm", "bsm")


@dataclass(frozen=True)
class LossWeights:
    m: float = 1.0
    s: float = 0.7
    f: float = 0.01
    b: float = 0.01

    def __post_init__(self) -> None:
        if min(self.m, self.s, self.f, self.b) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    lm: Tensor
    ls: Tensor
    lfair: Tensor | None  # the fairness term (lf for fsm, lb for bsm)
    total: Tensor
    kind: str

    def values(self) -> dict[str, float]:
        out = {"lm": float(self.lm.data), "ls": float(self.ls.data), "total": float(self.total.data)}
        out["lf_or_lb"] = float(self.lfair.data) if self.lfair is not None else 0.0
        return out


def _t(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _row_column_cosine(p: Tensor, q: Tensor) -> Tensor:
    """Mean over i of cos(p[i, :], q[:, i]); p is (B, N, M), q is (B, M, N)."""
    qt = ad.swap_axes(q, -2, -1)
    num = ad.dot(p, qt)
    den = ad.mul(ad.l2_norm(p), ad.l2_norm(qt))
    if (den.data == 0).any():
        raise ValueError("cosine undefined for an all-zero row")
    return ad.mean(ad.div(num, den), axis=-1)


def loss_m_cosine(m_a, m_b) -> Tensor:
    """1 - mean row/column cosine agreement between the two softmax views."""
    m_a, m_b = _t(m_a), _t(m_b)
    c_ab = _row_column_cosine(m_a, m_b)
    c_ba = _row_column_cosine(m_b, m_a)
    return ad.sub(1.0, ad.mul(ad.add(c_ab, c_ba), 0.5))


def loss_m_euclidean(m_a, m_b) -> Tensor:
    """Sum of |m_a[i, j] - m_b[j, i]|."""
    m_a, m_b = _t(m_a), _t(m_b)
    return ad.sum_(ad.abs_(ad.sub(m_a, ad.swap_axes(m_b, -2, -1))), axis=(-2, -1))


def envy_tables(s_a: np.ndarray, s_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Constant tensors of positive score gaps.

    ``da[b, v, w, j] = max(s_a[v, w] - s_a[v, j], 0)`` and
    ``db[b, w, v, i] = max(s_b[w, v] - s_b[w, i], 0)``.
    """
    s_a = np.asarray(s_a)
    s_b = np.asarray(s_b)
    da = np.maximum(s_a[..., :, :, None] - s_a[..., :, None, :], 0)
    db = np.maximum(s_b[..., :, :, None] - s_b[..., :, None, :], 0)
    return da, db


def loss_s(m_hat, s_a, s_b, tables=None) -> Tensor:
    """Soft blocking-pair mass: sum over (v, w) of the A-side envy times the B-side envy."""
    m_hat = _t(m_hat)
    da, db = envy_tables(s_a, s_b) if tables is None else tables
    da = Tensor(da.astype(m_hat.dtype, copy=False))
    db = Tensor(db.astype(m_hat.dtype, copy=False))
    # g_a[v, w] = sum_j m[v, j] * da[v, w, j]
    g_a = ad.reshape(ad.matmul(da, ad.reshape(m_hat, (*m_hat.shape, 1))), m_hat.shape)
    # g_b[w, v] = sum_i m[i, w] * db[w, v, i]
    m_t = ad.swap_axes(m_hat, -2, -1)
    g_b = ad.reshape(ad.matmul(db, ad.reshape(m_t, (*m_t.shape, 1))), m_t.shape)
    return ad.sum_(ad.mul(g_a, ad.swap_axes(g_b, -2, -1)), axis=(-2, -1))


def satisfaction(m_hat, s_a, s_b) -> tuple[Tensor, Tensor]:
    """Score-weighted satisfaction of each side under a soft matching."""
    m_hat = _t(m_hat)
    sa = Tensor(np.asarray(s_a, dtype=m_hat.dtype))
    sbt = Tensor(np.swapaxes(np.asarray(s_b, dtype=m_hat.dtype), -2, -1))
    return (ad.sum_(ad.mul(m_hat, sa), axis=(-2, -1)), ad.sum_(ad.mul(m_hat, sbt), axis=(-2, -1)))


def loss_f(m_hat, s_a, s_b) -> Tensor:
    sat_a, sat_b = satisfaction(m_hat, s_a, s_b)
    n = np.shape(s_a)[-2]
    return ad.mul(ad.abs_(ad.sub(sat_a, sat_b)), 1.0 / n)


def loss_b(m_hat, s_a, s_b) -> Tensor:
    sat_a, sat_b = satisfaction(m_hat, s_a, s_b)
    n = np.shape(s_a)[-2]
    return ad.mul(ad.minimum(sat_a, sat_b), -1.0 / n)


def composite(kind: str, m_a, m_b, s_a, s_b, weights: LossWeights = LossWeights(),
              lm_variant: str = "cosine") -> LossBreakdown:
    """Batch-mean composite objective.

    ``m_a`` is the row softmax (B, N, M) and ``m_b`` the row softmax of the
    transposed logits (B, M, N).  The stability and fairness terms are averaged
    over ``m_a`` and ``m_b`` transposed back to (B, N, M).
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}; choose from {LOSS_KINDS}")
    m_a, m_b = _t(m_a), _t(m_b)
    s_a = np.asarray(s_a)
    s_b = np.asarray(s_b)
    if lm_variant == "cosine":
        lm = ad.mean(loss_m_cosine(m_a, m_b))
    elif lm_variant == "euclidean":
        lm = ad.mean(loss_m_euclidean(m_a, m_b))
    else:
        raise ValueError(f"unknown matrix-constraint variant {lm_variant!r}")
    views = (m_a, ad.swap_axes(m_b, -2, -1))
    tables = envy_tables(s_a, s_b)
    ls = ad.mul(ad.add(*(ad.mean(loss_s(v, s_a, s_b, tables)) for v in views)), 0.5)
    total = ad.add(ad.mul(lm, weights.m), ad.mul(ls, weights.s))
    lfair = None
    if kind == "fsm":
        lfair = ad.mul(ad.add(*(ad.mean(loss_f(v, s_a, s_b)) for v in views)), 0.5)
        total = ad.add(total, ad.mul(lfair, weights.f))
    elif kind == "bsm":
        lfair = ad.mul(ad.add(*(ad.mean(loss_b(v, s_a, s_b)) for v in views)), 0.5)
        total = ad.add(total, ad.mul(lfair, weights.b))
    return LossBreakdown(lm, ls, lfair, total, kind)
