"""Unsupervised training with freshly sampled instances and validation-driven model selection."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .evalharness import predict, score_matching, stable_rate
from .generator import DatasetSpec, Manifest, training_batch
from .instance import rank_to_score
from .loss import LOSS_KINDS, LossWeights, composite
from .model import WeaveNet

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "lm", "ls", "lf_or_lb", "stable_rate", "mean_seq", "mean_bal")


class NumericalError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class TrainConfig:
    dataset: DatasetSpec
    val_set: Manifest
    iterations: int = 200_000
    batch_size: int = 8
    lr: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    loss: str = "sm"
    lm_variant: str = "cosine"
    val_every: int = 1000
    seed: int = 0  # training-sample stream; overrides dataset.seed
    grad_clip: float | None = None  # global-norm clipping, off by default

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.batch_size <= 0 or self.val_every <= 0:
            raise ValueError("batch_size and val_every must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive when set")


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def append(self, rec: dict) -> None:
        if self.records and rec["iteration"] <= self.records[-1]["iteration"]:
            raise ValueError("iterations must increase")
        self.records.append(rec)

    def column(self, name: str) -> list:
        return [r[name] for r in self.records]

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, LOG_COLUMNS)
            w.writeheader()
            for r in self.records:
                w.writerow({k: r[k] for k in LOG_COLUMNS})
        return path

    @classmethod
    def read_csv(cls, path: str | Path) -> "TrainLog":
        out = cls()
        with open(path) as fh:
            for r in csv.DictReader(fh):
                out.append({k: (int(r[k]) if k == "iteration" else (float(r[k]) if r[k] else None)) for k in LOG_COLUMNS})
        return out


def _scores(ra: np.ndarray, rb: np.ndarray, c_min: float, dtype) -> tuple[np.ndarray, np.ndarray]:
    n = ra.shape[-1]
    return rank_to_score(ra, n, c_min).astype(dtype), rank_to_score(rb, n, c_min).astype(dtype)


def evaluate_validation(model: WeaveNet, manifest: Manifest, loss: str = "sm",
                        weights: LossWeights = LossWeights(), lm_variant: str = "cosine") -> dict:
    """Eval-mode losses and binarised metrics over a fixed manifest."""
    if len(manifest) == 0:
        raise ValueError("validation manifest is empty")
    preds = predict(model, manifest.instances)
    rows = [score_matching(inst, m, valid, k) for k, inst, (m, valid) in zip(manifest.ids, manifest.instances, preds)]
    stable = [r for r in rows if r.stable]
    was_training = model.training
    model.eval()
    sums = {"lm": 0.0, "ls": 0.0, "lf_or_lb": 0.0}
    try:
        by_n: dict[int, list] = {}
        for inst in manifest.instances:
            by_n.setdefault(inst.n, []).append(inst)
        for n, group in by_n.items():
            s_a, s_b = _scores(np.stack([g.rank_a for g in group]), np.stack([g.rank_b for g in group]),
                               model.cfg.c_min, model.dtype)
            out = model(s_a, s_b)
            vals = composite(loss, out.row_softmax, out.col_softmax, s_a, s_b, weights, lm_variant).values()
            for k in sums:
                sums[k] += vals[k] * len(group)
    finally:
        model.training = was_training
    total = len(manifest)
    return {
        "lm": sums["lm"] / total,
        "ls": sums["ls"] / total,
        "lf_or_lb": sums["lf_or_lb"] / total,
        "stable_rate": stable_rate(rows),
        "mean_seq": float(np.mean([r.seq for r in stable])) if stable else None,
        "mean_bal": float(np.mean([r.bal for r in stable])) if stable else None,
        "rows": rows,
    }


def _fairness_key(loss: str, metrics: dict) -> float:
    key = metrics["mean_bal"] if loss == "bsm" else metrics["mean_seq"]
    return math.inf if key is None else key


def _clip(params, max_norm: float) -> None:
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm


def train(model: WeaveNet, cfg: TrainConfig,
          on_validate: Callable[[dict], None] | None = None) -> tuple[dict, TrainLog]:
    """Optimise ``model`` in place; return the best-validation state arrays and the log.

    Validation runs at iteration 0, every ``val_every`` iterations and at the end.
    The kept state has the highest stable rate; ties go to the lower SEq (or Bal for bsm).
    """
    opt = ad.Adam(model.parameters(), lr=cfg.lr)
    stream = replace(cfg.dataset, seed=cfg.seed)
    logbook = TrainLog()
    best_state = model.state_arrays()
    best_state = {k: v.copy() for k, v in best_state.items()}
    best_key = None

    def validate(it: int) -> None:
        nonlocal best_state, best_key
        m = evaluate_validation(model, cfg.val_set, cfg.loss, cfg.weights, cfg.lm_variant)
        rec = {k: m[k] for k in LOG_COLUMNS if k != "iteration"}
        rec["iteration"] = it
        logbook.append(rec)
        key = (-m["stable_rate"], _fairness_key(cfg.loss, m))
        if best_key is None or key < best_key:
            best_key = key
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
            rec["best"] = True
        log.info("iter %d stable %.1f%% ls %.5f", it, m["stable_rate"], m["ls"])
        if on_validate is not None:
            on_validate(rec)

    validate(0)
    if cfg.iterations == 0:
        return best_state, logbook
    model.train()
    for it in range(1, cfg.iterations + 1):
        ra, rb = training_batch(stream, it, cfg.batch_size)
        s_a, s_b = _scores(ra, rb, model.cfg.c_min, model.dtype)
        out = model(s_a, s_b)
        parts = composite(cfg.loss, out.row_softmax, out.col_softmax, s_a, s_b, cfg.weights, cfg.lm_variant)
        value = float(parts.total.data)
        if not math.isfinite(value):
            raise NumericalError(f"non-finite loss {value} at iteration {it}")
        opt.zero_grad()
        ad.backward(parts.total)
        if cfg.grad_clip is not None:
            _clip(opt.params, cfg.grad_clip)
        opt.step()
        if it % cfg.val_every == 0 or it == cfg.iterations:
            validate(it)
            model.train()
    return best_state, logbook
