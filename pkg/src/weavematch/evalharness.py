"""Binarisation, per-instance metrics, win/tie/loss comparison and benchmark reports."""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .instance import UNASSIGNED, Matching, PreferenceInstance, cost_report, find_blocking_pairs, rank_to_score
from .solvers import COST_KINDS, ENUM_LIMIT, SOLVERS, hungarian, oracle_optimal

REPORT_VERSION = 1
ROW_COLUMNS = ("instance", "method", "n", "valid", "stable", "blocking_pairs", "seq", "bal", "egal", "reg")
HIST_BUCKETS = ("0", "1", "2", ">=3", "Fail")
BASELINES = ("gs_best", "polymin", "dacc", "powerbalance")
NETWORK = "weavenet"


# ------------------------------------------------------------ binarisation

def binarize_argmax(m_hat) -> tuple[Matching, bool]:
    """Row-wise argmax.  When two rows pick the same column the result is not
    one-to-one: only the lowest-index row keeps that column and ``valid`` is False."""
    m_hat = np.asarray(m_hat)
    choice = np.argmax(m_hat, axis=1)
    pairs = []
    used: set[int] = set()
    for j in choice:
        j = int(j)
        pairs.append(UNASSIGNED if j in used else j)
        used.add(j)
    valid = len(used) == len(choice)
    return Matching(tuple(pairs), m_hat.shape[1]), valid


def binarize_hungarian(m_hat) -> Matching:
    """One-to-one matching maximising the total soft assignment mass."""
    return hungarian(1.0 - np.asarray(m_hat, dtype=np.float64))


# ------------------------------------------------------------ metrics

@dataclass
class Row:
    instance: int
    method: str
    n: int
    valid: bool
    stable: bool
    blocking_pairs: int  # -1 when the output is not a one-to-one matching
    seq: int | None
    bal: int | None
    egal: int | None
    reg: int | None

    def cost(self, kind: str) -> int | None:
        return getattr(self, kind)


def score_matching(inst: PreferenceInstance, m: Matching, valid: bool = True, instance_id: int = 0,
                   method: str = "") -> Row:
    if not valid or not m.is_perfect:
        return Row(instance_id, method, inst.n, False, False, -1, None, None, None, None)
    bp = len(find_blocking_pairs(inst, m))
    c = cost_report(inst, m)
    return Row(instance_id, method, inst.n, True, bp == 0, bp, c.seq, c.bal, c.egal, c.reg)


def bucket(row: Row) -> str:
    if not row.valid:
        return "Fail"
    return str(row.blocking_pairs) if row.blocking_pairs < 3 else ">=3"


def blocking_histogram(rows: Sequence[Row]) -> dict[str, float]:
    counts = Counter(bucket(r) for r in rows)
    total = len(rows)
    return {b: 100.0 * counts.get(b, 0) / total if total else 0.0 for b in HIST_BUCKETS}


def stable_rate(rows: Sequence[Row]) -> float:
    return 100.0 * sum(r.stable for r in rows) / len(rows) if rows else 0.0


def mean_cost(rows: Sequence[Row], kind: str, stable_only: bool = False) -> float | None:
    vals = [r.cost(kind) for r in rows if r.valid and (r.stable or not stable_only)]
    return float(np.mean(vals)) if vals else None


def compare_wtl(ours: Sequence[Row], baseline: Sequence[Row], cost_kind: str) -> tuple[float, float, float]:
    """(win %, tie %, loss+unstable %) of ``ours`` against ``baseline`` instance by instance.

    Invalid or unstable outputs of ``ours`` count as losses whatever their cost.
    """
    if cost_kind not in COST_KINDS:
        raise ValueError(f"unknown cost kind {cost_kind!r}")
    if len(ours) != len(baseline) or any(a.instance != b.instance for a, b in zip(ours, baseline)):
        raise ValueError("row sets do not cover the same instances in the same order")
    if not ours:
        raise ValueError("nothing to compare")
    win = tie = loss = 0
    for a, b in zip(ours, baseline):
        if not (a.valid and a.stable):
            loss += 1
            continue
        ca, cb = a.cost(cost_kind), b.cost(cost_kind)
        if ca < cb:
            win += 1
        elif ca == cb:
            tie += 1
        else:
            loss += 1
    k = len(ours)
    return 100.0 * win / k, 100.0 * tie / k, 100.0 * loss / k


def optimal_hit_rate(rows: Sequence[Row], optima: Sequence[int], cost_kind: str) -> float:
    """Percentage of instances where the output is stable and attains the oracle minimum."""
    if len(rows) != len(optima):
        raise ValueError("one oracle optimum per row is required")
    hits = sum(1 for r, opt in zip(rows, optima) if r.valid and r.stable and r.cost(cost_kind) == opt)
    return 100.0 * hits / len(rows) if rows else 0.0


def oracle_optima(instances: Sequence[PreferenceInstance], cost_kind: str) -> list[int]:
    for inst in instances:
        if inst.n > ENUM_LIMIT:
            raise ValueError(f"oracle comparison needs n <= {ENUM_LIMIT}")
    return [oracle_optimal(inst, cost_kind)[1] for inst in instances]


# ------------------------------------------------------------ model inference

def predict(model, instances: Sequence[PreferenceInstance], binarize: str = "argmax",
            chunk: int = 250) -> list[tuple[Matching, bool]]:
    """Eval-mode forward pass and binarisation, batched by instance size."""
    if binarize not in ("argmax", "hungarian"):
        raise ValueError("binarize must be 'argmax' or 'hungarian'")
    was_training = model.training
    model.eval()
    out: list[tuple[Matching, bool] | None] = [None] * len(instances)
    by_n: dict[int, list[int]] = {}
    for k, inst in enumerate(instances):
        by_n.setdefault(inst.n, []).append(k)
    c_min = model.cfg.c_min
    try:
        for n, idx in by_n.items():
            for s in range(0, len(idx), chunk):
                part = idx[s:s + chunk]
                ra = np.stack([instances[k].rank_a for k in part])
                rb = np.stack([instances[k].rank_b for k in part])
                sm = model(rank_to_score(ra, n, c_min), rank_to_score(rb, n, c_min))
                probs = sm.row_softmax.data
                for k, p in zip(part, probs):
                    if binarize == "argmax":
                        out[k] = binarize_argmax(p)
                    else:
                        out[k] = (binarize_hungarian(p), True)
    finally:
        model.training = was_training
    return out  # type: ignore[return-value]


# ------------------------------------------------------------ reports

@dataclass
class EvalReport:
    rows: list[Row]
    cost_kind: str
    summary: dict = field(default_factory=dict)

    def method_rows(self, method: str) -> list[Row]:
        return [r for r in self.rows if r.method == method]

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.rows))

    def write(self, out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"{stem}.csv"
        with open(csv_path, "w", newline="") as fh:
            fh.write(f"# weavematch report v{REPORT_VERSION}\n")
            w = csv.writer(fh)
            w.writerow(ROW_COLUMNS)
            for r in self.rows:
                d = asdict(r)
                w.writerow(["" if d[c] is None else (int(d[c]) if isinstance(d[c], bool) else d[c]) for c in ROW_COLUMNS])
        json_path = out_dir / f"{stem}.json"
        json_path.write_text(json.dumps({"version": REPORT_VERSION, "cost": self.cost_kind, **self.summary}, indent=2))
        return csv_path, json_path


def read_rows(path: str | Path) -> list[Row]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = []
    for d in csv.DictReader(lines):
        def opt(x):
            return None if x == "" else int(x)
        rows.append(Row(int(d["instance"]), d["method"], int(d["n"]), d["valid"] == "1", d["stable"] == "1",
                        int(d["blocking_pairs"]), opt(d["seq"]), opt(d["bal"]), opt(d["egal"]), opt(d["reg"])))
    return rows


def summarize(rows: Sequence[Row], cost_kind: str, optima: Sequence[int] | None = None,
              reference: str | None = None) -> dict:
    """Per-method aggregates, plus win/tie/loss of every non-baseline method against ``reference``."""
    methods = list(dict.fromkeys(r.method for r in rows))
    per: dict[str, dict] = {}
    for m in methods:
        mr = [r for r in rows if r.method == m]
        entry = {
            "count": len(mr),
            "stable_rate": stable_rate(mr),
            f"mean_{cost_kind}": mean_cost(mr, cost_kind),
            f"mean_{cost_kind}_stable": mean_cost(mr, cost_kind, stable_only=True),
            "mean_seq": mean_cost(mr, "seq"),
            "mean_bal": mean_cost(mr, "bal"),
            "blocking_histogram": blocking_histogram(mr),
        }
        if optima is not None:
            entry["optimal_hit_rate"] = optimal_hit_rate(mr, optima, cost_kind)
        per[m] = entry
    out: dict = {"methods": per}
    if reference is not None:
        out["reference"] = reference
        ref = [r for r in rows if r.method == reference]
        wtl = {}
        for m in methods:
            if m == reference or m in BASELINES or m == "oracle" or m == "gs":
                continue
            w, t, l = compare_wtl([r for r in rows if r.method == m], ref, cost_kind)
            wtl[m] = {"win": w, "tie": t, "loss_unstable": l}
        out["win_tie_loss"] = wtl
    return out


def best_baseline(rows: Sequence[Row], cost_kind: str) -> str | None:
    """Implemented baseline with the lowest mean cost (ties: first in BASELINES order)."""
    best = None
    for m in BASELINES:
        mc = mean_cost([r for r in rows if r.method == m], cost_kind)
        if mc is not None and (best is None or mc < best[1]):
            best = (m, mc)
    return None if best is None else best[0]


def run_benchmark(instances: Sequence[PreferenceInstance], methods: Iterable[str], cost_kind: str = "seq",
                  model=None, binarize: str = "argmax", ids: Sequence[int] | None = None) -> EvalReport:
    """Run every method on every instance and assemble rows plus summary aggregates."""
    if cost_kind not in COST_KINDS:
        raise ValueError(f"unknown cost kind {cost_kind!r}")
    methods = list(methods)
    for m in methods:
        if m != NETWORK and m not in SOLVERS:
            raise ValueError(f"unknown method {m!r}")
    if NETWORK in methods and model is None:
        raise ValueError("the weavenet method needs a checkpoint")
    if not instances:
        raise ValueError("empty dataset")
    ids = list(range(len(instances))) if ids is None else list(ids)
    rows: list[Row] = []
    for m in methods:
        if m == NETWORK:
            preds = predict(model, instances, binarize)
            rows.extend(score_matching(inst, match, valid, k, m) for k, inst, (match, valid) in zip(ids, instances, preds))
        else:
            rows.extend(score_matching(inst, SOLVERS[m](inst, cost_kind), True, k, m) for k, inst in zip(ids, instances))
    optima = None
    if all(inst.n <= ENUM_LIMIT for inst in instances) and "oracle" in methods:
        optima = [r.cost(cost_kind) for r in rows if r.method == "oracle"]
    ref = best_baseline(rows, cost_kind)
    summary = summarize(rows, cost_kind, optima, ref)
    return EvalReport(rows, cost_kind, summary)
