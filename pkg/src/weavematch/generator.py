"""Seeded synthetic preference generators (U, D, G, Lib) and dataset manifests.

Every instance is drawn from its own Philox stream keyed by
``(dataset seed, instance index)`` through :class:`numpy.random.SeedSequence`,
so instance ``k`` of a dataset can be regenerated on its own.
Training batches use the key ``(seed, TRAIN_STREAM, iteration)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .instance import PreferenceInstance, ranks_from_lists

GENERATOR_ID = "philox4x64-seedseq"
MANIFEST_VERSION = 1
HISTOGRAM_VERSION = 1
TRAIN_STREAM = 1 << 20

KINDS = ("uniform", "discrete", "gauss", "lib")

SETTINGS = {
    "UU": ("uniform", "uniform"),
    "DD": ("discrete", "discrete"),
    "GG": ("gauss", "gauss"),
    "UD": ("uniform", "discrete"),
    "Lib": ("lib", "lib"),
}


def make_rng(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _rank_scores(scores: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Order candidates by descending score; exact ties fall back to a uniform jitter."""
    jitter = rng.random(scores.shape)
    return np.lexsort((jitter, -scores), axis=-1)


def gen_uniform(n: int, rng: np.random.Generator, agents: int | None = None, batch=()) -> np.ndarray:
    """Preference lists of ``agents`` agents over ``n`` candidates, scores iid U(0, 1)."""
    agents = n if agents is None else agents
    scores = rng.random((*batch, agents, n))
    return _rank_scores(scores, rng)


def popular_count(n: int, fraction: float = 0.4) -> int:
    return int(np.floor(fraction * n))


def gen_discrete(
    n: int, rng: np.random.Generator, agents: int | None = None, batch=(), fraction: float = 0.4
) -> np.ndarray:
    # candidates 0..k-1 form the shared popular group
    agents = n if agents is None else agents
    k = popular_count(n, fraction)
    u = rng.random((*batch, agents, n))
    scores = np.where(np.arange(n) < k, 0.5 + 0.5 * u, 0.5 * u)
    return _rank_scores(scores, rng)


def gen_gauss(
    n: int, rng: np.random.Generator, agents: int | None = None, batch=(), stddev: float = 0.4
) -> np.ndarray:
    agents = n if agents is None else agents
    means = np.arange(1, n + 1) / n
    scores = means + stddev * rng.standard_normal((*batch, agents, n))
    return _rank_scores(scores, rng)


@dataclass(frozen=True)
class Histogram:
    """Joint frequency table over (A-side rating bin, B-side rating bin) pairs."""

    counts: np.ndarray  # (bins_a, bins_b)
    label: str = ""

    def __post_init__(self) -> None:
        c = np.asarray(self.counts, dtype=np.float64)
        if c.ndim != 2 or c.size == 0:
            raise ValueError("histogram must be a non-empty 2-D table")
        if (c < 0).any() or not np.isfinite(c).all():
            raise ValueError("histogram counts must be finite and non-negative")
        if c.sum() <= 0:
            raise ValueError("histogram has no mass")
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_dict(cls, d: dict) -> "Histogram":
        if d.get("version") != HISTOGRAM_VERSION:
            raise ValueError(f"unsupported histogram version {d.get('version')!r}")
        ba, bb = int(d["bins_a"]), int(d["bins_b"])
        counts = np.asarray(d["counts"], dtype=np.float64)
        if counts.size != ba * bb:
            raise ValueError("counts length does not match bins_a * bins_b")
        return cls(counts.reshape(ba, bb), d.get("label", ""))

    @classmethod
    def load(cls, path: str | Path) -> "Histogram":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        ba, bb = self.counts.shape
        return {
            "version": HISTOGRAM_VERSION,
            "bins_a": ba,
            "bins_b": bb,
            "counts": self.counts.ravel().tolist(),
            "label": self.label,
        }


def example_histogram() -> Histogram:
    """Bundled synthetic rating-pair table.  Not derived from real dating data."""
    text = resources.files("weavematch.data").joinpath("example_histogram.json").read_text()
    return Histogram.from_dict(json.loads(text))


def gen_lib(n: int, rng: np.random.Generator, histogram: Histogram, batch=()) -> tuple[np.ndarray, np.ndarray]:
    """Draw a joint rating pair per (a_i, b_j) edge from the histogram, then rank per agent.

    Returns ``(prefs_a, prefs_b)``; higher bins mean stronger preference.
    """
    p = histogram.counts.ravel() / histogram.counts.sum()
    bins_b = histogram.counts.shape[1]
    cells = rng.choice(p.size, size=(*batch, n, n), p=p)
    score_a = (cells // bins_b).astype(np.float64)
    score_b = np.swapaxes(cells % bins_b, -1, -2).astype(np.float64)
    return _rank_scores(score_a, rng), _rank_scores(score_b, rng)


@dataclass(frozen=True)
class DistributionSpec:
    kind: str
    fraction: float = 0.4
    stddev: float = 0.4
    histogram: str | None = None  # path; None means the bundled example table

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if not 0 < self.fraction < 1 or self.stddev < 0:
            raise ValueError("distribution parameters out of range")

    def load_histogram(self) -> Histogram:
        return example_histogram() if self.histogram is None else Histogram.load(self.histogram)


@dataclass(frozen=True)
class DatasetSpec:
    side_a: DistributionSpec
    side_b: DistributionSpec
    n: int
    seed: int = 0
    count: int = 1
    name: str = ""

    def __post_init__(self) -> None:
        if self.n < 1 or self.count < 0:
            raise ValueError("n must be >= 1 and count >= 0")
        if (self.side_a.kind == "lib") != (self.side_b.kind == "lib"):
            raise ValueError("the Lib distribution is joint and must be used on both sides")

    @classmethod
    def named(cls, setting: str, n: int, seed: int = 0, count: int = 1, histogram: str | None = None) -> "DatasetSpec":
        try:
            ka, kb = SETTINGS[setting]
        except KeyError:
            raise ValueError(f"unknown dataset setting {setting!r}; choose from {sorted(SETTINGS)}") from None
        return cls(DistributionSpec(ka, histogram=histogram), DistributionSpec(kb, histogram=histogram), n, seed, count, setting)

    def to_dict(self) -> dict:
        def side(s: DistributionSpec) -> dict:
            return {"kind": s.kind, "fraction": s.fraction, "stddev": s.stddev, "histogram": s.histogram}

        return {"name": self.name, "n": self.n, "seed": self.seed, "count": self.count,
                "side_a": side(self.side_a), "side_b": side(self.side_b)}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(DistributionSpec(**d["side_a"]), DistributionSpec(**d["side_b"]),
                   d["n"], d["seed"], d["count"], d.get("name", ""))


def _one_side(spec: DistributionSpec, n: int, rng: np.random.Generator, batch) -> np.ndarray:
    if spec.kind == "uniform":
        return gen_uniform(n, rng, batch=batch)
    if spec.kind == "discrete":
        return gen_discrete(n, rng, batch=batch, fraction=spec.fraction)
    return gen_gauss(n, rng, batch=batch, stddev=spec.stddev)


def sample_lists(spec: DatasetSpec, rng: np.random.Generator, batch=()) -> tuple[np.ndarray, np.ndarray]:
    """Raw preference-list arrays for one instance (``batch=()``) or a batch of them."""
    if spec.side_a.kind == "lib":
        return gen_lib(spec.n, rng, spec.side_a.load_histogram(), batch=batch)
    return _one_side(spec.side_a, spec.n, rng, batch), _one_side(spec.side_b, spec.n, rng, batch)


def generate_instance(spec: DatasetSpec, index: int) -> PreferenceInstance:
    rng = make_rng(spec.seed, index)
    pa, pb = sample_lists(spec, rng)
    return PreferenceInstance(pa, pb, distribution=spec.name or f"{spec.side_a.kind}/{spec.side_b.kind}",
                              seed=[spec.seed, index])


def generate_dataset(spec: DatasetSpec) -> list[PreferenceInstance]:
    return [generate_instance(spec, k) for k in range(spec.count)]


def training_batch(spec: DatasetSpec, iteration: int, batch_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Fresh 1-based rank tables ``(B, n, n)`` for one training step."""
    rng = make_rng(spec.seed, TRAIN_STREAM, iteration)
    pa, pb = sample_lists(spec, rng, batch=(batch_size,))
    return ranks_from_lists(pa), ranks_from_lists(pb)


# dataset directories: manifest.json + instances/<id>.json

def write_dataset(spec: DatasetSpec, out: str | Path) -> Path:
    out = Path(out)
    (out / "instances").mkdir(parents=True, exist_ok=True)
    entries = []
    for k, inst in enumerate(generate_dataset(spec)):
        name = f"instances/{k:06d}.json"
        inst.save(out / name)
        entries.append({"id": k, "seed": [spec.seed, k], "file": name})
    manifest = {"version": MANIFEST_VERSION, "generator": GENERATOR_ID, "spec": spec.to_dict(), "instances": entries}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


@dataclass
class Manifest:
    spec: DatasetSpec | None
    instances: list[PreferenceInstance] = field(default_factory=list)
    ids: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.instances)

    @classmethod
    def from_spec(cls, spec: DatasetSpec) -> "Manifest":
        return cls(spec, generate_dataset(spec), list(range(spec.count)))

    @classmethod
    def from_instances(cls, instances: list[PreferenceInstance]) -> "Manifest":
        return cls(None, list(instances), list(range(len(instances))))


def read_dataset(path: str | Path) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    d = json.loads(path.read_text())
    if d.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {d.get('version')!r}")
    if d.get("generator") != GENERATOR_ID:
        raise ValueError(f"manifest was produced by generator {d.get('generator')!r}")
    spec = DatasetSpec.from_dict(d["spec"]) if d.get("spec") else None
    root = path.parent
    instances = [PreferenceInstance.load(root / e["file"]) for e in d["instances"]]
    return Manifest(spec, instances, [e["id"] for e in d["instances"]])
