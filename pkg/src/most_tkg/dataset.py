"""Construction of one-shot meta-learning datasets from a quadruple dump."""

from __future__ import annotations

import json
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    EXTRAPOLATION,
    INTERPOLATION,
    MODES,
    BackgroundGraph,
    MalformedInputError,
    Quadruple,
    Vocab,
    read_quadruples,
    read_vocab,
    write_quadruples,
    write_vocab,
)


class SplitError(ValueError):
    pass


class TooFewQuadruplesError(ValueError):
    pass


# (lower, upper, min_count) per database and mode
PRESETS: dict[tuple[str, str], tuple[int, int, int]] = {
    ("icews", INTERPOLATION): (50, 500, 50),
    ("icews", EXTRAPOLATION): (100, 1000, 50),
    ("gdelt", INTERPOLATION): (100, 1000, 100),
    ("gdelt", EXTRAPOLATION): (200, 2000, 100),
}

DEFAULT_RATIOS = (0.8, 0.1, 0.1)


@dataclass
class MetaTask:
    relation: int
    support: Quadruple
    queries: list[Quadruple]

    def __post_init__(self):
        self.support = Quadruple(*self.support)
        self.queries = [Quadruple(*q) for q in self.queries]
        if self.support.r != self.relation or any(q.r != self.relation for q in self.queries):
            raise MalformedInputError(f"task {self.relation} mixes relations")
        if self.support in self.queries:
            raise MalformedInputError(f"task {self.relation}: support repeated among queries")

    @property
    def quads(self) -> list[Quadruple]:
        return [self.support, *self.queries]

    def __len__(self) -> int:
        return 1 + len(self.queries)


@dataclass
class MetaDataset:
    background: BackgroundGraph
    train: list[MetaTask]
    valid: list[MetaTask]
    test: list[MetaTask]
    mode: str
    num_entities: int
    num_relations: int
    num_timestamps: int
    lower: int | None = None
    upper: int | None = None
    min_count: int | None = None
    seed: int | None = None
    boundaries: list[int] | None = None
    vocab: Vocab | None = field(default=None, compare=False)

    def split(self, name: str) -> list[MetaTask]:
        if name not in ("train", "valid", "test"):
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_tasks(self) -> list[MetaTask]:
        return [*self.train, *self.valid, *self.test]

    def all_quads(self) -> list[Quadruple]:
        out = list(self.background.quads)
        for task in self.all_tasks():
            out.extend(task.quads)
        return out


# ---------------------------------------------------------------- operations


def relation_counts(quads: Sequence[Quadruple]) -> Counter:
    return Counter(q.r for q in quads)


def classify_relations(quads: Sequence[Quadruple], lower: int, upper: int):
    """Partition relation ids into (frequent, sparse, discarded) by raw count.

    sparse: lower <= count <= upper; frequent: count > upper; the rest is
    discarded.
    """
    if not lower < upper:
        raise ValueError("lower threshold must be below upper threshold")
    frequent, sparse, discarded = set(), set(), set()
    for r, c in relation_counts(quads).items():
        if c > upper:
            frequent.add(r)
        elif c >= lower:
            sparse.add(r)
        else:
            discarded.add(r)
    return frequent, sparse, discarded


def split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; no block left empty."""
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be non-negative and sum to 1")
    if n < len(ratios):
        raise SplitError(f"need at least {len(ratios)} sparse relations, got {n}")
    exact = [n * r for r in ratios]
    sizes = [int(np.floor(x)) for x in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[: n - int(np.sum(sizes))]:
        sizes[i] += 1
    for i in range(len(sizes)):
        if sizes[i] == 0:
            donor = max(range(len(sizes)), key=lambda j: sizes[j])
            sizes[donor] -= 1
            sizes[i] += 1
    return sizes


def _median_times(quads: Sequence[Quadruple]) -> dict[int, float]:
    times = defaultdict(list)
    for q in quads:
        times[q.r].append(q.t)
    return {r: float(np.median(ts)) for r, ts in times.items()}


def split_tasks(sparse_ids, quads, ratios=DEFAULT_RATIOS, mode=INTERPOLATION, seed=0):
    """Assign sparse relations to (train, valid, test) blocks.

    Interpolation shuffles with ``seed``; extrapolation orders relations by
    the median timestamp of their quadruples and cuts contiguous blocks.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    ids = sorted(sparse_ids)
    sizes = split_sizes(len(ids), ratios)
    if mode == INTERPOLATION:
        rng = np.random.default_rng(seed)
        ids = [ids[i] for i in rng.permutation(len(ids))]
    else:
        medians = _median_times([q for q in quads if q.r in set(ids)])
        ids = sorted(ids, key=lambda r: (medians.get(r, 0.0), r))
    a, b = sizes[0], sizes[0] + sizes[1]
    return ids[:a], ids[a:b], ids[b:]


def extrapolation_boundaries(split, quads) -> tuple[int, int]:
    """Cut points between the train/valid and valid/test blocks.

    Each boundary lies halfway between the largest median timestamp of the
    earlier block and the smallest median of the later block.
    """
    medians = _median_times(quads)
    train, valid, test = split

    def cut(before, after):
        hi = max(medians[r] for r in before)
        lo = min(medians[r] for r in after)
        return int(np.floor((hi + lo) / 2.0))

    t_train_end = cut(train, valid)
    t_valid_end = max(cut(valid, test), t_train_end + 1)
    return t_train_end, t_valid_end


def prune_extrapolation_overlap(split, quads, min_count: int, boundaries: tuple[int, int] | None = None):
    """Trim sparse-relation quadruples so the three blocks occupy disjoint time spans.

    Train keeps t <= t_train_end, valid keeps t_train_end < t <= t_valid_end,
    test keeps t > t_valid_end.  Relations left with fewer than ``min_count``
    quadruples are dropped.  Returns ``({"train": {r: quads}, ...}, boundaries)``.
    """
    if boundaries is None:
        boundaries = extrapolation_boundaries(split, quads)
    t1, t2 = boundaries
    windows = {"train": (-np.inf, t1), "valid": (t1, t2), "test": (t2, np.inf)}
    by_rel = defaultdict(list)
    for q in quads:
        by_rel[q.r].append(q)
    pruned = {}
    for name, rels in zip(("train", "valid", "test"), split):
        lo, hi = windows[name]
        kept = {}
        for r in rels:
            qs = [q for q in by_rel[r] if lo < q.t <= hi]
            if len(qs) >= min_count:
                kept[r] = qs
        if not kept:
            raise SplitError(f"every {name} relation was discarded after overlap pruning")
        pruned[name] = kept
    return pruned, (t1, t2)


def select_support(task_quads: Sequence[Quadruple], mode: str, seed=0) -> Quadruple:
    """Pick the one observed quadruple of a task.

    Extrapolation takes the earliest quadruple (ties: smallest (s, r, o));
    interpolation draws uniformly with ``seed``.
    """
    if len(task_quads) < 2:
        raise TooFewQuadruplesError("a task needs at least two quadruples")
    if mode == EXTRAPOLATION:
        return min(task_quads, key=lambda q: (q.t, q.s, q.r, q.o))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ordered = sorted(task_quads)
    return ordered[int(rng.integers(len(ordered)))]


def make_task(relation: int, task_quads: Sequence[Quadruple], mode: str, seed=0) -> MetaTask:
    """Support plus queries; in extrapolation only strictly later quadruples query."""
    support = select_support(task_quads, mode, seed)
    if mode == EXTRAPOLATION:
        queries = [q for q in task_quads if q.t > support.t]
    else:
        queries = [q for q in task_quads if q != support]
    if not queries:
        raise TooFewQuadruplesError(f"relation {relation} has no query quadruples")
    return MetaTask(relation, support, sorted(queries, key=lambda q: (q.t, q.s, q.o)))


def build_dataset(
    quads: Sequence[Quadruple],
    mode: str,
    lower: int,
    upper: int,
    min_count: int | None = None,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
    num_timestamps: int | None = None,
    vocab: Vocab | None = None,
) -> MetaDataset:
    """Full pipeline: classify, split, prune (extrapolation), pick supports, reindex.

    Retained entities and relations are renumbered densely: frequent
    relations first, then train, valid and test relations.  Timestamp ids are
    kept unchanged.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    quads = [Quadruple(*q) for q in quads]
    if min_count is None:
        min_count = lower
    frequent, sparse, _ = classify_relations(quads, lower, upper)
    if not frequent:
        raise SplitError("no frequent relations; background graph would be empty")
    split = split_tasks(sparse, quads, ratios, mode, seed)
    sparse_quads = [q for q in quads if q.r in sparse]
    boundaries = None
    if mode == EXTRAPOLATION:
        groups, boundaries = prune_extrapolation_overlap(split, sparse_quads, min_count)
    else:
        by_rel = defaultdict(list)
        for q in sparse_quads:
            by_rel[q.r].append(q)
        groups = {
            name: {r: by_rel[r] for r in rels if len(by_rel[r]) >= min_count}
            for name, rels in zip(("train", "valid", "test"), split)
        }

    rng = np.random.default_rng(seed)
    raw_tasks = {}
    for name in ("train", "valid", "test"):
        tasks = []
        for r in sorted(groups[name]):
            try:
                task = make_task(r, groups[name][r], mode, rng)
            except TooFewQuadruplesError:
                continue
            if len(task) >= min_count:
                tasks.append(task)
        if not tasks:
            raise SplitError(f"{name} split is empty")
        raw_tasks[name] = tasks

    background = [q for q in quads if q.r in frequent]
    task_rels = [t.relation for name in ("train", "valid", "test") for t in raw_tasks[name]]
    rel_order = sorted(frequent) + task_rels
    rel_map = {r: i for i, r in enumerate(rel_order)}
    kept = background + [q for name in raw_tasks for t in raw_tasks[name] for q in t.quads]
    ent_order = sorted({q.s for q in kept} | {q.o for q in kept})
    ent_map = {e: i for i, e in enumerate(ent_order)}

    def remap(q):
        return Quadruple(ent_map[q.s], rel_map[q.r], ent_map[q.o], q.t)

    def remap_task(t):
        return MetaTask(rel_map[t.relation], remap(t.support), [remap(q) for q in t.queries])

    if num_timestamps is None:
        num_timestamps = (vocab.sizes()[2] if vocab else max(q.t for q in quads) + 1)
    return MetaDataset(
        background=BackgroundGraph([remap(q) for q in background], frozenset(rel_map[r] for r in frequent)),
        train=[remap_task(t) for t in raw_tasks["train"]],
        valid=[remap_task(t) for t in raw_tasks["valid"]],
        test=[remap_task(t) for t in raw_tasks["test"]],
        mode=mode,
        num_entities=len(ent_order),
        num_relations=len(rel_order),
        num_timestamps=num_timestamps,
        lower=lower,
        upper=upper,
        min_count=min_count,
        seed=seed,
        boundaries=list(boundaries) if boundaries else None,
        vocab=vocab.subset(ent_order, rel_order) if vocab else None,
    )


# ------------------------------------------------------------------------ IO


def _task_json(tasks: Sequence[MetaTask]) -> dict:
    return {str(t.relation): {"support": list(t.support), "queries": [list(q) for q in t.queries]} for t in tasks}


def _tasks_from_json(obj: dict) -> list[MetaTask]:
    return [MetaTask(int(r), Quadruple(*v["support"]), [Quadruple(*q) for q in v["queries"]]) for r, v in obj.items()]


def emit_dataset(ds: MetaDataset, directory: str | os.PathLike) -> None:
    os.makedirs(directory, exist_ok=True)
    write_quadruples(ds.background.quads, os.path.join(directory, "background.tsv"))
    for name in ("train", "valid", "test"):
        with open(os.path.join(directory, f"tasks_{name}.json"), "w", encoding="utf-8") as fh:
            json.dump(_task_json(ds.split(name)), fh)
    meta = {
        "mode": ds.mode,
        "lower": ds.lower,
        "upper": ds.upper,
        "min_count": ds.min_count,
        "seed": ds.seed,
        "num_entities": ds.num_entities,
        "num_relations": ds.num_relations,
        "num_timestamps": ds.num_timestamps,
        "frequent_relations": sorted(ds.background.frequent),
    }
    if ds.boundaries is not None:
        meta["boundaries"] = list(ds.boundaries)
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    if ds.vocab is not None:
        write_vocab(ds.vocab, directory)


def load_dataset(directory: str | os.PathLike) -> MetaDataset:
    with open(os.path.join(directory, "meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    vocab = read_vocab(directory) if os.path.exists(os.path.join(directory, "entities.tsv")) else None
    background = read_quadruples(os.path.join(directory, "background.tsv"), vocab)
    frequent = meta.get("frequent_relations")
    if frequent is None:
        frequent = sorted({q.r for q in background})
    splits = {}
    for name in ("train", "valid", "test"):
        with open(os.path.join(directory, f"tasks_{name}.json"), encoding="utf-8") as fh:
            splits[name] = _tasks_from_json(json.load(fh))
    return MetaDataset(
        background=BackgroundGraph(background, frozenset(frequent)),
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        mode=meta["mode"],
        num_entities=meta["num_entities"],
        num_relations=meta["num_relations"],
        num_timestamps=meta["num_timestamps"],
        lower=meta.get("lower"),
        upper=meta.get("upper"),
        min_count=meta.get("min_count"),
        seed=meta.get("seed"),
        boundaries=meta.get("boundaries"),
        vocab=vocab,
    )


def split_time_spans(ds: MetaDataset) -> dict[str, tuple[int, int]]:
    """(min t, max t) over all quadruples of each split."""
    spans = {}
    for name in ("train", "valid", "test"):
        ts = [q.t for task in ds.split(name) for q in task.quads]
        spans[name] = (min(ts), max(ts))
    return spans


def frequency_report(quads: Sequence[Quadruple], vocab: Vocab | None = None, lower=None, upper=None) -> str:
    """Plain-text relation frequency table, most frequent first."""
    counts = relation_counts(quads)
    lines = [f"{'relation':<40} {'count':>8}  class"]
    for r, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        name = vocab.relations[r] if vocab else str(r)
        cls = ""
        if lower is not None and upper is not None:
            cls = "frequent" if c > upper else ("sparse" if c >= lower else "discarded")
        lines.append(f"{name[:40]:<40} {c:>8}  {cls}")
    return "\n".join(lines)
