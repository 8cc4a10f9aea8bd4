"""Quadruples, vocabularies, reciprocal relations and temporal neighborhoods."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

INTERPOLATION = "interpolation"
EXTRAPOLATION = "extrapolation"
MODES = (INTERPOLATION, EXTRAPOLATION)
STRATEGIES = ("nearest", "random", "all")


class MalformedInputError(ValueError):
    pass


class Quadruple(NamedTuple):
    s: int
    r: int
    o: int
    t: int


@dataclass
class Vocab:
    """Name <-> dense id maps for entities, relations and timestamps."""

    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)
    times: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._lookup = {}
        for kind in ("entities", "relations", "times"):
            names = getattr(self, kind)
            ids = {name: i for i, name in enumerate(names)}
            if len(ids) != len(names):
                raise MalformedInputError(f"duplicate names in {kind} vocabulary")
            self._lookup[kind] = ids

    def id(self, kind: str, name: str) -> int:
        try:
            return self._lookup[kind][name]
        except KeyError:
            raise MalformedInputError(f"unknown {kind[:-1]} name {name!r}") from None

    def sizes(self) -> tuple[int, int, int]:
        return len(self.entities), len(self.relations), len(self.times)

    def subset(self, entity_ids: Sequence[int], relation_ids: Sequence[int]) -> "Vocab":
        """Vocabulary restricted to the given ids, in the given order."""
        return Vocab(
            [self.entities[i] for i in entity_ids],
            [self.relations[i] for i in relation_ids],
            list(self.times),
        )


@dataclass
class BackgroundGraph:
    quads: list[Quadruple]
    frequent: frozenset[int]

    def __post_init__(self):
        self.frequent = frozenset(self.frequent)
        bad = [q for q in self.quads if q.r not in self.frequent]
        if bad:
            raise MalformedInputError(f"background quadruple {bad[0]} uses a non-frequent relation")

    def __len__(self) -> int:
        return len(self.quads)


def add_reciprocals(quads: Sequence[Quadruple], num_base_relations: int) -> list[Quadruple]:
    """Append ``(o, r + num_base_relations, s, t)`` for every ``(s, r, o, t)``."""
    for q in quads:
        if not 0 <= q.r < num_base_relations:
            raise MalformedInputError(f"relation {q.r} outside base range [0, {num_base_relations})")
    out = [Quadruple(*q) for q in quads]
    out.extend(Quadruple(q.o, q.r + num_base_relations, q.s, q.t) for q in quads)
    return out


def reciprocal_of(r: int, num_base_relations: int) -> int:
    return r + num_base_relations if r < num_base_relations else r - num_base_relations


class TemporalNeighborIndex:
    """Per-entity inbound facts ``(e', r', t')``, sorted by (t', r', e').

    Backed by three aligned arrays per entity; immutable once built.
    """

    def __init__(self, num_entities: int, entities, relations, times, offsets):
        self.num_entities = num_entities
        self._ent = entities
        self._rel = relations
        self._time = times
        self._offsets = offsets

    def arrays(self, e: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lo, hi = self._offsets[e], self._offsets[e + 1]
        return self._ent[lo:hi], self._rel[lo:hi], self._time[lo:hi]

    def __getitem__(self, e: int) -> list[tuple[int, int, int]]:
        ents, rels, times = self.arrays(e)
        return list(zip(ents.tolist(), rels.tolist(), times.tolist()))

    def __len__(self) -> int:
        return self.num_entities


def build_neighbor_index(bg: BackgroundGraph, num_entities: int | None = None) -> TemporalNeighborIndex:
    """Index every background fact ``(e', r', e, t')`` under its object ``e``."""
    arr = np.array([tuple(q) for q in bg.quads], dtype=np.int64).reshape(-1, 4)
    if num_entities is None:
        num_entities = int(arr[:, [0, 2]].max()) + 1 if len(arr) else 0
    # lexsort: last key is primary -> object, then time, relation, neighbor
    order = np.lexsort((arr[:, 0], arr[:, 1], arr[:, 3], arr[:, 2]))
    arr = arr[order]
    counts = np.bincount(arr[:, 2], minlength=num_entities)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return TemporalNeighborIndex(num_entities, arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 3].copy(), offsets)


@dataclass
class NeighborSample:
    entities: np.ndarray
    relations: np.ndarray
    times: np.ndarray
    t0: int
    mode: str
    strategy: str

    @property
    def records(self) -> list[tuple[int, int, int]]:
        return list(zip(self.entities.tolist(), self.relations.tolist(), self.times.tolist()))

    def __len__(self) -> int:
        return len(self.entities)


def sample_neighbors(
    index: TemporalNeighborIndex,
    e: int,
    t0: int,
    k: int,
    mode: str = INTERPOLATION,
    strategy: str = "nearest",
    seed=None,
) -> NeighborSample:
    """Select temporal neighbors of ``e`` around the reference time ``t0``.

    Extrapolation keeps only records strictly before ``t0``.  ``nearest``
    returns the ``k`` records closest in time (stable on the index order, so
    earlier timestamps and smaller (r', e') win ties), ``random`` draws ``k``
    without replacement, ``all`` returns the whole pool.  ``seed`` may be an
    int or a numpy Generator.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy != "all" and k < 1:
        raise ValueError("k must be >= 1")
    ents, rels, times = index.arrays(e)
    if mode == EXTRAPOLATION:
        stop = int(np.searchsorted(times, t0, side="left"))
        ents, rels, times = ents[:stop], rels[:stop], times[:stop]

    if strategy == "all" or len(times) <= k:
        pick = np.arange(len(times))
        if strategy == "nearest":
            pick = np.argsort(np.abs(times - t0), kind="stable")
    elif strategy == "nearest":
        pick = np.argsort(np.abs(times - t0), kind="stable")[:k]
    else:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(times), size=k, replace=False))
    return NeighborSample(ents[pick], rels[pick], times[pick], t0, mode, strategy)


# ------------------------------------------------------------------------ IO


def _is_int(token: str) -> bool:
    try:
        int(token)
    except ValueError:
        return False
    return True


def _read_rows(path: str | os.PathLike) -> list[list[str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) < 4:
                raise MalformedInputError(f"{path}:{lineno}: expected 4 tab-separated fields")
            rows.append(fields[:4])
    return rows


def read_vocab(directory: str | os.PathLike) -> Vocab:
    def load(name):
        pairs = []
        with open(os.path.join(directory, name), encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                label, idx = line.rsplit("\t", 1)
                pairs.append((int(idx), label))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise MalformedInputError(f"{name}: ids are not dense")
        return [label for _, label in pairs]

    return Vocab(load("entities.tsv"), load("relations.tsv"), load("times.tsv"))


def write_vocab(vocab: Vocab, directory: str | os.PathLike) -> None:
    for name, labels in (("entities.tsv", vocab.entities), ("relations.tsv", vocab.relations),
                         ("times.tsv", vocab.times)):
        with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
            for i, label in enumerate(labels):
                fh.write(f"{label}\t{i}\n")


def read_quadruples(path: str | os.PathLike, vocab: Vocab | None = None) -> list[Quadruple]:
    """Read a quadruple file of integer ids, or of names resolved via ``vocab``."""
    rows = _read_rows(path)
    if not rows:
        return []
    numeric = all(_is_int(x) for row in rows for x in row)
    if numeric:
        return [Quadruple(*map(int, row)) for row in rows]
    if vocab is None:
        raise MalformedInputError(f"{path}: names found but no vocabulary supplied")
    return [
        Quadruple(vocab.id("entities", s), vocab.id("relations", r), vocab.id("entities", o), vocab.id("times", t))
        for s, r, o, t in rows
    ]


def write_quadruples(quads: Iterable[Quadruple], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in quads:
            fh.write(f"{q.s}\t{q.r}\t{q.o}\t{q.t}\n")


def _time_key(token: str):
    return (0, int(token), "") if _is_int(token) else (1, 0, token)


def ingest_raw(path: str | os.PathLike) -> tuple[list[Quadruple], Vocab]:
    """Read a raw dump (names or ids) and assign dense ids.

    Entities and relations are numbered by first appearance; timestamps are
    numbered in chronological order (numeric order for integer stamps, string
    order otherwise, which is chronological for ISO dates).
    """
    rows = _read_rows(path)
    ent: dict[str, int] = {}
    rel: dict[str, int] = {}
    for s, r, o, _ in rows:
        ent.setdefault(s, len(ent))
        rel.setdefault(r, len(rel))
        ent.setdefault(o, len(ent))
    times = sorted({row[3] for row in rows}, key=_time_key)
    tid = {t: i for i, t in enumerate(times)}
    quads = [Quadruple(ent[s], rel[r], ent[o], tid[t]) for s, r, o, t in rows]
    return quads, Vocab(list(ent), list(rel), times)
