"""Synthetic temporal knowledge graphs for tests, demos and acceptance runs."""

from __future__ import annotations

import numpy as np

from .core import Quadruple


def rule_based_tkg(
    ring_size: int = 20,
    num_sparse: int = 8,
    num_frequent: int = 4,
    num_timestamps: int = 80,
    facts_per_relation: int = 24,
    window: int = 4,
    evidence_shift: int = 1,
    noise_per_frequent: int = 60,
    localized: bool = False,
    seed: int = 0,
) -> tuple[list[Quadruple], int]:
    """A TKG whose sparse relations follow a learnable, time-dependent rule.

    Entities come in two copies of a ring of ``ring_size`` positions:
    entity ``j + ring_size * g`` is position ``j`` in group ``g``.  Sparse
    relation ``r`` links position ``j`` to ``(j + c_r) mod ring_size``.  The
    subject's group at time ``t`` is ``(t // window) % 2`` and the object's is
    ``(t // (2 * window)) % 2``, so which copy answers a query is only
    decidable from the query time.

    Every sparse fact ``(s, r, o, t)`` is mirrored in the background by
    ``(s, f_r, o, t - evidence_shift)`` over frequent relation
    ``f_r = r mod num_frequent``; each frequent relation also receives
    ``noise_per_frequent`` random facts.  With ``localized`` set, relation
    ``r``'s facts fall in the ``r``-th slice of the timeline, which suits
    extrapolation splits.

    Relation ids: frequent ``0..num_frequent-1``, then sparse.  Returns the
    quadruples and the timeline length.
    """
    rng = np.random.default_rng(seed)
    num_entities = 2 * ring_size
    span = num_timestamps // num_sparse
    quads = []
    for r in range(num_sparse):
        offset = 1 + (3 * r) % (ring_size - 1)
        for j in rng.integers(0, ring_size, facts_per_relation):
            if localized:
                t = int(rng.integers(r * span + evidence_shift, (r + 1) * span))
            else:
                t = int(rng.integers(evidence_shift, num_timestamps))
            s = int(j) + ring_size * ((t // window) % 2)
            o = (int(j) + offset) % ring_size + ring_size * ((t // (2 * window)) % 2)
            quads.append(Quadruple(s, num_frequent + r, o, t))
            quads.append(Quadruple(s, r % num_frequent, o, t - evidence_shift))
    for f in range(num_frequent):
        for _ in range(noise_per_frequent):
            quads.append(Quadruple(int(rng.integers(num_entities)), f, int(rng.integers(num_entities)),
                                   int(rng.integers(num_timestamps))))
    return quads, num_timestamps


def synthetic_dump(
    num_sparse: int = 50,
    num_frequent: int = 6,
    num_rare: int = 5,
    num_entities: int = 300,
    num_timestamps: int = 1000,
    lower: int = 20,
    upper: int = 100,
    spread: float = 0.03,
    seed: int = 0,
) -> tuple[list[Quadruple], int]:
    """Raw dump with frequent, sparse and too-rare relations.

    Frequent relations have ``upper+1 .. 3*upper`` facts spread over the whole
    timeline; sparse ones have ``lower .. upper`` facts clustered around a
    random centre (standard deviation ``spread * num_timestamps``); rare ones
    fall below ``lower``.
    """
    rng = np.random.default_rng(seed)
    quads = []
    rid = 0

    def facts(r, times):
        for t in times:
            s, o = rng.choice(num_entities, 2, replace=False)
            quads.append(Quadruple(int(s), r, int(o), int(t)))

    for _ in range(num_frequent):
        count = int(rng.integers(upper + 1, 3 * upper + 1))
        facts(rid, rng.integers(0, num_timestamps, count))
        rid += 1
    for _ in range(num_sparse):
        count = int(rng.integers(lower, upper + 1))
        centre = rng.uniform(0, num_timestamps)
        times = np.clip(np.rint(rng.normal(centre, spread * num_timestamps, count)), 0, num_timestamps - 1)
        facts(rid, times)
        rid += 1
    for _ in range(num_rare):
        count = int(rng.integers(1, lower))
        facts(rid, rng.integers(0, num_timestamps, count))
        rid += 1
    return quads, num_timestamps
