"""Filtered link-prediction evaluation: ranks, MRR and Hits@k."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import Quadruple, add_reciprocals
from .dataset import MetaDataset, MetaTask
from .model import MOST, LPQuery

HITS_AT = (1, 3, 5, 10)
TIE_RULE = "average"
FILTER_SCOPE = "background+all-splits"


class EmptyEvaluationError(ValueError):
    pass


@dataclass
class RankOutcome:
    query: LPQuery
    rank: float
    num_candidates: int


@dataclass
class RelationReport:
    mrr: float
    hits: dict[int, float]
    frequency: int
    num_queries: int


@dataclass
class MetricsReport:
    mrr: float
    hits: dict[int, float]
    num_queries: int
    per_relation: dict[int, RelationReport] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"mrr": self.mrr}
        out.update({f"hits{k}": v for k, v in self.hits.items()})
        out["num_queries"] = self.num_queries
        out["per_relation"] = {
            str(r): {
                "mrr": rep.mrr,
                **{f"hits{k}": v for k, v in rep.hits.items()},
                "frequency": rep.frequency,
                "num_queries": rep.num_queries,
            }
            for r, rep in sorted(self.per_relation.items())
        }
        out["tie_rule"] = TIE_RULE
        out["filter_scope"] = FILTER_SCOPE
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def table(self, names: dict[int, str] | None = None) -> str:
        head = f"{'relation':<32} {'freq':>6} {'MRR':>7} " + " ".join(f"{'H@' + str(k):>6}" for k in HITS_AT)
        rows = [head]
        for r, rep in sorted(self.per_relation.items(), key=lambda kv: -kv[1].frequency):
            label = (names or {}).get(r, str(r))
            rows.append(f"{label[:32]:<32} {rep.frequency:>6} {100 * rep.mrr:>7.2f} "
                        + " ".join(f"{100 * rep.hits[k]:>6.2f}" for k in HITS_AT))
        rows.append(f"{'overall':<32} {'':>6} {100 * self.mrr:>7.2f} "
                    + " ".join(f"{100 * self.hits[k]:>6.2f}" for k in HITS_AT))
        return "\n".join(rows)


def make_queries(quad: Quadruple, num_base_relations: int) -> tuple[LPQuery, LPQuery]:
    """(s, r, ?, t) -> o and (o, r^-1, ?, t) -> s."""
    s, r, o, t = quad
    return LPQuery(s, r, t, o, r), LPQuery(o, r + num_base_relations, t, s, r)


def filtered_rank(scores: np.ndarray, truth: int, filter_ids: Iterable[int] = ()) -> float:
    """1 + #(higher unfiltered) + #(tied unfiltered, truth excluded) / 2."""
    scores = np.asarray(scores, dtype=np.float64)
    keep = np.ones(scores.shape[0], dtype=bool)
    filter_ids = np.fromiter(filter_ids, dtype=np.int64)
    if truth in filter_ids:
        raise ValueError(f"ground truth {truth} is in the filter set")
    keep[filter_ids] = False
    target = scores[truth]
    others = scores[keep]
    higher = int(np.count_nonzero(others > target))
    ties = int(np.count_nonzero(others == target)) - 1
    return 1.0 + higher + ties / 2.0


def _summary(ranks: np.ndarray) -> tuple[float, dict[int, float]]:
    return float(np.mean(1.0 / ranks)), {k: float(np.mean(ranks <= k)) for k in HITS_AT}


def compute_metrics(outcomes: Sequence[RankOutcome], frequency: dict[int, int] | None = None) -> MetricsReport:
    if not outcomes:
        raise EmptyEvaluationError("no rank outcomes to aggregate")
    ranks = np.array([o.rank for o in outcomes], dtype=np.float64)
    mrr, hits = _summary(ranks)
    grouped = defaultdict(list)
    for o in outcomes:
        grouped[o.query.owner].append(o.rank)
    per_relation = {}
    for r, rs in grouped.items():
        r_mrr, r_hits = _summary(np.array(rs))
        freq = (frequency or {}).get(r, len(rs) // 2)
        per_relation[r] = RelationReport(r_mrr, r_hits, freq, len(rs))
    return MetricsReport(mrr, hits, len(outcomes), per_relation)


class FilterIndex:
    """True objects for every (subject, relation, time), reciprocals included."""

    def __init__(self, quads: Iterable[Quadruple], num_base_relations: int):
        self._objects: dict[tuple[int, int, int], set[int]] = defaultdict(set)
        for s, r, o, t in add_reciprocals(list(quads), num_base_relations):
            self._objects[(s, r, t)].add(o)

    @classmethod
    def from_dataset(cls, ds: MetaDataset) -> "FilterIndex":
        return cls(ds.all_quads(), ds.num_relations)

    def filter_for(self, query: LPQuery) -> list[int]:
        return [e for e in self._objects.get((query.subject, query.relation, query.time), ()) if e != query.truth]


def rank_task(model: MOST, task: MetaTask, filters: FilterIndex, chunk: int = 256) -> list[RankOutcome]:
    """Fixed-support scoring and filtered ranking for every query of ``task``."""
    outcomes = []
    for start in range(0, len(task.queries), chunk):
        out = model.forward_task(task.support, task.queries[start:start + chunk])
        scores = out.scores.value
        for row, q in enumerate(out.queries):
            rank = filtered_rank(scores[row], q.truth, filters.filter_for(q))
            outcomes.append(RankOutcome(q, rank, scores.shape[1]))
    return outcomes


def evaluate_tasks(model: MOST, tasks: Sequence[MetaTask], filters: FilterIndex) -> MetricsReport:
    outcomes = []
    for task in tasks:
        outcomes.extend(rank_task(model, task, filters))
    return compute_metrics(outcomes, {t.relation: len(t) for t in tasks})


def evaluate(ds: MetaDataset, model: MOST, split: str = "test", filters: FilterIndex | None = None) -> MetricsReport:
    """Global and per-relation filtered metrics on one meta split."""
    tasks = ds.split(split)
    if not tasks:
        raise EmptyEvaluationError(f"split {split!r} has no tasks")
    return evaluate_tasks(model, tasks, filters or FilterIndex.from_dataset(ds))
