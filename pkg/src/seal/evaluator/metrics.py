"""Retrieval, call and parameter metrics plus run aggregation."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from seal.schema import ApiCall, canonical_json


@dataclass(frozen=True)
class RetrievalScore:
    recall_at_k: float
    mrr: float
    k: int


@dataclass(frozen=True)
class CallScore:
    call_recall: float
    param_accuracy: float
    matched: tuple[tuple[int, int], ...] = ()


def eval_retrieval(ranked: Sequence[str], gt: Iterable[str], k: int) -> RetrievalScore | None:
    """Recall@k and reciprocal rank of the first relevant item; None when ``gt`` is empty."""
    gt = set(gt)
    if not gt:
        return None
    recall = len(gt & set(ranked[:k])) / len(gt)
    mrr = 0.0
    for rank, api_id in enumerate(ranked, 1):
        if api_id in gt:
            mrr = 1.0 / rank
            break
    return RetrievalScore(recall_at_k=recall, mrr=mrr, k=k)


def eval_calls(pred: Sequence[ApiCall], gt: Sequence[ApiCall]) -> float:
    """Order-insensitive recall of ground-truth call names, repeated calls counted separately.

    Credit for a name is capped at its ground-truth multiplicity.
    """
    if not gt:
        return 1.0
    gt_counts = Counter(c.key for c in gt)
    pred_counts = Counter(c.key for c in pred)
    return sum((gt_counts & pred_counts).values()) / len(gt)


def _same_call(a: ApiCall, b: ApiCall) -> bool:
    return a.key == b.key and canonical_json(dict(a.arguments)) == canonical_json(dict(b.arguments))


def match_params(pred: Sequence[ApiCall], gt: Sequence[ApiCall]) -> list[tuple[int, int]]:
    """Greedy one-to-one exact matches as (gt index, pred index) pairs."""
    used: set[int] = set()
    pairs = []
    for i, g in enumerate(gt):
        for j, p in enumerate(pred):
            if j not in used and _same_call(g, p):
                used.add(j)
                pairs.append((i, j))
                break
    return pairs


def eval_params(pred: Sequence[ApiCall], gt: Sequence[ApiCall]) -> float:
    """Fraction of ground-truth calls matched exactly (name and canonical arguments)."""
    if not gt:
        return 1.0
    return len(match_params(pred, gt)) / len(gt)


def score_calls(pred: Sequence[ApiCall], gt: Sequence[ApiCall]) -> CallScore:
    return CallScore(call_recall=eval_calls(pred, gt), param_accuracy=eval_params(pred, gt),
                     matched=tuple(match_params(pred, gt)))


# --------------------------------------------------------------------------
# aggregation


@dataclass
class MetricSummary:
    values: list[float]
    mean: float | None
    std: float | None

    def to_json(self) -> dict:
        return {"values": self.values, "mean": self.mean, "std": self.std}


@dataclass
class RunAggregate:
    pool_size: int | None
    metrics: dict[str, MetricSummary]
    seeds: list[int] = field(default_factory=list)
    query_counts: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "pool_size": self.pool_size,
            "runs": len(self.seeds) or max((len(m.values) for m in self.metrics.values()), default=0),
            "seeds": list(self.seeds),
            "query_counts": list(self.query_counts),
            "metrics": {k: v.to_json() for k, v in sorted(self.metrics.items())},
        }


def mean_std(values: Sequence[float]) -> tuple[float | None, float | None]:
    """Arithmetic mean and sample (n-1) standard deviation; std is None below two values."""
    if not values:
        return None, None
    mean = math.fsum(values) / len(values)
    if len(values) < 2:
        return mean, None
    var = math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var)


def aggregate(runs: Sequence[Mapping[str, float | None]], pool_size: int | None = None,
              seeds: Sequence[int] = (), query_counts: Sequence[int] = ()) -> RunAggregate:
    """Per-metric mean and sample std across runs; runs missing a metric are skipped for it."""
    if not runs:
        raise ValueError("aggregate needs at least one run")
    names = sorted({k for r in runs for k in r})
    metrics = {}
    for name in names:
        values = [float(r[name]) for r in runs if r.get(name) is not None]
        mean, std = mean_std(values)
        metrics[name] = MetricSummary(values=values, mean=mean, std=std)
    return RunAggregate(pool_size=pool_size, metrics=metrics, seeds=list(seeds),
                        query_counts=list(query_counts))
