"""Query filters applied after parsing: ToolBench sanitization and multi-step selection."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping

from seal.ingest.adapters import ToolbenchRaw
from seal.schema import ApiDoc, Dataset, Query

log = logging.getLogger(__name__)

RULES = ("give_up", "no_matching_api", "incorrect_function", "arg_parse_error")


@dataclass
class FilterStats:
    give_up: int = 0
    no_matching_api: int = 0
    incorrect_function: int = 0
    arg_parse_error: int = 0
    not_multistep: int = 0
    kept: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def removed(self) -> int:
        return (self.give_up + self.no_matching_api + self.incorrect_function
                + self.arg_parse_error + self.not_multistep)

    def counts(self) -> tuple[int, ...]:
        return (self.give_up, self.no_matching_api, self.incorrect_function,
                self.arg_parse_error, self.not_multistep, self.kept)

    def merge(self, other: FilterStats) -> FilterStats:
        """Combine the stats of two filters applied in sequence."""
        return FilterStats(
            give_up=self.give_up + other.give_up,
            no_matching_api=self.no_matching_api + other.no_matching_api,
            incorrect_function=self.incorrect_function + other.incorrect_function,
            arg_parse_error=self.arg_parse_error + other.arg_parse_error,
            not_multistep=self.not_multistep + other.not_multistep,
            kept=other.kept,
            warnings=self.warnings + other.warnings,
        )

    def to_json(self) -> dict:
        return asdict(self)


def _arguments_parse(text: str) -> bool:
    if not text.strip():
        return True
    try:
        return isinstance(json.loads(text), dict)
    except json.JSONDecodeError:
        return False


def toolbench_rule(raw: ToolbenchRaw, pool_pairs: set[tuple[str, str]]) -> str | None:
    """First sanitization rule ``raw`` violates, or None for a clean query."""
    if raw.finish_type == "give_up":
        return "give_up"
    if not raw.relevant or any(pair not in pool_pairs for pair in raw.relevant):
        return "no_matching_api"
    calls = [(name, args) for name, args in raw.calls if name != "Finish"]
    if any(name not in raw.functions for name, _ in calls):
        return "incorrect_function"
    if any(not _arguments_parse(args) for _, args in calls):
        return "arg_parse_error"
    return None


def sanitize_toolbench(dataset: Dataset, raw: Mapping[str, ToolbenchRaw]) -> tuple[Dataset, FilterStats]:
    """Drop ToolBench queries that cannot be served from the API pool.

    Each removed query is counted once, under the first rule it breaks in
    the order give_up, no_matching_api, incorrect_function,
    arg_parse_error. APIs no longer referenced are dropped from the pool.
    """
    pool_pairs = {(a.tool_name, a.api_name) for a in dataset.apis}
    stats = FilterStats()
    kept: list[Query] = []
    for q in dataset.queries:
        record = raw.get(q.id)
        if record is None:
            stats.no_matching_api += 1
            stats.warnings.append(f"{q.id}: no raw trajectory record")
            log.warning("%s: no raw trajectory record; removed as no_matching_api", q.id)
            continue
        rule = toolbench_rule(record, pool_pairs)
        if rule is None:
            kept.append(q)
        else:
            setattr(stats, rule, getattr(stats, rule) + 1)
    stats.kept = len(kept)
    return dataset.replace(apis=_referenced(dataset.apis, kept), queries=kept), stats


def is_multistep(query: Query) -> bool:
    if query.gt_calls is not None:
        calls = query.gt_calls
        return len(calls) >= 2 or len({c.key for c in calls}) >= 2
    return len(set(query.gt_api_ids)) >= 2


def filter_multistep(dataset: Dataset) -> tuple[Dataset, FilterStats]:
    """Keep multi-step or multi-tool queries and prune the API pool to match."""
    kept = [q for q in dataset.queries if is_multistep(q)]
    stats = FilterStats(not_multistep=len(dataset.queries) - len(kept), kept=len(kept))
    return dataset.replace(apis=_referenced(dataset.apis, kept), queries=kept), stats


def _referenced(apis: tuple[ApiDoc, ...], queries: list[Query]) -> list[ApiDoc]:
    used = set()
    for q in queries:
        used.update(q.gt_api_ids)
        used.update(c.api_id for c in q.gt_calls or () if c.api_id is not None)
    return [a for a in apis if a.id in used]


def avg_apis_per_query(dataset: Dataset) -> float:
    if not dataset.queries:
        return 0.0
    return sum(len(set(q.gt_api_ids)) for q in dataset.queries) / len(dataset.queries)
