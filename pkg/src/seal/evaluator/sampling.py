"""Seeded API-pool sampling.

Pools are drawn with numpy's PCG64 generator: the dataset's APIs are sorted
by id, ``Generator(PCG64(seed)).permutation`` shuffles their positions, and
the first ``n`` positions form the pool. Run ``r`` of a sweep uses seed
``base_seed + r``.
"""
from __future__ import annotations

import numpy as np

from seal.schema import ApiDoc, Dataset, Query


def sample_pool(dataset: Dataset, n: int, seed: int) -> tuple[list[ApiDoc], list[Query]]:
    """Uniformly sample ``n`` APIs without replacement; return them with the queries they fully cover."""
    apis = sorted(dataset.apis, key=lambda a: a.id)
    if n < 1 or n > len(apis):
        raise ValueError(f"pool size {n} outside 1..{len(apis)}")
    order = np.random.Generator(np.random.PCG64(seed)).permutation(len(apis))
    pool = sorted((apis[i] for i in order[:n]), key=lambda a: a.id)
    return pool, eligible_queries(dataset.queries, pool)


def eligible_queries(queries, pool: list[ApiDoc]) -> list[Query]:
    ids = {a.id for a in pool}
    names = {a.api_name for a in pool}
    out = []
    for q in queries:
        if not q.gt_api_ids or not set(q.gt_api_ids) <= ids:
            continue
        if q.gt_calls is not None and not all(
            c.api_id in ids if c.api_id is not None else c.name in names for c in q.gt_calls
        ):
            continue
        out.append(q)
    return out
