"""Filtered link-prediction ranking: MRR and Hit@k with per-arity breakdown."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .engine import forward_group, split_groups
from .errors import DataError
from .kb import Fact, KnowledgeBase
from .model import ModelParams

HIT_LEVELS = (1, 3, 10)


@dataclass
class ArityStats:
    mrr: float
    hits: dict[int, float]
    n_queries: int


@dataclass
class EvalReport:
    mrr: float
    hits: dict[int, float]
    per_arity: dict[int, ArityStats]
    n_queries: int
    seconds: float

    def to_dict(self) -> dict:
        return {
            "mrr": self.mrr,
            "hits": {str(k): v for k, v in self.hits.items()},
            "n_queries": self.n_queries,
            "seconds": self.seconds,
            "per_arity": {
                str(a): {
                    "mrr": s.mrr,
                    "hits": {str(k): v for k, v in s.hits.items()},
                    "n_queries": s.n_queries,
                }
                for a, s in sorted(self.per_arity.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def per_arity_csv(self) -> str:
        lines = ["arity,n_queries,mrr," + ",".join(f"hit{k}" for k in HIT_LEVELS)]
        for arity, stats in sorted(self.per_arity.items()):
            hits = ",".join(repr(stats.hits[k]) for k in HIT_LEVELS)
            lines.append(f"{arity},{stats.n_queries},{stats.mrr!r},{hits}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        header = f"{'':8}{'MRR':>8} " + " ".join(f"{'Hit@' + str(k):>8}" for k in HIT_LEVELS)
        overall = f"{'all':8}{self.mrr:8.4f} " + " ".join(
            f"{self.hits[k]:8.4f}" for k in HIT_LEVELS
        )
        rows = [header, overall]
        for arity, stats in sorted(self.per_arity.items()):
            rows.append(
                f"{f'arity {arity}':8}{stats.mrr:8.4f} "
                + " ".join(f"{stats.hits[k]:8.4f}" for k in HIT_LEVELS)
                + f"  ({stats.n_queries} queries)"
            )
        return "\n".join(rows)


def rank_from_scores(scores: np.ndarray, mask: np.ndarray, true_entity: int) -> int:
    """Optimistic filtered rank: 1 + count of candidates scoring strictly higher."""
    true_score = scores[true_entity]
    better = scores[mask] > true_score
    return 1 + int(better.sum())


def rank(params: ModelParams, kb: KnowledgeBase, fact: Fact, position: int) -> int:
    """Filtered rank of the fact's entity at one position."""
    from .model import score_batch_position

    scores = score_batch_position(params, fact, position)
    mask = kb.filtered_candidates(fact, position)
    return rank_from_scores(scores, mask, fact.entities[position])


def report_from_ranks(
    arity_ranks: Iterable[tuple[int, int]], seconds: float = 0.0
) -> EvalReport:
    """Aggregate (arity, rank) query results into a report."""
    per_arity_ranks: dict[int, list[int]] = {}
    for arity, r in arity_ranks:
        per_arity_ranks.setdefault(arity, []).append(r)
    all_ranks = np.array([r for ranks in per_arity_ranks.values() for r in ranks])
    if all_ranks.size == 0:
        raise DataError("no queries to aggregate")

    def stats(ranks: np.ndarray) -> tuple[float, dict[int, float]]:
        mrr = float((1.0 / ranks).mean())
        hits = {k: float((ranks <= k).mean()) for k in HIT_LEVELS}
        return mrr, hits

    mrr, hits = stats(all_ranks)
    per_arity = {}
    for arity, ranks in sorted(per_arity_ranks.items()):
        arr = np.array(ranks)
        a_mrr, a_hits = stats(arr)
        per_arity[arity] = ArityStats(a_mrr, a_hits, int(arr.size))
    return EvalReport(mrr, hits, per_arity, int(all_ranks.size), seconds)


def evaluate(
    params: ModelParams,
    kb: KnowledgeBase,
    split: str = "test",
    threads: int = 1,
    batch_size: int = 256,
) -> EvalReport:
    """Filtered MRR / Hit@k over every position of every fact in a split."""
    facts = kb.split(split)
    if not facts:
        raise DataError(f"split {split!r} is empty")
    start = time.perf_counter()

    def eval_chunk(chunk: list[Fact]) -> list[tuple[int, int]]:
        results = []
        basis_cache: dict = {}
        for lo in range(0, len(chunk), batch_size):
            batch = chunk[lo : lo + batch_size]
            for spec in split_groups(params, batch):
                fwd = forward_group(params, spec, basis_cache=basis_cache)
                for row, fact_idx in enumerate(spec.fact_index):
                    fact = batch[fact_idx]
                    for pos in range(spec.arity):
                        mask = kb.filtered_candidates(fact, pos)
                        results.append(
                            (
                                spec.arity,
                                rank_from_scores(
                                    fwd.scores[row, pos], mask, fact.entities[pos]
                                ),
                            )
                        )
        return results

    if threads <= 1 or len(facts) < 2 * threads:
        ranks = eval_chunk(facts)
    else:
        chunks = np.array_split(np.arange(len(facts)), threads)
        ranks = []
        with ThreadPoolExecutor(max_workers=threads) as pool:
            jobs = [
                pool.submit(eval_chunk, [facts[i] for i in chunk])
                for chunk in chunks
                if len(chunk)
            ]
            for job in jobs:
                ranks.extend(job.result())
    return report_from_ranks(ranks, seconds=time.perf_counter() - start)
