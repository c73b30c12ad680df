"""Threshold sweeps over every method variant, emitted as CSV rows.

Indexes are built once per workload and timed separately from the joins.
Ground truth is computed once per threshold and shared by all cells. Each
cell gets one untimed warm-up run followed by the timed run.
"""
from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import SweepSpec
from .core import VectorStore
from .errors import VecJoinError
from .graph_index import (IndexBuildParams, build_index, build_merged_index,
                          index_to_bytes)
from .join import JoinConfig, JoinIndexes, JoinOutcome, MethodVariant, recall, vector_join
from .oracle import GroundTruth, nlj_exact

COLUMNS = ("workload", "variant", "theta", "L", "latency_ms", "greedy_ms", "bfs_ms",
           "other_ms", "recall", "dist_computations", "greedy_pops", "bfs_pops",
           "hybrid_evictions", "cache_entries", "join_size", "ood_flagged", "status")
TIMING_COLUMNS = ("latency_ms", "greedy_ms", "bfs_ms", "other_ms")

_NEEDS_DATA = {MethodVariant.INDEX, MethodVariant.ES, MethodVariant.ES_HWS, MethodVariant.ES_SWS}
_NEEDS_QUERIES = {MethodVariant.ES_HWS, MethodVariant.ES_SWS}


@dataclass
class OfflineReport:
    """Index construction cost, kept out of the join latency columns."""

    build_seconds: dict = field(default_factory=dict)
    index_bytes: dict = field(default_factory=dict)


@dataclass
class SweepResult:
    rows: list
    offline: OfflineReport
    outcomes: dict | None = None  # (variant, theta, L) -> JoinOutcome

    def to_csv(self) -> str:
        return rows_to_csv(self.rows)


def build_indexes(queries: VectorStore, data: VectorStore, variants, params: IndexBuildParams,
                  self_join: bool = False) -> tuple[JoinIndexes, OfflineReport]:
    """Build only the graphs the given variants need."""
    variants = set(variants)
    report = OfflineReport()
    indexes = JoinIndexes()

    def timed(name, fn):
        t0 = time.perf_counter()
        g = fn()
        report.build_seconds[name] = time.perf_counter() - t0
        report.index_bytes[name] = len(index_to_bytes(g, data.dimension))
        return g

    if variants & _NEEDS_DATA:
        indexes.data = timed("data", lambda: build_index(data, params))
    if variants & _NEEDS_QUERIES:
        if self_join:
            indexes.queries = indexes.data
        else:
            indexes.queries = timed("queries", lambda: build_index(queries, params))
    if not self_join and any(v.uses_merged_index for v in variants):
        indexes.merged = timed("merged", lambda: build_merged_index(queries, data, params))
    return indexes, report


def false_positive_count(queries: VectorStore, data: VectorStore, outcome: JoinOutcome,
                         theta: float) -> int:
    """Emitted pairs whose independently recomputed distance is not below ``theta``."""
    if not outcome.pairs:
        return 0
    q = np.fromiter((p[0] for p in outcome.pairs), dtype=np.int64)
    d = np.fromiter((p[1] for p in outcome.pairs), dtype=np.int64)
    diff = queries.wide[q] - data.wide[d]
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    return int(np.count_nonzero(dist >= theta))


def _ms(seconds: float) -> str:
    return f"{seconds * 1000.0:.3f}"


def outcome_row(workload: str, config: JoinConfig, outcome: JoinOutcome, truth: GroundTruth,
                status: str = "ok") -> dict:
    c = outcome.counters
    return {
        "workload": workload,
        "variant": config.variant.value,
        "theta": repr(float(config.theta)),
        "L": str(config.max_queue),
        "latency_ms": _ms(c.total_time),
        "greedy_ms": _ms(c.greedy_time),
        "bfs_ms": _ms(c.bfs_time),
        "other_ms": _ms(c.other_time),
        "recall": f"{recall(outcome, truth):.6f}",
        "dist_computations": str(c.distance_computations),
        "greedy_pops": str(c.greedy_pops),
        "bfs_pops": str(c.bfs_pops),
        "hybrid_evictions": str(c.hybrid_evictions),
        "cache_entries": str(c.cache_entries),
        "join_size": str(len(outcome.pairs)),
        "ood_flagged": str(outcome.ood_flagged),
        "status": status,
    }


def error_row(workload: str, config: JoinConfig, message: str) -> dict:
    row = dict.fromkeys(COLUMNS, "")
    row.update(workload=workload, variant=config.variant.value,
               theta=repr(float(config.theta)), L=str(config.max_queue),
               status="error: " + " ".join(message.split()))
    return row


def run_cell(queries, data, indexes, config, truth, workload="synthetic", *,
             self_join=False, warmup=True):
    """One sweep cell. Returns ``(row, outcome)``; outcome is None on error."""
    try:
        if warmup:
            vector_join(queries, data, indexes, config, self_join=self_join)
        outcome = vector_join(queries, data, indexes, config, self_join=self_join)
    except VecJoinError as exc:
        return error_row(workload, config, str(exc)), None
    bad = false_positive_count(queries, data, outcome, config.theta)
    status = "ok" if bad == 0 else f"unsound: {bad} pairs at or beyond theta"
    return outcome_row(workload, config, outcome, truth, status), outcome


# worker-process state for parallel sweeps
_STATE: dict = {}


def _init_worker(state):
    _STATE.clear()
    _STATE.update(state)


def _worker(config):
    s = _STATE
    row, _ = run_cell(s["queries"], s["data"], s["indexes"], config, s["truths"][config.theta],
                      s["workload"], self_join=s["self_join"], warmup=s["warmup"])
    return row


def run_sweep(queries: VectorStore, data: VectorStore, sweep: SweepSpec,
              build_params: IndexBuildParams | None = None, base: JoinConfig | None = None, *,
              self_join: bool | None = None, jobs: int = 1, warmup: bool = True,
              keep_outcomes: bool = False) -> SweepResult:
    """Run every (variant, theta, L) cell of ``sweep``.

    ``base`` supplies the tunables that are not swept (patience values, OOD
    factor, hybrid mode). ``jobs > 1`` spreads cells over processes; counters
    and recall are unaffected, only timings change. Outcomes can only be kept
    for sequential runs.
    """
    if self_join is None:
        self_join = queries is data
    build_params = build_params or IndexBuildParams()
    base = base or JoinConfig(theta=sweep.thresholds[0])
    indexes, offline = build_indexes(queries, data, sweep.variants, build_params, self_join)
    truths = {t: nlj_exact(queries, data, t, exclude_self=self_join) for t in sweep.thresholds}
    cells = [JoinConfig(theta=t, variant=v, max_queue=L, es_patience=base.es_patience,
                        hybrid_patience=base.hybrid_patience, ood_factor=base.ood_factor,
                        hybrid_force=base.hybrid_force)
             for v in sweep.variants for t in sweep.thresholds for L in sweep.L_values]

    if jobs > 1:
        if keep_outcomes:
            raise VecJoinError("keep_outcomes needs a sequential sweep")
        state = dict(queries=queries, data=data, indexes=indexes, truths=truths,
                     workload=sweep.workload, self_join=self_join, warmup=warmup)
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(state,)) as pool:
            rows = list(pool.map(_worker, cells))
        return SweepResult(rows, offline)

    rows, outcomes = [], {} if keep_outcomes else None
    for cfg in cells:
        row, outcome = run_cell(queries, data, indexes, cfg, truths[cfg.theta], sweep.workload,
                                self_join=self_join, warmup=warmup)
        rows.append(row)
        if keep_outcomes:
            outcomes[(cfg.variant, cfg.theta, cfg.max_queue)] = outcome
    return SweepResult(rows, offline, outcomes)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def strip_timing(csv_text: str) -> str:
    """CSV text with the wall-clock columns blanked, for reproducibility checks."""
    rows = list(csv.DictReader(io.StringIO(csv_text)))
    for r in rows:
        for col in TIMING_COLUMNS:
            r[col] = ""
    return rows_to_csv(rows)
