"""Command line entry point: ``vecjoin <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import bench, config, graph_index, oracle, vecio, workloads
from .errors import ConfigurationError, VecJoinError
from .graph_index import IndexBuildParams
from .join import HybridMode, JoinConfig, JoinIndexes, MethodVariant


def _save_store(path: str, store) -> None:
    if path.endswith(".bvecs"):
        vecio.save_bvecs(path, store)
    else:
        vecio.save_fvecs(path, store)


def cmd_gen(args) -> int:
    values = config.read_config(args.spec)
    spec = config.pick(values, workloads.WorkloadSpec)
    queries, data = workloads.generate(spec)
    _save_store(args.out_queries, queries)
    _save_store(args.out_data, data)
    print(f"queries: {queries.count} x {queries.dimension} -> {args.out_queries}")
    print(f"data: {data.count} x {data.dimension} -> {args.out_data}")
    return 0


def cmd_build(args) -> int:
    params = IndexBuildParams(k_nn=args.knn, max_degree=args.R)
    data = vecio.load_vectors(args.data)
    if args.merged:
        if not args.queries:
            raise ConfigurationError("--merged needs --queries")
        queries = vecio.load_vectors(args.queries)
        g = graph_index.build_merged_index(queries, data, params)
    elif args.queries:
        raise ConfigurationError("--queries is only used with --merged; index a query set via --data")
    else:
        g = graph_index.build_index(data, params)
    graph_index.save_index(g, args.out, data.dimension)
    print(f"nodes={g.node_count} edges={g.edge_count()} entry={g.entry_point} "
          f"degree_mode={graph_index.degree_mode(g)} -> {args.out}")
    return 0


def cmd_truth(args) -> int:
    queries = vecio.load_vectors(args.queries)
    data = vecio.load_vectors(args.data)
    truth = oracle.nlj_exact(queries, data, args.theta, exclude_self=args.self_join)
    oracle.save_truth(truth, args.out)
    print(f"pairs={len(truth)} -> {args.out}")
    return 0


def _join_indexes(args, queries, data, variant, self_join) -> JoinIndexes:
    params = IndexBuildParams(k_nn=args.knn, max_degree=args.R)
    idx = JoinIndexes()
    if variant.uses_merged_index:
        idx.merged = (graph_index.load_index(args.merged_index) if args.merged_index
                      else graph_index.build_merged_index(queries, data, params))
        if idx.merged.node_count != queries.count + data.count:
            raise ConfigurationError("merged index does not match queries + data")
    elif variant is not MethodVariant.NAIVE:
        idx.data = (graph_index.load_index(args.data_index, data) if args.data_index
                    else graph_index.build_index(data, params))
        if variant in (MethodVariant.ES_HWS, MethodVariant.ES_SWS):
            if args.query_index:
                idx.queries = graph_index.load_index(args.query_index, queries)
            else:
                idx.queries = idx.data if self_join else graph_index.build_index(queries, params)
    return idx


def cmd_join(args) -> int:
    data = vecio.load_vectors(args.data)
    queries = data if args.self_join else vecio.load_vectors(args.queries)
    cfg = JoinConfig(theta=args.theta, variant=MethodVariant.parse(args.variant),
                     max_queue=args.L, es_patience=args.es_patience,
                     hybrid_patience=args.hybrid_patience, ood_factor=args.ood_factor,
                     hybrid_force=HybridMode.parse(args.hybrid))
    indexes = _join_indexes(args, queries, data, cfg.variant, args.self_join)
    if args.truth:
        truth = oracle.load_truth(args.truth)
        if truth.theta != float(np.float32(cfg.theta)):
            raise ConfigurationError(f"truth file was computed at theta={truth.theta}")
    else:
        truth = oracle.nlj_exact(queries, data, cfg.theta, exclude_self=args.self_join)
    row, _ = bench.run_cell(queries, data, indexes, cfg, truth, args.workload,
                            self_join=args.self_join, warmup=not args.no_warmup)
    out = bench.rows_to_csv([row])
    sys.stdout.write(out if args.header else out.split("\n", 1)[1])
    return 0 if row["status"] == "ok" else 1


def cmd_sweep(args) -> int:
    values = config.read_config(args.config)
    spec = config.pick(values, workloads.WorkloadSpec)
    sweep = config.pick(values, config.SweepSpec)
    params = config.pick(values, IndexBuildParams)
    base_values = {k: v for k, v in values.items() if k not in ("theta", "variant", "max_queue")}
    base = config.pick(base_values, JoinConfig, theta=sweep.thresholds[0])
    queries, data = workloads.generate(spec)
    result = bench.run_sweep(queries, data, sweep, params, base, jobs=args.jobs,
                             warmup=not args.no_warmup)
    with open(args.out, "w", encoding="utf-8", newline="") as f:
        f.write(result.to_csv())
    sidecar = args.out + ".offline.json"
    with open(sidecar, "w", encoding="utf-8") as f:
        json.dump({"build_seconds": result.offline.build_seconds,
                   "index_bytes": result.offline.index_bytes}, f, indent=2, sort_keys=True)
    bad = sum(r["status"] != "ok" for r in result.rows)
    print(f"{len(result.rows)} rows -> {args.out} ({bad} not ok); offline costs -> {sidecar}")
    return 0


def cmd_stats(args) -> int:
    with open(args.index, "rb") as f:
        g, dim = graph_index.index_from_bytes(f.read())
    print(f"nodes: {g.node_count}")
    print(f"dimension: {dim}")
    print(f"edges: {g.edge_count()}")
    print(f"entry_point: {g.entry_point}")
    print(f"mixed_roles: {g.has_mixed_roles}")
    print(f"degree_mode: {graph_index.degree_mode(g)}")
    print("degree_histogram:")
    for deg, n in graph_index.degree_histogram(g).items():
        print(f"  {deg}: {n}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vecjoin", description="Threshold vector joins over proximity graphs.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", help="generate a synthetic workload")
    s.add_argument("--spec", required=True, help="key = value workload file")
    s.add_argument("--out-queries", required=True)
    s.add_argument("--out-data", required=True)
    s.set_defaults(func=cmd_gen)

    def index_opts(s):
        s.add_argument("--R", type=int, default=graph_index.DEFAULT_MAX_DEGREE, help="max out-degree")
        s.add_argument("--knn", type=int, default=graph_index.DEFAULT_KNN, help="candidate list size")

    s = sub.add_parser("build", help="build a proximity graph index")
    s.add_argument("--data", required=True)
    s.add_argument("--queries")
    s.add_argument("--merged", action="store_true", help="index queries and data together")
    s.add_argument("--out", required=True)
    index_opts(s)
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("truth", help="exact ground truth by nested-loop join")
    s.add_argument("--queries", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--theta", type=float, required=True)
    s.add_argument("--self-join", action="store_true", help="drop (i, i) pairs")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_truth)

    s = sub.add_parser("join", help="run one join and print a CSV row")
    s.add_argument("--variant", required=True, choices=[v.value for v in MethodVariant])
    s.add_argument("--theta", type=float, required=True)
    s.add_argument("--L", type=int, default=256)
    s.add_argument("--es-patience", type=int, default=10)
    s.add_argument("--hybrid-patience", type=int, default=1)
    s.add_argument("--ood-factor", type=float, default=1.5)
    s.add_argument("--hybrid", default="auto", choices=[m.value for m in HybridMode])
    s.add_argument("--data", required=True)
    s.add_argument("--queries")
    s.add_argument("--self-join", action="store_true", help="join --data with itself")
    s.add_argument("--data-index")
    s.add_argument("--query-index")
    s.add_argument("--merged-index")
    s.add_argument("--truth", help="ground-truth file; computed on the fly when omitted")
    s.add_argument("--workload", default="cli")
    s.add_argument("--header", action="store_true", help="print the CSV header too")
    s.add_argument("--no-warmup", action="store_true")
    index_opts(s)
    s.set_defaults(func=cmd_join)

    s = sub.add_parser("sweep", help="run a threshold x variant x L grid")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    s.add_argument("--no-warmup", action="store_true")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("stats", help="summarize an index file")
    s.add_argument("--index", required=True)
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "join" and not args.self_join and not args.queries:
        print("vecjoin: error: join needs --queries unless --self-join is given", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (VecJoinError, OSError) as exc:
        print(f"vecjoin: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
