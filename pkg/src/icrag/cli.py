"""Operator command line.

Subcommands: ingest, snippets, index, run, ablate, evaluate, analyze,
project, replay-audit. Exit codes: 0 completed, 1 usage/config error,
2 environment error (missing cassette entry or endpoint). Per-task
failures inside a completed run are data, not errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import threading
from concurrent.futures import ThreadPoolExecutor

from . import analytics, tsne
from .config import ConfigError, ExperimentConfig, load_config
from .engine import MethodConfig, iteration_stats, run_task
from .evaluate import EvaluationError, score_run
from .gateway import Cassette, CassetteMiss, Gateway, GatewayConfig, HttpTransport, TransportError
from .retrieval import (
    HashingEmbedder,
    PoolConfig,
    RetrievalError,
    VectorIndex,
    audit_leakage,
    build_R2,
    compose_pool,
    index_build,
    load_code_dir,
    load_kb_jsonl,
    save_kb_jsonl,
)
from .sandbox import SandboxError, ShimSandbox, shim_available
from .tasks import DatasetError, load_dataset, make_folds

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ENVIRONMENT = 2


class EnvironmentProblem(RuntimeError):
    """Missing cassette entry, endpoint, or shim: exit code 2."""


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icrag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a dataset and knowledge bases")
    p.add_argument("dataset")
    p.add_argument("kb", nargs="*")

    p = sub.add_parser("snippets", help="build per-fold code snippet pools")
    p.add_argument("--config", required=True)
    p.add_argument("--set", dest="overrides", action="append", default=[])
    p.add_argument("--out", default="")

    p = sub.add_parser("index", help="build and persist a vector index from KB files")
    p.add_argument("kb", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=384)
    p.add_argument("--embedder-seed", type=int, default=0)

    p = sub.add_parser("run", help="run one method over the dataset folds")
    p.add_argument("--config", required=True)
    p.add_argument("--set", dest="overrides", action="append", default=[])

    p = sub.add_parser("ablate", help="re-run with recomposed knowledge pools")
    p.add_argument("--config", required=True)
    p.add_argument("--set", dest="overrides", action="append", default=[])
    p.add_argument("--mode", choices=["E1", "E2", "E3"], required=True)
    p.add_argument("--grid", default="", help="comma-separated fractions in [0,1]")

    p = sub.add_parser("evaluate", help="score a records file against its dataset")
    p.add_argument("records")
    p.add_argument("dataset")

    p = sub.add_parser("analyze", help="static/dynamic analysis of a program corpus")
    p.add_argument("code_dir")
    p.add_argument("--dataset-id", default="corpus")
    p.add_argument("--out", default="")
    p.add_argument("--loop-policy", choices=list(analytics.LOOP_POLICIES), default="count_loops")
    p.add_argument("--exec", dest="do_exec", action="store_true", help="run programs for depth")
    p.add_argument("--timeout-ms", type=int, default=10000)

    p = sub.add_parser("project", help="2-D projection of signature vectors")
    p.add_argument("signatures", nargs="+")
    p.add_argument("--out", default="")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perplexity", type=float, default=8.0)

    p = sub.add_parser("replay-audit", help="verify cassette digests re-derive")
    p.add_argument("cassette")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; the contract wants 1
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        handler = _HANDLERS[args.command]
        return handler(args)
    except (ConfigError, DatasetError, RetrievalError, EvaluationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EnvironmentProblem, CassetteMiss, TransportError, SandboxError) as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE


def cmd_ingest(args) -> int:
    dataset = load_dataset(args.dataset)
    print(f"dataset {args.dataset}: {len(dataset)} tasks")
    for kb_path in args.kb:
        items = load_kb_jsonl(kb_path)
        kinds = {}
        for item in items:
            kinds[item.kind] = kinds.get(item.kind, 0) + 1
        detail = ", ".join(f"{k}={v}" for k, v in sorted(kinds.items()))
        print(f"kb {kb_path}: {len(items)} items ({detail})")
    return EXIT_OK


def _gateway_from(config: ExperimentConfig, transport=None) -> Gateway:
    cassette = None
    if config.cassette_path:
        if config.cassette_mode == "replay_strict" and not os.path.exists(config.cassette_path):
            raise EnvironmentProblem(f"cassette not found: {config.cassette_path}")
        cassette = Cassette(mode=config.cassette_mode, path=config.cassette_path)
    if transport is None and config.endpoint:
        transport = HttpTransport(config.endpoint, api_key_env=config.api_key_env)
    if transport is None and cassette is None:
        raise EnvironmentProblem("neither a cassette nor an endpoint is configured")
    gw_config = GatewayConfig(
        model_id=config.model_id,
        temperature=config.temperature,
        max_tokens=config.max_tokens,
        endpoint=config.endpoint,
        api_key_env=config.api_key_env,
        cassette_path=config.cassette_path,
        cassette_mode=config.cassette_mode,
    )
    return Gateway(gw_config, cassette=cassette, transport=transport)


def _load_pool_sources(config: ExperimentConfig):
    items = []
    for kb_path in config.kb_paths:
        items.extend(load_kb_jsonl(kb_path))
    if config.external_code_dir:
        items.extend(load_code_dir(config.external_code_dir))
    return items


def _method_config(config: ExperimentConfig) -> MethodConfig:
    return MethodConfig(
        method=config.method,
        max_iterations=config.max_iterations,
        retrieval_k=config.retrieval_k,
        pool=PoolConfig(
            r_in_domain=config.r_in_domain,
            r_external=config.r_external,
            include_text=config.include_text,
            include_code=config.include_code,
            seed=config.seed,
        ),
        exec_mode=config.exec_mode,
        lmulator=config.lmulator,
        exec_timeout_ms=config.exec_timeout_ms,
    )


def cmd_snippets(args) -> int:
    config = load_config(args.config, args.overrides)
    dataset = load_dataset(config.dataset, name=config.dataset_name or None)
    folds = make_folds(dataset, config.k, config.seed)
    gateway = _gateway_from(config)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.config))
    os.makedirs(out_dir, exist_ok=True)
    for fold in folds:
        pool_tasks = [t for t in dataset if t.id in fold.pool_ids]
        skipped = []
        items = build_R2(pool_tasks, gateway, on_skip=lambda tid, exc: skipped.append(tid))
        leaks = audit_leakage(items, fold.eval_ids)
        if leaks:
            raise RetrievalError(f"fold {fold.fold_index}: leaked snippet(s): {leaks}")
        path = os.path.join(out_dir, f"r2.fold{fold.fold_index}.jsonl")
        save_kb_jsonl(items, path)
        locs = [item.meta_dict.get("loc", 0) for item in items]
        mean_loc = sum(locs) / len(locs) if locs else 0.0
        note = f" ({len(skipped)} skipped)" if skipped else ""
        print(f"fold {fold.fold_index}: {len(items)} snippets, mean {mean_loc:.1f} LOC{note} -> {path}")
    return EXIT_OK


def cmd_index(args) -> int:
    items = []
    for kb_path in args.kb:
        items.extend(load_kb_jsonl(kb_path))
    embedder = HashingEmbedder(dim=args.dim, seed=args.embedder_seed)
    index = index_build(items, embedder)
    index.save(args.out)
    reloaded = VectorIndex.load(args.out)
    probe = embedder.embed(items[0].body)
    if index.search(probe, 3) != reloaded.search(probe, 3):
        raise RetrievalError("index save/load round-trip mismatch")
    print(f"indexed {len(index)} items (dim {index.dim}) -> {args.out}")
    return EXIT_OK


class _WorkerSandboxes:
    """Private shim session per worker thread."""

    def __init__(self, command):
        self._local = threading.local()
        self._command = command
        self._all: list[ShimSandbox] = []
        self._lock = threading.Lock()

    def get(self) -> ShimSandbox:
        box = getattr(self._local, "box", None)
        if box is None:
            box = ShimSandbox(self._command)
            self._local.box = box
            with self._lock:
                self._all.append(box)
        return box

    def close(self) -> None:
        for box in self._all:
            box.close()


def _run_experiment(config: ExperimentConfig, out_root: str, transport=None) -> dict:
    dataset = load_dataset(config.dataset, name=config.dataset_name or None)
    folds = make_folds(dataset, config.k, config.seed)
    if config.folds != "all":
        index = int(config.folds)
        if not 0 <= index < len(folds):
            raise ConfigError(f"fold index {index} outside 0..{len(folds) - 1}")
        folds = [folds[index]]
    gateway = _gateway_from(config, transport=transport)
    method_config = _method_config(config)
    embedder = HashingEmbedder(dim=config.embedding_dim, seed=config.embedder_seed)

    sandboxes = None
    if method_config.uses_sandbox:
        command = config.shim_cmd.split() if config.shim_cmd else None
        if not shim_available(command):
            raise EnvironmentProblem("execution shim is not available")
        sandboxes = _WorkerSandboxes(command)

    digest = config.digest()
    run_dir = os.path.join(out_root, digest)
    traces_dir = os.path.join(run_dir, "traces")
    code_dir = os.path.join(run_dir, "code")
    reports_dir = os.path.join(run_dir, "reports")
    for path in (traces_dir, code_dir, reports_dir):
        os.makedirs(path, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(config.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    base_items = _load_pool_sources(config)
    records = []
    traces = []

    def run_one(task, pool_items):
        sandbox = sandboxes.get() if sandboxes is not None else None
        return run_task(
            task,
            method_config,
            pool_items,
            gateway,
            sandbox=sandbox,
            embedder=embedder,
            binary_labels=dataset.binary_labels or None,
        )

    try:
        for fold in folds:
            pool_items = []
            if method_config.uses_retrieval:
                pool_tasks = [t for t in dataset if t.id in fold.pool_ids]
                r2_items = build_R2(pool_tasks, gateway)
                leaks = audit_leakage(r2_items, fold.eval_ids)
                if leaks:
                    raise RetrievalError(
                        f"fold {fold.fold_index}: leaked snippet(s): {leaks}"
                    )
                pool_items = compose_pool(base_items + r2_items, method_config.pool)
            eval_tasks = sorted(
                (t for t in dataset if t.id in fold.eval_ids), key=lambda t: t.id
            )
            workers = config.workers or (os.cpu_count() or 1)
            if workers > 1 and len(eval_tasks) > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    results = list(pool.map(lambda t: run_one(t, pool_items), eval_tasks))
            else:
                results = [run_one(t, pool_items) for t in eval_tasks]
            for record, trace in results:
                records.append(record)
                traces.append(trace)
    finally:
        if sandboxes is not None:
            sandboxes.close()

    records.sort(key=lambda r: r.task_id)
    traces.sort(key=lambda t: t.task_id)
    for trace in traces:
        with open(os.path.join(traces_dir, f"{trace.task_id}.trace.jsonl"), "w") as fh:
            fh.write(trace.to_jsonl(config_digest=digest))
        if trace.final_code:
            with open(os.path.join(code_dir, f"{trace.task_id}.py"), "w") as fh:
                fh.write(trace.final_code + "\n")
    with open(os.path.join(run_dir, "records.jsonl"), "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(
                json.dumps(
                    {
                        "task_id": record.task_id,
                        "method": record.method,
                        "prediction": vars(record.prediction),
                        "trace_ref": record.trace_ref,
                        "wall_ms": record.wall_ms,
                        "config_digest": digest,
                    },
                    sort_keys=True,
                )
                + "\n"
            )

    report = score_run(records, dataset)
    payload = report.to_json()
    payload["config_digest"] = digest
    with open(os.path.join(reports_dir, "eval.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(reports_dir, "eval.csv"), "w", encoding="utf-8") as fh:
        fh.write(f"# config_digest={digest}\n")
        fh.write(report.to_csv())
    stats = iteration_stats(traces)
    stats["config_digest"] = digest
    with open(os.path.join(reports_dir, "iterations.json"), "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {
        "accuracy": report.accuracy,
        "n_items": report.n_items,
        "run_dir": run_dir,
        "digest": digest,
    }


def cmd_run(args) -> int:
    config = load_config(args.config, args.overrides)
    summary = _run_experiment(config, config.out_dir)
    print(
        f"run {summary['digest']}: accuracy {summary['accuracy']:.4f} "
        f"over {summary['n_items']} tasks -> {summary['run_dir']}"
    )
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = load_config(args.config, args.overrides)
    grid = [float(x) for x in args.grid.split(",") if x.strip()]
    if args.mode in ("E1", "E2") and not grid:
        raise ConfigError("ablation grid is empty; pass --grid with fractions in [0,1]")
    if any(not 0.0 <= r <= 1.0 for r in grid):
        raise ConfigError("ablation grid values must lie in [0, 1]")

    points: list[tuple[str, float, ExperimentConfig]] = []
    if args.mode == "E1":
        for r in grid:
            point = load_config(args.config, args.overrides)
            point.r_in_domain, point.r_external = r, 0.0
            points.append(("E1", r, point))
    elif args.mode == "E2":
        for r in grid:
            point = load_config(args.config, args.overrides)
            point.r_in_domain, point.r_external = 1.0, r
            points.append(("E2", r, point))
    else:  # E3: external-only limit case
        point = load_config(args.config, args.overrides)
        point.r_in_domain, point.r_external = 0.0, 1.0
        points.append(("E3", 1.0, point))

    rows = []
    for mode, r, point in points:
        summary = _run_experiment(point, point.out_dir)
        rows.append((mode, r, summary["accuracy"]))
        print(f"{mode} r={r:.2f}: accuracy {summary['accuracy']:.4f}")
    out_csv = os.path.join(config.out_dir, f"ablation_{args.mode}.csv")
    os.makedirs(config.out_dir, exist_ok=True)
    with open(out_csv, "w", encoding="utf-8") as fh:
        fh.write(f"# config_digest={config.digest()}\n")
        fh.write("mode,r,accuracy\n")
        for mode, r, acc in rows:
            fh.write(f"{mode},{r:.4f},{acc:.6f}\n")
    print(f"summary -> {out_csv}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .tasks import AnswerValue, RunRecord

    dataset = load_dataset(args.dataset)
    records = []
    with open(args.records, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            pred = rec["prediction"]
            records.append(
                RunRecord(
                    task_id=rec["task_id"],
                    method=rec.get("method", "unknown"),
                    prediction=AnswerValue(
                        kind=pred["kind"],
                        canonical=pred["canonical"],
                        raw=pred["raw"],
                        failed=pred.get("failed", False),
                    ),
                    trace_ref=rec.get("trace_ref", ""),
                    wall_ms=rec.get("wall_ms", 0),
                )
            )
    report = score_run(records, dataset)
    print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_analyze(args) -> int:
    paths = []
    for root, _dirs, files in os.walk(args.code_dir):
        paths.extend(os.path.join(root, f) for f in sorted(files) if f.endswith(".py"))
    if not paths:
        raise ConfigError(f"no .py programs under {args.code_dir}")

    sandbox = None
    if args.do_exec:
        if not shim_available():
            raise EnvironmentProblem("execution shim is not available for --exec")
        sandbox = ShimSandbox()

    reports = []
    metrics = []
    parse_errors = 0
    try:
        for path in paths:
            with open(path, encoding="utf-8") as fh:
                code = fh.read()
            task_id = os.path.splitext(os.path.basename(path))[0]
            # with a shim attached the census rides the protocol too;
            # the in-process analyzer is the shim-free static path
            if sandbox is not None:
                report = sandbox.analyze_ast(code)
            else:
                report = analytics.analyze_program(code)
            if report.parse_error:
                parse_errors += 1
            exec_result = None
            if sandbox is not None and not report.parse_error:
                from .sandbox import ExecRequest

                exec_result = sandbox.exec(
                    ExecRequest(code=code, timeout_ms=args.timeout_ms)
                )
            reports.append(report)
            metrics.append(
                analytics.metrics_for(task_id, report, exec_result, args.loop_policy)
            )
    finally:
        if sandbox is not None:
            sandbox.close()

    sig = analytics.signature(reports, args.dataset_id)
    cov = analytics.coverage(sig)
    corpus = analytics.aggregate_corpus(
        metrics, args.dataset_id, coverage_pct=cov, loop_policy=args.loop_policy
    )
    out_dir = args.out or args.code_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "corpus.json"), "w", encoding="utf-8") as fh:
        json.dump(corpus.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "corpus.csv"), "w", encoding="utf-8") as fh:
        fh.write(analytics.corpus_report_csv(corpus))
    with open(os.path.join(out_dir, "exceptions.csv"), "w", encoding="utf-8") as fh:
        fh.write(analytics.exception_report_csv(corpus))
    with open(os.path.join(out_dir, "coverage.csv"), "w", encoding="utf-8") as fh:
        fh.write(analytics.coverage_report_csv([(args.dataset_id, cov)]))
    analytics.save_signature(sig, os.path.join(out_dir, "signature.json"))
    print(
        f"{args.dataset_id}: {len(paths)} programs ({parse_errors} parse errors), "
        f"cc_avg {corpus.cc_avg:.2f} cc_max {corpus.cc_max}, coverage {cov}%"
        if corpus.cc_avg is not None
        else f"{args.dataset_id}: {len(paths)} programs, none parseable"
    )
    return EXIT_OK


def cmd_project(args) -> int:
    import numpy as np

    sigs = [analytics.load_signature(path) for path in args.signatures]
    matrix = np.array([s.presence_pct for s in sigs], dtype=float)
    result = tsne.project(matrix, seed=args.seed, perplexity=args.perplexity)
    out = args.out or "projection.csv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("dataset_id,x,y\n")
        for sig, (x, y) in zip(sigs, result.points):
            fh.write(f"{sig.dataset_id},{x:.6f},{y:.6f}\n")
    print(
        f"projected {len(sigs)} signatures (KL {result.kl_initial:.4f} -> "
        f"{result.kl_final:.4f}) -> {out}"
    )
    return EXIT_OK


def cmd_replay_audit(args) -> int:
    if not os.path.exists(args.cassette):
        raise EnvironmentProblem(f"cassette not found: {args.cassette}")
    cassette = Cassette(mode="replay_strict", path=args.cassette)
    bad = cassette.audit()
    print(f"{len(cassette.entries)} entries, {len(bad)} digest mismatches")
    if bad:
        for digest in bad:
            print(f"mismatch: {digest}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


_HANDLERS = {
    "ingest": cmd_ingest,
    "snippets": cmd_snippets,
    "index": cmd_index,
    "run": cmd_run,
    "ablate": cmd_ablate,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
    "project": cmd_project,
    "replay-audit": cmd_replay_audit,
}


if __name__ == "__main__":
    sys.exit(main())
