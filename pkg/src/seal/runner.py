"""Pool-size sweeps, evaluation of run directories, and report rendering."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable
from urllib.parse import quote

from seal import __version__
from seal.agent import AgentDeps, parse_trajectory, run_query, serialize_trajectory
from seal.config import RunConfig
from seal.evaluator import (
    SOLVED,
    Judge,
    JudgeError,
    aggregate,
    eval_calls,
    eval_params,
    eval_retrieval,
    prompt_hashes,
    sample_pool,
)
from seal.gateway import Gateway, GatewayError, RecordReplayBackend, RemoteBackend, ReplayStore, ScriptedBackend
from seal.retriever import GatewayEmbedder, build_index
from seal.schema import (
    Dataset,
    SchemaError,
    canonical_json,
    dataset_hash,
    load_dataset,
    parse_json,
    validate_dataset,
)
from seal.simulator import SimCache, Simulator

log = logging.getLogger(__name__)

METRICS_ORDER = ("n_queries", "recall_at_k", "mrr", "call_recall", "param_accuracy", "pass_rate")


class DataError(ValueError):
    """Input data is unusable (exit code 2)."""


class BackendError(RuntimeError):
    """The model backend cannot serve the run (exit code 3)."""


# --------------------------------------------------------------------------
# backend wiring


def make_backend(config: RunConfig) -> Any:
    """Inner backend for ``config.backend``; None for strict replay."""
    if config.backend == "scripted":
        try:
            doc = json.loads(Path(config.script).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read script {config.script}: {exc}") from exc
        return ScriptedBackend.from_json(doc)
    if config.backend == "remote":
        try:
            backend = RemoteBackend()
            backend.ping()
        except GatewayError as exc:
            raise BackendError(str(exc)) from exc
        return backend
    return None


def make_gateway(config: RunConfig, inner: Any = None) -> Gateway:
    """Gateway whose every exchange goes through the record-replay store under the cache dir."""
    if inner is None and config.backend != "replay":
        inner = make_backend(config)
    store = ReplayStore(Path(config.cache_dir) / "llm")
    return Gateway(RecordReplayBackend(store, inner, strict=config.backend == "replay"))


def load_valid_dataset(path: str) -> Dataset:
    try:
        dataset = load_dataset(path)
    except SchemaError as exc:
        raise DataError(str(exc)) from exc
    report = validate_dataset(dataset)
    if report:
        first = report.violations[0]
        raise DataError(f"{path}: {len(report)} validation violation(s), first: "
                        f"{first.rule} at {first.subject} {first.detail}".rstrip())
    return dataset


def file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_canonical(path: Path, doc: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(canonical_json(doc) + b"\n")


def trajectory_filename(query_id: str) -> str:
    return quote(query_id, safe="") + ".json"


def run_label(size: int, run: int) -> str:
    return f"pool{size}-run{run}"


# --------------------------------------------------------------------------
# sweep


@dataclass
class SweepResult:
    run_dir: Path
    already_complete: bool
    trajectories: int = 0


def run_sweep(config: RunConfig, *, inner_backend: Any = None,
              progress: Callable[[str], None] = lambda msg: None) -> SweepResult:
    """Sample pools, run every eligible query, and write trajectories plus a manifest.

    A completed manifest for the same results hash short-circuits the run.
    """
    dataset = load_valid_dataset(config.dataset)
    if max(config.pool_sizes) > len(dataset.apis):
        raise DataError(f"pool size {max(config.pool_sizes)} exceeds the {len(dataset.apis)} APIs in the dataset")
    d_hash = dataset_hash(dataset)
    r_hash = config.result_hash(d_hash)
    run_dir = Path(config.output_dir) / f"run-{r_hash[:12]}"
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        manifest = parse_json(manifest_path.read_bytes())
        if manifest.get("status") == "complete" and manifest.get("results_hash") == r_hash:
            return SweepResult(run_dir, already_complete=True)

    gateway = make_gateway(config, inner_backend)
    embedder = GatewayEmbedder(gateway, config.embed_model)
    simulator = Simulator(dataset, gateway, SimCache(Path(config.cache_dir) / "sim"), config.simulator_model)
    runs_meta, timings, total = [], {}, 0

    for size in config.pool_sizes:
        for run, seed in enumerate(config.seeds_for(size)):
            label = run_label(size, run)
            pool, eligible = sample_pool(dataset, size, seed)
            try:
                index = build_index(pool, embedder)
            except Exception as exc:
                raise BackendError(f"{label}: index build failed: {exc}") from exc
            deps = AgentDeps(index=index, embedder=embedder, gateway=gateway, simulator=simulator)
            out = run_dir / "trajectories" / label
            out.mkdir(parents=True, exist_ok=True)

            def one(query):
                start = time.perf_counter()
                t = run_query(query, pool, deps, config.agent)
                return query, t, time.perf_counter() - start

            with ThreadPoolExecutor(max_workers=config.parallel) as pool_exec:
                results = list(pool_exec.map(one, eligible))
            for query, t, elapsed in results:
                if t.error and t.error.get("kind") == "replay_miss":
                    raise BackendError(f"strict replay miss for request {t.error['fingerprint']} "
                                       f"(query {query.id}, {label})")
                (out / trajectory_filename(query.id)).write_bytes(serialize_trajectory(t) + b"\n")
                timings[f"{label}/{query.id}"] = round(elapsed, 6)
            write_canonical(run_dir / "pools" / f"{label}.json", {
                "pool_size": size, "run": run, "seed": seed,
                "pool": [a.id for a in pool], "queries": [q.id for q in eligible],
            })
            runs_meta.append({"pool_size": size, "run": run, "seed": seed, "label": label,
                              "queries": len(eligible)})
            total += len(eligible)
            progress(f"{label}: {len(eligible)} queries (seed {seed})")

    manifest = {
        "version": __version__,
        "status": "complete",
        "results_hash": r_hash,
        "dataset_hash": d_hash,
        "config": config.to_json(),
        "runs": runs_meta,
        "prompt_hashes": prompt_hashes(),
        "cache_state": _cache_state(config),
        "timings_s": timings,
        "gateway_transport_calls": gateway.calls,
        "files": _file_hashes(run_dir),
    }
    write_canonical(manifest_path, manifest)
    return SweepResult(run_dir, already_complete=False, trajectories=total)


def _cache_state(config: RunConfig) -> dict[str, str]:
    state = {}
    for name in ("llm", "sim"):
        root = Path(config.cache_dir) / name
        keys = sorted(p.name for p in root.iterdir() if not p.name.startswith(".")) if root.exists() else []
        state[name] = hashlib.sha256("\n".join(keys).encode()).hexdigest()
    return state


def _file_hashes(run_dir: Path) -> dict[str, str]:
    return {
        str(p.relative_to(run_dir)): file_hash(p)
        for p in sorted(run_dir.rglob("*.json"))
        if p.name != "manifest.json"
    }


# --------------------------------------------------------------------------
# evaluation


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def evaluate_run(run_dir: str | Path, *, skip_judge: bool = False, judge_model: str | None = None,
                 inner_backend: Any = None, config_overrides: dict | None = None) -> dict:
    """Score every trajectory in ``run_dir`` and write ``report.json``."""
    run_dir = Path(run_dir)
    try:
        manifest = parse_json((run_dir / "manifest.json").read_bytes())
    except (OSError, ValueError) as exc:
        raise DataError(f"{run_dir}: no readable manifest ({exc})") from exc
    config = RunConfig.from_json({**manifest["config"], **(config_overrides or {})})
    dataset = load_valid_dataset(config.dataset)
    queries = {q.id: q for q in dataset.queries}
    k = config.agent.retrieval_k
    judge = gateway = None
    if not skip_judge:
        gateway = make_gateway(config, inner_backend)
        judge = Judge(gateway, judge_model or config.judge_model)

    rows, run_rows = [], []
    for meta in manifest["runs"]:
        pool_doc = parse_json((run_dir / "pools" / f"{meta['label']}.json").read_bytes())
        per = {"recall": [], "mrr": [], "call": [], "param": [], "solved": 0, "judged": 0}
        counts = {"missing_trajectory": 0, "unjudged": 0, "retrieval_skipped": 0, "calls_skipped": 0}
        for qid in pool_doc["queries"]:
            row: dict[str, Any] = {"pool_size": meta["pool_size"], "run": meta["run"], "seed": meta["seed"],
                                   "query_id": qid}
            path = run_dir / "trajectories" / meta["label"] / trajectory_filename(qid)
            query = queries.get(qid)
            if query is None or not path.exists():
                counts["missing_trajectory"] += 1
                counts["unjudged"] += 1
                row.update(status="missing_trajectory", judged=False)
                rows.append(row)
                continue
            try:
                t = parse_trajectory(path.read_bytes())
            except SchemaError as exc:
                raise DataError(f"{path}: {exc}") from exc
            row.update(status="ok", termination=t.termination)
            r = eval_retrieval(t.retrieved_api_ids, query.gt_api_ids, k)
            if r is None:
                counts["retrieval_skipped"] += 1
            else:
                per["recall"].append(r.recall_at_k)
                per["mrr"].append(r.mrr)
                row.update(recall_at_k=r.recall_at_k, mrr=r.mrr)
            if query.gt_calls is None:
                counts["calls_skipped"] += 1
            else:
                pred = t.predicted_calls()
                row.update(call_recall=eval_calls(pred, query.gt_calls),
                           param_accuracy=eval_params(pred, query.gt_calls))
                per["call"].append(row["call_recall"])
                per["param"].append(row["param_accuracy"])
            if judge is not None:
                try:
                    verdict = judge.judge(query, t)
                except JudgeError as exc:
                    log.warning("%s unjudged: %s", qid, exc)
                    counts["unjudged"] += 1
                    row["judged"] = False
                else:
                    per["judged"] += 1
                    per["solved"] += verdict.label == SOLVED
                    row.update(judged=True, pass_label=verdict.to_json())
            rows.append(row)
        metrics = {
            "n_queries": float(len(pool_doc["queries"])),
            "recall_at_k": _mean(per["recall"]),
            "mrr": _mean(per["mrr"]),
            "call_recall": _mean(per["call"]),
            "param_accuracy": _mean(per["param"]),
            "pass_rate": per["solved"] / per["judged"] if per["judged"] else None,
        }
        run_rows.append({"pool_size": meta["pool_size"], "run": meta["run"], "seed": meta["seed"],
                         "metrics": metrics, "counts": {**counts, "judged": per["judged"]}})

    aggregates = []
    for size in dict.fromkeys(r["pool_size"] for r in run_rows):
        sel = [r for r in run_rows if r["pool_size"] == size]
        agg = aggregate([r["metrics"] for r in sel], pool_size=size, seeds=[r["seed"] for r in sel],
                        query_counts=[int(r["metrics"]["n_queries"]) for r in sel])
        aggregates.append(agg.to_json())

    report = {
        "run_id": run_dir.name,
        "results_hash": manifest["results_hash"],
        "k": k,
        "judge": None if skip_judge else {"model": judge_model or config.judge_model,
                                          "prompt_hashes": prompt_hashes()},
        "rows": rows,
        "runs": run_rows,
        "aggregates": aggregates,
    }
    report_path = run_dir / "report.json"
    write_canonical(report_path, report)
    manifest["files"]["report.json"] = file_hash(report_path)
    manifest["eval_transport_calls"] = gateway.calls if gateway is not None else 0
    write_canonical(run_dir / "manifest.json", manifest)
    return report


# --------------------------------------------------------------------------
# rendering


def _metric_label(name: str, k: int) -> str:
    return f"recall_at_{k}" if name == "recall_at_k" else name


def _fmt(value: float | None, digits: int = 4) -> str:
    return "NA" if value is None else f"{value:.{digits}f}"


def _cells(report: dict) -> list[tuple[int, str, float | None, float | None]]:
    out = []
    k = report.get("k", 10)
    for agg in report["aggregates"]:
        for name in METRICS_ORDER:
            m = agg["metrics"].get(name)
            if m is not None:
                out.append((agg["pool_size"], _metric_label(name, k), m["mean"], m["std"]))
    return out


def render_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["pool_size", "metric", "mean", "std"])
    for size, name, mean, std in _cells(report):
        writer.writerow([size, name, _fmt(mean, 6), _fmt(std, 6)])
    return buf.getvalue()


def render_table(report: dict) -> str:
    k = report.get("k", 10)
    names = [_metric_label(n, k) for n in METRICS_ORDER]
    header = ["pool_size"] + [f"{n} {part}" for n in names for part in ("mean", "std")]
    body = []
    for agg in report["aggregates"]:
        line = [str(agg["pool_size"])]
        for name in METRICS_ORDER:
            m = agg["metrics"].get(name) or {"mean": None, "std": None}
            digits = 2
            line += [_fmt(m["mean"], digits), _fmt(m["std"], digits)]
        body.append(line)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in [header] + body]
    return "\n".join(lines) + "\n"


def render_plotdata(report: dict) -> str:
    series: dict[str, dict[str, list]] = {}
    for size, name, mean, std in _cells(report):
        s = series.setdefault(name, {"pool_size": [], "mean": [], "std": []})
        s["pool_size"].append(size)
        s["mean"].append(mean)
        s["std"].append(std)
    return canonical_json({"series": series}).decode("utf-8") + "\n"


RENDERERS = {"table": render_table, "csv": render_csv, "plotdata": render_plotdata}
