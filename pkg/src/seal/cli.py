"""``seal`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from seal import __version__
from seal.config import BACKENDS, ConfigError, RunConfig, load_config
from seal.gateway import GatewayError
from seal.ingest import (
    AdapterError,
    FilterStats,
    SourceAdapterConfig,
    avg_apis_per_query,
    filter_multistep,
    parse_benchmark,
    read_toolbench,
    sanitize_toolbench,
)
from seal.retriever import GatewayEmbedder, build_index, save_index
from seal.runner import (
    RENDERERS,
    BackendError,
    DataError,
    evaluate_run,
    load_valid_dataset,
    make_gateway,
    run_sweep,
)
from seal.schema import SOURCES, SchemaError, canonical_str, dump_dataset, parse_json, validate_dataset
from seal.simulator import SimCache, SimRequest, Simulator, UnknownApi, serve_http

log = logging.getLogger("seal")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_str(doc) + "\n", encoding="utf-8")


def _stats_path(out: Path) -> Path:
    return out.with_name(out.stem + ".stats.json")


def _stats_doc(before, after, stats: FilterStats, steps: list[str]) -> dict:
    return {
        "source": after.meta.source,
        "steps": steps,
        "input_queries": len(before.queries),
        "input_apis": len(before.apis),
        "queries": len(after.queries),
        "apis": len(after.apis),
        "filters": stats.to_json(),
        "avg_apis_per_query": {"before": avg_apis_per_query(before), "after": avg_apis_per_query(after)},
    }


def _filter(dataset, raw, *, sanitize: bool, multistep: bool):
    stats, steps = FilterStats(kept=len(dataset.queries)), []
    if sanitize:
        dataset, s = sanitize_toolbench(dataset, raw)
        stats, steps = stats.merge(s), steps + ["sanitize_toolbench"]
    if multistep:
        dataset, s = filter_multistep(dataset)
        stats, steps = stats.merge(s), steps + ["filter_multistep"]
    return dataset, stats, steps


def cmd_ingest(args) -> int:
    if args.sanitize and args.source != "toolbench":
        raise UsageError("--sanitize applies to the toolbench source only")
    config = SourceAdapterConfig(source=args.source, paths=tuple(args.inputs), subset=args.subset,
                                 created_at=args.created_at)
    if args.source in ("toolbench", "anytool"):
        original, raw = read_toolbench(config)
    else:
        original, raw = parse_benchmark(config), {}
    dataset, stats, steps = _filter(original, raw, sanitize=args.sanitize, multistep=args.multistep_only)
    report = validate_dataset(dataset)
    if report:
        raise DataError(f"ingested dataset fails validation: {report.violations[:3]}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_dataset(dataset, out)
    _write_json(_stats_path(out), _stats_doc(original, dataset, stats, steps))
    print(f"wrote {out}: {len(dataset.queries)} queries, {len(dataset.apis)} APIs")
    return EXIT_OK


def cmd_sanitize(args) -> int:
    original = load_valid_dataset(args.dataset)
    raw = {}
    if args.raw:
        src = SourceAdapterConfig(source="toolbench", paths=tuple(args.raw))
        raw = read_toolbench(src)[1]
    if not args.raw and not args.multistep_only:
        raise UsageError("nothing to do: pass --raw (ToolBench sanitization) and/or --multistep-only")
    dataset, stats, steps = _filter(original, raw, sanitize=bool(args.raw), multistep=args.multistep_only)
    out = Path(args.out)
    dump_dataset(dataset, out)
    _write_json(_stats_path(out), _stats_doc(original, dataset, stats, steps))
    print(f"wrote {out}: {len(dataset.queries)} queries, {len(dataset.apis)} APIs")
    return EXIT_OK


def _adhoc_config(args, dataset: str) -> RunConfig:
    from seal.agent import AgentConfig

    return RunConfig(dataset=dataset, agent=AgentConfig(model="unused"),
                     simulator_model=getattr(args, "model", None) or "unused", judge_model="unused",
                     cache_dir=args.cache_dir, backend=args.backend, script=args.script)


def cmd_index(args) -> int:
    dataset = load_valid_dataset(args.dataset)
    gateway = make_gateway(_adhoc_config(args, args.dataset))
    index = build_index(list(dataset.apis), GatewayEmbedder(gateway, args.embed_model))
    save_index(index, args.out)
    print(f"wrote {args.out}: {len(index)} vectors of dimension {index.dim}")
    return EXIT_OK


def _simulator(args) -> Simulator:
    dataset = load_valid_dataset(args.dataset)
    gateway = make_gateway(_adhoc_config(args, args.dataset))
    return Simulator(dataset, gateway, SimCache(Path(args.cache_dir) / "sim"), args.model)


def cmd_simulate(args) -> int:
    try:
        arguments = json.loads(args.args)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--args is not JSON: {exc.msg}") from exc
    if not isinstance(arguments, dict):
        raise UsageError("--args must be a JSON object")
    sim = _simulator(args)
    try:
        resp = sim.simulate(SimRequest(api_id=args.api, arguments=arguments))
    except UnknownApi as exc:
        raise DataError(f"unknown api id {exc}") from exc
    print(canonical_str(resp.envelope()))
    return EXIT_BACKEND if resp.error == "simulator_unavailable" else EXIT_OK


def cmd_serve(args) -> int:
    server = serve_http(_simulator(args), args.host, args.port)
    print(f"simulator listening on {server.url}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def _run_config(args) -> RunConfig:
    config = load_config(args.config)
    doc = config.to_json()
    for key in ("output_dir", "cache_dir", "backend", "script", "parallel", "base_seed", "runs"):
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    if args.pool_sizes:
        doc["pool_sizes"] = args.pool_sizes
    return RunConfig.from_json(doc)


def cmd_run(args) -> int:
    config = _run_config(args)
    result = run_sweep(config, progress=print)
    if result.already_complete:
        print(f"{result.run_dir}: already complete, nothing to do")
    else:
        print(f"wrote {result.trajectories} trajectories under {result.run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    overrides = {}
    if args.backend:
        overrides["backend"] = args.backend
    if args.script:
        overrides["script"] = args.script
    if args.cache_dir:
        overrides["cache_dir"] = args.cache_dir
    report = evaluate_run(args.run_dir, skip_judge=args.skip_judge, judge_model=args.judge_model,
                          config_overrides=overrides)
    print(RENDERERS["table"](report), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        report = parse_json(Path(args.report).read_bytes())
    except (OSError, ValueError) as exc:
        raise DataError(f"{args.report}: {exc}") from exc
    text = RENDERERS[args.format](report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _backend_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--backend", choices=BACKENDS, default="remote" if required else None)
    p.add_argument("--script", help="scripted-backend response file (JSON)")
    p.add_argument("--cache-dir", default=".seal-cache" if required else None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"seal {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse a source benchmark into a unified dataset")
    p.add_argument("--source", required=True, choices=SOURCES)
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subset")
    p.add_argument("--created-at")
    p.add_argument("--sanitize", action="store_true")
    p.add_argument("--multistep-only", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("sanitize", help="filter an existing unified dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--raw", nargs="+", help="ToolBench source files carrying trajectories")
    p.add_argument("--multistep-only", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sanitize)

    p = sub.add_parser("index", help="embed every API and write an index file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--embed-model", default="hashing-256")
    p.add_argument("--out", required=True)
    _backend_flags(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("run", help="run a pool-size sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--cache-dir")
    p.add_argument("--backend", choices=BACKENDS)
    p.add_argument("--script")
    p.add_argument("--parallel", type=int)
    p.add_argument("--base-seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--pool-sizes", type=int, nargs="+")
    p.set_defaults(func=cmd_run)

    for name, helptext, func in (("simulate", "simulate one API call", cmd_simulate),
                                 ("serve", "run the simulator HTTP service", cmd_serve)):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--dataset", required=True)
        p.add_argument("--model", required=True, help="simulator chat model")
        _backend_flags(p)
        if name == "simulate":
            p.add_argument("--api", required=True)
            p.add_argument("--args", default="{}")
        else:
            p.add_argument("--host", default="127.0.0.1")
            p.add_argument("--port", type=int, default=8080)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="score a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--skip-judge", action="store_true")
    p.add_argument("--judge-model")
    _backend_flags(p, required=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render a report as table, csv or plot data")
    p.add_argument("--report", required=True)
    p.add_argument("--format", choices=sorted(RENDERERS), default="table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"seal: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SchemaError, AdapterError, FileNotFoundError) as exc:
        print(f"seal: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (BackendError, GatewayError) as exc:
        print(f"seal: backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
