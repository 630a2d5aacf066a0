"""Source benchmark readers.

Each reader turns the published layout of one benchmark into a
:class:`~seal.schema.Dataset`. Layouts are documented in docs/adapters.md.
Parsing is all-or-nothing per input file: a malformed file raises
:class:`AdapterError` naming the file and record/line.
"""
from __future__ import annotations

import ast
import json
import logging
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator

from seal.schema import (
    SOURCES,
    ApiCall,
    ApiDoc,
    Dataset,
    DatasetMeta,
    IdAllocator,
    ParamSpec,
    Query,
)

log = logging.getLogger(__name__)


class AdapterError(ValueError):
    def __init__(self, path: str | Path, where: str, message: str):
        super().__init__(f"{path}:{where}: {message}")
        self.path = str(path)
        self.where = where


@dataclass(frozen=True)
class SourceAdapterConfig:
    source: str
    paths: tuple[str, ...]
    subset: str | None = None
    created_at: str | None = None

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}; expected one of {', '.join(SOURCES)}")


@dataclass(frozen=True)
class ToolbenchRaw:
    """Per-query trajectory facts the sanitizer needs."""

    finish_type: str
    relevant: tuple[tuple[str, str], ...]
    calls: tuple[tuple[str, str], ...]  # (function name, raw argument text)
    functions: frozenset[str] = frozenset()


# --------------------------------------------------------------------------
# type labels

_TYPE_HEADS = {
    "str": "string", "string": "string", "text": "string", "char": "string", "enum": "string",
    "date": "string", "time": "string", "datetime": "string", "url": "string",
    "int": "integer", "integer": "integer", "long": "integer",
    "float": "number", "number": "number", "double": "number", "decimal": "number",
    "bool": "boolean", "boolean": "boolean",
    "list": "array", "array": "array", "tuple": "array", "set": "array",
    "dict": "object", "object": "object", "map": "object", "json": "object",
}


def normalize_type(label: str) -> str:
    """Map a free-form source type label onto the closed type vocabulary."""
    text = label.lower().replace("optional", " ")
    for token in re.split(r"[^a-z]+", text):
        if token:
            return _TYPE_HEADS.get(token, "any")
    return "any"


def is_optional_label(label: str) -> bool:
    return "optional" in label.lower()


def make_param(name: str, label: Any, *, required: bool, description: Any = None,
               default: Any = None) -> ParamSpec:
    label = str(label) if label not in (None, "") else "string"
    if is_optional_label(label):
        required = False
    if description is not None and not isinstance(description, str):
        description = json.dumps(description, sort_keys=True)
    if default == "":
        default = None
    return ParamSpec(
        name=str(name),
        type_label=label,
        required=required,
        description=description or None,
        default=default,
        type=normalize_type(label),
    )


def toolbench_function_name(api_name: str, tool_name: str) -> str:
    """Function identifier ToolBench registers for an API (``<api>_for_<tool>``)."""
    return f"{_std(api_name)}_for_{_std(tool_name)}"


def _std(text: str) -> str:
    return re.sub(r"_+", "_", re.sub(r"[^a-z0-9]", "_", text.lower())).strip("_")


# --------------------------------------------------------------------------
# file reading


def _records(path: Path) -> Iterator[tuple[str, Any]]:
    """Yield (location, record) from a JSON array or a JSONL file."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise AdapterError(path, "0", f"unreadable: {exc}") from exc
    stripped = text.lstrip()
    if stripped.startswith("[") or stripped.startswith("{") and _is_single_document(stripped):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise AdapterError(path, str(exc.lineno), exc.msg) from exc
        items = doc if isinstance(doc, list) else [doc]
        for i, item in enumerate(items):
            yield f"record {i}", item
        return
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            yield str(lineno), json.loads(line)
        except json.JSONDecodeError as exc:
            raise AdapterError(path, str(lineno), exc.msg) from exc


def _is_single_document(text: str) -> bool:
    try:
        json.loads(text)
    except json.JSONDecodeError:
        return False
    return True


def _maybe_json(value: Any, path: Path, where: str) -> Any:
    if isinstance(value, str):
        try:
            return json.loads(value)
        except json.JSONDecodeError as exc:
            raise AdapterError(path, where, f"embedded JSON: {exc.msg}") from exc
    return value


def _default_id(path: Path, where: str) -> str:
    """Record id for sources without one: file stem plus record index or line."""
    return f"{path.stem}-{where.split()[-1]}"


def _require(record: Any, keys: tuple[str, ...], path: Path, where: str) -> None:
    if not isinstance(record, dict):
        raise AdapterError(path, where, f"expected an object, got {type(record).__name__}")
    missing = [k for k in keys if k not in record]
    if missing:
        raise AdapterError(path, where, f"missing field(s) {', '.join(missing)}")


class _Pool:
    """Deduplicating API registry shared by the adapters of one ingest."""

    def __init__(self, source: str):
        self.source = source
        self.ids = IdAllocator()
        self.by_key: dict[tuple, ApiDoc] = {}
        self.order: list[ApiDoc] = []

    def add(self, key: tuple, tool_name: str, api_name: str, **fields: Any) -> ApiDoc:
        if key in self.by_key:
            return self.by_key[key]
        api = ApiDoc(
            id=self.ids.allocate(self.source, tool_name, api_name),
            source=self.source,
            tool_name=tool_name,
            api_name=api_name,
            **fields,
        )
        self.by_key[key] = api
        self.order.append(api)
        return api


def _meta(config: SourceAdapterConfig, **extra: Any) -> DatasetMeta:
    created = config.created_at or datetime.now(timezone.utc).replace(microsecond=0).isoformat()
    info = {"subset": config.subset} if config.subset else {}
    info.update(extra)
    return DatasetMeta(source=config.source, version="1", created_at=created, extra=info)


# --------------------------------------------------------------------------
# ToolBench / AnyTool (shared api_list layout)


def _toolbench_api(pool: _Pool, doc: Any, path: Path, where: str) -> ApiDoc:
    _require(doc, ("tool_name", "api_name"), path, where)
    params = [
        make_param(p.get("name", ""), p.get("type"), required=True,
                   description=p.get("description"), default=p.get("default"))
        for p in doc.get("required_parameters") or ()
    ]
    params += [
        make_param(p.get("name", ""), p.get("type"), required=False,
                   description=p.get("description"), default=p.get("default"))
        for p in doc.get("optional_parameters") or ()
    ]
    seen: set[str] = set()
    params = [p for p in params if p.name and not (p.name in seen or seen.add(p.name))]
    return pool.add(
        (doc["tool_name"], doc["api_name"]),
        doc["tool_name"],
        doc["api_name"],
        description=doc.get("api_description") or "",
        category=doc.get("category_name"),
        parameters=tuple(params),
    )


def _relevant_pairs(record: dict) -> tuple[tuple[str, str], ...]:
    pairs = record.get("relevant APIs") or record.get("relevant_apis") or ()
    return tuple((str(p[0]), str(p[1])) for p in pairs if isinstance(p, (list, tuple)) and len(p) >= 2)


def _toolbench_calls(record: dict) -> tuple[str | None, tuple[tuple[str, str], ...]]:
    """Extract (finish_type, calls) from either answer layout; (None, ()) if absent."""
    if isinstance(record.get("answer"), dict):
        ans = record["answer"]
        calls = []
        for c in ans.get("calls") or ():
            args = c.get("arguments", "{}")
            calls.append((str(c.get("name", "")), args if isinstance(args, str) else json.dumps(args)))
        return str(ans.get("finish_type", "")), tuple(calls)
    gen = record.get("answer_generation")
    if isinstance(gen, dict):
        calls = []
        messages = gen.get("train_messages") or []
        last = messages[-1] if messages and isinstance(messages[-1], list) else messages
        for m in last:
            fc = m.get("function_call") if isinstance(m, dict) else None
            if fc:
                args = fc.get("arguments", "{}")
                calls.append((str(fc.get("name", "")), args if isinstance(args, str) else json.dumps(args)))
        return str(gen.get("finish_type", "")), tuple(calls)
    return None, ()


def read_toolbench(config: SourceAdapterConfig) -> tuple[Dataset, dict[str, ToolbenchRaw]]:
    """Parse ToolBench (or AnyTool) records; also return per-query raw facts."""
    pool = _Pool(config.source)
    pending: list[tuple[str, str, tuple, str | None, tuple, dict[str, str]]] = []
    for name in config.paths:
        path = Path(name)
        for where, record in _records(path):
            _require(record, ("query", "api_list"), path, where)
            functions: dict[str, str] = {}
            for j, doc in enumerate(record["api_list"]):
                api = _toolbench_api(pool, doc, path, f"{where}.api_list[{j}]")
                functions[toolbench_function_name(api.api_name, api.tool_name)] = api.id
            qid = record.get("query_id", record.get("id", _default_id(path, where)))
            finish, calls = _toolbench_calls(record)
            pending.append((f"{config.source}/{qid}", str(record["query"]), _relevant_pairs(record),
                            finish, calls, functions))

    queries: list[Query] = []
    raw: dict[str, ToolbenchRaw] = {}
    with_calls = config.source == "toolbench"
    for qid, text, relevant, finish, calls, functions in pending:
        gt_ids = sorted({pool.by_key[p].id for p in relevant if p in pool.by_key})
        gt_calls = None
        if with_calls and finish is not None:
            gt_calls = tuple(_resolve_call(name, args, functions) for name, args in calls
                             if name != "Finish")
        queries.append(Query(id=qid, text=text, source=config.source,
                             gt_api_ids=tuple(gt_ids), gt_calls=gt_calls))
        if finish is not None:
            raw[qid] = ToolbenchRaw(finish_type=finish, relevant=relevant, calls=calls,
                                    functions=frozenset(functions))
    dataset = Dataset(meta=_meta(config), apis=tuple(pool.order), queries=tuple(queries))
    return dataset, raw


def _resolve_call(name: str, raw_args: str, functions: dict[str, str]) -> ApiCall:
    try:
        args = json.loads(raw_args) if raw_args.strip() else {}
    except json.JSONDecodeError:
        args = None
    if not isinstance(args, dict):
        args = {"_raw": raw_args}
    return ApiCall(name=name, arguments=args, api_id=functions.get(name))


# --------------------------------------------------------------------------
# APIGen (xlam function-calling layout)


def read_apigen(config: SourceAdapterConfig) -> Dataset:
    pool = _Pool("apigen")
    queries: list[Query] = []
    for name in config.paths:
        path = Path(name)
        for where, record in _records(path):
            _require(record, ("query", "tools", "answers"), path, where)
            tools = _maybe_json(record["tools"], path, where)
            answers = _maybe_json(record["answers"], path, where)
            if not isinstance(tools, list) or not isinstance(answers, list):
                raise AdapterError(path, where, "tools and answers must be lists")
            by_name: dict[str, str] = {}
            for j, tool in enumerate(tools):
                _require(tool, ("name",), path, f"{where}.tools[{j}]")
                params = tool.get("parameters") or {}
                if not isinstance(params, dict):
                    raise AdapterError(path, f"{where}.tools[{j}]", "parameters must be an object")
                specs = tuple(
                    make_param(pname, (p or {}).get("type"), required=True,
                               description=(p or {}).get("description"),
                               default=(p or {}).get("default"))
                    for pname, p in params.items()
                )
                desc = tool.get("description") or ""
                api = pool.add((tool["name"], desc, specs), tool["name"], tool["name"],
                               description=desc, parameters=specs)
                by_name[tool["name"]] = api.id
            calls = []
            for j, ans in enumerate(answers):
                _require(ans, ("name",), path, f"{where}.answers[{j}]")
                args = _maybe_json(ans.get("arguments", {}), path, f"{where}.answers[{j}]")
                if not isinstance(args, dict):
                    raise AdapterError(path, f"{where}.answers[{j}]", "arguments must be an object")
                calls.append(ApiCall(name=ans["name"], arguments=args, api_id=by_name.get(ans["name"])))
            gt_ids = sorted({c.api_id for c in calls if c.api_id is not None})
            qid = record.get("id", _default_id(path, where))
            queries.append(Query(id=f"apigen/{qid}", text=str(record["query"]), source="apigen",
                                 gt_api_ids=tuple(gt_ids), gt_calls=tuple(calls)))
    return Dataset(meta=_meta(config), apis=tuple(pool.order), queries=tuple(queries))


# --------------------------------------------------------------------------
# MetaTool


def read_metatool(config: SourceAdapterConfig) -> Dataset:
    descriptions: dict[str, str] = {}
    raw_queries: list[tuple[Path, str, Any]] = []
    for name in config.paths:
        path = Path(name)
        records = list(_records(path))
        if len(records) == 1 and isinstance(records[0][1], dict) and "query" not in records[0][1]:
            doc = records[0][1]
            descriptions.update({str(k): str(v) for k, v in doc.items()})
            continue
        for where, record in records:
            if isinstance(record, dict) and "name_for_model" in record:
                descriptions[record["name_for_model"]] = str(record.get("description_for_model", ""))
                continue
            _require(record, ("query", "tool"), path, where)
            raw_queries.append((path, where, record))

    pool = _Pool("metatool")
    for tool in sorted(descriptions):
        pool.add((tool,), tool, tool, description=descriptions[tool])
    queries = []
    for path, where, record in raw_queries:
        tools = record["tool"]
        tools = [tools] if isinstance(tools, str) else list(tools)
        ids = []
        for t in tools:
            if (t,) not in pool.by_key:
                log.warning("%s:%s: tool %r has no description; registering bare", path, where, t)
            ids.append(pool.add((t,), t, t, description=descriptions.get(t, "")).id)
        qid = record.get("id", _default_id(path, where))
        queries.append(Query(id=f"metatool/{qid}", text=str(record["query"]), source="metatool",
                             gt_api_ids=tuple(sorted(set(ids))), gt_calls=None))
    return Dataset(meta=_meta(config), apis=tuple(pool.order), queries=tuple(queries))


# --------------------------------------------------------------------------
# APIBench (Gorilla)

_INSTRUCTION_RE = re.compile(r"###Instruction:\s*(.*?)\s*(?:###Output:|$)", re.S)


def read_apibench(config: SourceAdapterConfig) -> Dataset:
    pool = _Pool("apibench")
    queries = []
    for name in config.paths:
        path = Path(name)
        for where, record in _records(path):
            _require(record, ("code", "api_data"), path, where)
            provider = str(record.get("provider", ""))
            if config.subset and _std(config.subset) not in _std(provider):
                continue
            data = record["api_data"]
            _require(data, ("api_name",), path, where)
            raw_args = data.get("api_arguments")
            if isinstance(raw_args, dict):
                params = tuple(make_param(k, "any", required=True, description=None if v is None else str(v))
                               for k, v in raw_args.items())
            elif isinstance(raw_args, list):
                params = tuple(make_param(str(k), "any", required=True) for k in dict.fromkeys(map(str, raw_args)))
            else:
                params = ()
            desc = str(data.get("description") or data.get("functionality") or "")
            api = pool.add((provider, data["api_name"]), data.get("framework") or provider,
                           data["api_name"], description=desc, category=data.get("domain"),
                           parameters=params)
            m = _INSTRUCTION_RE.search(record["code"])
            text = m.group(1) if m else record["code"]
            args = call_arguments(str(data.get("api_call") or ""))
            qid = record.get("id", _default_id(path, where))
            queries.append(Query(id=f"apibench/{qid}", text=text, source="apibench",
                                 gt_api_ids=(api.id,),
                                 gt_calls=(ApiCall(name=api.api_name, arguments=args, api_id=api.id),)))
    return Dataset(meta=_meta(config), apis=tuple(pool.order), queries=tuple(queries))


def call_arguments(code: str) -> dict[str, Any]:
    """Literal keyword arguments of a one-line Python call such as ``api_call`` fields.

    Non-literal values keep their source text; unparseable code yields ``{}``.
    """
    try:
        node = ast.parse(code.strip(), mode="eval").body
    except SyntaxError:
        return {}
    if not isinstance(node, ast.Call):
        return {}
    args: dict[str, Any] = {}
    for kw in node.keywords:
        if kw.arg is None:
            continue
        try:
            args[kw.arg] = ast.literal_eval(kw.value)
        except ValueError:
            args[kw.arg] = ast.unparse(kw.value)
    return args


def parse_benchmark(config: SourceAdapterConfig) -> Dataset:
    """Read the files named by ``config`` into a unified dataset."""
    if config.source in ("toolbench", "anytool"):
        return read_toolbench(config)[0]
    readers = {"apigen": read_apigen, "metatool": read_metatool, "apibench": read_apibench}
    return readers[config.source](config)

