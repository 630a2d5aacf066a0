"""Unified benchmark data model and canonical JSON.

Every benchmark adapter produces a :class:`Dataset`; every downstream stage
(retrieval, simulation, evaluation) consumes one. ``canonical_json`` is the
single serialization used for hashing, cache keys and exact-match
comparison.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

SOURCES = ("toolbench", "apigen", "anytool", "metatool", "apibench")
TYPE_VOCAB = ("string", "number", "integer", "boolean", "array", "object", "any")

_MAX_EXACT_INT = 2**53


class SchemaError(ValueError):
    """Raised for documents that cannot be read as a unified dataset."""


class LookupFailure(KeyError):
    pass


class ApiNotFound(LookupFailure):
    pass


class AmbiguousApiName(LookupFailure):
    def __init__(self, name: str, candidates: list[str]):
        super().__init__(name)
        self.name = name
        self.candidates = candidates

    def __str__(self) -> str:
        return f"api name {self.name!r} is shared by {', '.join(self.candidates)}"


# --------------------------------------------------------------------------
# canonical JSON


def _number(value: int | float) -> str:
    if isinstance(value, int):
        return str(value)
    if not math.isfinite(value):
        raise ValueError(f"non-finite number {value!r} has no canonical form")
    if value.is_integer() and abs(value) < _MAX_EXACT_INT:
        return str(int(value))
    # repr is the shortest string that round-trips
    return repr(value)


def _write(value: Any, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, (int, float)):
        out.append(_number(value))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, Mapping):
        out.append("{")
        for i, key in enumerate(sorted(value)):
            if not isinstance(key, str):
                raise TypeError(f"object keys must be strings, got {type(key).__name__}")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _write(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _write(item, out)
        out.append("]")
    else:
        raise TypeError(f"{type(value).__name__} is not a JSON value")


def canonical_json(value: Any) -> bytes:
    """Serialize ``value`` to deterministic UTF-8 JSON bytes.

    Object keys are sorted by code point at every depth, there is no
    insignificant whitespace, and integral floats render as integers so
    ``1.0`` and ``1`` produce the same bytes.

    Raises:
        ValueError: on NaN or infinity.
        TypeError: on values that are not JSON.
    """
    out: list[str] = []
    _write(value, out)
    return "".join(out).encode("utf-8")


def canonical_str(value: Any) -> str:
    return canonical_json(value).decode("utf-8")


def content_hash(value: Any) -> str:
    """sha256 hex digest of the canonical form of ``value``."""
    return hashlib.sha256(canonical_json(value)).hexdigest()


def parse_json(data: bytes | str) -> Any:
    return json.loads(data, parse_constant=_reject_constant)


def _reject_constant(name: str) -> Any:
    raise ValueError(f"non-finite number {name} is not valid JSON")


# --------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type_label: str = "string"
    required: bool = True
    description: str | None = None
    default: Any = None
    type: str = "any"

    def to_json(self) -> dict:
        doc = {
            "name": self.name,
            "type_label": self.type_label,
            "type": self.type,
            "required": self.required,
        }
        if self.description is not None:
            doc["description"] = self.description
        if self.default is not None:
            doc["default"] = self.default
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> ParamSpec:
        return cls(
            name=doc["name"],
            type_label=doc.get("type_label", "string"),
            required=bool(doc.get("required", True)),
            description=doc.get("description"),
            default=doc.get("default"),
            type=doc.get("type", "any"),
        )


@dataclass(frozen=True)
class ApiDoc:
    id: str
    source: str
    tool_name: str
    api_name: str
    description: str = ""
    category: str | None = None
    parameters: tuple[ParamSpec, ...] = ()

    def to_json(self) -> dict:
        doc = {
            "id": self.id,
            "source": self.source,
            "tool_name": self.tool_name,
            "api_name": self.api_name,
            "description": self.description,
            "parameters": [p.to_json() for p in self.parameters],
        }
        if self.category is not None:
            doc["category"] = self.category
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> ApiDoc:
        return cls(
            id=doc["id"],
            source=doc["source"],
            tool_name=doc.get("tool_name", ""),
            api_name=doc["api_name"],
            description=doc.get("description", ""),
            category=doc.get("category"),
            parameters=tuple(ParamSpec.from_json(p) for p in doc.get("parameters", ())),
        )


@dataclass(frozen=True)
class ApiCall:
    """A named API invocation; ``api_id`` is set when the name resolved."""

    name: str
    arguments: Mapping[str, Any] = field(default_factory=dict)
    api_id: str | None = None

    @property
    def key(self) -> str:
        return self.api_id if self.api_id is not None else self.name

    def to_json(self) -> dict:
        doc = {"name": self.name, "arguments": dict(self.arguments)}
        if self.api_id is not None:
            doc["api_id"] = self.api_id
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> ApiCall:
        args = doc.get("arguments", {})
        if not isinstance(args, Mapping):
            raise SchemaError(f"call arguments must be an object, got {type(args).__name__}")
        return cls(name=doc["name"], arguments=dict(args), api_id=doc.get("api_id"))


@dataclass(frozen=True)
class Query:
    """A user request with its ground truth.

    ``gt_calls`` is ``None`` when the source has no call ground truth and an
    empty tuple when the source says zero calls; evaluation treats the two
    differently.
    """

    id: str
    text: str
    source: str
    gt_api_ids: tuple[str, ...] = ()
    gt_calls: tuple[ApiCall, ...] | None = None

    def to_json(self) -> dict:
        doc = {
            "id": self.id,
            "text": self.text,
            "source": self.source,
            "gt_api_ids": sorted(set(self.gt_api_ids)),
        }
        if self.gt_calls is not None:
            doc["gt_calls"] = [c.to_json() for c in self.gt_calls]
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> Query:
        calls = doc.get("gt_calls")
        return cls(
            id=doc["id"],
            text=doc["text"],
            source=doc["source"],
            gt_api_ids=tuple(sorted(set(doc.get("gt_api_ids", ())))),
            gt_calls=None if calls is None else tuple(ApiCall.from_json(c) for c in calls),
        )


@dataclass(frozen=True)
class DatasetMeta:
    source: str
    version: str = "1"
    created_at: str = ""
    extra: Mapping[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = dict(self.extra)
        doc.update(source=self.source, version=self.version, created_at=self.created_at)
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> DatasetMeta:
        extra = {k: v for k, v in doc.items() if k not in ("source", "version", "created_at")}
        return cls(
            source=doc.get("source", ""),
            version=str(doc.get("version", "1")),
            created_at=doc.get("created_at", ""),
            extra=extra,
        )


@dataclass(frozen=True)
class Dataset:
    meta: DatasetMeta
    apis: tuple[ApiDoc, ...] = ()
    queries: tuple[Query, ...] = ()

    def api_by_id(self) -> dict[str, ApiDoc]:
        return {a.id: a for a in self.apis}

    def to_json(self) -> dict:
        return {
            "meta": self.meta.to_json(),
            "apis": [a.to_json() for a in self.apis],
            "queries": [q.to_json() for q in self.queries],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> Dataset:
        try:
            return cls(
                meta=DatasetMeta.from_json(doc.get("meta", {})),
                apis=tuple(ApiDoc.from_json(a) for a in doc["apis"]),
                queries=tuple(Query.from_json(q) for q in doc["queries"]),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise SchemaError(f"not a unified dataset document: {exc!r}") from exc

    def replace(self, *, apis: Iterable[ApiDoc] | None = None,
                queries: Iterable[Query] | None = None) -> Dataset:
        return Dataset(
            meta=self.meta,
            apis=self.apis if apis is None else tuple(apis),
            queries=self.queries if queries is None else tuple(queries),
        )


def dump_dataset(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_bytes(canonical_json(dataset.to_json()) + b"\n")


def load_dataset(path: str | Path) -> Dataset:
    try:
        doc = parse_json(Path(path).read_bytes())
    except (OSError, ValueError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    return Dataset.from_json(doc)


def dataset_hash(dataset: Dataset) -> str:
    return content_hash(dataset.to_json())


# --------------------------------------------------------------------------
# validation and lookup


@dataclass(frozen=True)
class Violation:
    rule: str
    subject: str
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    def add(self, rule: str, subject: str, detail: str = "") -> None:
        self.violations.append(Violation(rule, subject, detail))

    def rules(self) -> list[str]:
        return [v.rule for v in self.violations]


def validate_dataset(dataset: Dataset) -> ValidationReport:
    """Check every dataset invariant and report all violations found."""
    report = ValidationReport()
    api_counts = Counter(a.id for a in dataset.apis)
    for api_id, n in sorted(api_counts.items()):
        if n > 1:
            report.add("duplicate_api_id", api_id, f"{n} occurrences")
    for api in dataset.apis:
        if not api.api_name:
            report.add("empty_api_name", api.id)
        if api.source not in SOURCES:
            report.add("unknown_source", api.id, api.source)
        names = Counter(p.name for p in api.parameters)
        for name, n in sorted(names.items()):
            if n > 1:
                report.add("duplicate_parameter", api.id, name)
        for p in api.parameters:
            if "optional" in p.type_label.lower() and p.required:
                report.add("optional_marked_required", api.id, p.name)

    query_counts = Counter(q.id for q in dataset.queries)
    for qid, n in sorted(query_counts.items()):
        if n > 1:
            report.add("duplicate_query_id", qid, f"{n} occurrences")

    known = set(api_counts)
    for q in dataset.queries:
        for api_id in q.gt_api_ids:
            if api_id not in known:
                report.add("referential_integrity", q.id, f"gt_api_id {api_id!r} not in apis")
        for call in q.gt_calls or ():
            if call.api_id is not None and call.api_id not in known:
                report.add("referential_integrity", q.id, f"gt_call api_id {call.api_id!r} not in apis")
            if not all(isinstance(k, str) for k in call.arguments):
                report.add("non_string_argument_key", q.id, call.name)
    return report


def lookup_api(dataset: Dataset, key: str) -> ApiDoc:
    """Find an API by exact id, falling back to a unique ``api_name`` match.

    Raises:
        ApiNotFound: nothing matches.
        AmbiguousApiName: several APIs share the name.
    """
    for api in dataset.apis:
        if api.id == key:
            return api
    matches = [a for a in dataset.apis if a.api_name == key]
    if not matches:
        raise ApiNotFound(key)
    if len(matches) > 1:
        raise AmbiguousApiName(key, sorted(a.id for a in matches))
    return matches[0]


# --------------------------------------------------------------------------
# identifiers

_SLUG_RE = re.compile(r"[^a-z0-9_.-]+")


def slug(text: str) -> str:
    return _SLUG_RE.sub("_", text.strip().lower()).strip("_") or "_"


class IdAllocator:
    """Hands out ``<source>/<tool>/<api>`` ids, suffixing ``-2``, ``-3`` on collision.

    Ids depend only on insertion order, so re-ingesting identical input
    yields identical ids.
    """

    def __init__(self) -> None:
        self._issued: set[str] = set()

    def allocate(self, source: str, tool_name: str, api_name: str) -> str:
        base = f"{source}/{slug(tool_name)}/{slug(api_name)}"
        candidate, n = base, 1
        while candidate in self._issued:
            n += 1
            candidate = f"{base}-{n}"
        self._issued.add(candidate)
        return candidate
