"""Retrieval-augmented tool-calling loop for one query."""
from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from seal.gateway import ChatRequest, ChatResponse, Gateway, GatewayError, ReplayMiss, ToolCall, ToolSpec
from seal.retriever import ApiIndex, Embedder, search
from seal.schema import ApiCall, ApiDoc, Query, SchemaError, canonical_json, canonical_str, parse_json
from seal.simulator import SimRequest, Simulator
from seal.simulator.core import load_prompt

log = logging.getLogger(__name__)

SYSTEM_PROMPT = load_prompt("agent_system.txt")
FINAL_PROMPT = load_prompt("agent_final.txt")

FINISHED = "finished"
MAX_ROUNDS = "max_rounds"
MODEL_ERROR = "model_error"
TERMINATIONS = (FINISHED, MAX_ROUNDS, MODEL_ERROR)

UNREGISTERED = "unregistered_call"
MALFORMED_ARGS = "malformed_arguments"

DESCRIPTION_BUDGET = 1024
ELLIPSIS = "..."
_JSON_TYPES = {"string", "number", "integer", "boolean", "array", "object"}


@dataclass(frozen=True)
class AgentConfig:
    model: str
    retrieval_k: int = 10
    max_tool_rounds: int = 10
    temperature: float = 0.0
    seed: int | None = 0
    description_budget: int = DESCRIPTION_BUDGET

    def __post_init__(self) -> None:
        if self.retrieval_k < 1:
            raise ValueError("retrieval_k must be positive")
        if self.max_tool_rounds < 1:
            raise ValueError("max_tool_rounds must be at least 1")


# --------------------------------------------------------------------------
# tool specs


def sanitize_name(api_name: str) -> str:
    name = re.sub(r"[^a-z0-9]", "_", api_name.lower())
    return (name or "_")[:60]


def truncate_utf8(text: str, budget: int) -> str:
    data = text.encode("utf-8")
    if len(data) <= budget:
        return text
    cut = data[:max(0, budget - len(ELLIPSIS))].decode("utf-8", errors="ignore")
    return cut + ELLIPSIS


def to_tool_spec(api: ApiDoc, taken: set[str] | None = None,
                 description_budget: int = DESCRIPTION_BUDGET) -> ToolSpec:
    """Function-calling spec for ``api``; adds the chosen name to ``taken``."""
    base = sanitize_name(api.api_name)
    name, n = base, 1
    taken = taken if taken is not None else set()
    while name in taken:
        n += 1
        name = f"{base}_{n}"
    taken.add(name)
    properties: dict[str, Any] = {}
    for p in api.parameters:
        prop: dict[str, Any] = {}
        if p.type in _JSON_TYPES:
            prop["type"] = p.type
        if p.description:
            prop["description"] = p.description
        if p.default is not None:
            prop["default"] = p.default
        properties[p.name] = prop
    schema = {
        "type": "object",
        "properties": properties,
        "required": [p.name for p in api.parameters if p.required],
    }
    return ToolSpec(name=name, description=truncate_utf8(api.description, description_budget),
                    parameters=schema, api_id=api.id)


def build_tool_specs(apis: Iterable[ApiDoc], description_budget: int = DESCRIPTION_BUDGET) -> list[ToolSpec]:
    taken: set[str] = set()
    return [to_tool_spec(a, taken, description_budget) for a in apis]


# --------------------------------------------------------------------------
# trajectory


@dataclass(frozen=True)
class AssistantTurn:
    content: str | None
    tool_calls: tuple[ToolCall, ...] = ()
    forced: bool = False

    def to_json(self) -> dict:
        doc = {"type": "assistant", "tool_calls": [c.to_json() for c in self.tool_calls],
               "forced": self.forced}
        if self.content is not None:
            doc["content"] = self.content
        return doc


@dataclass(frozen=True)
class ToolResult:
    tool_call_id: str
    call: ApiCall
    error: str
    response: str
    flags: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {"type": "tool_result", "tool_call_id": self.tool_call_id, "call": self.call.to_json(),
                "result": {"error": self.error, "response": self.response}, "flags": list(self.flags)}


Step = AssistantTurn | ToolResult


@dataclass
class Trajectory:
    query_id: str
    retrieved_api_ids: list[str] = field(default_factory=list)
    steps: list[Step] = field(default_factory=list)
    final_answer: str | None = None
    termination: str = MODEL_ERROR
    usage: dict[str, int] = field(default_factory=dict)
    error: dict[str, str] | None = None

    def tool_results(self) -> list[ToolResult]:
        return [s for s in self.steps if isinstance(s, ToolResult)]

    def predicted_calls(self) -> list[ApiCall]:
        return [s.call for s in self.tool_results()]

    def to_json(self) -> dict:
        doc: dict[str, Any] = {
            "query_id": self.query_id,
            "retrieved_api_ids": list(self.retrieved_api_ids),
            "steps": [s.to_json() for s in self.steps],
            "termination": self.termination,
            "usage": dict(self.usage),
        }
        if self.final_answer is not None:
            doc["final_answer"] = self.final_answer
        if self.error is not None:
            doc["error"] = dict(self.error)
        return doc


def serialize_trajectory(t: Trajectory) -> bytes:
    return canonical_json(t.to_json())


def _step_from_json(doc: Mapping) -> Step:
    if doc["type"] == "assistant":
        calls = tuple(ToolCall.make(c["id"], c["name"], c["arguments"]) for c in doc.get("tool_calls", ()))
        return AssistantTurn(content=doc.get("content"), tool_calls=calls, forced=bool(doc.get("forced")))
    if doc["type"] == "tool_result":
        result = doc["result"]
        return ToolResult(tool_call_id=doc["tool_call_id"], call=ApiCall.from_json(doc["call"]),
                          error=result["error"], response=result["response"],
                          flags=tuple(doc.get("flags", ())))
    raise SchemaError(f"unknown step type {doc['type']!r}")


def parse_trajectory(data: bytes | str) -> Trajectory:
    try:
        doc = parse_json(data)
        termination = doc["termination"]
        if termination not in TERMINATIONS:
            raise SchemaError(f"unknown termination {termination!r}")
        return Trajectory(
            query_id=doc["query_id"],
            retrieved_api_ids=list(doc.get("retrieved_api_ids", ())),
            steps=[_step_from_json(s) for s in doc.get("steps", ())],
            final_answer=doc.get("final_answer"),
            termination=termination,
            usage=dict(doc.get("usage", {})),
            error=doc.get("error"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"malformed trajectory: {exc!r}") from exc


# --------------------------------------------------------------------------
# the loop


@dataclass
class AgentDeps:
    index: ApiIndex
    embedder: Embedder
    gateway: Gateway
    simulator: Simulator


@dataclass
class AgentHooks:
    """Insertion points for planner/verifier agents; none ship by default."""

    before_loop: Callable[[Query, list[dict]], None] | None = None
    after_round: Callable[[int, list[dict], Trajectory], None] | None = None


def _error_info(exc: BaseException) -> dict[str, str]:
    info = {"kind": "replay_miss" if isinstance(exc, ReplayMiss) else "gateway", "message": str(exc)}
    if isinstance(exc, ReplayMiss):
        info["fingerprint"] = exc.fingerprint
    return info


class _Run:
    def __init__(self, query: Query, pool: Sequence[ApiDoc], deps: AgentDeps, config: AgentConfig):
        self.query = query
        self.pool = {a.id: a for a in pool}
        self.deps = deps
        self.config = config
        self.trajectory = Trajectory(query_id=query.id)
        self.usage: Counter[str] = Counter()

    def chat(self, messages: list[dict], specs: Sequence[ToolSpec], tool_choice: str) -> ChatResponse:
        request = ChatRequest(model=self.config.model, messages=tuple(dict(m) for m in messages),
                              tool_specs=tuple(specs), tool_choice=tool_choice,
                              temperature=self.config.temperature, seed=self.config.seed)
        self.usage["chat_calls"] += 1
        resp = self.deps.gateway.chat(request)
        self.usage.update({k: v for k, v in resp.usage.items() if isinstance(v, int)})
        return resp

    def execute(self, call: ToolCall, names: Mapping[str, str]) -> ToolResult:
        api_id = names.get(call.name)
        if api_id is None:
            args = call.arguments if call.arguments is not None else {"_raw": call.raw_arguments}
            return ToolResult(call.id, ApiCall(name=call.name, arguments=args),
                              error=f"unregistered function {call.name!r}", response="",
                              flags=(UNREGISTERED,))
        flags: tuple[str, ...] = ()
        args = call.arguments
        if args is None:
            args, flags = {"_raw": call.raw_arguments}, (MALFORMED_ARGS,)
        sim = self.deps.simulator.simulate(SimRequest(api_id=api_id, arguments=args))
        api = self.pool[api_id]
        return ToolResult(call.id, ApiCall(name=api.api_name, arguments=args, api_id=api_id),
                          error=sim.error, response=sim.response, flags=flags)

    def run(self, hooks: AgentHooks | None) -> Trajectory:
        t = self.trajectory
        hooks = hooks or AgentHooks()
        try:
            hits = search(self.deps.index, self.query.text, self.config.retrieval_k, self.deps.embedder)
            t.retrieved_api_ids = [api_id for api_id, _ in hits]
            registered = [self.pool[i] for i in t.retrieved_api_ids if i in self.pool]
            specs = build_tool_specs(registered, self.config.description_budget)
            names = {s.name: s.api_id for s in specs}
            messages: list[dict] = [{"role": "system", "content": SYSTEM_PROMPT},
                                    {"role": "user", "content": self.query.text}]
            if hooks.before_loop:
                hooks.before_loop(self.query, messages)
            rounds = 0
            while rounds < self.config.max_tool_rounds:
                resp = self.chat(messages, specs, "auto")
                t.steps.append(AssistantTurn(resp.content, resp.tool_calls))
                messages.append(resp.assistant_message())
                if not resp.tool_calls:
                    t.final_answer = resp.content or ""
                    t.termination = FINISHED
                    return t
                rounds += 1
                for call in resp.tool_calls:
                    result = self.execute(call, names)
                    t.steps.append(result)
                    messages.append({"role": "tool", "tool_call_id": call.id,
                                     "content": canonical_str({"error": result.error,
                                                               "response": result.response})})
                if hooks.after_round:
                    hooks.after_round(rounds, messages, t)
            messages.append({"role": "user", "content": FINAL_PROMPT})
            resp = self.chat(messages, (), "none")
            t.steps.append(AssistantTurn(resp.content, resp.tool_calls, forced=True))
            t.final_answer = resp.content or ""
            t.termination = MAX_ROUNDS
            return t
        except GatewayError as exc:
            log.warning("query %s: model error: %s", self.query.id, exc)
            t.termination = MODEL_ERROR
            t.error = _error_info(exc)
            return t
        finally:
            t.usage = dict(sorted(self.usage.items()))


def run_query(query: Query, pool: Sequence[ApiDoc], deps: AgentDeps, config: AgentConfig,
              hooks: AgentHooks | None = None) -> Trajectory:
    """Retrieve, register, and converse until the model answers or the round cap is hit.

    Never raises for gateway failures: they end the run with
    ``termination="model_error"`` and the partial trajectory.
    """
    return _Run(query, pool, deps, config).run(hooks)
