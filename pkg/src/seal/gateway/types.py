from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from seal.schema import canonical_json

ROLES = ("system", "user", "assistant", "tool")
TOOL_CHOICES = ("auto", "none", "required")


class GatewayError(RuntimeError):
    """Base for every failure surfaced by the gateway."""


class TransportError(GatewayError):
    pass


class ProviderError(GatewayError):
    def __init__(self, code: int | str, message: str):
        super().__init__(f"provider error {code}: {message}")
        self.code = code


class ReplayMiss(GatewayError):
    def __init__(self, fingerprint: str):
        super().__init__(f"strict replay miss for request {fingerprint}")
        self.fingerprint = fingerprint


class ScriptExhausted(GatewayError):
    pass


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: Mapping[str, Any]
    api_id: str | None = None

    def to_wire(self) -> dict:
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": dict(self.parameters),
            },
        }


@dataclass(frozen=True)
class ToolCall:
    id: str
    name: str
    raw_arguments: str
    arguments: Mapping[str, Any] | None = None

    @classmethod
    def make(cls, id: str, name: str, raw_arguments: str | Mapping) -> ToolCall:
        if not isinstance(raw_arguments, str):
            raw_arguments = json.dumps(raw_arguments)
        try:
            parsed = json.loads(raw_arguments) if raw_arguments.strip() else {}
        except json.JSONDecodeError:
            parsed = None
        return cls(id=id, name=name, raw_arguments=raw_arguments,
                   arguments=parsed if isinstance(parsed, dict) else None)

    def to_json(self) -> dict:
        return {"id": self.id, "name": self.name, "arguments": self.raw_arguments}


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Mapping[str, Any], ...]
    tool_specs: tuple[ToolSpec, ...] = ()
    tool_choice: str = "auto"
    temperature: float = 0.0
    seed: int | None = 0

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        for i, m in enumerate(self.messages):
            if m.get("role") not in ROLES:
                raise ValueError(f"message {i} has unknown role {m.get('role')!r}")
            if m["role"] == "system" and i != 0:
                raise ValueError("a system message may only appear first")
        if self.tool_choice not in TOOL_CHOICES:
            raise ValueError(f"tool_choice must be one of {TOOL_CHOICES}")
        names = [t.name for t in self.tool_specs]
        if len(names) != len(set(names)):
            raise ValueError("tool names must be unique within a request")

    def to_json(self) -> dict:
        doc = {
            "model": self.model,
            "messages": [dict(m) for m in self.messages],
            "tool_specs": [t.to_wire() for t in self.tool_specs],
            "tool_choice": self.tool_choice,
            "temperature": self.temperature,
        }
        if self.seed is not None:
            doc["seed"] = self.seed
        return doc


@dataclass(frozen=True)
class EmbedRequest:
    model: str
    texts: tuple[str, ...]

    def to_json(self) -> dict:
        return {"model": self.model, "texts": list(self.texts)}


@dataclass(frozen=True)
class ChatResponse:
    content: str | None = None
    tool_calls: tuple[ToolCall, ...] = ()
    finish_reason: str = "stop"
    usage: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.content is None and not self.tool_calls:
            raise ValueError("a chat response carries content, tool calls, or both")

    def to_json(self) -> dict:
        doc: dict[str, Any] = {
            "tool_calls": [c.to_json() for c in self.tool_calls],
            "finish_reason": self.finish_reason,
            "usage": dict(self.usage),
        }
        if self.content is not None:
            doc["content"] = self.content
        return doc

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> ChatResponse:
        calls = tuple(
            ToolCall.make(c.get("id") or f"call_{i}", c["name"], c.get("arguments", "{}"))
            for i, c in enumerate(doc.get("tool_calls") or ())
        )
        content = doc.get("content")
        if content is None and not calls:
            content = ""
        return cls(
            content=content,
            tool_calls=calls,
            finish_reason=doc.get("finish_reason") or ("tool_calls" if calls else "stop"),
            usage=dict(doc.get("usage") or {}),
        )

    def assistant_message(self) -> dict:
        """The message to append to the conversation for this turn."""
        msg: dict[str, Any] = {"role": "assistant", "content": self.content}
        if self.tool_calls:
            msg["tool_calls"] = [
                {"id": c.id, "type": "function",
                 "function": {"name": c.name, "arguments": c.raw_arguments}}
                for c in self.tool_calls
            ]
        return msg


def request_fingerprint(request: ChatRequest | EmbedRequest) -> str:
    """sha256 hex digest of the request's canonical JSON."""
    kind = "chat" if isinstance(request, ChatRequest) else "embed"
    doc = {"kind": kind, **request.to_json()}
    return hashlib.sha256(canonical_json(doc)).hexdigest()


def messages(*pairs: Sequence[str]) -> tuple[dict, ...]:
    """Shorthand: ``messages(("system", "..."), ("user", "..."))``."""
    return tuple({"role": role, "content": content} for role, content in pairs)
