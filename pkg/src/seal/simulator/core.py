"""Cached, chat-model-backed stand-in for real API servers."""
from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from seal.flight import SingleFlight
from seal.gateway import ChatRequest, Gateway, GatewayError, ReplayMiss
from seal.gateway.replay import utc_now, write_once
from seal.schema import ApiDoc, Dataset, canonical_json, canonical_str, parse_json

log = logging.getLogger(__name__)

UNAVAILABLE = "simulator_unavailable"
MALFORMED = "malformed_simulation"
MAX_ATTEMPTS = 3
CORRECTIVE = "Return only the JSON object with the fields \"error\" and \"response\", and nothing else."


def load_prompt(name: str) -> str:
    return resources.files("seal.prompts").joinpath(name).read_text(encoding="utf-8").rstrip("\n")


PROMPT_TEMPLATE = load_prompt("simulator.txt")


class UnknownApi(LookupError):
    pass


class MalformedOutput(ValueError):
    pass


@dataclass(frozen=True)
class SimRequest:
    api_id: str
    arguments: Mapping[str, Any]

    def to_json(self) -> dict:
        return {"api_id": self.api_id, "arguments": dict(self.arguments)}

    @classmethod
    def from_json(cls, doc: Any) -> SimRequest:
        if not isinstance(doc, dict) or not isinstance(doc.get("api_id"), str):
            raise ValueError("a simulation request is an object with a string api_id")
        args = doc.get("arguments", {})
        if not isinstance(args, dict):
            raise ValueError("arguments must be an object")
        return cls(api_id=doc["api_id"], arguments=args)


@dataclass(frozen=True)
class SimResponse:
    error: str
    response: str
    cached: bool = False
    simulator_model: str = ""

    def envelope(self) -> dict:
        return {"error": self.error, "response": self.response}

    def envelope_bytes(self) -> bytes:
        return canonical_json(self.envelope())


def api_info(api: ApiDoc) -> dict:
    """Documentation block embedded in the simulator prompt."""
    params = []
    for p in api.parameters:
        label = p.type_label
        if not p.required and "optional" not in label.lower():
            label = f"{label}, optional"
        doc: dict[str, Any] = {"name": p.name, "type": label, "required": p.required}
        if p.description:
            doc["description"] = p.description
        if p.default is not None:
            doc["default"] = p.default
        params.append(doc)
    return {"name": api.api_name, "description": api.description, "parameters": params}


def render_prompt(api: ApiDoc) -> str:
    return PROMPT_TEMPLATE.replace("{API_INFO}", canonical_str(api_info(api)))


def sim_cache_key(req: SimRequest) -> str:
    return hashlib.sha256(canonical_json(req.to_json())).hexdigest()


def _strip_fence(text: str) -> str:
    text = text.strip()
    if text.startswith("```"):
        first_newline = text.find("\n")
        text = text[first_newline + 1:] if first_newline != -1 else text[3:]
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    return text.strip()


def _envelope(text: str) -> SimResponse:
    doc = json.loads(text)
    if not isinstance(doc, dict) or set(doc) != {"error", "response"}:
        raise MalformedOutput("expected an object with exactly the fields error and response")
    if not isinstance(doc["error"], str) or not isinstance(doc["response"], str):
        raise MalformedOutput("error and response must be strings")
    if not doc["error"] and not doc["response"]:
        raise MalformedOutput("error and response are both empty")
    return SimResponse(error=doc["error"], response=doc["response"])


def parse_sim_output(text: str) -> SimResponse:
    """Parse a simulator reply, allowing one repair: stripping code fences and whitespace.

    Raises:
        MalformedOutput: the reply is not the expected envelope.
    """
    for candidate in (text, _strip_fence(text)):
        try:
            return _envelope(candidate)
        except json.JSONDecodeError:
            continue
    raise MalformedOutput(f"not a JSON envelope: {text[:80]!r}")


class SimCache:
    """Append-only content-addressed store: one file per :func:`sim_cache_key`."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._memo: dict[str, SimResponse] = {}

    def get(self, key: str) -> SimResponse | None:
        with self._lock:
            if key in self._memo:
                return self._memo[key]
        path = self.root / key
        if not path.exists():
            return None
        doc = parse_json(path.read_bytes())
        env = doc["response"]
        hit = SimResponse(error=env["error"], response=env["response"], cached=True,
                          simulator_model=doc.get("model", ""))
        with self._lock:
            self._memo[key] = hit
        return hit

    def put(self, key: str, req: SimRequest, resp: SimResponse) -> None:
        body = canonical_json({"request": req.to_json(), "response": resp.envelope(),
                               "model": resp.simulator_model, "created_at": utc_now()})
        with self._lock:
            if not write_once(self.root / key, body + b"\n"):
                self._memo.pop(key, None)

    def keys(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if not p.name.startswith("."))


class Simulator:
    def __init__(self, dataset: Dataset, gateway: Gateway, cache: SimCache, model: str, *,
                 temperature: float = 0.0, seed: int | None = 0, max_attempts: int = MAX_ATTEMPTS):
        self.apis = dataset.api_by_id()
        self.gateway = gateway
        self.cache = cache
        self.model = model
        self.temperature = temperature
        self.seed = seed
        self.max_attempts = max_attempts
        self.flight: SingleFlight[SimResponse] = SingleFlight()

    def api(self, api_id: str) -> ApiDoc:
        try:
            return self.apis[api_id]
        except KeyError:
            raise UnknownApi(api_id) from None

    def simulate(self, req: SimRequest) -> SimResponse:
        """Serve ``req`` from the cache, or ask the model once per key and cache the answer.

        Transport failures come back as a ``simulator_unavailable`` envelope
        and are not cached (a strict-replay miss is raised instead); replies that stay malformed after the retry cap
        are cached as ``malformed_simulation``.
        """
        api = self.api(req.api_id)
        key = sim_cache_key(req)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        return self.flight.do(key, lambda: self._miss(api, req, key))[0]

    def _miss(self, api: ApiDoc, req: SimRequest, key: str) -> SimResponse:
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        history: list[dict] = [
            {"role": "system", "content": render_prompt(api)},
            {"role": "user", "content": canonical_str(dict(req.arguments))},
        ]
        result = None
        for attempt in range(self.max_attempts):
            request = ChatRequest(model=self.model, messages=tuple(history),
                                  temperature=self.temperature, seed=self.seed)
            try:
                reply = self.gateway.chat(request)
            except ReplayMiss:
                raise  # strict replay must fail loudly, not degrade to an envelope
            except GatewayError as exc:
                log.warning("simulator call for %s failed: %s", req.api_id, exc)
                return SimResponse(error=UNAVAILABLE, response="", simulator_model=self.model)
            text = reply.content or ""
            try:
                parsed = parse_sim_output(text)
            except MalformedOutput as exc:
                log.info("attempt %d for %s malformed: %s", attempt + 1, req.api_id, exc)
                history += [{"role": "assistant", "content": text},
                            {"role": "user", "content": CORRECTIVE}]
                continue
            result = SimResponse(error=parsed.error, response=parsed.response, simulator_model=self.model)
            break
        if result is None:
            result = SimResponse(error=MALFORMED, response="", simulator_model=self.model)
        self.cache.put(key, req, result)
        return result
