"""Two-stage judged pass rate: answer-only first, full trajectory when unsure."""
from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass

from seal.agent import MODEL_ERROR, Trajectory, serialize_trajectory
from seal.gateway import ChatRequest, Gateway, GatewayError
from seal.schema import Query
from seal.simulator.core import load_prompt

log = logging.getLogger(__name__)

SOLVED, UNSOLVED, UNSURE = "solved", "unsolved", "unsure"
ANSWER_ONLY, WITH_TRAJECTORY = "answer_only", "with_trajectory"

PROMPT_FILES = ("judge_answer.txt", "judge_trajectory.txt")
ANSWER_PROMPT = load_prompt("judge_answer.txt")
TRAJECTORY_PROMPT = load_prompt("judge_trajectory.txt")

_LABEL_RE = re.compile(r"\b(unsolved|solved|unsure)\b", re.I)
_SLOT_RE = re.compile(r"\{(query|answer|trajectory)\}")


def fill(template: str, **values: str) -> str:
    """Substitute ``{query}``-style slots in one pass, so values are never re-expanded."""
    return _SLOT_RE.sub(lambda m: values.get(m.group(1), m.group(0)), template)


class JudgeError(RuntimeError):
    """The judge could not produce a label; the query counts as unjudged."""


@dataclass(frozen=True)
class PassLabel:
    label: str
    stage: str
    rationale: str = ""

    def to_json(self) -> dict:
        return {"label": self.label, "stage": self.stage, "rationale": self.rationale}


def prompt_hashes() -> dict[str, str]:
    return {name: hashlib.sha256(load_prompt(name).encode("utf-8")).hexdigest() for name in PROMPT_FILES}


def parse_verdict(text: str) -> tuple[str, str]:
    """Extract (label, reason) from a judge reply."""
    body = text.strip()
    if body.startswith("```"):
        body = body.strip("`").removeprefix("json").strip()
    try:
        doc = json.loads(body)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict) and str(doc.get("label", "")).lower() in (SOLVED, UNSOLVED, UNSURE):
        return str(doc["label"]).lower(), str(doc.get("reason", ""))
    m = _LABEL_RE.search(text)
    if m:
        return m.group(1).lower(), text.strip()
    raise JudgeError(f"no label in judge reply {text[:80]!r}")


class Judge:
    def __init__(self, gateway: Gateway, model: str, *, temperature: float = 0.0, seed: int | None = 0):
        self.gateway = gateway
        self.model = model
        self.temperature = temperature
        self.seed = seed

    def _ask(self, prompt: str) -> tuple[str, str]:
        request = ChatRequest(model=self.model, messages=({"role": "user", "content": prompt},),
                              temperature=self.temperature, seed=self.seed)
        try:
            reply = self.gateway.chat(request)
        except GatewayError as exc:
            raise JudgeError(str(exc)) from exc
        return parse_verdict(reply.content or "")

    def judge(self, query: Query, trajectory: Trajectory) -> PassLabel:
        """Label a run solved or unsolved; never returns unsure.

        Raises:
            JudgeError: the judge was unreachable or unparseable.
        """
        if trajectory.termination == MODEL_ERROR:
            return PassLabel(UNSOLVED, ANSWER_ONLY, "run ended with a model error")
        answer = trajectory.final_answer or ""
        prompt = fill(ANSWER_PROMPT, query=query.text, answer=answer)
        label, reason = self._ask(prompt)
        if label != UNSURE:
            return PassLabel(label, ANSWER_ONLY, reason)
        record = serialize_trajectory(trajectory).decode("utf-8")
        prompt = fill(TRAJECTORY_PROMPT, query=query.text, answer=answer, trajectory=record)
        label, reason = self._ask(prompt)
        return PassLabel(SOLVED if label == SOLVED else UNSOLVED, WITH_TRAJECTORY, reason)


def judge_pass(query: Query, trajectory: Trajectory, gateway: Gateway, model: str) -> PassLabel | None:
    """Judge one run; None marks it unjudged (judge unavailable or unparseable)."""
    try:
        return Judge(gateway, model).judge(query, trajectory)
    except JudgeError as exc:
        log.warning("query %s unjudged: %s", query.id, exc)
        return None
