"""Propose, solve, report and refine against a chat-completion endpoint.

The endpoint sits behind :class:`ChatClient`; :class:`HttpChatClient` speaks
the common chat-completions JSON shape and :class:`ScriptedClient` replays
fixed responses for tests. Every message sent or received and every solve
outcome is kept in a :class:`Transcript` that can be written as JSON lines.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol

import httpx

from .catalog import Catalog
from .dsl import ProgramSyntaxError, parse_program
from .feedback import FeedbackReport, Issue, render_text, success_report
from .physics import QuasiStaticBackend, SimulationBackend
from .pipeline import SolveOutcome, SolverConfig, solve_program
from .scene import Bounds2D, SceneState
from .scenefile import program_hash

log = logging.getLogger(__name__)

FEEDBACK_TEMPLATE = (
    "There are some errors in previous response. Here's the feedback {feedback}. Please generate a new one "
    "to fix it and try to retain the existing relationships if possible. You should still strickly follow "
    "the output format."
)
USER_TEMPLATE = 'The xy extend of the table is {table_bbox}.\n The scene description is "{scene_prompt}".'
SUCCESS_TEMPLATE = "The scene was generated successfully. Here's the feedback {feedback}."
ENRICH_REQUEST = (
    " Please add more objects to make the scene richer. Return the complete list of predicates, "
    "keeping the existing objects and relationships."
)


def system_prompt() -> str:
    """The predicate-language system prompt shipped with the package."""
    return resources.files("predscene").joinpath("resources/system_prompt.txt").read_text(encoding="utf-8")


class EndpointError(RuntimeError):
    """Transport or HTTP failure talking to the chat endpoint."""


class ExhaustedRetries(RuntimeError):
    """Every attempt failed; carries the best partial scene and the transcript."""

    def __init__(self, attempts: int, scene: SceneState, transcript: "Transcript"):
        super().__init__(f"no valid scene after {attempts} attempt(s)")
        self.attempts = attempts
        self.scene = scene
        self.transcript = transcript


class ChatClient(Protocol):
    def complete(self, messages: list[dict]) -> str: ...


@dataclass
class HttpChatClient:
    """Minimal chat-completions client; the key is read from ``api_key_env``."""

    endpoint: str
    model: str
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 1.0
    timeout: float = 120.0
    calls: int = 0

    def complete(self, messages: list[dict]) -> str:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise EndpointError(f"environment variable {self.api_key_env} is not set")
        body = {"model": self.model, "messages": messages, "temperature": self.temperature}
        self.calls += 1
        try:
            resp = httpx.post(
                self.endpoint,
                json=body,
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except httpx.HTTPError as exc:
            raise EndpointError(f"chat request failed: {exc}") from exc
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise EndpointError(f"unexpected chat response shape: {exc}") from exc


@dataclass
class ScriptedClient:
    """Returns canned responses in order; records the contexts it was given."""

    responses: list[str]
    seen: list[list[dict]] = field(default_factory=list)

    @classmethod
    def from_file(cls, path: Path | str) -> "ScriptedClient":
        """A JSON array of response strings."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, list) or not all(isinstance(r, str) for r in data):
            raise ValueError("scripted responses must be a JSON array of strings")
        return cls(list(data))

    def complete(self, messages: list[dict]) -> str:
        if len(self.seen) >= len(self.responses):
            raise EndpointError("scripted endpoint has no responses left")
        self.seen.append([dict(m) for m in messages])
        return self.responses[len(self.seen) - 1]


@dataclass(frozen=True)
class AgentConfig:
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str = "OPENAI_API_KEY"
    max_retries: int = 5
    temperature: float = 1.0
    timeout: float = 120.0
    offline: bool = False
    max_enrichment_rounds: int = 1
    stability_samples: int = 50

    def __post_init__(self):
        if self.max_retries < 0 or self.max_enrichment_rounds < 0:
            raise ValueError("retry and enrichment counts must be non-negative")


@dataclass
class Transcript:
    messages: list[dict] = field(default_factory=list)
    rounds: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.messages)

    def add(self, role: str, content: str) -> None:
        self.messages.append({"role": role, "content": content})

    def to_jsonl(self) -> str:
        """Messages and round records interleaved in the order they happened."""
        lines = []
        by_after = {}
        for r in self.rounds:
            by_after.setdefault(r["after_message"], []).append(r)
        for n, m in enumerate(self.messages):
            lines.append(json.dumps({"kind": "message", **m}, sort_keys=True))
            for r in by_after.get(n + 1, []):
                lines.append(json.dumps({"kind": "round", **r}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "Transcript":
        out = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            rec = json.loads(line)
            kind = rec.pop("kind")
            if kind == "message":
                out.messages.append(rec)
            else:
                out.rounds.append(rec)
        return out


def format_bbox(bounds: Bounds2D) -> str:
    return f"x: [{bounds.min_x:g}, {bounds.max_x:g}], y: [{bounds.min_y:g}, {bounds.max_y:g}]"


def build_context(
    scene_prompt: str,
    bounds: Bounds2D,
    previous_response: str | None = None,
    feedback: str | None = None,
    system: str | None = None,
) -> list[dict]:
    """Messages for one request: system, user, then the last exchange if any.

    Raises:
        ValueError: empty scene prompt.
    """
    if not scene_prompt or not scene_prompt.strip():
        raise ValueError("scene prompt must be non-empty")
    msgs = [
        {"role": "system", "content": system if system is not None else system_prompt()},
        {"role": "user", "content": USER_TEMPLATE.format(table_bbox=format_bbox(bounds), scene_prompt=scene_prompt)},
    ]
    if previous_response is not None and feedback is not None:
        msgs.append({"role": "assistant", "content": previous_response})
        msgs.append({"role": "user", "content": feedback})
    return msgs


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.S)


def extract_program_text(response: str) -> str:
    """Strip code fences and prose around the outermost JSON array."""
    m = _FENCE.search(response)
    text = m.group(1) if m else response
    lo, hi = text.find("["), text.rfind("]")
    return text[lo : hi + 1] if 0 <= lo < hi else text


def _parse_report(exc: Exception) -> FeedbackReport:
    report = FeedbackReport("grammar", [Issue("ParseError", (), None, None, str(exc))])
    report.text = render_text(report)
    return report


@dataclass
class _Attempt:
    response: str
    outcome: SolveOutcome


def _solve_response(response, catalog, bounds, seed, solver_config, backend) -> SolveOutcome:
    try:
        program = parse_program(extract_program_text(response))
    except ProgramSyntaxError as exc:
        return SolveOutcome(SceneState(bounds, resolution=solver_config.resolution), _parse_report(exc))
    return solve_program(program, catalog, bounds, seed, solver_config, backend)


def run_session(
    prompt: str,
    config: AgentConfig,
    catalog: Catalog,
    bounds: Bounds2D,
    seed: int = 0,
    *,
    client: ChatClient | None = None,
    program_text: str | None = None,
    solver_config: SolverConfig | None = None,
    backend: SimulationBackend | None = None,
) -> tuple[SceneState, Transcript]:
    """Run the refine loop until a scene solves or the retry budget runs out.

    Round ``n`` solves with seed ``seed + n`` and records it, so any round
    can be replayed. In offline mode ``program_text`` stands in for the
    model's first reply and no endpoint is contacted. After a success, a confirmation with the
    success report is appended; while enrichment rounds remain it also asks
    for more objects, and the richer scene replaces the current one only if
    it solves.

    Raises:
        EndpointError: the client failed.
        ExhaustedRetries: no attempt produced a valid scene.
    """
    solver_config = solver_config or SolverConfig()
    backend = backend or QuasiStaticBackend(resolution=solver_config.resolution)
    if config.offline:
        if program_text is None:
            raise ValueError("offline mode needs a program file")
    elif client is None:
        if not config.endpoint or not config.model:
            raise ValueError("online mode needs an endpoint and a model")
        client = HttpChatClient(config.endpoint, config.model, config.api_key_env, config.temperature, config.timeout)

    transcript = Transcript()
    context = build_context(prompt, bounds)
    transcript.messages.extend(dict(m) for m in context)
    best: SceneState | None = None
    solved: SceneState | None = None
    attempts = 0
    enrich_left = config.max_enrichment_rounds
    budget = config.max_retries + 1
    while True:
        if config.offline:
            response = program_text
        else:
            response = client.complete(context)
        transcript.add("assistant", response)
        attempts += 1
        # Each round gets its own seed so a retry re-draws random rotations.
        round_seed = seed + len(transcript.rounds)
        outcome = _solve_response(response, catalog, bounds, round_seed, solver_config, backend)
        record = {
            "round": len(transcript.rounds),
            "after_message": len(transcript.messages),
            "ok": outcome.ok,
            "program_hash": program_hash(response),
            "seed": round_seed,
            "report": outcome.report.to_json() if outcome.report else None,
        }
        transcript.rounds.append(record)
        if outcome.ok:
            solved = outcome.scene
            report = success_report(outcome.scene, backend, prompt=prompt, seed=round_seed, samples=config.stability_samples)
            record["report"] = report.to_json()
            more = enrich_left > 0 and not config.offline
            feedback = SUCCESS_TEMPLATE.format(feedback=report.text.rstrip(".")) + (ENRICH_REQUEST if more else "")
            transcript.add("user", feedback)
            if not more:
                return solved, transcript
            enrich_left -= 1
            budget = attempts + config.max_retries + 1
        else:
            if solved is None and (best is None or len(outcome.scene) >= len(best)):
                best = outcome.scene
            feedback = FEEDBACK_TEMPLATE.format(feedback=outcome.report.text.rstrip("."))
            if config.offline or attempts >= budget:
                if solved is not None:
                    return solved, transcript
                raise ExhaustedRetries(attempts, best, transcript)
            transcript.add("user", feedback)
        context = build_context(prompt, bounds, response, feedback, context[0]["content"])
