"""Prompt rendering, response validation and a chat-completion HTTP client.

The decomposition request is rendered as a deterministic text prompt; the
model's reply must be a JSON array of stage records that form contiguous
pre-contact / grasping / post-contact cycles covering the whole trajectory.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import requests

from .segmenter import CYCLE, Decomposition, InteractionPhase, PhaseKind, Source
from .state import ProprioFrame

STAGE_NAMES = {
    "pre-contact": PhaseKind.PRE_CONTACT,
    "grasping": PhaseKind.GRASPING,
    "post-contact": PhaseKind.POST_CONTACT,
}

TASK_TYPE_INSTRUCTIONS = {
    "A": "[Task Type A] Physical interaction phase identification: place the "
         "boundaries at contact events such as grasping and releasing, using the "
         "gripper state and joint velocity signals.",
    "B": "[Task Type B] Language instruction task phase analysis: align the "
         "phases with the sub-goals implied by the task instruction.",
    "C": "[Task Type C] Anomaly detection and phase re-labeling: if a phase "
         "looks failed or interrupted, re-label the affected span accordingly.",
    "D": "[Task Type D] Multi-modal cooperative understanding: combine visual "
         "observations with the sensor channels when placing boundaries.",
}


class ResponseValidationError(ValueError):
    """Base class for everything wrong with a decomposition response."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class MalformedJson(ResponseValidationError):
    pass


class UnknownStageName(ResponseValidationError):
    pass


class Overlap(ResponseValidationError):
    pass


class Gap(ResponseValidationError):
    pass


class CycleOrder(ResponseValidationError):
    pass


class RangeMismatch(ResponseValidationError):
    pass


class VlmClientError(RuntimeError):
    pass


class MissingCredential(VlmClientError):
    pass


class Transport(VlmClientError):
    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


class Timeout(VlmClientError):
    pass


@dataclass(frozen=True)
class StageRecord:
    stage: str
    start: int
    end: int
    reason: str = ""

    def to_dict(self) -> dict:
        return {"stage": self.stage, "start": self.start, "end": self.end,
                "reason": self.reason}


@dataclass(frozen=True)
class PromptDocument:
    text: str
    timestep_records: tuple[dict, ...]


def render_prompt(frames: Sequence[ProprioFrame], task_type: str = "A") -> PromptDocument:
    """Deterministic decomposition prompt for a trajectory.

    The rendered text always carries the literal cycle string
    "pre-contact → grasping → post-contact" and the JSON output schema, so the
    reply can be validated by parse_response.
    """
    if len(frames) < 1:
        raise ValueError("need at least one frame to render a prompt")
    if task_type not in TASK_TYPE_INSTRUCTIONS:
        raise ValueError(f"task_type must be one of {sorted(TASK_TYPE_INSTRUCTIONS)}")

    records = tuple(
        {
            "t": f.timestep,
            "sensor": {
                "gripper_state": "open" if f.gripper_open else "closed",
                "joint_velocity": round(f.max_joint_speed, 6),
            },
        }
        for f in frames
    )

    lines = [
        "Task objective:",
        "Review the time-ordered robot data below and split it into its physical",
        "interaction phases. Phases repeat in the fixed order",
        "pre-contact → grasping → post-contact → pre-contact → grasping → post-contact ...",
        "until the task ends.",
        "",
        "Input format:",
        "Each entry is one timestep with the fields t and sensor",
        "(gripper_state, joint_velocity = largest joint speed magnitude).",
        "",
        "Timestep data:",
        json.dumps(list(records), sort_keys=True, separators=(",", ":")),
        "",
        "Output format:",
        "Reply with a JSON array only. Each element must be:",
        '{"stage": "pre-contact" | "grasping" | "post-contact",',
        ' "start": first timestep of the phase (integer, inclusive),',
        ' "end": last timestep of the phase (integer, inclusive),',
        ' "reason": "short justification"}',
        "Phases must be continuous and non-overlapping, cover every timestep,",
        "and follow the cycle order pre-contact → grasping → post-contact.",
        "",
        TASK_TYPE_INSTRUCTIONS[task_type],
        "",
    ]
    return PromptDocument("\n".join(lines), records)


_FENCE_RE = re.compile(r"```(?:[A-Za-z0-9_+-]*)\s*\n(.*?)```", re.DOTALL)


def parse_response(body: str, trajectory_len: int, lenient: bool = False) -> Decomposition:
    """Validate a stage-record reply and build a Decomposition.

    Accepts an optional fenced code block around the JSON. With
    lenient=True, single-frame gaps are repaired by extending the earlier
    phase; everything else stays strict.
    """
    if trajectory_len < 1:
        raise ValueError("trajectory_len must be positive")
    if not isinstance(body, str):
        raise MalformedJson("response body is not text")

    match = _FENCE_RE.search(body)
    payload = match.group(1) if match else body
    try:
        data = json.loads(payload.strip())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedJson(f"response is not valid JSON: {exc}") from exc
    if not isinstance(data, list) or not data:
        raise MalformedJson("response must be a non-empty JSON array")

    records: list[StageRecord] = []
    for i, item in enumerate(data):
        if not isinstance(item, dict):
            raise MalformedJson(f"record {i} is not an object", index=i)
        try:
            stage = item["stage"]
            start = item["start"]
            end = item["end"]
        except KeyError as exc:
            raise MalformedJson(f"record {i} is missing field {exc}", index=i) from exc
        if not isinstance(stage, str):
            raise MalformedJson(f"record {i}: stage must be a string", index=i)
        for name, value in (("start", start), ("end", end)):
            if isinstance(value, bool) or not isinstance(value, int):
                raise MalformedJson(f"record {i}: {name} must be an integer", index=i)
        if start > end:
            raise MalformedJson(f"record {i}: start {start} exceeds end {end}", index=i)
        reason = item.get("reason", "")
        records.append(StageRecord(stage, start, end, reason if isinstance(reason, str) else ""))

    repaired: list[StageRecord] = []
    for i, rec in enumerate(records):
        if rec.stage not in STAGE_NAMES:
            raise UnknownStageName(f"record {i}: unknown stage {rec.stage!r}", index=i)
        expected = CYCLE[i % 3]
        if STAGE_NAMES[rec.stage] is not expected:
            raise CycleOrder(
                f"record {i}: stage {rec.stage!r} breaks the cycle "
                f"(expected {expected.value})", index=i)
        if i > 0:
            prev = repaired[-1]
            if rec.start <= prev.end:
                raise Overlap(
                    f"record {i}: starts at {rec.start} inside the previous "
                    f"phase ending at {prev.end}", index=i)
            if rec.start > prev.end + 1:
                if lenient and rec.start == prev.end + 2:
                    repaired[-1] = StageRecord(prev.stage, prev.start, prev.end + 1,
                                               prev.reason)
                else:
                    raise Gap(
                        f"record {i}: gap between {prev.end} and {rec.start}", index=i)
        repaired.append(rec)

    if len(repaired) % 3 != 0:
        raise CycleOrder(
            f"{len(repaired)} stages do not form whole "
            "pre-contact/grasping/post-contact cycles", index=len(repaired) - 1)
    if repaired[0].start != 0 or repaired[-1].end != trajectory_len - 1:
        raise RangeMismatch(
            f"stages cover [{repaired[0].start}, {repaired[-1].end}], "
            f"trajectory is [0, {trajectory_len - 1}]")

    phases = tuple(
        InteractionPhase(STAGE_NAMES[r.stage], r.start, r.end) for r in repaired
    )
    return Decomposition(phases, Source.VLM)


def records_from_decomposition(decomposition: Decomposition,
                               reason: Optional[str] = None) -> list[StageRecord]:
    """Serialize a decomposition into the stage-record schema."""
    if reason is None:
        reason = "rule-based" if decomposition.source is Source.RULE_BASED else ""
    return [StageRecord(p.kind.value, p.start, p.end, reason)
            for p in decomposition.phases]


def decomposition_to_json(decomposition: Decomposition,
                          reason: Optional[str] = None) -> str:
    records = records_from_decomposition(decomposition, reason)
    return json.dumps([r.to_dict() for r in records], indent=2)


@dataclass(frozen=True)
class EndpointConfig:
    """Where and how to reach the chat-completion endpoint.

    The credential is looked up in the environment variable named by
    credential_env; it is never stored in config files.
    """

    url: str = ""
    model: str = "gpt-4o"
    credential_env: str = "VLM_API_KEY"
    timeout_s: float = 30.0
    max_retries: int = 3
    temperature: float = 0.0
    backoff_s: float = 0.25
    extra_headers: dict = field(default_factory=dict)


def call_chat_endpoint(prompt: PromptDocument, config: EndpointConfig) -> str:
    """Send the prompt as one user message; return the raw assistant text.

    Retries transient transport failures (connection errors, HTTP 5xx) with
    exponential backoff; client errors (4xx) fail immediately.
    """
    if not config.url:
        raise VlmClientError("endpoint URL is not configured")
    credential = os.environ.get(config.credential_env, "")
    if not credential:
        raise MissingCredential(
            f"environment variable {config.credential_env} is unset or empty")

    headers = {"Authorization": f"Bearer {credential}",
               "Content-Type": "application/json"}
    headers.update(config.extra_headers)
    payload = {
        "model": config.model,
        "messages": [{"role": "user", "content": prompt.text}],
        "temperature": config.temperature,
    }

    last_error: VlmClientError = Transport("no attempt made")
    for attempt in range(config.max_retries + 1):
        if attempt > 0:
            time.sleep(config.backoff_s * (2.0 ** (attempt - 1)))
        try:
            response = requests.post(config.url, json=payload, headers=headers,
                                     timeout=config.timeout_s)
        except requests.Timeout:
            last_error = Timeout(f"request timed out after {config.timeout_s}s")
            continue
        except requests.RequestException as exc:
            last_error = Transport(f"transport failure: {exc}")
            continue
        if response.status_code >= 500:
            last_error = Transport(f"server error {response.status_code}",
                                   status=response.status_code)
            continue
        if response.status_code >= 400:
            raise Transport(f"client error {response.status_code}: {response.text[:200]}",
                            status=response.status_code)
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise Transport(f"unexpected response shape: {exc}",
                            status=response.status_code) from exc
        if not isinstance(content, str):
            raise Transport("assistant content is not text", status=response.status_code)
        return content
    raise last_error
