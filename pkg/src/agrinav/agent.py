"""Decision layer: subtask decomposition, prompt assembly, policies, parsing.

Every policy, scripted or remote, answers with the same four tagged
sections (recall / observe / decide / action) so the output parser is a
single code path for the whole harness.
"""

from __future__ import annotations

import base64
import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import requests

from .geometry import Image, png_bytes
from .simulator import ActionType, normalize_angle, steer_towards, waypoint_controller

TAG_NAMES = ("recall", "observe", "decide", "action")
DEFAULT_HISTORY_WINDOW = 3
_PLACEHOLDERS = {"instruction", "subtasks", "history", "step"}


class EmptyInstruction(ValueError):
    """Instruction text was empty or whitespace."""


class UnresolvedPlaceholder(ValueError):
    """A prompt template references a placeholder outside the fixed set."""


class MissingActionTag(ValueError):
    """Model output carries no <action> section."""


class InvalidAction(ValueError):
    """The <action> token is not one of the four actions."""


class MissingSection(ValueError):
    """A non-action tagged section is absent (strict parsing only)."""


class EndpointUnreachable(RuntimeError):
    """Remote policy endpoint failed after the retry."""


class ModelRefusal(RuntimeError):
    """Remote policy returned no parseable text."""


class PolicyKind(str, Enum):
    SCRIPTED_ORACLE = "scripted_oracle"
    RANDOM = "random"
    FIXED = "fixed"
    REMOTE = "remote"


# ---------------------------------------------------------------------------
# Subtask decomposition
# ---------------------------------------------------------------------------


@dataclass
class SubtaskList:
    subtasks: list[str]
    cursor: int = 0

    def __post_init__(self) -> None:
        if not self.subtasks:
            raise ValueError("subtask list must be non-empty")
        if not 0 <= self.cursor < len(self.subtasks):
            raise ValueError("cursor must index a subtask")


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
_CLAUSE_SPLIT = re.compile(r",\s*then\b|\band then\b|;\s*", re.IGNORECASE)


def decompose_instruction(w: str) -> SubtaskList:
    """Rule-based splitter: sentences first, then then/and-then/; clauses."""
    if not w or not w.strip():
        raise EmptyInstruction("instruction must be non-empty")
    pieces: list[str] = []
    for sentence in _SENTENCE_SPLIT.split(w.strip()):
        for clause in _CLAUSE_SPLIT.split(sentence):
            clause = clause.strip(" \t,.;")
            if clause:
                pieces.append(clause)
    if not pieces:
        raise EmptyInstruction("instruction contains no content")
    return SubtaskList(pieces)


# ---------------------------------------------------------------------------
# Prompt template and request assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PromptTemplate:
    system_text: str
    user_text: str

    def __post_init__(self) -> None:
        for name in re.findall(r"\{\{(\w+)\}\}", self.system_text + self.user_text):
            if name not in _PLACEHOLDERS:
                raise UnresolvedPlaceholder(f"unknown placeholder {{{{{name}}}}}")


DEFAULT_TEMPLATE = PromptTemplate(
    system_text=(
        "You control a small wheeled agricultural robot. Each turn you may "
        "receive spatial memory images of the scene rendered from an earlier "
        "exploration pass, followed by recent camera frames. Follow the "
        "navigation instruction step by step. Respond with exactly four "
        "sections in this order and nothing else:\n"
        "<recall>what the spatial memory tells you about the scene</recall>\n"
        "<observe>what the current camera frames show</observe>\n"
        "<decide>why you pick the next move</decide>\n"
        "<action>FORWARD or LEFT_ROTATE or RIGHT_ROTATE or STOP</action>"
    ),
    user_text=(
        "Instruction: {{instruction}}\n"
        "Subtasks:\n{{subtasks}}\n"
        "Current step: {{step}}\n"
        "Attached: {{history}}\n"
        "Pick the single best low-level action."
    ),
)


def load_template(path) -> PromptTemplate:
    """Template file: UTF-8 text, a line of '---' separates system and user."""
    text = open(path, encoding="utf-8").read()
    if "\n---\n" not in text:
        raise ValueError("template file needs a '---' line between system and user parts")
    system_text, user_text = text.split("\n---\n", 1)
    return PromptTemplate(system_text.strip(), user_text.strip())


@dataclass(frozen=True)
class ModelRequest:
    system: str
    parts: tuple[dict, ...]

    def to_payload(self) -> dict:
        return {"system": self.system, "parts": [dict(p) for p in self.parts]}

    def to_json(self) -> str:
        return json.dumps(self.to_payload(), sort_keys=True, separators=(",", ":"))

    def image_count(self) -> int:
        return sum(1 for p in self.parts if p.get("type") == "image")


def _render_placeholders(text: str, values: dict[str, str]) -> str:
    out = text
    for name, value in values.items():
        out = out.replace("{{" + name + "}}", value)
    leftover = re.search(r"\{\{(\w+)\}\}", out)
    if leftover:
        raise UnresolvedPlaceholder(f"placeholder {{{{{leftover.group(1)}}}}} left unresolved")
    return out


def build_request(
    p: PromptTemplate,
    memory: Sequence[Image],
    s: SubtaskList,
    recent_frames: Sequence,
    step: int,
    *,
    history_window: int = DEFAULT_HISTORY_WINDOW,
    instruction: str = "",
) -> ModelRequest:
    """Assemble the deterministic multimodal request for one decision.

    Memory images come first, labeled as spatial memory, then the last
    `history_window` frames ending with the current observation.
    """
    if not recent_frames:
        raise ValueError("build_request needs at least the current frame")
    window = list(recent_frames)[-history_window:]
    subtask_lines = "\n".join(
        f"{'>' if i == s.cursor else ' '} {i + 1}. {text}" for i, text in enumerate(s.subtasks)
    )
    history_note = []
    if memory:
        history_note.append(f"{len(memory)} spatial memory image(s)")
    history_note.append(
        "camera frames for steps " + ", ".join(str(f.step_index) for f in window)
    )
    values = {
        "instruction": instruction or " ".join(s.subtasks),
        "subtasks": subtask_lines,
        "step": str(step),
        "history": "; ".join(history_note),
    }
    parts: list[dict] = [{"type": "text", "data": _render_placeholders(p.user_text, values)}]
    for i, img in enumerate(memory):
        label = ("frontal", "oblique")[i] if len(memory) == 2 else f"view {i + 1}"
        parts.append({"type": "text", "data": f"Spatial memory image ({label}):"})
        parts.append({"type": "image", "data": base64.b64encode(png_bytes(img)).decode("ascii")})
    for f in window:
        parts.append({"type": "text", "data": f"Camera frame, step {f.step_index}:"})
        parts.append(
            {"type": "image", "data": base64.b64encode(png_bytes(f.image)).decode("ascii")}
        )
    return ModelRequest(system=_render_placeholders(p.system_text, values), parts=tuple(parts))


# ---------------------------------------------------------------------------
# Output parsing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelOutput:
    raw: str
    action: ActionType
    memory_thought: str
    decision_thought: str
    observation_thought: str


_ACTION_LOOKUP = {a.value: a for a in ActionType}


def compose_output(
    action: ActionType, recall: str = "", observe: str = "", decide: str = ""
) -> str:
    """Inverse of parse_output for well-formed section texts."""
    return (
        f"<recall>{recall}</recall>\n"
        f"<observe>{observe}</observe>\n"
        f"<decide>{decide}</decide>\n"
        f"<action>{action.value}</action>"
    )


def _section(raw: str, tag: str) -> str | None:
    m = re.search(rf"<{tag}>(.*?)</{tag}>", raw, re.DOTALL)
    return m.group(1) if m else None


def parse_output(raw: str, *, lenient: bool = False) -> ModelOutput:
    """Extract the four tagged sections; first match wins per tag.

    The action token is trimmed, case-folded and space/dash-normalized and
    must name exactly one of the four actions. In strict mode a missing
    recall/observe/decide section raises MissingSection; lenient mode
    substitutes an empty string.
    """
    action_text = _section(raw, "action")
    if action_text is None:
        raise MissingActionTag("no <action>...</action> section found")
    token = re.sub(r"[\s\-]+", "_", action_text.strip()).upper()
    if token not in _ACTION_LOOKUP:
        raise InvalidAction(f"action token {action_text.strip()!r} is not a valid action")
    sections = {}
    for tag in ("recall", "observe", "decide"):
        text = _section(raw, tag)
        if text is None:
            if not lenient:
                raise MissingSection(f"missing <{tag}> section")
            text = ""
        sections[tag] = text
    return ModelOutput(
        raw=raw,
        action=_ACTION_LOOKUP[token],
        memory_thought=sections["recall"],
        decision_thought=sections["decide"],
        observation_thought=sections["observe"],
    )


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


@dataclass
class PolicyContext:
    """Mutable per-episode state handed to decide().

    The runner refreshes pose before every call. The scripted oracle owns
    the waypoint cursor; sensing_range / bearing_noise model an impaired
    robot, and memory_hint (from the spatial memory pathway) gives the
    blind oracle a direction worth walking in.
    """

    rng: object | None = None  # random.Random
    pose: tuple[float, float, float] | None = None  # x, y, heading
    waypoints: tuple[tuple[float, float], ...] = ()
    cursor: int = 0
    waypoint_radius: float = 1.0
    bearing_tolerance: float = math.radians(15.0)
    sensing_range: float = math.inf
    bearing_noise: float = 0.0
    memory_hint: tuple[float, float] | None = None
    endpoint: str | None = None
    transport: Callable[[dict], dict] | None = None
    request_timeout: float = 60.0


def _oracle_decide(ctx: PolicyContext) -> str:
    x, y, heading = ctx.pose
    if ctx.cursor >= len(ctx.waypoints):
        return compose_output(ActionType.STOP, "route complete", "at goal", "all waypoints done")
    d = math.dist((x, y), ctx.waypoints[ctx.cursor])
    if d <= ctx.sensing_range:
        action, ctx.cursor = waypoint_controller(
            x,
            y,
            heading,
            ctx.waypoints,
            ctx.cursor,
            waypoint_radius=ctx.waypoint_radius,
            bearing_tolerance=ctx.bearing_tolerance,
            bearing_jitter=ctx.bearing_noise,
            rng=ctx.rng,
        )
        done = ctx.cursor >= len(ctx.waypoints)
        recall = "waypoint in sensing range"
        observe = f"waypoint {min(ctx.cursor, len(ctx.waypoints) - 1) + 1} at {d:.2f} m"
        decide = "arrived, stopping" if done else "tracking current waypoint"
        return compose_output(action, recall, observe, decide)
    if ctx.memory_hint is not None and math.dist((x, y), ctx.memory_hint) > 1.0:
        action = steer_towards(
            x, y, heading, ctx.memory_hint, bearing_tolerance=ctx.bearing_tolerance
        )
        return compose_output(
            action,
            "spatial memory centroid gives a direction",
            f"waypoint beyond sensing range ({d:.2f} m)",
            "walking toward the remembered scene center",
        )
    r = ctx.rng.random() if ctx.rng is not None else 0.5
    if r < 0.15:
        action = ActionType.LEFT_ROTATE
    elif r < 0.3:
        action = ActionType.RIGHT_ROTATE
    else:
        action = ActionType.FORWARD
    return compose_output(
        action, "no usable memory", f"waypoint beyond sensing range ({d:.2f} m)", "wandering"
    )


def http_decide_transport(endpoint: str, timeout: float = 60.0) -> Callable[[dict], dict]:
    url = endpoint.rstrip("/") + "/decide"

    def transport(payload: dict) -> dict:
        resp = requests.post(url, json=payload, timeout=timeout)
        resp.raise_for_status()
        return resp.json()

    return transport


def _remote_decide(request: ModelRequest, ctx: PolicyContext) -> str:
    transport = ctx.transport
    if transport is None:
        if not ctx.endpoint:
            raise EndpointUnreachable("remote policy needs an endpoint or transport")
        transport = http_decide_transport(ctx.endpoint, ctx.request_timeout)
    payload = request.to_payload()
    last_exc: Exception | None = None
    for _ in range(2):  # one retry on transport error
        try:
            response = transport(payload)
            break
        except (requests.RequestException, ConnectionError, OSError) as exc:
            last_exc = exc
    else:
        raise EndpointUnreachable(f"remote policy failed after retry: {last_exc}")
    text = response.get("text") if isinstance(response, dict) else None
    if not isinstance(text, str) or not text.strip():
        raise ModelRefusal("remote policy returned no parseable text")
    return text


def decide(kind: PolicyKind, request: ModelRequest, ctx: PolicyContext) -> str:
    """Produce the raw tagged decision text for one step."""
    kind = PolicyKind(kind)
    if kind is PolicyKind.SCRIPTED_ORACLE:
        return _oracle_decide(ctx)
    if kind is PolicyKind.RANDOM:
        action = ctx.rng.choice(list(ActionType))
        return compose_output(action, "n/a", "n/a", "uniform random draw")
    if kind is PolicyKind.FIXED:
        return compose_output(ActionType.FORWARD, "n/a", "n/a", "fixed policy always advances")
    return _remote_decide(request, ctx)
