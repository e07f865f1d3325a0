"""Episode runner: pre-exploration memory building and the decision loop.

One run is perceive -> assemble request -> decide -> parse -> act, ending
on STOP, on deviation from the label sequence, or at the step limit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .agent import (
    DEFAULT_TEMPLATE,
    ModelOutput,
    PolicyContext,
    PolicyKind,
    PromptTemplate,
    build_request,
    decide,
    decompose_instruction,
    parse_output,
)
from .geometry import Intrinsics
from .simulator import (
    ActionType,
    DynamicsConfig,
    Episode,
    Pose2D,
    RobotState,
    World,
    render_frame,
    step,
)
from .spatial_memory import (
    MemoryBank,
    MemoryRenderConfig,
    MemorySelection,
    ReconstructorConfig,
    SpatialMemory,
    reconstruct,
    render_memory,
    sample_frames,
)

log = logging.getLogger(__name__)


class PolicyFailure(RuntimeError):
    """decide/parse failed even after the retry."""


@dataclass(frozen=True)
class RunnerConfig:
    tau: int = 3
    max_steps: int = 50
    success_radius: float = 3.0
    memory_selection: MemorySelection = MemorySelection.NONE
    q: int = 10
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    history_window: int = 3
    deviation_enabled: bool = True
    deviation_min_mismatches: int | None = None  # None = whole window must differ
    frame_width: int = 128
    frame_height: int = 72
    hfov_deg: float = 90.0
    reconstructor: ReconstructorConfig = field(default_factory=ReconstructorConfig)
    memory_key_mode: str = "scene_instruction"  # or "scene"
    frontal_pitch_deg: float = 0.0
    oblique_pitch_deg: float = 45.0

    def __post_init__(self) -> None:
        if self.tau < 1 or self.max_steps < 1:
            raise ValueError("tau and max_steps must be >= 1")
        if self.success_radius <= 0:
            raise ValueError("success_radius must be positive")
        if self.memory_key_mode not in ("scene_instruction", "scene"):
            raise ValueError("memory_key_mode must be 'scene_instruction' or 'scene'")

    def intrinsics(self) -> Intrinsics:
        return Intrinsics.from_fov(self.frame_width, self.frame_height, self.hfov_deg)


@dataclass(frozen=True)
class StepLog:
    step: int
    action: ActionType
    memory_thought: str
    decision_thought: str
    latency: float  # milliseconds


@dataclass(frozen=True)
class EpisodeResult:
    episode_id: str
    scene_class: str
    trajectory: tuple[Pose2D, ...]
    steps: tuple[ModelOutput, ...]
    final_pose: Pose2D
    termination: str  # "stopped" | "deviated" | "step_limit"
    ne: float
    success: bool
    subtasks_completed: int
    subtask_total: int
    memory_hit: bool
    collisions: int
    memory_selection: str
    failure: str | None = None


def memory_key(world: World, episode: Episode, mode: str = "scene_instruction") -> str:
    """Bank key: scene id plus (by default) an instruction digest."""
    base = f"{world.scene_class.value}-{world.seed}"
    if mode == "scene":
        return base
    digest = hashlib.sha256(episode.instruction.encode()).hexdigest()[:12]
    return f"{base}-{digest}"


def check_deviation(
    predicted: Sequence[ActionType],
    labels: Sequence[ActionType],
    tau: int,
    *,
    min_mismatches: int | None = None,
) -> bool:
    """True iff the last tau+1 predictions all differ from the labels.

    Needs at least tau+1 elapsed steps; positions beyond the label sequence
    never count as mismatches (label exhaustion cannot trigger deviation).
    With min_mismatches set, that many mismatches in the window suffice.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    window = tau + 1
    if len(predicted) < window:
        return False
    needed = window if min_mismatches is None else min_mismatches
    mismatches = 0
    for j in range(len(predicted) - window, len(predicted)):
        if j >= len(labels):
            return False
        if predicted[j] != labels[j]:
            mismatches += 1
    return mismatches >= needed


def replay_frames(world: World, episode: Episode, cfg: RunnerConfig, actions=None) -> list:
    """Render the frame sequence seen along a (label) trajectory."""
    actions = list(actions if actions is not None else episode.label_actions)
    k = cfg.intrinsics()
    state = RobotState(episode.start)
    frames = [
        render_frame(world, state, k, camera_height=cfg.dynamics.camera_height, step_index=0)
    ]
    for t, action in enumerate(actions, start=1):
        if action is ActionType.STOP:
            break
        state = step(world, state, action, cfg.dynamics)
        frames.append(
            render_frame(world, state, k, camera_height=cfg.dynamics.camera_height, step_index=t)
        )
    return frames


def pre_explore(
    world: World,
    episode: Episode,
    cfg: RunnerConfig,
    bank: MemoryBank,
    *,
    actions: Sequence[ActionType] | None = None,
) -> SpatialMemory:
    """Replay a trajectory, reconstruct, render and store spatial memory."""
    frames = replay_frames(world, episode, cfg, actions)
    sampled = sample_frames(frames, cfg.q)
    recon = reconstruct(sampled, cfg.reconstructor)
    key = memory_key(world, episode, cfg.memory_key_mode)
    memory = render_memory(
        recon,
        MemoryRenderConfig(
            viewpoint_x=episode.start.x,
            viewpoint_y=episode.start.y,
            viewpoint_yaw=episode.start.heading,
            frontal_pitch_deg=cfg.frontal_pitch_deg,
            oblique_pitch_deg=cfg.oblique_pitch_deg,
            camera_height=cfg.dynamics.camera_height,
            scene_key=key,
        ),
    )
    bank.store(key, memory)
    return memory


def _seeded_rng(run_seed: int, episode_id: str) -> random.Random:
    digest = hashlib.sha256(f"{run_seed}:{episode_id}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "little"))


def default_context(
    policy: PolicyKind,
    episode: Episode,
    *,
    run_seed: int = 0,
    endpoint: str | None = None,
    options: dict | None = None,
) -> PolicyContext:
    opts = dict(options or {})
    return PolicyContext(
        rng=_seeded_rng(run_seed, episode.id),
        waypoints=tuple(episode.subtask_waypoints),
        cursor=0,
        waypoint_radius=float(opts.get("waypoint_radius", 1.0)),
        sensing_range=float(opts.get("sensing_range", float("inf"))),
        bearing_noise=float(opts.get("bearing_noise", 0.0)),
        endpoint=endpoint,
    )


def run_episode(
    world: World,
    episode: Episode,
    cfg: RunnerConfig,
    policy: PolicyKind,
    bank: MemoryBank | None = None,
    *,
    ctx: PolicyContext | None = None,
    run_seed: int = 0,
    template: PromptTemplate = DEFAULT_TEMPLATE,
) -> EpisodeResult:
    """Run one episode to termination and score it."""
    from .evaluation import independent_success, navigation_error, success  # local: avoid cycle

    policy = PolicyKind(policy)
    if ctx is None:
        ctx = default_context(policy, episode, run_seed=run_seed)

    memory_images: list = []
    memory_hit = False
    if bank is not None and cfg.memory_selection is not MemorySelection.NONE:
        key = memory_key(world, episode, cfg.memory_key_mode)
        memory_images, meta = bank.load_with_meta(key, cfg.memory_selection)
        memory_hit = meta is not None
        if not memory_hit:
            log.warning("memory miss for key %s; running memoryless", key)
        elif meta.get("centroid"):
            ctx.memory_hint = (float(meta["centroid"][0]), float(meta["centroid"][1]))

    subtasks = decompose_instruction(episode.instruction)
    k = cfg.intrinsics()
    state = RobotState(episode.start)
    trajectory: list[Pose2D] = [state.pose]
    outputs: list[ModelOutput] = []
    step_logs: list[StepLog] = []
    predicted: list[ActionType] = []
    frames: list = []
    collisions = 0
    termination = "step_limit"
    failure: str | None = None

    for t in range(1, cfg.max_steps + 1):
        frames.append(
            render_frame(world, state, k, camera_height=cfg.dynamics.camera_height, step_index=t)
        )
        ctx.pose = (state.pose.x, state.pose.y, state.pose.heading)
        subtasks.cursor = min(ctx.cursor, len(subtasks.subtasks) - 1)
        request = build_request(
            template,
            memory_images,
            subtasks,
            frames,
            t,
            history_window=cfg.history_window,
            instruction=episode.instruction,
        )
        started = time.perf_counter()
        out: ModelOutput | None = None
        for attempt in (0, 1):
            try:
                raw = decide(policy, request, ctx)
                out = parse_output(raw, lenient=True)
                break
            except Exception as exc:  # noqa: BLE001 - any decide/parse error retries once
                if attempt == 1:
                    failure = f"{type(exc).__name__}: {exc}"
        if out is None:
            log.error("episode %s: policy failed at step %d (%s)", episode.id, t, failure)
            termination = "step_limit"
            break
        latency_ms = (time.perf_counter() - started) * 1000.0
        outputs.append(out)
        predicted.append(out.action)
        step_logs.append(StepLog(t, out.action, out.memory_thought, out.decision_thought, latency_ms))

        state = step(world, state, out.action, cfg.dynamics)
        trajectory.append(state.pose)
        if state.collided:
            collisions += 1
        if out.action is ActionType.STOP:
            termination = "stopped"
            break
        if cfg.deviation_enabled and check_deviation(
            predicted, episode.label_actions, cfg.tau, min_mismatches=cfg.deviation_min_mismatches
        ):
            termination = "deviated"
            break
    final_pose = trajectory[-1]
    ne = navigation_error((final_pose.x, final_pose.y), episode.target)
    completed, total = independent_success(
        trajectory, episode.subtask_waypoints, cfg.success_radius
    )
    return EpisodeResult(
        episode_id=episode.id,
        scene_class=episode.scene_class.value,
        trajectory=tuple(trajectory),
        steps=tuple(outputs),
        final_pose=final_pose,
        termination=termination,
        ne=ne,
        success=success(ne, cfg.success_radius),
        subtasks_completed=completed,
        subtask_total=total,
        memory_hit=memory_hit,
        collisions=collisions,
        memory_selection=cfg.memory_selection.value,
        failure=failure,
    )


# ---------------------------------------------------------------------------
# Result and trace serialization
# ---------------------------------------------------------------------------


def result_to_dict(result: EpisodeResult) -> dict:
    return {
        "episode_id": result.episode_id,
        "scene_class": result.scene_class,
        "trajectory": [[p.x, p.y, p.heading] for p in result.trajectory],
        "steps": [
            {
                "t": i + 1,
                "action": out.action.value,
                "recall": out.memory_thought,
                "observe": out.observation_thought,
                "decide": out.decision_thought,
            }
            for i, out in enumerate(result.steps)
        ],
        "final_pose": [result.final_pose.x, result.final_pose.y, result.final_pose.heading],
        "termination": result.termination,
        "ne": result.ne,
        "success": result.success,
        "subtasks_completed": result.subtasks_completed,
        "subtask_total": result.subtask_total,
        "memory_hit": result.memory_hit,
        "collisions": result.collisions,
        "memory_selection": result.memory_selection,
        "failure": result.failure,
    }


def result_from_dict(data: dict) -> EpisodeResult:
    from .agent import compose_output  # deferred import keeps module load light

    steps = tuple(
        parse_output(
            compose_output(ActionType(s["action"]), s["recall"], s["observe"], s["decide"]),
            lenient=True,
        )
        for s in data["steps"]
    )
    trajectory = tuple(Pose2D(*p) for p in data["trajectory"])
    return EpisodeResult(
        episode_id=data["episode_id"],
        scene_class=data["scene_class"],
        trajectory=trajectory,
        steps=steps,
        final_pose=Pose2D(*data["final_pose"]),
        termination=data["termination"],
        ne=float(data["ne"]),
        success=bool(data["success"]),
        subtasks_completed=int(data["subtasks_completed"]),
        subtask_total=int(data["subtask_total"]),
        memory_hit=bool(data["memory_hit"]),
        collisions=int(data["collisions"]),
        memory_selection=data["memory_selection"],
        failure=data.get("failure"),
    )


def write_result(path: Path | str, result: EpisodeResult) -> None:
    Path(path).write_text(json.dumps(result_to_dict(result), indent=2, sort_keys=True))


def read_result(path: Path | str) -> EpisodeResult:
    return result_from_dict(json.loads(Path(path).read_text()))


def write_trace(path: Path | str, result: EpisodeResult) -> None:
    """One JSON line per step: id, t, action, thoughts, post-action pose."""
    lines = []
    for i, out in enumerate(result.steps):
        pose = result.trajectory[i + 1]
        lines.append(
            json.dumps(
                {
                    "episode_id": result.episode_id,
                    "t": i + 1,
                    "action": out.action.value,
                    "recall": out.memory_thought,
                    "decide": out.decision_thought,
                    "pose": [pose.x, pose.y, pose.heading],
                },
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
