"""Deterministic planar agricultural worlds with a ray-cast RGB-D camera.

A world is a bounded plane scattered with colored vertical cylinders,
flat everywhere except mountain scenes where a seeded height table adds
gentle relief. The robot moves with four discrete actions and carries a
forward camera at a fixed height above the local ground.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import CameraPose, Image, Intrinsics

SKY_COLOR = (135, 190, 235)
MAX_RANGE = 80.0
DEFAULT_CAMERA_HEIGHT = 0.38
BEARING_TOLERANCE = math.radians(15.0)
_CORRIDOR_MARGIN = 2.0
_RAY_EPS = 0.05


class SteppedAfterStop(RuntimeError):
    """The dynamics were advanced after the robot already stopped."""


class UnreachableTarget(RuntimeError):
    """Episode generation could not route a label trajectory."""


class ActionType(Enum):
    FORWARD = "FORWARD"
    LEFT_ROTATE = "LEFT_ROTATE"
    RIGHT_ROTATE = "RIGHT_ROTATE"
    STOP = "STOP"


class SceneClass(str, Enum):
    FARM = "farm"
    GREENHOUSE = "greenhouse"
    FOREST = "forest"
    MOUNTAIN = "mountain"
    GARDEN = "garden"
    VILLAGE = "village"


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(a, math.tau)
    if a <= -math.pi:
        a += math.tau
    return a


def stable_u64(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float


@dataclass(frozen=True)
class DynamicsConfig:
    forward_step: float = 0.5
    rotate_step: float = math.radians(30.0)
    camera_height: float = DEFAULT_CAMERA_HEIGHT


@dataclass(frozen=True)
class RobotState:
    pose: Pose2D
    collided: bool = False
    stopped: bool = False


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float]
    radius: float
    height: float
    color: tuple[int, int, int]


@dataclass(frozen=True)
class TerrainTable:
    """Sampled height field over the world bounds, bilinear between nodes."""

    x0: float
    y0: float
    step: float
    grid: np.ndarray  # (ny, nx)

    def height(self, x, y):
        gx = np.clip((np.asarray(x, dtype=np.float64) - self.x0) / self.step, 0, self.grid.shape[1] - 1.001)
        gy = np.clip((np.asarray(y, dtype=np.float64) - self.y0) / self.step, 0, self.grid.shape[0] - 1.001)
        ix = gx.astype(np.int64)
        iy = gy.astype(np.int64)
        fx = gx - ix
        fy = gy - iy
        g = self.grid
        top = g[iy, ix] * (1 - fx) + g[iy, ix + 1] * fx
        bot = g[iy + 1, ix] * (1 - fx) + g[iy + 1, ix + 1] * fx
        return top * (1 - fy) + bot * fy


@dataclass(frozen=True)
class World:
    seed: int
    scene_class: SceneClass
    obstacles: tuple[Obstacle, ...]
    ground_color: tuple[int, int, int]
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    terrain: TerrainTable | None = None

    @property
    def key(self) -> str:
        return f"{self.scene_class.value}-{self.seed}"

    def contains(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= x <= xmax and ymin <= y <= ymax

    def terrain_height(self, x: float, y: float) -> float:
        if self.terrain is None:
            return 0.0
        return float(self.terrain.height(x, y))


@dataclass(frozen=True)
class Episode:
    id: str
    scene_class: SceneClass
    instruction: str
    start: Pose2D
    target: tuple[float, float]
    label_actions: tuple[ActionType, ...]
    subtask_waypoints: tuple[tuple[float, float], ...]
    subtask_count: int

    def __post_init__(self) -> None:
        if not self.label_actions or self.label_actions[-1] is not ActionType.STOP:
            raise ValueError("label_actions must end with STOP")
        if len(self.subtask_waypoints) != self.subtask_count:
            raise ValueError("subtask_waypoints length must equal subtask_count")


@dataclass(frozen=True)
class Frame:
    """One posed RGB-D observation. Depth 0 encodes 'no surface' (sky)."""

    step_index: int
    image: Image
    depth: np.ndarray
    pose: CameraPose
    intrinsics: Intrinsics


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------


def _segment_hits_circle(p0, p1, center, radius: float) -> bool:
    ax, ay = p0
    bx, by = p1
    cx, cy = center
    abx, aby = bx - ax, by - ay
    denom = abx * abx + aby * aby
    if denom == 0:
        t = 0.0
    else:
        t = max(0.0, min(1.0, ((cx - ax) * abx + (cy - ay) * aby) / denom))
    qx, qy = ax + t * abx, ay + t * aby
    return math.hypot(qx - cx, qy - cy) <= radius


def step(world: World, state: RobotState, action: ActionType, cfg: DynamicsConfig) -> RobotState:
    """Advance the robot one action. Blocked FORWARD sets collided=True."""
    if state.stopped:
        raise SteppedAfterStop("episode already emitted STOP")
    pose = state.pose
    if action is ActionType.STOP:
        return RobotState(pose, collided=False, stopped=True)
    if action is ActionType.LEFT_ROTATE:
        return RobotState(Pose2D(pose.x, pose.y, normalize_angle(pose.heading + cfg.rotate_step)))
    if action is ActionType.RIGHT_ROTATE:
        return RobotState(Pose2D(pose.x, pose.y, normalize_angle(pose.heading - cfg.rotate_step)))
    nx = pose.x + cfg.forward_step * math.cos(pose.heading)
    ny = pose.y + cfg.forward_step * math.sin(pose.heading)
    blocked = not world.contains(nx, ny) or any(
        _segment_hits_circle((pose.x, pose.y), (nx, ny), ob.center, ob.radius)
        for ob in world.obstacles
    )
    if blocked:
        return RobotState(pose, collided=True)
    return RobotState(Pose2D(nx, ny, pose.heading))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_frame(
    world: World,
    state: RobotState,
    k: Intrinsics,
    *,
    camera_height: float = DEFAULT_CAMERA_HEIGHT,
    step_index: int = 0,
) -> Frame:
    """Ray-cast one RGB-D frame from the robot's forward camera.

    One ray per pixel; nearest cylinder or ground hit wins the pixel, sky
    elsewhere. Exploits vertical cylinders + zero camera pitch: the hit
    distance of a cylinder is constant down a pixel column, so each
    obstacle paints a column interval against a per-pixel depth test.
    """
    x, y, heading = state.pose.x, state.pose.y, state.pose.heading
    cz = world.terrain_height(x, y) + camera_height
    w, h = k.width, k.height

    fwd = (math.cos(heading), math.sin(heading))
    right = (math.sin(heading), -math.cos(heading))
    a = (np.arange(w) - k.center_x) / k.focal_x  # per-column lateral slope
    dir_x = fwd[0] + right[0] * a
    dir_y = fwd[1] + right[1] * a
    k_v = (np.arange(h) - k.center_y) / k.focal_y  # per-row downward slope

    color = np.empty((h, w, 3), dtype=np.uint8)
    color[:] = np.asarray(SKY_COLOR, dtype=np.uint8)
    depth_w = np.full((h, w), np.inf)

    if world.terrain is None:
        down = k_v > 1e-9
        s_row = np.full(h, np.inf)
        s_row[down] = cz / k_v[down]
        hit = np.isfinite(s_row) & (s_row <= MAX_RANGE)
        depth_w[hit, :] = s_row[hit, None]
        color[hit, :] = np.asarray(world.ground_color, dtype=np.uint8)
    else:
        _paint_terrain(world, x, y, cz, dir_x, dir_y, k_v, depth_w, color)

    rows = np.arange(h)[:, None]
    for ob in world.obstacles:
        cxr, cyr = ob.center[0] - x, ob.center[1] - y
        quad_a = dir_x * dir_x + dir_y * dir_y
        quad_b = dir_x * cxr + dir_y * cyr
        quad_c = cxr * cxr + cyr * cyr - ob.radius * ob.radius
        disc = quad_b * quad_b - quad_a * quad_c
        ok = disc > 0
        if not ok.any():
            continue
        s = np.full(w, np.inf)
        s[ok] = (quad_b[ok] - np.sqrt(disc[ok])) / quad_a[ok]
        cols = np.nonzero(ok & (s > _RAY_EPS) & (s <= MAX_RANGE))[0]
        if cols.size == 0:
            continue
        s_c = s[cols]
        z0 = world.terrain_height(*ob.center)
        z1 = z0 + ob.height
        v_lo = np.ceil(k.center_y + k.focal_y * (cz - z1) / s_c).astype(np.int64)
        v_hi = np.floor(k.center_y + k.focal_y * (cz - z0) / s_c).astype(np.int64)
        sub_d = depth_w[:, cols]
        win = (rows >= v_lo[None, :]) & (rows <= v_hi[None, :]) & (s_c[None, :] < sub_d)
        if not win.any():
            continue
        sub_d[win] = np.broadcast_to(s_c[None, :], sub_d.shape)[win]
        depth_w[:, cols] = sub_d
        sub_c = color[:, cols]
        sub_c[win] = np.asarray(ob.color, dtype=np.uint8)
        color[:, cols] = sub_c

    depth = np.where(np.isfinite(depth_w), depth_w, 0.0).astype(np.float32)
    pose = CameraPose(position=(x, y, cz), yaw=heading, pitch=0.0)
    return Frame(step_index=step_index, image=Image(color), depth=depth, pose=pose, intrinsics=k)


def _paint_terrain(world, x, y, cz, dir_x, dir_y, k_v, depth_w, color) -> None:
    """March terrain ground hits per column (mountain scenes)."""
    s_samples = np.linspace(0.2, MAX_RANGE, 240)
    px = x + dir_x[:, None] * s_samples[None, :]
    py = y + dir_y[:, None] * s_samples[None, :]
    t = world.terrain.height(px, py)  # (W, S)
    g = (cz - t) / s_samples[None, :]  # row slope needed to hit each sample
    m = np.minimum.accumulate(g, axis=1)
    down_rows = np.nonzero(k_v > 1e-9)[0]
    kv_pos = k_v[down_rows]
    ground_rgb = np.asarray(world.ground_color, dtype=np.uint8)
    ns = len(s_samples)
    for ci in range(len(dir_x)):
        j = np.searchsorted(-m[ci], -kv_pos, side="left")
        hit = j < ns
        if not hit.any():
            continue
        jj = j[hit]
        j0 = np.maximum(jj - 1, 0)
        g_hi = g[ci, jj]
        g_lo = g[ci, j0]
        denom = g_lo - g_hi
        frac = np.where(np.abs(denom) > 1e-12, (g_lo - kv_pos[hit]) / denom, 1.0)
        frac = np.clip(frac, 0.0, 1.0)
        s_hit = s_samples[j0] + frac * (s_samples[jj] - s_samples[j0])
        rr = down_rows[hit]
        depth_w[rr, ci] = s_hit
        color[rr, ci] = ground_rgb


# ---------------------------------------------------------------------------
# Waypoint controller (shared by label planning and the oracle policy)
# ---------------------------------------------------------------------------


def steer_towards(
    x: float,
    y: float,
    heading: float,
    target: Sequence[float],
    *,
    bearing_tolerance: float = BEARING_TOLERANCE,
    bearing_jitter: float = 0.0,
    rng=None,
) -> ActionType:
    """Greedy steering: rotate toward the target, else go forward."""
    bearing = normalize_angle(math.atan2(target[1] - y, target[0] - x) - heading)
    if bearing_jitter > 0.0 and rng is not None:
        bearing = normalize_angle(bearing + rng.uniform(-bearing_jitter, bearing_jitter))
    if bearing > bearing_tolerance:
        return ActionType.LEFT_ROTATE
    if bearing < -bearing_tolerance:
        return ActionType.RIGHT_ROTATE
    return ActionType.FORWARD


def waypoint_controller(
    x: float,
    y: float,
    heading: float,
    waypoints: Sequence[Sequence[float]],
    cursor: int,
    *,
    waypoint_radius: float = 1.0,
    bearing_tolerance: float = BEARING_TOLERANCE,
    bearing_jitter: float = 0.0,
    rng=None,
) -> tuple[ActionType, int]:
    """One waypoint-chasing decision. Returns (action, advanced cursor).

    The cursor advances while the current waypoint is within the arrival
    radius; past the last waypoint the decision is STOP.
    """
    while cursor < len(waypoints) and math.dist((x, y), waypoints[cursor]) <= waypoint_radius:
        cursor += 1
    if cursor >= len(waypoints):
        return ActionType.STOP, cursor
    action = steer_towards(
        x,
        y,
        heading,
        waypoints[cursor],
        bearing_tolerance=bearing_tolerance,
        bearing_jitter=bearing_jitter,
        rng=rng,
    )
    return action, cursor


def plan_label_actions(
    world: World,
    start: Pose2D,
    waypoints: Sequence[Sequence[float]],
    cfg: DynamicsConfig,
    *,
    waypoint_radius: float = 1.0,
    max_steps: int = 240,
) -> list[ActionType] | None:
    """Run the waypoint controller to success, or None if the route fails."""
    state = RobotState(start)
    cursor = 0
    actions: list[ActionType] = []
    for _ in range(max_steps):
        action, cursor = waypoint_controller(
            state.pose.x, state.pose.y, state.pose.heading, waypoints, cursor,
            waypoint_radius=waypoint_radius,
        )
        actions.append(action)
        state = step(world, state, action, cfg)
        if action is ActionType.STOP:
            return actions
        if state.collided:
            return None
    return None


# ---------------------------------------------------------------------------
# Procedural generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _SceneParams:
    obstacle_count: int
    radius_range: tuple[float, float]
    height_range: tuple[float, float]
    palette: tuple[tuple[int, int, int], ...]
    ground_color: tuple[int, int, int]
    landmarks: tuple[str, ...]


_SCENES: dict[SceneClass, _SceneParams] = {
    SceneClass.FARM: _SceneParams(
        14, (0.25, 0.5), (0.6, 1.6),
        ((196, 160, 46), (92, 132, 46), (60, 102, 38), (170, 70, 40)),
        (122, 96, 56),
        ("hay bale", "water tank", "seed crate", "tractor", "fence post", "crop row"),
    ),
    SceneClass.GREENHOUSE: _SceneParams(
        10, (0.2, 0.4), (0.5, 1.2),
        ((70, 140, 60), (100, 180, 90), (210, 210, 200), (140, 90, 50)),
        (150, 150, 140),
        ("planter box", "tomato rack", "irrigation pipe", "potting bench", "herb tray", "sprinkler"),
    ),
    SceneClass.FOREST: _SceneParams(
        26, (0.15, 0.35), (1.8, 3.2),
        ((96, 64, 32), (80, 56, 30), (60, 90, 40), (110, 80, 44)),
        (70, 90, 50),
        ("pine trunk", "mossy stump", "berry bush", "fallen log", "trail marker", "fern patch"),
    ),
    SceneClass.MOUNTAIN: _SceneParams(
        12, (0.3, 0.6), (0.5, 1.4),
        ((128, 128, 128), (150, 140, 130), (100, 100, 110), (90, 84, 80)),
        (110, 100, 90),
        ("granite boulder", "cairn", "scree pile", "gnarled shrub", "slope post", "rock slab"),
    ),
    SceneClass.GARDEN: _SceneParams(
        16, (0.2, 0.45), (0.4, 1.1),
        ((60, 120, 50), (200, 60, 70), (150, 80, 170), (220, 180, 60)),
        (90, 110, 60),
        ("rose bed", "bird bath", "hedge", "flower pot", "trellis", "garden gnome"),
    ),
    SceneClass.VILLAGE: _SceneParams(
        8, (0.5, 0.9), (1.5, 2.5),
        ((180, 110, 70), (200, 170, 130), (140, 70, 50), (120, 120, 140)),
        (130, 120, 100),
        ("clay hut", "well", "market stall", "grain silo", "wood pile", "cart"),
    ),
}

_OPENERS = ("Go along the path toward", "Head over to", "Move toward", "Drive up to")
_MIDDLES = ("Then continue to", "Then make your way to", "Then pass by", "Then go on to")
_CLOSERS = ("Then stop beside", "Then come to a stop at", "Then halt next to")

_BOUNDS = (-20.0, -20.0, 20.0, 20.0)
_EDGE_MARGIN = 3.0
_MIN_START_TARGET = 5.0


def _build_terrain(seed: int, scene_class: SceneClass) -> TerrainTable | None:
    if scene_class is not SceneClass.MOUNTAIN:
        return None
    rng = np.random.default_rng(stable_u64(f"{seed}:{scene_class.value}:terrain"))
    xmin, ymin, xmax, ymax = _BOUNDS
    n = 81
    xs = np.linspace(xmin, xmax, n)
    ys = np.linspace(ymin, ymax, n)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.zeros((n, n))
    for _ in range(4):
        amp = rng.uniform(0.03, 0.055)
        wav = rng.uniform(5.0, 14.0)
        phase = rng.uniform(0, math.tau)
        ang = rng.uniform(0, math.pi)
        grid += amp * np.sin((gx * math.cos(ang) + gy * math.sin(ang)) * (math.tau / wav) + phase)
    return TerrainTable(x0=xmin, y0=ymin, step=(xmax - xmin) / (n - 1), grid=grid)


def _point_segment_distance(p, a, b) -> float:
    ax, ay = a
    bx, by = b
    abx, aby = bx - ax, by - ay
    denom = abx * abx + aby * aby
    if denom == 0:
        return math.dist(p, a)
    t = max(0.0, min(1.0, ((p[0] - ax) * abx + (p[1] - ay) * aby) / denom))
    return math.dist(p, (ax + t * abx, ay + t * aby))


def _sample_chain(rng, subtask_count, leg_range, max_turn) -> tuple[Pose2D, list[tuple[float, float]]]:
    xmin, ymin, xmax, ymax = _BOUNDS
    lo, hi = xmin + _EDGE_MARGIN, xmax - _EDGE_MARGIN
    for _ in range(400):
        sx = rng.uniform(lo, hi)
        sy = rng.uniform(lo, hi)
        bearing = rng.uniform(-math.pi, math.pi)
        heading = normalize_angle(bearing + rng.uniform(-math.radians(20), math.radians(20)))
        waypoints: list[tuple[float, float]] = []
        px, py = sx, sy
        ok = True
        for _ in range(subtask_count):
            leg = rng.uniform(*leg_range)
            px, py = px + leg * math.cos(bearing), py + leg * math.sin(bearing)
            if not (lo <= px <= hi and lo <= py <= hi):
                ok = False
                break
            waypoints.append((px, py))
            bearing = normalize_angle(bearing + rng.uniform(-max_turn, max_turn))
        if ok and math.dist((sx, sy), waypoints[-1]) >= _MIN_START_TARGET:
            return Pose2D(sx, sy, heading), waypoints
    raise UnreachableTarget("could not sample a waypoint chain inside bounds")


def _corridor_segments(start: Pose2D, waypoints) -> list[tuple[tuple[float, float], tuple[float, float]]]:
    pts = [(start.x, start.y), *waypoints]
    return list(zip(pts[:-1], pts[1:]))


def _make_instruction(rng, params: _SceneParams, subtask_count: int, used: set[str], index: int) -> str:
    for _ in range(30):
        lms = [params.landmarks[int(rng.integers(len(params.landmarks)))] for _ in range(subtask_count)]
        parts = [f"{_OPENERS[int(rng.integers(len(_OPENERS)))]} the {lms[0]}."]
        for lm in lms[1:-1]:
            parts.append(f"{_MIDDLES[int(rng.integers(len(_MIDDLES)))]} the {lm}.")
        if subtask_count >= 2:
            parts.append(f"{_CLOSERS[int(rng.integers(len(_CLOSERS)))]} the {lms[-1]}.")
        text = " ".join(parts)
        if text not in used:
            used.add(text)
            return text
    text = f"Head to checkpoint {index}. Then stop at marker {index}."
    used.add(text)
    return text


def generate_world(
    seed: int,
    scene_class: SceneClass,
    n_episodes: int = 8,
    *,
    leg_range: tuple[float, float] = (3.0, 6.0),
    max_turn_deg: float = 75.0,
    subtask_cycle: Sequence[int] = (2, 3, 4, 5),
) -> tuple[World, list[Episode]]:
    """Build a deterministic world plus oracle-labeled episodes.

    Same (seed, scene_class) always yields byte-identical output. Episode
    routes are sampled first; obstacles are then placed clear of every
    route corridor so the scripted controller is guaranteed a label path.
    """
    scene_class = SceneClass(scene_class)
    params = _SCENES[scene_class]
    rng = np.random.default_rng(stable_u64(f"{seed}:{scene_class.value}:gen"))
    terrain = _build_terrain(seed, scene_class)
    max_turn = math.radians(max_turn_deg)

    chains = [
        _sample_chain(rng, subtask_cycle[i % len(subtask_cycle)], leg_range, max_turn)
        for i in range(n_episodes)
    ]
    segments = [seg for start, wps in chains for seg in _corridor_segments(start, wps)]

    xmin, ymin, xmax, ymax = _BOUNDS
    obstacles: list[Obstacle] = []
    for _ in range(params.obstacle_count):
        for _ in range(60):
            radius = float(rng.uniform(*params.radius_range))
            cx = float(rng.uniform(xmin + radius, xmax - radius))
            cy = float(rng.uniform(ymin + radius, ymax - radius))
            clearance = _CORRIDOR_MARGIN + radius
            if all(_point_segment_distance((cx, cy), a, b) >= clearance for a, b in segments):
                height = float(rng.uniform(*params.height_range))
                color = params.palette[int(rng.integers(len(params.palette)))]
                obstacles.append(Obstacle((cx, cy), radius, height, color))
                break

    world = World(
        seed=seed,
        scene_class=scene_class,
        obstacles=tuple(obstacles),
        ground_color=params.ground_color,
        bounds=_BOUNDS,
        terrain=terrain,
    )

    dyn = DynamicsConfig()
    used_instructions: set[str] = set()
    episodes: list[Episode] = []
    for i, (start, waypoints) in enumerate(chains):
        actions = plan_label_actions(world, start, waypoints, dyn)
        tries = 0
        while actions is None:
            tries += 1
            if tries > 50:
                raise UnreachableTarget(f"episode {i} of {world.key}: no reachable route")
            start, waypoints = _sample_chain(
                rng, subtask_cycle[i % len(subtask_cycle)], leg_range, max_turn
            )
            clear = all(
                _point_segment_distance(ob.center, a, b) >= _CORRIDOR_MARGIN + ob.radius
                for a, b in _corridor_segments(start, waypoints)
                for ob in obstacles
            )
            if clear:
                actions = plan_label_actions(world, start, waypoints, dyn)
        instruction = _make_instruction(rng, params, len(waypoints), used_instructions, i)
        episodes.append(
            Episode(
                id=f"{scene_class.value}-{seed}-ep{i:03d}",
                scene_class=scene_class,
                instruction=instruction,
                start=start,
                target=waypoints[-1],
                label_actions=tuple(actions),
                subtask_waypoints=tuple(waypoints),
                subtask_count=len(waypoints),
            )
        )
    return world, episodes


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def world_to_dict(world: World) -> dict:
    return {
        "seed": world.seed,
        "scene_class": world.scene_class.value,
        "bounds": list(world.bounds),
        "ground_color": list(world.ground_color),
        "obstacles": [
            {
                "center": list(ob.center),
                "radius": ob.radius,
                "height": ob.height,
                "color": list(ob.color),
            }
            for ob in world.obstacles
        ],
    }


def world_from_dict(data: dict) -> World:
    scene_class = SceneClass(data["scene_class"])
    return World(
        seed=int(data["seed"]),
        scene_class=scene_class,
        obstacles=tuple(
            Obstacle(
                center=tuple(ob["center"]),
                radius=float(ob["radius"]),
                height=float(ob["height"]),
                color=tuple(int(c) for c in ob["color"]),
            )
            for ob in data["obstacles"]
        ),
        ground_color=tuple(int(c) for c in data["ground_color"]),
        bounds=tuple(float(b) for b in data["bounds"]),
        terrain=_build_terrain(int(data["seed"]), scene_class),
    )


def write_world(path: Path | str, world: World) -> None:
    Path(path).write_text(json.dumps(world_to_dict(world), indent=2, sort_keys=True))


def read_world(path: Path | str) -> World:
    return world_from_dict(json.loads(Path(path).read_text()))


def episode_to_dict(ep: Episode) -> dict:
    return {
        "id": ep.id,
        "scene_class": ep.scene_class.value,
        "instruction": ep.instruction,
        "start": [ep.start.x, ep.start.y, ep.start.heading],
        "target": list(ep.target),
        "label_actions": [a.value for a in ep.label_actions],
        "subtask_waypoints": [list(wp) for wp in ep.subtask_waypoints],
    }


def episode_from_dict(data: dict) -> Episode:
    waypoints = tuple(tuple(float(c) for c in wp) for wp in data["subtask_waypoints"])
    return Episode(
        id=data["id"],
        scene_class=SceneClass(data["scene_class"]),
        instruction=data["instruction"],
        start=Pose2D(*[float(v) for v in data["start"]]),
        target=tuple(float(c) for c in data["target"]),
        label_actions=tuple(ActionType(a) for a in data["label_actions"]),
        subtask_waypoints=waypoints,
        subtask_count=len(waypoints),
    )


def write_episodes(path: Path | str, episodes: Iterable[Episode]) -> None:
    lines = [json.dumps(episode_to_dict(ep), sort_keys=True) for ep in episodes]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_episodes(path: Path | str) -> list[Episode]:
    episodes = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            episodes.append(episode_from_dict(json.loads(line)))
    return episodes
