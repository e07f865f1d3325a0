"""Navigation metrics (SR, NE, ISR), grouped aggregation and reports.

ISR is realized as ordered-prefix waypoint completion at the same radius
as SR and reported as the (mean completed, mean decomposed) pair. Success
at exactly the radius boundary counts as success.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

SCENE_ORDER = ("farm", "greenhouse", "forest", "mountain", "garden", "village")
COMPLEXITY_BUCKETS = ("2", "3", ">=4")
COMPLEXITY_COARSE = ("2", ">=3")
GROUP_MODES = ("all", "scene", "complexity", "complexity-coarse")

CSV_COLUMNS = (
    "group_scene",
    "group_complexity",
    "memory",
    "n",
    "sr",
    "mean_ne_m",
    "isr_completed",
    "isr_total",
)


class EmptyGroup(ValueError):
    """A requested group matched no episodes."""


class IoFailure(OSError):
    """Report emission failed at the filesystem level."""


@dataclass(frozen=True)
class MetricsReport:
    group_key: tuple[str, str, str]  # (scene or "all", complexity or "all", memory)
    n_episodes: int
    sr: float
    mean_ne: float
    isr: tuple[float, float]  # (mean completed, mean total)

    def __post_init__(self) -> None:
        if not 0.0 <= self.sr <= 1.0:
            raise ValueError("sr must lie in [0, 1]")
        if self.mean_ne < 0:
            raise ValueError("mean_ne must be non-negative")
        if self.isr[0] > self.isr[1] + 1e-12:
            raise ValueError("isr completed mean cannot exceed total mean")


def navigation_error(final: Sequence[float], target: Sequence[float]) -> float:
    """Planar Euclidean distance from the final position to the target."""
    return math.hypot(final[0] - target[0], final[1] - target[1])


def success(ne: float, radius: float) -> bool:
    """Episode success: navigation error within the radius (inclusive)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    return ne <= radius


def independent_success(
    trajectory: Sequence, waypoints: Sequence[Sequence[float]], radius: float
) -> tuple[int, int]:
    """(completed, total): longest waypoint prefix visited in order.

    A trajectory pose within `radius` of the current waypoint completes it;
    one pose may complete several consecutive waypoints.
    """
    if not waypoints:
        raise ValueError("waypoints must be non-empty")
    completed = 0
    for pose in trajectory:
        x, y = (pose.x, pose.y) if hasattr(pose, "x") else (pose[0], pose[1])
        while completed < len(waypoints) and math.dist((x, y), waypoints[completed]) <= radius:
            completed += 1
        if completed == len(waypoints):
            break
    return completed, len(waypoints)


def complexity_bucket(subtask_total: int, *, coarse: bool = False) -> str:
    if coarse:
        return "2" if subtask_total <= 2 else ">=3"
    if subtask_total <= 2:
        return "2"
    if subtask_total == 3:
        return "3"
    return ">=4"


def aggregate(
    results: Sequence,
    radius: float,
    group_by: str = "all",
    *,
    isr_normalized: bool = False,
) -> list[MetricsReport]:
    """Group episode results and compute SR / mean NE / ISR per group.

    Success flags are recomputed from each episode's NE at the given
    radius. Results always split by their memory selection; an "all"
    group over every dimension is appended last. isr_normalized reports
    mean(completed/total) against 1.0 instead of the pair of means.
    """
    if group_by not in GROUP_MODES:
        raise ValueError(f"group_by must be one of {GROUP_MODES}")
    if not results:
        raise EmptyGroup("no results to aggregate")

    def key_of(r) -> tuple[str, str, str]:
        scene = r.scene_class if group_by == "scene" else "all"
        if group_by == "complexity":
            comp = complexity_bucket(r.subtask_total)
        elif group_by == "complexity-coarse":
            comp = complexity_bucket(r.subtask_total, coarse=True)
        else:
            comp = "all"
        return (scene, comp, r.memory_selection)

    groups: dict[tuple[str, str, str], list] = {}
    for r in results:
        groups.setdefault(key_of(r), []).append(r)
    if group_by != "all":
        for r in results:
            groups.setdefault(("all", "all", r.memory_selection), []).append(r)

    reports = []
    for key in sorted(groups, key=_group_sort_key):
        members = groups[key]
        n = len(members)
        sr = sum(1 for r in members if success(r.ne, radius)) / n
        mean_ne = sum(r.ne for r in members) / n
        if isr_normalized:
            isr = (sum(r.subtasks_completed / r.subtask_total for r in members) / n, 1.0)
        else:
            isr = (
                sum(r.subtasks_completed for r in members) / n,
                sum(r.subtask_total for r in members) / n,
            )
        reports.append(MetricsReport(key, n, sr, mean_ne, isr))
    return reports


def _group_sort_key(key: tuple[str, str, str]):
    scene, comp, memory = key
    scene_rank = (1, "") if scene == "all" else (0, scene)
    comp_rank = (
        (1, 0)
        if comp == "all"
        else (0, (COMPLEXITY_BUCKETS + COMPLEXITY_COARSE).index(comp))
    )
    return (scene_rank, comp_rank, memory)


def expected_empty_groups(reports: Iterable[MetricsReport], group_by: str) -> list[str]:
    """Names of enumerable groups absent from the aggregated reports."""
    present_scenes = {rep.group_key[0] for rep in reports}
    present_comp = {rep.group_key[1] for rep in reports}
    missing: list[str] = []
    if group_by == "scene":
        missing += [f"scene={s}" for s in SCENE_ORDER if s not in present_scenes]
    elif group_by == "complexity":
        missing += [f"complexity={c}" for c in COMPLEXITY_BUCKETS if c not in present_comp]
    elif group_by == "complexity-coarse":
        missing += [f"complexity={c}" for c in COMPLEXITY_COARSE if c not in present_comp]
    return missing


def format_metric(x: float) -> str:
    """Two decimals when exact, else the full repr (parse-back stays exact)."""
    short = f"{x:.2f}"
    return short if float(short) == x else repr(x)


def render_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rep in reports:
        writer.writerow(
            [
                rep.group_key[0],
                rep.group_key[1],
                rep.group_key[2],
                rep.n_episodes,
                format_metric(rep.sr),
                format_metric(rep.mean_ne),
                format_metric(rep.isr[0]),
                format_metric(rep.isr[1]),
            ]
        )
    return buf.getvalue()


def render_markdown(reports: Sequence[MetricsReport], omitted: Sequence[str] = ()) -> str:
    lines = [
        "| Scene | Complexity | Memory | n | SR↑ | NE↓ (m) | ISR |",
        "|---|---|---|---|---|---|---|",
    ]
    for rep in reports:
        isr = f"{format_metric(rep.isr[0])} / {format_metric(rep.isr[1])}"
        lines.append(
            f"| {rep.group_key[0]} | {rep.group_key[1]} | {rep.group_key[2]} "
            f"| {rep.n_episodes} | {format_metric(rep.sr)} | {format_metric(rep.mean_ne)} | {isr} |"
        )
    if omitted:
        lines.append("")
        lines.append("Empty groups omitted: " + ", ".join(omitted))
    return "\n".join(lines) + "\n"


def emit_report(
    reports: Sequence[MetricsReport],
    fmt: str,
    path: Path | str,
    *,
    omitted: Sequence[str] = (),
) -> Path:
    """Write the report file ('csv' or 'markdown') and return its path."""
    if not reports:
        raise EmptyGroup("nothing to report")
    if fmt not in ("csv", "markdown"):
        raise ValueError("format must be 'csv' or 'markdown'")
    text = render_csv(reports) if fmt == "csv" else render_markdown(reports, omitted)
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise IoFailure(f"could not write report {path}: {exc}") from exc
    return path


def parse_csv_report(text: str) -> list[MetricsReport]:
    """Read back a CSV report into MetricsReport values (exact floats)."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError("unrecognized report header")
    out = []
    for row in rows[1:]:
        scene, comp, memory, n, sr, ne, isr_c, isr_t = row
        out.append(
            MetricsReport(
                (scene, comp, memory),
                int(n),
                float(sr),
                float(ne),
                (float(isr_c), float(isr_t)),
            )
        )
    return out
