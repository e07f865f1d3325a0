"""Spatial understanding memory: sampling, reconstruction, rendered views.

The pipeline samples frames from an exploration pass, reconstructs a
colored point cloud (either by fusing posed depth locally or by calling an
external reconstruction service that returns GLB bytes), renders fixed
640x360 frontal and oblique perspective images, and persists them in an
on-disk memory bank keyed by scene and instruction.
"""

from __future__ import annotations

import base64
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import shutil
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

from . import glb
from .geometry import (
    CameraPose,
    Image,
    Intrinsics,
    PointCloud,
    fuse_frames,
    image_from_png,
    png_bytes,
    render_pointcloud,
)

log = logging.getLogger(__name__)

MEMORY_WIDTH = 640
MEMORY_HEIGHT = 360
MEMORY_BACKGROUND = (24, 24, 32)


class BackendUnreachable(RuntimeError):
    """The external reconstruction service could not be reached."""


class MalformedGlb(ValueError):
    """The external reconstruction service returned unparseable GLB bytes."""


class CorruptRecord(RuntimeError):
    """A memory bank record's images do not match its recorded digests."""


class EmptyInput(ValueError):
    """Frame sampling was handed an empty sequence."""


class QTooSmall(ValueError):
    """Frame sampling needs q >= 2."""


class MemorySelection(str, Enum):
    FRONTAL = "frontal"
    OBLIQUE = "oblique"
    HYBRID = "hybrid"
    NONE = "none"


@dataclass(frozen=True)
class ReconstructorConfig:
    backend: str = "posed_depth"  # "posed_depth" | "external"
    pixel_stride: int = 4
    external_endpoint: str | None = None
    hyper_params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.backend not in ("posed_depth", "external"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if (self.backend == "external") != (self.external_endpoint is not None):
            raise ValueError("external_endpoint must be set exactly when backend='external'")


@dataclass(frozen=True)
class Reconstruction:
    cloud: PointCloud
    frame_poses: tuple[CameraPose, ...]
    intrinsics: Intrinsics
    source_frame_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.frame_poses) != len(self.source_frame_ids):
            raise ValueError("frame_poses and source_frame_ids must align")

    @property
    def is_empty(self) -> bool:
        return len(self.cloud) == 0


@dataclass(frozen=True)
class SpatialMemory:
    """Rendered memory images plus provenance (always exactly 640x360)."""

    frontal: Image
    oblique: Image
    frontal_pitch: float  # degrees
    oblique_pitch: float  # degrees
    reconstruction_digest: str
    scene_key: str
    created_at: str
    centroid: tuple[float, float, float] | None = None

    def __post_init__(self) -> None:
        for img in (self.frontal, self.oblique):
            if img.width != MEMORY_WIDTH or img.height != MEMORY_HEIGHT:
                raise ValueError(f"memory images must be {MEMORY_WIDTH}x{MEMORY_HEIGHT}")
        if not 0.0 <= self.frontal_pitch <= 5.0:
            raise ValueError("frontal pitch must lie in [0, 5] degrees")
        if not 40.0 <= self.oblique_pitch <= 50.0:
            raise ValueError("oblique pitch must lie in [40, 50] degrees")


# ---------------------------------------------------------------------------
# Frame sampling
# ---------------------------------------------------------------------------


def sample_frame_indices(n: int, q: int) -> list[int]:
    """Equally spaced indices over range(n): first and last always kept.

    Index i maps to round(i * (n-1) / (q-1)) with half-up rounding done in
    integer arithmetic, so the spacing between picks differs by at most one.
    """
    if q < 2:
        raise QTooSmall("q must be >= 2")
    if n <= 0:
        raise EmptyInput("no frames to sample")
    if n <= q:
        return list(range(n))
    den = q - 1
    return [(2 * i * (n - 1) + den) // (2 * den) for i in range(q)]


def sample_frames(frames: Sequence, q: int) -> list:
    """Uniformly sample q frames (all of them if fewer than q exist)."""
    if len(frames) == 0:
        raise EmptyInput("no frames to sample")
    return [frames[i] for i in sample_frame_indices(len(frames), q)]


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------


def _default_intrinsics() -> Intrinsics:
    return Intrinsics.from_fov(MEMORY_WIDTH, MEMORY_HEIGHT, hfov_deg=90.0)


def write_glb(r: Reconstruction) -> bytes:
    """Serialize a reconstruction to a binary glTF container."""
    extras = {
        "frame_poses": [[*p.position, p.yaw, p.pitch] for p in r.frame_poses],
        "source_frame_ids": list(r.source_frame_ids),
        "intrinsics": {
            "focal_x": r.intrinsics.focal_x,
            "focal_y": r.intrinsics.focal_y,
            "center_x": r.intrinsics.center_x,
            "center_y": r.intrinsics.center_y,
            "width": r.intrinsics.width,
            "height": r.intrinsics.height,
        },
    }
    return glb.encode_point_glb(r.cloud.points, r.cloud.colors, extras=extras)


def read_glb(data: bytes) -> Reconstruction:
    """Parse a binary glTF container back to a reconstruction.

    Containers produced elsewhere may omit the provenance extras; poses and
    frame ids then come back empty and intrinsics take the memory default.
    """
    points, colors, extras = glb.decode_point_glb(data)
    poses = tuple(
        CameraPose(position=(p[0], p[1], p[2]), yaw=p[3], pitch=p[4])
        for p in extras.get("frame_poses", [])
    )
    ids = tuple(int(i) for i in extras.get("source_frame_ids", []))
    if len(ids) != len(poses):
        ids = tuple(range(len(poses)))
    ki = extras.get("intrinsics")
    intrinsics = (
        Intrinsics(
            focal_x=ki["focal_x"],
            focal_y=ki["focal_y"],
            center_x=ki["center_x"],
            center_y=ki["center_y"],
            width=int(ki["width"]),
            height=int(ki["height"]),
        )
        if ki
        else _default_intrinsics()
    )
    cloud = PointCloud(points.astype(np.float64), colors)
    return Reconstruction(cloud, poses, intrinsics, ids)


def _frames_payload(frames: Sequence, hyper_params: dict) -> dict:
    payload_frames = []
    for f in frames:
        pose = getattr(f, "pose", None)
        payload_frames.append(
            {
                "image": base64.b64encode(png_bytes(f.image)).decode("ascii"),
                "pose": [*pose.position, pose.yaw, pose.pitch] if pose is not None else None,
            }
        )
    return {"frames": payload_frames, "params": dict(hyper_params)}


def reconstruct(sampled: Sequence, cfg: ReconstructorConfig) -> Reconstruction:
    """Turn sampled frames into a reconstruction via the configured backend."""
    if len(sampled) == 0:
        raise EmptyInput("reconstruct needs at least one frame")
    if cfg.backend == "posed_depth":
        cloud = fuse_frames(sampled, cfg.pixel_stride)
        if len(cloud) == 0:
            log.warning("posed_depth reconstruction produced an empty cloud")
        return Reconstruction(
            cloud=cloud,
            frame_poses=tuple(f.pose for f in sampled),
            intrinsics=sampled[0].intrinsics,
            source_frame_ids=tuple(f.step_index for f in sampled),
        )
    url = cfg.external_endpoint.rstrip("/") + "/reconstruct"
    try:
        resp = requests.post(url, json=_frames_payload(sampled, cfg.hyper_params), timeout=60)
        resp.raise_for_status()
    except requests.RequestException as exc:
        raise BackendUnreachable(f"reconstruction service at {url}: {exc}") from exc
    try:
        return read_glb(resp.content)
    except glb.GlbError as exc:
        raise MalformedGlb(f"reconstruction service returned bad GLB: {exc}") from exc


# ---------------------------------------------------------------------------
# Memory rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MemoryRenderConfig:
    """Viewpoint and angles for the two rendered memory perspectives."""

    viewpoint_x: float = 0.0
    viewpoint_y: float = 0.0
    viewpoint_yaw: float = 0.0
    frontal_pitch_deg: float = 0.0
    oblique_pitch_deg: float = 45.0
    camera_height: float = 0.38
    hfov_deg: float = 90.0
    background: tuple[int, int, int] = MEMORY_BACKGROUND
    scene_key: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.frontal_pitch_deg <= 5.0:
            raise ValueError("frontal pitch must lie in [0, 5] degrees")
        if not 40.0 <= self.oblique_pitch_deg <= 50.0:
            raise ValueError("oblique pitch must lie in [40, 50] degrees")


def render_memory(r: Reconstruction, cfg: MemoryRenderConfig) -> SpatialMemory:
    """Render the frontal and oblique 640x360 memory images.

    The frontal camera sits at the viewpoint at robot camera height. The
    oblique camera shares (x, y, yaw) but is raised so its pitched view
    axis passes through the cloud at the centroid's along-heading distance.
    """
    k = Intrinsics.from_fov(MEMORY_WIDTH, MEMORY_HEIGHT, hfov_deg=cfg.hfov_deg)
    if r.is_empty:
        log.warning("rendering memory from an empty reconstruction (%s)", cfg.scene_key)
        centroid = None
        ahead = 1.0
        centroid_z = 0.0
    else:
        c = r.cloud.points.mean(axis=0)
        centroid = (float(c[0]), float(c[1]), float(c[2]))
        ahead = (c[0] - cfg.viewpoint_x) * math.cos(cfg.viewpoint_yaw) + (
            c[1] - cfg.viewpoint_y
        ) * math.sin(cfg.viewpoint_yaw)
        ahead = max(1.0, ahead)
        centroid_z = float(c[2])

    frontal_pose = CameraPose(
        position=(cfg.viewpoint_x, cfg.viewpoint_y, cfg.camera_height),
        yaw=cfg.viewpoint_yaw,
        pitch=math.radians(cfg.frontal_pitch_deg),
    )
    oblique_height = centroid_z + ahead * math.tan(math.radians(cfg.oblique_pitch_deg))
    oblique_pose = CameraPose(
        position=(cfg.viewpoint_x, cfg.viewpoint_y, oblique_height),
        yaw=cfg.viewpoint_yaw,
        pitch=math.radians(cfg.oblique_pitch_deg),
    )
    frontal = render_pointcloud(r.cloud, k, frontal_pose, cfg.background)
    oblique = render_pointcloud(r.cloud, k, oblique_pose, cfg.background)
    digest = hashlib.sha256(write_glb(r)).hexdigest()
    return SpatialMemory(
        frontal=frontal,
        oblique=oblique,
        frontal_pitch=cfg.frontal_pitch_deg,
        oblique_pitch=cfg.oblique_pitch_deg,
        reconstruction_digest=digest,
        scene_key=cfg.scene_key,
        created_at=_dt.datetime.now(_dt.timezone.utc).isoformat(),
        centroid=centroid,
    )


# ---------------------------------------------------------------------------
# Memory bank
# ---------------------------------------------------------------------------

_SAFE_KEY = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-")


def _check_key(key: str) -> str:
    if not key or any(ch not in _SAFE_KEY for ch in key) or key.startswith("."):
        raise ValueError(f"invalid memory bank key {key!r}")
    return key


@dataclass(frozen=True)
class StoredRecord:
    key: str
    directory: Path
    meta: dict


class MemoryBank:
    """Persistent store of rendered memory images, one directory per key.

    Layout: <root>/<key>/{frontal.png, oblique.png, meta.json}. Records are
    written into a temp directory and swapped into place by rename, so
    concurrent readers see either the old record, the new record, or a
    miss, never a torn mix.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _dir(self, key: str) -> Path:
        return self.root / _check_key(key)

    def store(self, key: str, m: SpatialMemory) -> StoredRecord:
        frontal_png = png_bytes(m.frontal)
        oblique_png = png_bytes(m.oblique)
        meta = {
            "scene_key": m.scene_key,
            "frontal_pitch": m.frontal_pitch,
            "oblique_pitch": m.oblique_pitch,
            "reconstruction_digest": m.reconstruction_digest,
            "created_at": m.created_at,
            "frontal_sha256": hashlib.sha256(frontal_png).hexdigest(),
            "oblique_sha256": hashlib.sha256(oblique_png).hexdigest(),
            "centroid": list(m.centroid) if m.centroid is not None else None,
        }
        dest = self._dir(key)
        tmp = self.root / f".tmp-{key}-{uuid.uuid4().hex}"
        tmp.mkdir()
        try:
            (tmp / "frontal.png").write_bytes(frontal_png)
            (tmp / "oblique.png").write_bytes(oblique_png)
            (tmp / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
            if dest.exists():
                old = self.root / f".old-{key}-{uuid.uuid4().hex}"
                os.replace(dest, old)
                os.replace(tmp, dest)
                shutil.rmtree(old, ignore_errors=True)
            else:
                os.replace(tmp, dest)
        finally:
            shutil.rmtree(tmp, ignore_errors=True)
        return StoredRecord(key=key, directory=dest, meta=meta)

    def contains(self, key: str) -> bool:
        return (self._dir(key) / "meta.json").exists()

    def keys(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(
            p.name for p in self.root.iterdir() if p.is_dir() and not p.name.startswith(".")
        )

    def load_with_meta(
        self, key: str, sel: MemorySelection
    ) -> tuple[list[Image], dict | None]:
        """Load the selected images plus metadata; a miss is ([], None)."""
        sel = MemorySelection(sel)
        d = self._dir(key)
        meta_path = d / "meta.json"
        if not meta_path.exists():
            return [], None
        meta = json.loads(meta_path.read_text())
        if sel is MemorySelection.NONE:
            return [], meta
        wanted = {
            MemorySelection.FRONTAL: ["frontal"],
            MemorySelection.OBLIQUE: ["oblique"],
            MemorySelection.HYBRID: ["frontal", "oblique"],
        }[sel]
        images = []
        for name in wanted:
            data = (d / f"{name}.png").read_bytes()
            if hashlib.sha256(data).hexdigest() != meta.get(f"{name}_sha256"):
                raise CorruptRecord(f"{key}/{name}.png does not match its recorded digest")
            images.append(image_from_png(data))
        return images, meta

    def load(self, key: str, sel: MemorySelection) -> list[Image]:
        images, _ = self.load_with_meta(key, sel)
        return images


def store_memory(bank_root: Path | str, key: str, m: SpatialMemory) -> StoredRecord:
    return MemoryBank(bank_root).store(key, m)


def load_memory(bank_root: Path | str, key: str, sel: MemorySelection) -> list[Image]:
    return MemoryBank(bank_root).load(key, sel)
