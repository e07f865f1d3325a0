"""Pinhole camera math, posed-depth fusion and z-buffered point rendering.

Frame conventions, fixed across the whole package:

* world frame: right handed, Z up, meters
* camera frame: +Z forward, +X right, +Y down
* yaw rotates about world Z; yaw = 0 points the camera +Z along world +X
* pitch > 0 tilts the view axis downward; pitch stays in [-pi/2, pi/2]
* images are row major; pixel (u, v) = (column, row), origin top left

All operations here are pure functions over immutable inputs.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from PIL import Image as PILImage


class NonPositiveDepth(ValueError):
    """Backprojection was asked for a pixel at depth <= 0."""


class PixelOutOfBounds(ValueError):
    """Pixel coordinates fall outside the image bounds."""


class BehindCamera(ValueError):
    """Point has camera-frame z <= 0 and cannot be projected."""


class MissingDepth(ValueError):
    """A frame handed to fusion carries no depth map."""


class MissingPose(ValueError):
    """A frame handed to fusion carries no camera pose."""


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics, all quantities in pixels."""

    focal_x: float
    focal_y: float
    center_x: float
    center_y: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.focal_x <= 0 or self.focal_y <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.center_x < self.width):
            raise ValueError("center_x must lie inside [0, width)")
        if not (0 <= self.center_y < self.height):
            raise ValueError("center_y must lie inside [0, height)")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float = 90.0) -> "Intrinsics":
        """Square-pixel intrinsics from a horizontal field of view."""
        f = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def rotation_world_from_camera(yaw: float, pitch: float) -> np.ndarray:
    """3x3 matrix mapping camera-frame vectors into the world frame.

    Columns are the world-frame images of the camera axes (right, down,
    forward). No roll: the right axis stays horizontal.
    """
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    return np.array(
        [
            [sy, -sp * cy, cp * cy],
            [-cy, -sp * sy, cp * sy],
            [0.0, -cp, -sp],
        ]
    )


@dataclass(frozen=True)
class CameraPose:
    """World-frame camera placement as position + yaw + pitch (no roll)."""

    position: tuple[float, float, float]
    yaw: float
    pitch: float = 0.0

    def __post_init__(self) -> None:
        if not -math.pi / 2 <= self.pitch <= math.pi / 2:
            raise ValueError("pitch must lie in [-pi/2, pi/2]")

    def rotation(self) -> np.ndarray:
        return rotation_world_from_camera(self.yaw, self.pitch)


@dataclass(frozen=True)
class PointCloud:
    """Colored point set: points (N, 3) float64 meters, colors (N, 3) uint8."""

    points: np.ndarray
    colors: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        cols = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if len(pts) != len(cols):
            raise ValueError("points and colors must have equal length")
        if len(pts) and not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "colors", cols)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.uint8))


@dataclass(frozen=True)
class Image:
    """RGB image backed by a row-major (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError("pixels must have shape (height, width, 3)")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def filled(cls, width: int, height: int, color: Sequence[int]) -> "Image":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[:] = np.asarray(color, dtype=np.uint8)
        return cls(px)


def pixel_to_camera(u: float, v: float, depth: float, k: Intrinsics) -> tuple[float, float, float]:
    """Camera-frame point on the ray through pixel (u, v) at the given depth."""
    return (
        (u - k.center_x) * depth / k.focal_x,
        (v - k.center_y) * depth / k.focal_y,
        depth,
    )


def backproject_pixel(
    u: float, v: float, depth: float, k: Intrinsics, pose: CameraPose
) -> np.ndarray:
    """World-frame point at pixel (u, v) and camera depth `depth` (meters)."""
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth!r}")
    if not (0 <= u < k.width and 0 <= v < k.height):
        raise PixelOutOfBounds(f"pixel ({u}, {v}) outside {k.width}x{k.height} image")
    cx, cy, cz = pixel_to_camera(u, v, depth, k)
    r = pose.rotation()
    px, py, pz = pose.position
    return np.array(
        [
            px + r[0, 0] * cx + r[0, 1] * cy + r[0, 2] * cz,
            py + r[1, 0] * cx + r[1, 1] * cy + r[1, 2] * cz,
            pz + r[2, 0] * cx + r[2, 1] * cy + r[2, 2] * cz,
        ]
    )


def project_point(
    p: Sequence[float], k: Intrinsics, pose: CameraPose
) -> tuple[float, float, float]:
    """Project a world point to (u, v, depth). Inverse of backproject_pixel."""
    px, py, pz = pose.position
    dx, dy, dz = p[0] - px, p[1] - py, p[2] - pz
    r = pose.rotation()
    cam_x = r[0, 0] * dx + r[1, 0] * dy + r[2, 0] * dz
    cam_y = r[0, 1] * dx + r[1, 1] * dy + r[2, 1] * dz
    cam_z = r[0, 2] * dx + r[1, 2] * dy + r[2, 2] * dz
    if cam_z <= 0:
        raise BehindCamera(f"camera-frame z = {cam_z} is not positive")
    u = k.center_x + k.focal_x * cam_x / cam_z
    v = k.center_y + k.focal_y * cam_y / cam_z
    return (u, v, cam_z)


def fuse_frames(frames: Sequence, pixel_stride: int = 1) -> PointCloud:
    """Backproject every pixel_stride-th pixel of every posed depth frame.

    Frames are duck-typed: they must expose .image (Image), .depth
    ((H, W) array, 0 or non-finite meaning "no depth"), .pose (CameraPose)
    and .intrinsics (Intrinsics). Points are emitted frame by frame, rows
    then columns, which fixes the tie order for downstream rendering.
    """
    if pixel_stride < 1:
        raise ValueError("pixel_stride must be >= 1")
    all_points: list[np.ndarray] = []
    all_colors: list[np.ndarray] = []
    for frame in frames:
        if getattr(frame, "depth", None) is None:
            raise MissingDepth(f"frame {getattr(frame, 'step_index', '?')} has no depth map")
        if getattr(frame, "pose", None) is None:
            raise MissingPose(f"frame {getattr(frame, 'step_index', '?')} has no pose")
        depth = np.asarray(frame.depth, dtype=np.float64)
        h, w = depth.shape
        k = frame.intrinsics
        vs = np.arange(0, h, pixel_stride)
        us = np.arange(0, w, pixel_stride)
        uu, vv = np.meshgrid(us, vs)
        dd = depth[vs[:, None], us[None, :]]
        valid = np.isfinite(dd) & (dd > 0)
        if not valid.any():
            continue
        uu, vv, dd = uu[valid], vv[valid], dd[valid]
        # Same arithmetic as backproject_pixel, vectorized.
        cam_x = (uu - k.center_x) * dd / k.focal_x
        cam_y = (vv - k.center_y) * dd / k.focal_y
        cam_z = dd
        r = frame.pose.rotation()
        px, py, pz = frame.pose.position
        wx = px + r[0, 0] * cam_x + r[0, 1] * cam_y + r[0, 2] * cam_z
        wy = py + r[1, 0] * cam_x + r[1, 1] * cam_y + r[1, 2] * cam_z
        wz = pz + r[2, 0] * cam_x + r[2, 1] * cam_y + r[2, 2] * cam_z
        all_points.append(np.stack([wx, wy, wz], axis=1))
        all_colors.append(frame.image.pixels[vv, uu])
    if not all_points:
        return PointCloud.empty()
    return PointCloud(np.concatenate(all_points), np.concatenate(all_colors))


def render_pointcloud(
    cloud: PointCloud,
    k: Intrinsics,
    pose: CameraPose,
    background: Sequence[int] = (0, 0, 0),
) -> Image:
    """Render a point cloud to an image with 1-pixel z-buffered splats.

    Each point lands on the nearest integer pixel of its projection; the
    point with the strictly smallest camera depth wins a pixel, ties go to
    the earlier point index. Points behind the camera are skipped.
    """
    img = np.empty((k.height, k.width, 3), dtype=np.uint8)
    img[:] = np.asarray(background, dtype=np.uint8)
    if len(cloud) == 0:
        return Image(img)

    r = pose.rotation()
    px, py, pz = pose.position
    dx = cloud.points[:, 0] - px
    dy = cloud.points[:, 1] - py
    dz = cloud.points[:, 2] - pz
    cam_x = r[0, 0] * dx + r[1, 0] * dy + r[2, 0] * dz
    cam_y = r[0, 1] * dx + r[1, 1] * dy + r[2, 1] * dz
    cam_z = r[0, 2] * dx + r[1, 2] * dy + r[2, 2] * dz

    front = cam_z > 0
    if not front.any():
        return Image(img)
    u = k.center_x + k.focal_x * cam_x[front] / cam_z[front]
    v = k.center_y + k.focal_y * cam_y[front] / cam_z[front]
    col = np.floor(u + 0.5).astype(np.int64)
    row = np.floor(v + 0.5).astype(np.int64)
    inside = (col >= 0) & (col < k.width) & (row >= 0) & (row < k.height)
    if not inside.any():
        return Image(img)

    idx = np.nonzero(front)[0][inside]
    pix = row[inside] * k.width + col[inside]
    depth = cam_z[idx]
    # Sort by (depth, original index): the first occurrence of each pixel id
    # is then the nearest point, earlier index on exact ties.
    order = np.lexsort((idx, depth))
    pix_sorted = pix[order]
    uniq, first = np.unique(pix_sorted, return_index=True)
    chosen = idx[order[first]]
    img.reshape(-1, 3)[uniq] = cloud.colors[chosen]
    return Image(img)


def png_bytes(image: Image) -> bytes:
    """Lossless PNG encoding of an image."""
    buf = io.BytesIO()
    PILImage.fromarray(image.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def image_from_png(data: bytes) -> Image:
    with PILImage.open(io.BytesIO(data)) as im:
        return Image(np.asarray(im.convert("RGB"), dtype=np.uint8))
