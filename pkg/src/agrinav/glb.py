"""Binary glTF (GLB) container for colored point sets.

Encodes a point cloud as a single mesh primitive of mode 0 (POINTS) with a
float32 VEC3 POSITION accessor and a normalized uint8 VEC4 COLOR_0 accessor
(alpha fixed at 255). The container is the standard 12-byte header followed
by one JSON chunk (space padded) and one BIN chunk (zero padded), both
4-byte aligned. Arbitrary app data rides in the root-level "extras" object.
"""

from __future__ import annotations

import json
import struct

import numpy as np

GLB_MAGIC = 0x46546C67  # 'glTF'
CHUNK_JSON = 0x4E4F534A  # 'JSON'
CHUNK_BIN = 0x004E4942  # 'BIN\0'
_COMPONENT_F32 = 5126
_COMPONENT_U8 = 5121
_MODE_POINTS = 0


class GlbError(ValueError):
    """Base class for GLB container violations."""


class BadMagic(GlbError):
    """First four header bytes are not 'glTF'."""


class UnsupportedVersion(GlbError):
    """Container version is not 2."""


class ChunkLengthMismatch(GlbError):
    """Declared lengths disagree with the actual byte stream."""


class MissingPositionAccessor(GlbError):
    """No point primitive with a POSITION attribute was found."""


def _pad(data: bytes, fill: bytes) -> bytes:
    rem = len(data) % 4
    return data if rem == 0 else data + fill * (4 - rem)


def encode_point_glb(points: np.ndarray, colors: np.ndarray, extras: dict | None = None) -> bytes:
    """Serialize (N, 3) float points and (N, 3) uint8 colors to GLB bytes."""
    pts = np.ascontiguousarray(np.asarray(points, dtype="<f4").reshape(-1, 3))
    cols3 = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    if len(pts) != len(cols3):
        raise ValueError("points and colors must have equal length")
    rgba = np.empty((len(cols3), 4), dtype=np.uint8)
    rgba[:, :3] = cols3
    rgba[:, 3] = 255

    pos_blob = pts.tobytes()
    pos_len = len(pos_blob)
    col_offset = (pos_len + 3) // 4 * 4
    bin_blob = pos_blob + b"\x00" * (col_offset - pos_len) + rgba.tobytes()

    n = len(pts)
    pos_accessor: dict = {
        "bufferView": 0,
        "componentType": _COMPONENT_F32,
        "count": n,
        "type": "VEC3",
    }
    if n:
        pos_accessor["min"] = [float(v) for v in pts.min(axis=0)]
        pos_accessor["max"] = [float(v) for v in pts.max(axis=0)]
    gltf = {
        "asset": {"version": "2.0"},
        "scene": 0,
        "scenes": [{"nodes": [0]}],
        "nodes": [{"mesh": 0}],
        "meshes": [
            {"primitives": [{"attributes": {"POSITION": 0, "COLOR_0": 1}, "mode": _MODE_POINTS}]}
        ],
        "accessors": [
            pos_accessor,
            {
                "bufferView": 1,
                "componentType": _COMPONENT_U8,
                "count": n,
                "type": "VEC4",
                "normalized": True,
            },
        ],
        "bufferViews": [
            {"buffer": 0, "byteOffset": 0, "byteLength": pos_len},
            {"buffer": 0, "byteOffset": col_offset, "byteLength": len(rgba.tobytes())},
        ],
        "buffers": [{"byteLength": len(bin_blob)}],
    }
    if extras is not None:
        gltf["extras"] = extras

    json_chunk = _pad(json.dumps(gltf, separators=(",", ":"), sort_keys=True).encode(), b" ")
    bin_chunk = _pad(bin_blob, b"\x00")
    total = 12 + 8 + len(json_chunk) + 8 + len(bin_chunk)
    out = bytearray()
    out += struct.pack("<III", GLB_MAGIC, 2, total)
    out += struct.pack("<II", len(json_chunk), CHUNK_JSON) + json_chunk
    out += struct.pack("<II", len(bin_chunk), CHUNK_BIN) + bin_chunk
    return bytes(out)


def _read_chunks(data: bytes) -> dict[int, bytes]:
    chunks: dict[int, bytes] = {}
    offset = 12
    while offset < len(data):
        if offset + 8 > len(data):
            raise ChunkLengthMismatch("truncated chunk header")
        length, ctype = struct.unpack_from("<II", data, offset)
        offset += 8
        if offset + length > len(data):
            raise ChunkLengthMismatch(
                f"chunk of declared length {length} overruns the container"
            )
        chunks.setdefault(ctype, data[offset : offset + length])
        offset += length
    return chunks


def decode_point_glb(data: bytes) -> tuple[np.ndarray, np.ndarray, dict]:
    """Parse GLB bytes back to (points float32 (N,3), colors uint8 (N,3), extras)."""
    if len(data) < 4 or struct.unpack_from("<I", data, 0)[0] != GLB_MAGIC:
        raise BadMagic("not a GLB container (bad magic)")
    if len(data) < 12:
        raise ChunkLengthMismatch("header truncated")
    version, total = struct.unpack_from("<II", data, 4)
    if version != 2:
        raise UnsupportedVersion(f"GLB version {version} is not supported")
    if total != len(data):
        raise ChunkLengthMismatch(f"declared length {total} != actual {len(data)}")

    chunks = _read_chunks(data)
    if CHUNK_JSON not in chunks:
        raise ChunkLengthMismatch("missing JSON chunk")
    try:
        gltf = json.loads(chunks[CHUNK_JSON].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise GlbError(f"unreadable JSON chunk: {exc}") from exc
    binary = chunks.get(CHUNK_BIN, b"")

    attributes = None
    for mesh in gltf.get("meshes", []):
        for prim in mesh.get("primitives", []):
            if "POSITION" in prim.get("attributes", {}):
                attributes = prim["attributes"]
                break
        if attributes:
            break
    if attributes is None:
        raise MissingPositionAccessor("no primitive with a POSITION attribute")

    accessors = gltf.get("accessors", [])
    views = gltf.get("bufferViews", [])

    def accessor_array(index: int, dtype: np.dtype, comps: int) -> np.ndarray:
        acc = accessors[index]
        view = views[acc["bufferView"]]
        start = view.get("byteOffset", 0) + acc.get("byteOffset", 0)
        count = acc["count"]
        nbytes = count * comps * dtype.itemsize
        if start + nbytes > len(binary):
            raise ChunkLengthMismatch("accessor data overruns BIN chunk")
        return np.frombuffer(binary, dtype=dtype, count=count * comps, offset=start).reshape(
            count, comps
        )

    pos_acc = accessors[attributes["POSITION"]]
    if pos_acc.get("componentType") != _COMPONENT_F32 or pos_acc.get("type") != "VEC3":
        raise GlbError("POSITION accessor must be float32 VEC3")
    points = accessor_array(attributes["POSITION"], np.dtype("<f4"), 3).astype(np.float32)

    if "COLOR_0" in attributes:
        cacc = accessors[attributes["COLOR_0"]]
        comps = 4 if cacc.get("type") == "VEC4" else 3
        if cacc.get("componentType") == _COMPONENT_U8:
            colors = accessor_array(attributes["COLOR_0"], np.dtype(np.uint8), comps)[:, :3].copy()
        elif cacc.get("componentType") == _COMPONENT_F32:
            raw = accessor_array(attributes["COLOR_0"], np.dtype("<f4"), comps)[:, :3]
            colors = np.clip(np.rint(raw * 255.0), 0, 255).astype(np.uint8)
        else:
            raise GlbError("COLOR_0 accessor must be uint8 or float32")
    else:
        colors = np.full((len(points), 3), 255, dtype=np.uint8)

    return points, colors, gltf.get("extras", {})
