"""Binary descriptor files (.kpln).

Layout, all little-endian:

    magic "KPLN" | version u32 | K u32 | R u32 | C u32 (= 5)
    query point        3 x f64
    per plane          origin 3 x f64, u/v/w axes 9 x f64, side f64
    channels           plane-major, order [depth, valid, nx, ny, nz],
                       row-major f32

Files round-trip byte-exactly: reading and re-writing reproduces the
input bit for bit (channels are quantized to f32 at write time).
"""

from __future__ import annotations

import struct

import numpy as np

from .descriptor import NUM_CHANNELS, KaplanDescriptor, PlaneFrame

__all__ = ["KplnFormatError", "MAGIC", "VERSION", "to_bytes", "from_bytes",
           "write_kpln", "read_kpln"]

MAGIC = b"KPLN"
VERSION = 1

_HEADER = struct.Struct("<4sIIII")
_QUERY = struct.Struct("<3d")
_PLANE = struct.Struct("<13d")


class KplnFormatError(ValueError):
    """Raised for structurally invalid descriptor files."""


def to_bytes(desc: KaplanDescriptor) -> bytes:
    k = desc.num_planes
    r = desc.resolution
    parts = [_HEADER.pack(MAGIC, VERSION, k, r, NUM_CHANNELS)]
    parts.append(_QUERY.pack(*desc.query))
    for plane in desc.planes:
        parts.append(
            _PLANE.pack(
                *plane.origin, *plane.u_axis, *plane.v_axis, *plane.w_axis,
                plane.side_length,
            )
        )
    channels = np.empty((k, NUM_CHANNELS, r, r), dtype="<f4")
    channels[:, 0] = desc.depth
    channels[:, 1] = desc.valid
    channels[:, 2] = desc.normal[..., 0]
    channels[:, 3] = desc.normal[..., 1]
    channels[:, 4] = desc.normal[..., 2]
    parts.append(channels.tobytes())
    return b"".join(parts)


def from_bytes(blob: bytes, query_index: int = 0) -> KaplanDescriptor:
    if len(blob) < _HEADER.size:
        raise KplnFormatError("file too short for header")
    magic, version, k, r, c = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise KplnFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise KplnFormatError(f"unsupported version {version}")
    if c != NUM_CHANNELS:
        raise KplnFormatError(f"expected {NUM_CHANNELS} channels per plane, got {c}")
    if k < 1:
        raise KplnFormatError("plane count must be >= 1")
    if r < 3 or r % 2 == 0:
        raise KplnFormatError(f"resolution must be odd and >= 3, got {r}")

    expected = (
        _HEADER.size + _QUERY.size + k * _PLANE.size
        + k * NUM_CHANNELS * r * r * 4
    )
    if len(blob) != expected:
        raise KplnFormatError(f"file size {len(blob)} != expected {expected}")

    offset = _HEADER.size
    query = np.array(_QUERY.unpack_from(blob, offset))
    offset += _QUERY.size
    planes = []
    for _ in range(k):
        vals = _PLANE.unpack_from(blob, offset)
        offset += _PLANE.size
        try:
            planes.append(
                PlaneFrame(
                    origin=vals[0:3],
                    u_axis=vals[3:6],
                    v_axis=vals[6:9],
                    w_axis=vals[9:12],
                    side_length=vals[12],
                    resolution=r,
                )
            )
        except ValueError as exc:
            raise KplnFormatError(f"invalid plane frame: {exc}") from exc

    channels = np.frombuffer(blob, dtype="<f4", offset=offset).reshape(
        k, NUM_CHANNELS, r, r
    )
    if not np.isfinite(channels).all():
        raise KplnFormatError("channels contain NaN or infinite values")
    normal = np.stack(
        [channels[:, 2], channels[:, 3], channels[:, 4]], axis=-1
    ).astype(np.float64)
    return KaplanDescriptor(
        planes=planes,
        depth=channels[:, 0].astype(np.float64),
        valid=channels[:, 1].astype(np.float64),
        normal=normal,
        query=query,
        query_index=query_index,
    )


def write_kpln(path: str, desc: KaplanDescriptor) -> None:
    with open(path, "wb") as f:
        f.write(to_bytes(desc))


def read_kpln(path: str, query_index: int = 0) -> KaplanDescriptor:
    with open(path, "rb") as f:
        return from_bytes(f.read(), query_index=query_index)
