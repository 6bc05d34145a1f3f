"""Cloud file I/O: ASCII XYZ and ASCII/binary PLY.

XYZ lines carry ``x y z`` or ``x y z nx ny nz``. PLY vertices need float or
double properties x, y, z and may carry nx, ny, nz; other scalar properties
are skipped. The writers emit coordinates as doubles (binary PLY is
little-endian) so that written clouds read back bit-exactly.
"""

from __future__ import annotations

import os

import numpy as np

from .geometry import PointCloud

__all__ = ["read_xyz", "write_xyz", "read_ply", "write_ply", "load_cloud", "save_cloud"]

_PLY_DTYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "<i2",
    "int16": "<i2",
    "ushort": "<u2",
    "uint16": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
}


def _fmt(value: float) -> str:
    # repr keeps the shortest digit string that round-trips the double
    return repr(float(value))


def _ingest_normals(normals: np.ndarray, path: str) -> np.ndarray:
    """Renormalize only out-of-tolerance normals so clean files keep their
    exact bits."""
    lengths = np.linalg.norm(normals, axis=1)
    if np.any(lengths == 0):
        raise ValueError(f"{path}: zero-length normal")
    off = np.abs(lengths - 1.0) > 1e-6
    if off.any():
        normals = normals.copy()
        normals[off] /= lengths[off, None]
    return normals


def _cloud_from_columns(data: np.ndarray, path: str) -> PointCloud:
    if data.shape[1] == 3:
        return PointCloud(data)
    if data.shape[1] == 6:
        return PointCloud(data[:, :3], _ingest_normals(data[:, 3:6], path))
    raise ValueError(f"{path}: expected 3 or 6 columns, got {data.shape[1]}")


def read_xyz(path: str) -> PointCloud:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        data = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if data.size == 0:
        raise ValueError(f"{path}: empty input")
    return _cloud_from_columns(data, path)


def write_xyz(path: str, cloud: PointCloud) -> None:
    with open(path, "w") as f:
        if cloud.has_normals:
            for p, n in zip(cloud.points, cloud.normals):
                f.write(
                    f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])} "
                    f"{_fmt(n[0])} {_fmt(n[1])} {_fmt(n[2])}\n"
                )
        else:
            for p in cloud.points:
                f.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")


def _parse_ply_header(blob: bytes, path: str):
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    body_offset = end + len(b"end_header\n")
    lines = blob[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    vertex_count = None
    properties: list[tuple[str, str]] = []
    in_vertex = False
    seen_vertex = False
    for line in lines[1:]:
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            if tokens[1] == "vertex":
                if seen_vertex:
                    raise ValueError(f"{path}: multiple vertex elements")
                vertex_count = int(tokens[2])
                in_vertex = True
                seen_vertex = True
            else:
                if not seen_vertex:
                    raise ValueError(f"{path}: vertex element must come first")
                in_vertex = False
        elif tokens[0] == "property" and in_vertex:
            if tokens[1] == "list":
                raise ValueError(f"{path}: list properties on vertices are unsupported")
            if tokens[1] not in _PLY_DTYPES:
                raise ValueError(f"{path}: unsupported property type {tokens[1]!r}")
            properties.append((tokens[2], tokens[1]))
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise ValueError(f"{path}: unsupported PLY format {fmt!r}")
    if vertex_count is None:
        raise ValueError(f"{path}: missing vertex element")
    return fmt, vertex_count, properties, body_offset


def read_ply(path: str) -> PointCloud:
    with open(path, "rb") as f:
        blob = f.read()
    fmt, count, properties, offset = _parse_ply_header(blob, path)
    names = [name for name, _ in properties]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ValueError(f"{path}: vertex property {axis!r} missing")
    has_normals = all(n in names for n in ("nx", "ny", "nz"))

    if fmt == "ascii":
        text = blob[offset:].decode("ascii")
        rows = [line.split() for line in text.splitlines() if line.strip()][:count]
        if len(rows) < count:
            raise ValueError(f"{path}: truncated vertex data")
        data = np.array(rows, dtype=np.float64)
        if data.shape[1] != len(properties):
            raise ValueError(f"{path}: vertex line has wrong column count")
        columns = {name: data[:, i] for i, (name, _) in enumerate(properties)}
    else:
        dtype = np.dtype(
            [(name, _PLY_DTYPES[ptype]) for name, ptype in properties]
        )
        if fmt == "binary_big_endian":
            dtype = dtype.newbyteorder(">")
        nbytes = dtype.itemsize * count
        if len(blob) - offset < nbytes:
            raise ValueError(f"{path}: truncated vertex data")
        records = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        columns = {name: records[name].astype(np.float64) for name, _ in properties}

    points = np.column_stack([columns["x"], columns["y"], columns["z"]])
    if not has_normals:
        return PointCloud(points)
    normals = np.column_stack([columns["nx"], columns["ny"], columns["nz"]])
    return PointCloud(points, _ingest_normals(normals, path))


def write_ply(path: str, cloud: PointCloud, binary: bool = True) -> None:
    names = ["x", "y", "z"] + (["nx", "ny", "nz"] if cloud.has_normals else [])
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {len(cloud)}")
    header.extend(f"property double {name}" for name in names)
    header.append("end_header")
    data = (
        np.hstack([cloud.points, cloud.normals])
        if cloud.has_normals
        else cloud.points
    )
    if binary:
        with open(path, "wb") as f:
            f.write(("\n".join(header) + "\n").encode("ascii"))
            f.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
    else:
        with open(path, "w") as f:
            f.write("\n".join(header) + "\n")
            for row in data:
                f.write(" ".join(_fmt(v) for v in row) + "\n")


def load_cloud(path: str) -> PointCloud:
    """Read a cloud, picking the format from the file extension."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ply":
        return read_ply(path)
    if ext in (".xyz", ".txt"):
        return read_xyz(path)
    raise ValueError(f"unrecognized cloud format {ext!r} (use .ply or .xyz)")


def save_cloud(path: str, cloud: PointCloud, binary: bool = True) -> None:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ply":
        write_ply(path, cloud, binary=binary)
    elif ext in (".xyz", ".txt"):
        write_xyz(path, cloud)
    else:
        raise ValueError(f"unrecognized cloud format {ext!r} (use .ply or .xyz)")
