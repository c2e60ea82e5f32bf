"""Readers and writers for XYZ, OBJ and PLY geometry."""

from __future__ import annotations

import os
import struct

import numpy as np

from .contouring import Mesh, Polyline
from .geometry import PointCloud, TriangleSoup

__all__ = [
    "InputError",
    "read_geometry",
    "read_xyz",
    "read_obj",
    "read_ply",
    "write_ply",
    "write_obj",
    "write_xyz",
]


class InputError(ValueError):
    """Unreadable, empty or non-finite input geometry."""


def _finish(points, faces, path):
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        raise InputError(f"{path}: no vertices")
    if not np.all(np.isfinite(points)):
        raise InputError(f"{path}: non-finite coordinates")
    try:
        if faces is not None and len(faces):
            return TriangleSoup(points, np.asarray(faces, dtype=np.int64))
        return PointCloud(points)
    except ValueError as e:
        raise InputError(f"{path}: {e}") from None


def read_xyz(path):
    """One point per line, 2 or 3 coordinates; extra columns are ignored."""
    rows = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].split()
            if not s:
                continue
            try:
                vals = [float(v) for v in s]
            except ValueError:
                raise InputError(f"{path}:{ln}: not a number") from None
            if len(vals) < 2:
                raise InputError(f"{path}:{ln}: need at least 2 coordinates")
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: empty file")
    dim = 3 if min(len(r) for r in rows) >= 3 else 2
    return _finish([r[:dim] for r in rows], None, path)


def read_obj(path):
    """``v`` and ``f`` records; polygons are fan-triangulated."""
    verts, faces = [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            s = line.split()
            if not s:
                continue
            try:
                if s[0] == "v":
                    verts.append([float(v) for v in s[1:4]])
                elif s[0] == "f":
                    idx = []
                    for tok in s[1:]:
                        i = int(tok.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
            except ValueError:
                raise InputError(f"{path}:{ln}: malformed record") from None
    if any(len(v) != 3 for v in verts):
        raise InputError(f"{path}: vertices need 3 coordinates")
    return _finish(verts, faces, path)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _ply_header(fh, path):
    if fh.readline().strip() != b"ply":
        raise InputError(f"{path}: missing ply magic")
    fmt, elements = None, []
    while True:
        line = fh.readline()
        if not line:
            raise InputError(f"{path}: truncated header")
        s = line.decode("ascii", "replace").split()
        if not s or s[0] in ("comment", "obj_info"):
            continue
        if s[0] == "format":
            fmt = s[1]
        elif s[0] == "element":
            elements.append((s[1], int(s[2]), []))
        elif s[0] == "property":
            if not elements:
                raise InputError(f"{path}: property before element")
            if s[1] == "list":
                elements[-1][2].append((s[4], "list", _PLY_TYPES[s[2]], _PLY_TYPES[s[3]]))
            else:
                elements[-1][2].append((s[2], _PLY_TYPES[s[1]], None, None))
        elif s[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise InputError(f"{path}: unsupported PLY format {fmt!r}")
    return fmt, elements


def read_ply(path):
    """ASCII or binary little-endian PLY with ``vertex`` and optional ``face`` elements."""
    with open(path, "rb") as fh:
        try:
            fmt, elements = _ply_header(fh, path)
        except KeyError as e:
            raise InputError(f"{path}: unknown PLY type {e}") from None
        body = fh.read()
    data = {}
    if fmt == "ascii":
        tokens = body.split()
        pos = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                row = {}
                for pname, kind, ctype, itype in props:
                    if kind == "list":
                        n = int(tokens[pos])
                        row[pname] = [int(t) for t in tokens[pos + 1:pos + 1 + n]]
                        pos += 1 + n
                    else:
                        row[pname] = float(tokens[pos])
                        pos += 1
                rows.append(row)
            data[name] = rows
    else:
        pos = 0
        for name, count, props in elements:
            if all(kind != "list" for _, kind, _, _ in props):
                dt = np.dtype([(p[0], "<" + p[1]) for p in props])
                arr = np.frombuffer(body, dtype=dt, count=count, offset=pos)
                pos += dt.itemsize * count
                data[name] = [{p[0]: float(r[p[0]]) for p in props} for r in arr] if name != "vertex" else arr
                continue
            rows = []
            for _ in range(count):
                row = {}
                for pname, kind, ctype, itype in props:
                    if kind == "list":
                        cdt = np.dtype("<" + ctype)
                        n = int(np.frombuffer(body, cdt, 1, pos)[0])
                        pos += cdt.itemsize
                        idt = np.dtype("<" + itype)
                        row[pname] = np.frombuffer(body, idt, n, pos).tolist()
                        pos += idt.itemsize * n
                    else:
                        dt = np.dtype("<" + kind)
                        row[pname] = float(np.frombuffer(body, dt, 1, pos)[0])
                        pos += dt.itemsize
                rows.append(row)
            data[name] = rows
    if "vertex" not in data:
        raise InputError(f"{path}: no vertex element")
    vx = data["vertex"]
    try:
        if isinstance(vx, np.ndarray):
            pts = np.stack([vx[c].astype(np.float64) for c in ("x", "y", "z") if c in vx.dtype.names], axis=1)
        else:
            keys = [c for c in ("x", "y", "z") if vx and c in vx[0]]
            pts = np.array([[r[c] for c in keys] for r in vx], dtype=np.float64)
    except (KeyError, ValueError):
        raise InputError(f"{path}: malformed vertex element") from None
    faces = []
    for row in data.get("face", []):
        idx = row.get("vertex_indices", row.get("vertex_index"))
        if idx is None:
            continue
        faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
    return _finish(pts.reshape(len(pts), -1), faces, path)


_READERS = {".xyz": read_xyz, ".txt": read_xyz, ".pts": read_xyz, ".obj": read_obj, ".ply": read_ply}


def read_geometry(path):
    """Dispatch on file extension; returns a PointCloud or TriangleSoup."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext not in _READERS:
        raise InputError(f"{path}: unknown format {ext!r}")
    if not os.path.exists(path):
        raise InputError(f"{path}: no such file")
    try:
        return _READERS[ext](path)
    except InputError:
        raise
    except (IndexError, ValueError, UnicodeDecodeError, struct.error) as e:
        raise InputError(f"{path}: malformed file ({e})") from None


def _geometry_arrays(obj):
    if isinstance(obj, Polyline):
        return obj.vertices, None
    if isinstance(obj, Mesh):
        return obj.vertices, obj.faces
    if isinstance(obj, TriangleSoup):
        return obj.vertices, obj.triangles
    if isinstance(obj, PointCloud):
        return obj.points, None
    return np.asarray(obj, dtype=np.float64), None


def write_ply(path, obj, binary: bool = False):
    """Clouds, soups and meshes; a 2D Polyline is written with an ``edge`` element and z = 0."""
    v, f = _geometry_arrays(obj)
    e = obj.segments if isinstance(obj, Polyline) else None
    if v.shape[1] == 2:
        v = np.concatenate([v, np.zeros((len(v), 1))], axis=1)
    head = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
            f"element vertex {len(v)}", "property double x", "property double y", "property double z"]
    if f is not None:
        head += [f"element face {len(f)}", "property list uchar int vertex_indices"]
    if e is not None:
        head += [f"element edge {len(e)}", "property int vertex1", "property int vertex2"]
    head.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
            if f is not None:
                rec = np.empty(len(f), dtype=[("n", "u1"), ("i", "<i4", (3,))])
                rec["n"] = 3
                rec["i"] = f
                fh.write(rec.tobytes())
            if e is not None:
                fh.write(np.ascontiguousarray(e, dtype="<i4").tobytes())
        else:
            fh.write("".join(f"{a!r} {b!r} {c!r}\n" for a, b, c in v.tolist()).encode())
            if f is not None:
                fh.write("".join(f"3 {a} {b} {c}\n" for a, b, c in f.tolist()).encode())
            if e is not None:
                fh.write("".join(f"{a} {b}\n" for a, b in e.tolist()).encode())


def write_obj(path, obj):
    v, f = _geometry_arrays(obj)
    with open(path, "w") as fh:
        fh.writelines("v " + " ".join(repr(x) for x in row) + "\n" for row in v.tolist())
        if f is not None:
            fh.writelines(f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in f.tolist())


def write_xyz(path, points):
    pts = _geometry_arrays(points)[0]
    with open(path, "w") as fh:
        fh.writelines(" ".join(repr(x) for x in row) + "\n" for row in pts.tolist())
