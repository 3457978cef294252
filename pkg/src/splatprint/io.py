"""File formats: ASCII PLY point clouds, binary PPM/PGM rasters, CSV traces."""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .errors import MalformedFile

PLY_FLOAT_FMT = "%.9g"


def _atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _format_rows(cols, fmts):
    """Format a list of column arrays into text rows, one vertex per line."""
    parts = []
    for c, f in zip(cols, fmts):
        c = np.asarray(c)
        if c.ndim == 1:
            c = c[:, None]
        parts.append([[f % x for x in row] for row in c.tolist()])
    return "\n".join(" ".join(sum((p[i] for p in parts), [])) for i in range(len(parts[0])))


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------


def write_ply(path, points, colors=None, extra=None, comments=(), float_fmt=PLY_FLOAT_FMT):
    """Write an ASCII 1.0 PLY vertex list.

    ``extra`` is an ordered mapping ``name -> (N,) array`` of additional float
    properties. Colors are stored as float ``red green blue`` in [0, 1].
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    names = ["x", "y", "z"]
    cols = [points]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.float64).reshape(n, 3)
        names += ["red", "green", "blue"]
        cols.append(colors)
    for key, arr in (extra or {}).items():
        arr = np.asarray(arr, dtype=np.float64).reshape(n, -1)
        if arr.shape[1] == 1:
            names.append(key)
        else:
            names += [f"{key}_{i}" for i in range(arr.shape[1])]
        cols.append(arr)
    header = ["ply", "format ascii 1.0"]
    header += [f"comment {c}" for c in comments]
    header += [f"element vertex {n}"]
    header += [f"property float {nm}" for nm in names]
    header += ["end_header"]
    body = _format_rows(cols, [float_fmt] * len(cols)) if n else ""
    text = "\n".join(header) + "\n" + (body + "\n" if n else "")
    _atomic_write_bytes(path, text.encode("ascii"))


def read_ply(path):
    """Read a PLY written by :func:`write_ply`.

    Returns ``(properties, comments)`` where ``properties`` maps property name
    to a float array.
    """
    data = Path(path).read_bytes()
    marker = b"end_header\n"
    end = data.find(marker)
    if not data.startswith(b"ply\n") or end < 0:
        raise MalformedFile(f"{path}: missing PLY header", 0)
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body_start = end + len(marker)
    n = None
    names = []
    comments = []
    for line in header[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1:] != ["ascii", "1.0"]:
            raise MalformedFile(f"{path}: only ascii 1.0 PLY is supported", 0)
        if tok[0] == "comment":
            comments.append(line[len("comment ") :])
        elif tok[0] == "element":
            if tok[1] != "vertex":
                raise MalformedFile(f"{path}: unsupported element {tok[1]}", 0)
            n = int(tok[2])
        elif tok[0] == "property":
            names.append(tok[-1])
    if n is None:
        raise MalformedFile(f"{path}: no vertex element", 0)
    rows = []
    offset = body_start
    lines = data[body_start:].split(b"\n")
    for i in range(n):
        if i >= len(lines) or not lines[i].strip():
            raise MalformedFile(f"{path}: expected {n} vertices, found {i}", offset)
        vals = lines[i].split()
        if len(vals) != len(names):
            raise MalformedFile(f"{path}: vertex {i} has {len(vals)} values, expected {len(names)}", offset)
        try:
            rows.append([float(v) for v in vals])
        except ValueError:
            raise MalformedFile(f"{path}: non-numeric value in vertex {i}", offset) from None
        offset += len(lines[i]) + 1
    arr = np.array(rows, dtype=np.float64).reshape(n, len(names))
    return {nm: arr[:, j] for j, nm in enumerate(names)}, comments


def export_ply(path, cloud, comments=()):
    """Write a :class:`ColoredPointCloud`-like object (``points``, ``colors``)."""
    write_ply(path, cloud.points, getattr(cloud, "colors", None), comments=comments)


def import_ply(path):
    """Read points and (optional) colors back from PLY."""
    from .global_align import ColoredPointCloud

    props, _ = read_ply(path)
    pts = np.stack([props["x"], props["y"], props["z"]], axis=-1)
    if "red" in props:
        colors = np.stack([props["red"], props["green"], props["blue"]], axis=-1)
    else:
        colors = np.zeros_like(pts)
    return ColoredPointCloud(pts, colors)


# ---------------------------------------------------------------------------
# PPM / PGM
# ---------------------------------------------------------------------------


def to_uint8(image):
    return np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, image):
    """8-bit binary P6; ``image`` is (H, W, 3) float in [0, 1]."""
    img = to_uint8(image)
    h, w = img.shape[:2]
    _atomic_write_bytes(path, f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def write_pgm_mask(path, mask):
    """Binary P5 with values {0, 255}."""
    m = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    h, w = m.shape
    _atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode("ascii") + m.tobytes())


def _read_netpbm(path, magic):
    data = Path(path).read_bytes()
    if data[:2] != magic:
        raise MalformedFile(f"{path}: expected {magic.decode()} magic", 0)
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise MalformedFile(f"{path}: bad header", pos)
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise MalformedFile(f"{path}: bad header terminator", pos)
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise MalformedFile(f"{path}: only 8-bit rasters are supported", pos)
    return data, pos, w, h


def read_ppm(path):
    data, pos, w, h = _read_netpbm(path, b"P6")
    need = w * h * 3
    if len(data) - pos < need:
        raise MalformedFile(f"{path}: truncated pixel data", len(data))
    px = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3)
    return px.astype(np.float64) / 255.0


def read_pgm_mask(path):
    data, pos, w, h = _read_netpbm(path, b"P5")
    need = w * h
    if len(data) - pos < need:
        raise MalformedFile(f"{path}: truncated pixel data", len(data))
    px = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(h, w)
    return px > 127


# ---------------------------------------------------------------------------
# CSV / text
# ---------------------------------------------------------------------------


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    os.replace(tmp, path)


def write_text(path, text):
    _atomic_write_bytes(path, text.encode("utf-8"))
