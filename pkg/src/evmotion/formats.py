"""Readers and writers for the small scientific formats used on disk.

Depth maps travel as PFM (32-bit little-endian float, meters, 0 = invalid),
masks and rendered count maps as binary 8-bit PGM, point clouds as ASCII PLY
and trajectories as ``t tx ty tz qx qy qz qw`` text rows (comma or
whitespace separated). All writers produce byte-deterministic output.
"""

from __future__ import annotations

import json

import numpy as np

__all__ = [
    "write_pfm",
    "read_pfm",
    "write_pgm",
    "read_pgm",
    "write_ply",
    "read_ply",
    "write_trajectory",
    "read_trajectory",
    "write_json",
]


def write_pfm(path, data: np.ndarray) -> None:
    """Write a single-channel PFM image (little-endian, bottom-up rows)."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError("PFM writer expects a 2D array")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a single-channel PFM image into a float64 array (top-down rows)."""
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM file")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(w * h * 4), dtype=dtype).reshape(h, w)
    return data[::-1].astype(np.float64)


def write_pgm(path, data: np.ndarray) -> None:
    """Write a binary (P5) 8-bit PGM image."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError("PGM writer expects a 2D array")
    if data.dtype != np.uint8:
        if data.min() < 0 or data.max() > 255:
            raise ValueError("PGM data must fit in [0, 255]")
        data = data.astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM image."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM file")
        fields = []
        while len(fields) < 3:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: truncated PGM header")
            if line.startswith(b"#"):
                continue
            fields.extend(int(v) for v in line.split())
        w, h, maxval = fields[:3]
        if maxval != 255:
            raise ValueError(f"{path}: only maxval 255 PGM supported")
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8).reshape(h, w)
    return data.copy()


def write_ply(path, points: np.ndarray) -> None:
    """Write an (n, 3) point set as ASCII PLY (x y z float vertices)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        for p in points:
            fh.write(" ".join(np.format_float_positional(c, unique=True, trim="0")
                              for c in p) + "\n")


def read_ply(path) -> np.ndarray:
    """Read the vertex coordinates of an ASCII PLY file into (n, 3) float64."""
    with open(path, "r") as fh:
        if fh.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n_vertex = None
        ascii_fmt = False
        for line in fh:
            token = line.strip()
            if token.startswith("format"):
                ascii_fmt = "ascii" in token
            elif token.startswith("element vertex"):
                n_vertex = int(token.split()[-1])
            elif token == "end_header":
                break
        if not ascii_fmt:
            raise ValueError(f"{path}: only ASCII PLY supported")
        if n_vertex is None:
            raise ValueError(f"{path}: missing vertex element")
        pts = np.empty((n_vertex, 3))
        for i in range(n_vertex):
            parts = fh.readline().split()
            pts[i] = [float(parts[0]), float(parts[1]), float(parts[2])]
    return pts


def write_trajectory(path, t: np.ndarray, translation: np.ndarray,
                     quaternion: np.ndarray) -> None:
    """Write pose samples as ``t tx ty tz qx qy qz qw`` rows."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    translation = np.asarray(translation, dtype=np.float64).reshape(-1, 3)
    quaternion = np.asarray(quaternion, dtype=np.float64).reshape(-1, 4)
    with open(path, "w") as fh:
        fh.write("# t tx ty tz qx qy qz qw\n")
        for i in range(len(t)):
            row = [t[i], *translation[i], *quaternion[i]]
            fh.write(" ".join(np.format_float_positional(v, unique=True, trim="0")
                              for v in row) + "\n")


def read_trajectory(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read ``t tx ty tz qx qy qz qw`` rows; returns (t, translation, quat)."""
    ts, trs, qs = [], [], []
    with open(path, "r") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 8:
                raise ValueError(f"{path}:{line_no}: expected 8 fields, "
                                 f"got {len(parts)}")
            vals = [float(p) for p in parts]
            ts.append(vals[0])
            trs.append(vals[1:4])
            qs.append(vals[4:8])
    return (np.asarray(ts), np.asarray(trs).reshape(-1, 3),
            np.asarray(qs).reshape(-1, 4))


def write_json(path, obj) -> None:
    """Serialize to JSON with stable key order (byte-deterministic)."""
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True))
        fh.write("\n")
