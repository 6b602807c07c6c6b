"""Sensor output and trajectory file formats: PPM, PFM, PLY, TUM, CSV."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .config import ConfigError
from .geometry import Pose


def to_bytes(img) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, img) -> None:
    """Binary P6, maxval 255; float input in [0, 1] maps by round(255 v)."""
    img = np.asarray(img)
    data = img if img.dtype == np.uint8 else to_bytes(img)
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())


def _ppm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_ppm(path) -> np.ndarray:
    """(H, W, 3) float image in [0, 1]."""
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _ppm_tokens(data, 4)
    if magic != b"P6":
        raise ConfigError(f"{path}: not a binary PPM (P6)")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ConfigError(f"{path}: only maxval 255 supported")
    px = np.frombuffer(data[pos:pos + w * h * 3], dtype=np.uint8)
    if px.size != w * h * 3:
        raise ConfigError(f"{path}: truncated pixel data")
    return px.reshape(h, w, 3).astype(np.float64) / 255.0


def write_pfm(path, depth) -> None:
    """Greyscale PFM, little-endian float32, rows stored bottom-to-top."""
    d = np.asarray(depth, dtype="<f4")
    h, w = d.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(d[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, scale), pos = _ppm_tokens(data, 4)
    if magic != b"Pf":
        raise ConfigError(f"{path}: not a greyscale PFM (Pf)")
    w, h, scale = int(w), int(h), float(scale)
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data[pos:pos + 4 * w * h], dtype=dtype)
    if arr.size != w * h:
        raise ConfigError(f"{path}: truncated PFM data")
    return arr.reshape(h, w)[::-1].astype(np.float64)


def write_ply(path, cloud) -> None:
    """ASCII PLY with x, y, z, beam, azimuth, range per point."""
    n = len(cloud)
    lines = ["ply", "format ascii 1.0", f"element vertex {n}",
             "property float x", "property float y", "property float z",
             "property int beam", "property int azimuth", "property float range", "end_header"]
    for p, b, a, r in zip(cloud.points, cloud.beam, cloud.azimuth, cloud.range):
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {int(b)} {int(a)} {r:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path):
    from .render import PointCloud

    lines = Path(path).read_text().splitlines()
    try:
        end = lines.index("end_header")
    except ValueError as e:
        raise ConfigError(f"{path}: missing end_header") from e
    rows = [ln.split() for ln in lines[end + 1:] if ln.strip()]
    if not rows:
        return PointCloud(np.zeros((0, 3)), np.zeros(0, int), np.zeros(0, int), np.zeros(0))
    arr = np.array(rows, dtype=np.float64)
    return PointCloud(arr[:, :3], arr[:, 3].astype(int), arr[:, 4].astype(int), arr[:, 5])


def read_tum(path) -> list:
    """``timestamp tx ty tz qx qy qz qw`` per line, '#' comments -> [(t, Pose)]."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ConfigError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        try:
            t, tx, ty, tz, qx, qy, qz, qw = (float(p) for p in parts)
            pose = Pose((qw, qx, qy, qz), (tx, ty, tz))
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: {e}") from e
        out.append((t, pose))
    return out


def format_tum(samples) -> str:
    lines = []
    for t, p in samples:
        w, x, y, z = p.rotation
        tx, ty, tz = p.translation
        lines.append(" ".join(repr(float(v)) for v in (t, tx, ty, tz, x, y, z, w)))
    return "\n".join(lines) + "\n"


def write_tum(path, samples) -> None:
    Path(path).write_text("# timestamp tx ty tz qx qy qz qw\n" + format_tum(samples))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
