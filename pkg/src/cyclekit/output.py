"""Deterministic writers for the machine-readable artifacts.

Every artifact embeds the run configuration so re-running it reproduces
the file byte for byte: floats are serialized with repr (shortest
round-trip), dict keys are sorted, and nothing time- or host-dependent is
written.
"""
from __future__ import annotations

import json
import struct
import zlib

import numpy as np


def jsonify(obj):
    """Recursively convert numpy/complex payloads to JSON-friendly values."""
    if isinstance(obj, dict):
        return {str(k): jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def dump_json(payload: dict) -> str:
    return json.dumps(jsonify(payload), indent=2, sort_keys=True) + "\n"


def write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        fh.write(dump_json(payload))


def _comment_header(config: dict) -> str:
    return "# config: " + json.dumps(jsonify(config), sort_keys=True) + "\n"


def write_curve_csv(path: str, t: np.ndarray, points: np.ndarray,
                    config: dict | None = None) -> None:
    """CSV of (t, Re, Im) rows for a sampled curve."""
    with open(path, "w") as fh:
        if config is not None:
            fh.write(_comment_header(config))
        fh.write("t,re,im\n")
        for ti, zi in zip(t, points):
            fh.write(f"{ti!r},{zi.real!r},{zi.imag!r}\n")


def write_matrix_csv(path: str, matrix: np.ndarray,
                     config: dict | None = None) -> None:
    with open(path, "w") as fh:
        if config is not None:
            fh.write(_comment_header(config))
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _gray_levels(matrix: np.ndarray) -> np.ndarray:
    """Map raster values to 0..255: darker means closer to the unit circle.

    Values are spectral radii; the distance to instability is |1 - value|,
    clipped at 1, so the stability boundary itself renders black and both
    superstable and strongly unstable pixels render light.  NaN maps to
    mid-gray.
    """
    dist = np.clip(np.abs(1.0 - matrix), 0.0, 1.0)
    levels = np.rint(dist * 255.0)
    return np.where(np.isfinite(matrix), levels, 128.0).astype(np.uint8)


def write_raster_pgm(path: str, matrix: np.ndarray) -> None:
    """Plain-text PGM (P2), one raster row per line, top row first."""
    levels = _gray_levels(matrix)
    ny, nx = levels.shape
    lines = [f"P2\n{nx} {ny}\n255\n"]
    for row in levels[::-1]:  # image rows top-down, matrix rows bottom-up
        lines.append(" ".join(str(int(v)) for v in row) + "\n")
    with open(path, "w") as fh:
        fh.writelines(lines)


def _png_bytes(levels: np.ndarray) -> bytes:
    """Minimal grayscale 8-bit PNG encoder (deterministic zlib level 9)."""
    ny, nx = levels.shape
    raw = b"".join(b"\x00" + levels[r].tobytes() for r in range(ny))

    def chunk(tag: bytes, data: bytes) -> bytes:
        return (struct.pack(">I", len(data)) + tag + data
                + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF))

    header = struct.pack(">IIBBBBB", nx, ny, 8, 0, 0, 0, 0)
    return (b"\x89PNG\r\n\x1a\n"
            + chunk(b"IHDR", header)
            + chunk(b"IDAT", zlib.compress(raw, 9))
            + chunk(b"IEND", b""))


def write_raster_svg(path: str, matrix: np.ndarray, window) -> None:
    """SVG wrapping the raster as an embedded grayscale PNG."""
    import base64
    levels = _gray_levels(matrix)[::-1]
    png = base64.b64encode(_png_bytes(levels)).decode("ascii")
    (x0, x1), (y0, y1) = window
    ny, nx = levels.shape
    with open(path, "w") as fh:
        fh.write(
            f'<svg xmlns="http://www.w3.org/2000/svg" '
            f'xmlns:xlink="http://www.w3.org/1999/xlink" '
            f'width="{nx}" height="{ny}" viewBox="0 0 {nx} {ny}">\n'
            f'  <!-- window x:[{x0!r},{x1!r}] y:[{y0!r},{y1!r}] -->\n'
            f'  <image width="{nx}" height="{ny}" '
            f'xlink:href="data:image/png;base64,{png}"/>\n'
            "</svg>\n")


def write_orbit_svg(path: str, background: np.ndarray, cycles,
                    size: int = 640, margin: float = 0.05) -> None:
    """Scatter plot: attractor sample in gray, cycle points highlighted.

    1-d states are lifted to delay coordinates (x_n, x_{n+1}).
    """
    bg = np.asarray(background, dtype=float)
    if bg.ndim == 2 and bg.shape[1] == 1:
        bg = np.column_stack([bg[:-1, 0], bg[1:, 0]])
    pts_list = []
    for cyc in cycles:
        arr = np.asarray(cyc, dtype=float)
        if arr.shape[1] == 1:
            arr = np.column_stack([arr[:, 0], np.roll(arr[:, 0], -1)])
        pts_list.append(arr)
    allpts = np.vstack([bg] + pts_list) if pts_list else bg
    lo = allpts.min(axis=0)
    hi = allpts.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    pad = margin * span
    lo, hi = lo - pad, hi + pad
    span = hi - lo

    def sx(p):
        return (p[0] - lo[0]) / span[0] * size

    def sy(p):
        return size - (p[1] - lo[1]) / span[1] * size

    with open(path, "w") as fh:
        fh.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
                 f'height="{size}" viewBox="0 0 {size} {size}">\n'
                 f'  <rect width="{size}" height="{size}" fill="white"/>\n')
        for p in bg:
            fh.write(f'  <circle cx="{sx(p):.2f}" cy="{sy(p):.2f}" r="0.8" '
                     'fill="#999999"/>\n')
        palette = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"]
        for i, arr in enumerate(pts_list):
            color = palette[i % len(palette)]
            for p in arr:
                fh.write(f'  <circle cx="{sx(p):.2f}" cy="{sy(p):.2f}" r="4" '
                         f'fill="{color}" stroke="black" stroke-width="0.5"/>\n')
        fh.write("</svg>\n")


def write_table_csv(path: str, header: list[str], rows: list[list],
                    config: dict | None = None) -> None:
    with open(path, "w") as fh:
        if config is not None:
            fh.write(_comment_header(config))
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for v in row:
                if isinstance(v, float):
                    cells.append(repr(v))
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")
