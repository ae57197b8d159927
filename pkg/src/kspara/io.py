"""Field container, CSV and SVG writers, run manifests."""

from __future__ import annotations

import csv
import json
import platform
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .spectral_core import Lattice, SpectralField

MAGIC = b"KSPF"
VERSION = 1
_HEAD = struct.Struct("<4sHHId")  # magic, version, lead rank, N, time tag


# ---------------------------------------------------------------------------
# binary field container


def write_field(path, field: SpectralField) -> Path:
    """Header ``(N, time_tag)`` and lead shape, then little-endian complex128 coefficients in row-major order."""
    c = np.ascontiguousarray(field.coeffs, dtype="<c16")
    lead = c.shape[:-2]
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(lead), field.lattice.N, float(field.time_tag)))
        fh.write(struct.pack(f"<{len(lead)}I", *lead))
        fh.write(c.tobytes(order="C"))
    return path


def read_field(path) -> SpectralField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEAD.size:
        raise ValueError(f"{path}: truncated header")
    magic, ver, nlead, N, tag = _HEAD.unpack_from(raw)
    if magic != MAGIC or ver != VERSION:
        raise ValueError(f"{path}: not a field container (magic={magic!r}, version={ver})")
    off = _HEAD.size
    lead = struct.unpack_from(f"<{nlead}I", raw, off)
    off += 4 * nlead
    lat = Lattice(N)
    shape = tuple(lead) + lat.shape
    need = int(np.prod(shape)) * 16
    if len(raw) - off != need:
        raise ValueError(f"{path}: expected {need} coefficient bytes, found {len(raw) - off}")
    c = np.frombuffer(raw, dtype="<c16", offset=off).reshape(shape).astype(complex)
    return SpectralField(lat, c, time_tag=tag)


# ---------------------------------------------------------------------------
# CSV


def fmt(x) -> str:
    """Locale-free, round-trippable text for a CSV cell."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])
    return path


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def field_rows(field: SpectralField):
    lat = field.lattice
    c = field.coeffs
    if c.ndim != 2:
        raise ValueError("CSV export takes a scalar field")
    for i in range(lat.M):
        for j in range(lat.M):
            yield (i - lat.N, j - lat.N, c[i, j].real, c[i, j].imag)


def export_field_csv(path, field: SpectralField) -> Path:
    return write_csv(path, ("w1", "w2", "re", "im"), field_rows(field))


# ---------------------------------------------------------------------------
# SVG


_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def line_plot(path, series: Sequence[dict], xlabel: str = "", ylabel: str = "", title: str = "",
              width: int = 640, height: int = 420) -> Path:
    """Minimal SVG polyline plot; each series is ``{"x", "y", "label", "dash", "marker"}``."""
    ml, mr, mt, mb = 70, 150, 40, 50
    xs = np.concatenate([np.asarray(s["x"], float) for s in series]) if series else np.array([0.0, 1.0])
    ys = np.concatenate([np.asarray(s["y"], float) for s in series]) if series else np.array([0.0, 1.0])
    x0, x1 = float(np.min(xs)), float(np.max(xs))
    y0, y1 = float(np.min(ys)), float(np.max(ys))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    W, H = width - ml - mr, height - mt - mb

    def X(v):
        return ml + (v - x0) / (x1 - x0) * W

    def Y(v):
        return mt + (1 - (v - y0) / (y1 - y0)) * H

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{W}" height="{H}" fill="none" stroke="black"/>',
    ]
    for v in _ticks(x0, x1):
        out.append(f'<line x1="{X(v):.2f}" y1="{mt + H}" x2="{X(v):.2f}" y2="{mt + H + 5}" stroke="black"/>')
        out.append(f'<text x="{X(v):.2f}" y="{mt + H + 18}" text-anchor="middle">{v:.3g}</text>')
    for v in _ticks(y0, y1):
        out.append(f'<line x1="{ml - 5}" y1="{Y(v):.2f}" x2="{ml}" y2="{Y(v):.2f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{Y(v) + 4:.2f}" text-anchor="end">{v:.3g}</text>')
    for k, s in enumerate(series):
        col = _COLOURS[k % len(_COLOURS)]
        pts = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(s["x"], s["y"]))
        dash = ' stroke-dasharray="6,4"' if s.get("dash") else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.5"{dash}/>')
        if s.get("marker", True):
            for a, b in zip(s["x"], s["y"]):
                out.append(f'<circle cx="{X(a):.2f}" cy="{Y(b):.2f}" r="3" fill="{col}"/>')
        ly = mt + 15 + 18 * k
        out.append(f'<line x1="{ml + W + 10}" y1="{ly}" x2="{ml + W + 30}" y2="{ly}" stroke="{col}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{ml + W + 35}" y="{ly + 4}">{_esc(s.get("label", ""))}</text>')
    out.append(f'<text x="{ml + W / 2}" y="{height - 10}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(
        f'<text x="15" y="{mt + H / 2}" text-anchor="middle" transform="rotate(-90 15 {mt + H / 2})">{_esc(ylabel)}</text>'
    )
    out.append(f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return path


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# ---------------------------------------------------------------------------
# manifests


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, Path):
        return str(x)
    return x


def write_manifest(path, config: dict, seeds, wall_time: float, results: dict | None = None) -> Path:
    """JSON record of a run; its ``config`` block can be fed back to reproduce the CSVs."""
    from . import __version__

    doc = {
        "config": _jsonable(config),
        "seeds": _jsonable(list(seeds)),
        "version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "wall_time_s": float(wall_time),
        "results": _jsonable(results or {}),
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_config(path) -> dict:
    """A plain JSON config, or the ``config`` block of a manifest."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "config" in doc and "version" in doc:
        return dict(doc["config"])
    return dict(doc)
