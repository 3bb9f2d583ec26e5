"""Byte-stable writers: CSV, pretty JSON with 17-digit floats, and a self-contained SVG."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

__all__ = ["format_number", "dumps_json", "write_json", "write_csv", "decay_svg", "write_text"]


def format_number(x) -> str:
    """17 significant digits; integers and zero print without a fraction."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x == 0.0:
        return "0"
    if not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return f"{x:.17g}"


def _emit(obj, indent, level, out):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        out.append("null")
    elif isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer, float, np.floating)):
        if isinstance(obj, (float, np.floating)) and not math.isfinite(float(obj)):
            out.append("null")
        else:
            out.append(format_number(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = list(obj.items())
        for i, (key, value) in enumerate(items):
            out.append(f"{pad}{json.dumps(str(key))}: ")
            _emit(value, indent, level + 1, out)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            out.append("[]")
            return
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            out.append("[")
            for i, value in enumerate(seq):
                _emit(value, indent, level + 1, out)
                if i < len(seq) - 1:
                    out.append(", ")
            out.append("]")
            return
        out.append("[\n")
        for i, value in enumerate(seq):
            out.append(pad)
            _emit(value, indent, level + 1, out)
            out.append(",\n" if i < len(seq) - 1 else "\n")
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj, indent: int = 2) -> str:
    """Pretty JSON in insertion key order; floats at 17 significant digits, non-finite as null."""
    out: list[str] = []
    _emit(obj, indent, 0, out)
    return "".join(out) + "\n"


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def write_json(path, obj) -> Path:
    return write_text(path, dumps_json(obj))


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else format_number(v) for v in row])
    return write_text(path, buf.getvalue())


def decay_svg(times, norms, env_times, env_values, impulse_times, y0_norm: float,
              width: int = 640, height: int = 400, title: str = "closed-loop decay") -> str:
    """``log10(||y|| / ||y0||)`` against ``t`` with the envelope and impulse markers."""
    ml, mr, mt, mb = 60, 20, 30, 40
    pw, ph = width - ml - mr, height - mt - mb
    scale = y0_norm if y0_norm > 0 else 1.0

    def logs(v):
        return np.log10(np.maximum(np.asarray(v, dtype=float) / scale, 1e-30))

    ly, le = logs(norms), logs(env_values)
    lo = math.floor(min(float(ly.min()) if ly.size else 0.0, float(le.min()) if le.size else 0.0))
    hi = math.ceil(max(float(ly.max()) if ly.size else 0.0, float(le.max()) if le.size else 0.0))
    hi = max(hi, lo + 1)
    t_max = max(float(np.max(times)) if len(times) else 1.0,
                float(np.max(env_times)) if len(env_times) else 1.0) or 1.0

    def px(t):
        return ml + pw * float(t) / t_max

    def py(v):
        return mt + ph * (hi - float(v)) / (hi - lo)

    def poly(ts, vs, attrs):
        pts = " ".join(f"{px(t):.3f},{py(v):.3f}" for t, v in zip(ts, vs))
        return f'<polyline points="{pts}" fill="none" {attrs}/>'

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<title>{title}</title>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="white" stroke="black"/>',
    ]
    step = max(1, (hi - lo) // 8)
    for d in range(lo, hi + 1, step):
        parts.append(f'<line x1="{ml - 4}" y1="{py(d):.3f}" x2="{ml}" y2="{py(d):.3f}" stroke="black"/>')
        parts.append(f'<text x="{ml - 6}" y="{py(d) + 4:.3f}" font-size="10" '
                     f'text-anchor="end">1e{d}</text>')
    for i in range(6):
        t = t_max * i / 5
        parts.append(f'<text x="{px(t):.3f}" y="{mt + ph + 16}" font-size="10" '
                     f'text-anchor="middle">{t:.2f}</text>')
    for tau in impulse_times:
        parts.append(f'<line x1="{px(tau):.3f}" y1="{mt}" x2="{px(tau):.3f}" y2="{mt + ph}" '
                     f'stroke="#999999" stroke-dasharray="3,3"/>')
    if len(env_times):
        parts.append(poly(env_times, le, 'stroke="#d62728" stroke-width="1.5"'))
    if len(times):
        parts.append(poly(times, ly, 'stroke="#1f77b4" stroke-width="1.5"'))
    parts.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 6}" font-size="12" '
                 f'text-anchor="middle">t</text>')
    parts.append(f'<text x="{ml}" y="{mt - 10}" font-size="12">log10 ||y(t)|| / ||y0|| '
                 f'(blue), envelope (red), impulses (dashed)</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
