"""Report payloads: CSV tables, JSON documents, SVG roofline plots and a
hashed manifest tying them together."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence
from xml.sax.saxutils import escape, quoteattr

from .cost_model import (HardwareProfile, ModelCost, attainable, cost_rows, ridge_point, sig6)

SUMMARY_COLUMNS = ("model", "batch", "flops_per_image", "W", "Q_bytes", "I", "latency_s",
                   "achieved_efficiency", "compute_bound_share", "memory_bound_share")


def rows_to_csv(rows: Sequence[Mapping[str, Any]], columns: Sequence[str] | None = None) -> str:
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    wr.writeheader()
    for r in rows:
        wr.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})
    return buf.getvalue()


def rows_to_json(rows: Sequence[Mapping[str, Any]]) -> str:
    return json.dumps(list(rows), indent=2) + "\n"


def summary_row(cost: ModelCost) -> dict[str, Any]:
    mix = cost.regime_mix()
    return {
        "model": cost.name,
        "batch": cost.batch,
        "flops_per_image": int(round(cost.flops_per_image)),
        "W": int(round(cost.total_flops)),
        "Q_bytes": int(round(cost.total_bytes)),
        "I": sig6(cost.aggregate_intensity),
        "latency_s": sig6(cost.total_latency),
        "achieved_efficiency": sig6(cost.achieved_efficiency),
        "compute_bound_share": sig6(mix["compute_bound"]),
        "memory_bound_share": sig6(mix["memory_bound"]),
    }


def stage_rows(cost: ModelCost) -> list[dict[str, Any]]:
    return cost_rows(cost)


# -- SVG ----------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass(frozen=True)
class Marker:
    label: str
    intensity: float
    rate: float


def marker_for(cost: ModelCost) -> Marker:
    """Plot point of a model: aggregate intensity vs achieved ops/s."""
    return Marker(cost.name, cost.aggregate_intensity, cost.achieved_rate)


class _LogAxes:
    def __init__(self, xlim, ylim, width, height, margin=(70, 20, 20, 50)):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        self.left, self.right, self.top, self.bottom = margin
        self.width, self.height = width, height

    def x(self, v: float) -> float:
        span = math.log10(self.x1) - math.log10(self.x0)
        frac = (math.log10(v) - math.log10(self.x0)) / span
        return round(self.left + frac * (self.width - self.left - self.right), 3)

    def y(self, v: float) -> float:
        span = math.log10(self.y1) - math.log10(self.y0)
        frac = (math.log10(v) - math.log10(self.y0)) / span
        return round(self.height - self.bottom - frac * (self.height - self.top - self.bottom), 3)


def _decades(lo: float, hi: float) -> tuple[float, float]:
    return 10.0 ** math.floor(math.log10(lo)), 10.0 ** math.ceil(math.log10(hi))


def roofline_svg(profiles: Sequence[HardwareProfile], markers: Iterable[Marker] = (),
                 width: int = 640, height: int = 440, title: str = "Roofline") -> str:
    """Log-log roofline chart, one line per profile and one dot per marker.

    Paths carry ``data-profile`` / ``data-ridge`` attributes and markers
    carry ``data-intensity`` / ``data-rate`` so the picture can be checked
    without rasterising it.
    """
    if not profiles:
        raise ValueError("need at least one profile")
    markers = list(markers)
    ridges = [ridge_point(p) for p in profiles]
    xs = [r for r in ridges] + [m.intensity for m in markers if m.intensity > 0]
    x0, x1 = _decades(min(xs) / 10, max(xs) * 10)
    ys = [p.peak_matrix_ops for p in profiles] + [x0 * p.mem_bandwidth for p in profiles]
    ys += [m.rate for m in markers if m.rate > 0]
    y0, y1 = _decades(min(ys), max(ys) * 1.5)
    ax = _LogAxes((x0, x1), (y0, y1), width, height)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<title>{escape(title)}</title>',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    # decade gridlines and tick labels
    for k in range(int(round(math.log10(x0))), int(round(math.log10(x1))) + 1):
        x = ax.x(10.0 ** k)
        out.append(f'<line class="grid" x1="{x}" y1="{ax.y(y0)}" x2="{x}" y2="{ax.y(y1)}" '
                   f'stroke="#ddd"/>')
        out.append(f'<text x="{x}" y="{height - 30}" font-size="11" text-anchor="middle">'
                   f'1e{k}</text>')
    for k in range(int(round(math.log10(y0))), int(round(math.log10(y1))) + 1):
        y = ax.y(10.0 ** k)
        out.append(f'<line class="grid" x1="{ax.x(x0)}" y1="{y}" x2="{ax.x(x1)}" y2="{y}" '
                   f'stroke="#ddd"/>')
        out.append(f'<text x="{ax.left - 6}" y="{y + 4}" font-size="11" text-anchor="end">'
                   f'1e{k}</text>')
    out.append(f'<text x="{width / 2}" y="{height - 8}" font-size="12" text-anchor="middle">'
               f'operational intensity (ops/byte)</text>')
    out.append(f'<text x="14" y="{height / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {height / 2})">attainable ops/s</text>')
    for i, (p, ridge) in enumerate(zip(profiles, ridges)):
        color = _PALETTE[i % len(_PALETTE)]
        start = max(x0, y0 / p.mem_bandwidth)
        d = (f"M {ax.x(start)} {ax.y(attainable(p, start))} "
             f"L {ax.x(ridge)} {ax.y(p.peak_matrix_ops)} "
             f"L {ax.x(x1)} {ax.y(p.peak_matrix_ops)}")
        out.append(f'<path class="roofline" data-profile={quoteattr(p.name)} '
                   f'data-ridge="{ridge!r}" d="{d}" fill="none" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{ax.x(x1) - 4}" y="{ax.y(p.peak_matrix_ops) - 5}" font-size="11" '
                   f'text-anchor="end" fill="{color}">{escape(p.name)}</text>')
    for m in markers:
        if m.intensity <= 0 or m.rate <= 0:
            continue
        cx, cy = ax.x(m.intensity), ax.y(m.rate)
        out.append(f'<circle class="marker" data-label={quoteattr(m.label)} '
                   f'data-intensity="{m.intensity!r}" data-rate="{m.rate!r}" cx="{cx}" '
                   f'cy="{cy}" r="4" fill="black"/>')
        out.append(f'<text x="{cx + 6}" y="{cy - 6}" font-size="10">{escape(m.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# -- bundle -------------------------------------------------------------------------

def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class ReportBundle:
    """Named text payloads written together with a ``manifest.json``."""

    tables: dict[str, str] = field(default_factory=dict)
    plots: dict[str, str] = field(default_factory=dict)
    documents: dict[str, str] = field(default_factory=dict)

    def files(self) -> dict[str, str]:
        merged: dict[str, str] = {}
        for group in (self.tables, self.plots, self.documents):
            for name, text in group.items():
                if name in merged:
                    raise ValueError(f"duplicate report file {name!r}")
                merged[name] = text
        return merged

    @property
    def manifest(self) -> dict[str, Any]:
        entries = [{"path": name, "sha256": sha256_text(text), "bytes": len(text.encode())}
                   for name, text in sorted(self.files().items())]
        return {"files": entries}

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in sorted(self.files().items()):
            target = out / name
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text)
        manifest = out / "manifest.json"
        manifest.write_text(json.dumps(self.manifest, indent=2) + "\n")
        return manifest


def verify_manifest(out_dir: str | Path) -> list[str]:
    """Names of files whose content no longer matches the manifest."""
    out = Path(out_dir)
    doc = json.loads((out / "manifest.json").read_text())
    bad = []
    for e in doc["files"]:
        p = out / e["path"]
        if not p.exists() or sha256_text(p.read_text()) != e["sha256"]:
            bad.append(e["path"])
    return bad
