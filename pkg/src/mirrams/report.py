"""Result tables in the (alpha_tr, alpha_ts) column layout, and SVG line charts.

A result record is a dict::

    {"method": "MIRRAMS", "alpha_tr": 0.1,
     "test": {"0.1": {"values": [...], "mean": m, "std": s}, "0.3": {...}}}

as written by the CLI into ``results.json``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def load_records(paths) -> list[dict]:
    records = []
    for p in paths:
        data = json.loads(Path(p).read_text())
        records.extend(data if isinstance(data, list) else [data])
    for r in records:
        if not {"method", "alpha_tr", "test"} <= set(r):
            raise ValueError(f"not a result record: keys {sorted(r)}")
    return records


def column_key(alpha_tr: float, alpha_ts: float) -> str:
    return f"({alpha_tr:g}, {alpha_ts:g})"


def table_rows(records: list[dict], scale: float = 100.0) -> tuple[list[str], list[list]]:
    """Pivot records into one row per method and one column per (alpha_tr, alpha_ts).

    Columns are sorted by alpha_tr, then alpha_ts; cells hold mean AUC
    times ``scale`` (percent by default), blank where a method lacks a pair.
    """
    pairs = sorted({(float(r["alpha_tr"]), float(a)) for r in records for a in r["test"]})
    methods: list[str] = []
    cells: dict[tuple[str, float, float], float] = {}
    for r in records:
        if r["method"] not in methods:
            methods.append(r["method"])
        for a, stats in r["test"].items():
            cells[(r["method"], float(r["alpha_tr"]), float(a))] = stats["mean"] * scale
    header = ["method"] + [column_key(*pr) for pr in pairs]
    rows = []
    for m in methods:
        rows.append([m] + [f"{cells[(m, *pr)]:.2f}" if (m, *pr) in cells else "" for pr in pairs])
    return header, rows


def write_table(path, records: list[dict]) -> None:
    header, rows = table_rows(records)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def svg_line_chart(series: dict[str, list[tuple[float, float]]], title: str = "",
                   xlabel: str = "", ylabel: str = "", width: int = 560, height: int = 360) -> str:
    """A self-contained SVG line chart, one polyline with markers per series."""
    pts = [p for s in series.values() for p in s]
    if not pts:
        raise ValueError("nothing to plot")
    left, right, top, bottom = 64, 150, 36, 48
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pad = 0.08 * (y1 - y0) if y1 > y0 else 0.5
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for x in sorted(set(xs)):
        out.append(f'<line x1="{sx(x):.1f}" y1="{top + ph}" x2="{sx(x):.1f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(x):.1f}" y="{top + ph + 18}" text-anchor="middle">{x:g}</text>')
    for k in range(5):
        y = y0 + (y1 - y0) * k / 4
        out.append(f'<line x1="{left - 5}" y1="{sy(y):.1f}" x2="{left + pw}" y2="{sy(y):.1f}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{left - 8}" y="{sy(y) + 4:.1f}" text-anchor="end">{y:.2f}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (name, s) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        s = sorted(s)
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in s)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        out.extend(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{color}"/>' for x, y in s)
        ly = top + 14 + 18 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 38}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def auc_chart(records: list[dict], title: str = "Test AUC under missingness shift") -> str:
    """AUC (percent) against alpha_ts, one line per (method, alpha_tr)."""
    trs = {float(r["alpha_tr"]) for r in records}
    series: dict[str, list[tuple[float, float]]] = {}
    for r in records:
        name = r["method"] if len(trs) == 1 else f"{r['method']} (tr {float(r['alpha_tr']):g})"
        series.setdefault(name, []).extend((float(a), st["mean"] * 100) for a, st in r["test"].items())
    return svg_line_chart(series, title, "alpha_ts", "AUC (%)")


def write_report(records: list[dict], out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table, chart = out / "table.csv", out / "auc_vs_alpha_ts.svg"
    write_table(table, records)
    chart.write_text(auc_chart(records))
    return table, chart
