"""CSV and SVG output. Numbers are written with six decimals, missing values as empty cells."""

from __future__ import annotations

import csv
import io
import math
import xml.etree.ElementTree as ET
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .calibrate import EvaluationRow, ScaleFit
from .errors import DataError
from .pipeline import RecordingEstimate

TRACE_COLUMNS = ("frame_index", "raw", "smoothed", "scaled", "gt", "tc_triggered")


def fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return ""
    return f"{x:.6f}"


def _write_rows(path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_trace(path, est: RecordingEstimate, k: Optional[float], gt: Optional[Sequence[float]]) -> None:
    rows = []
    for i, frame in enumerate(est.frames):
        smoothed = est.series.values[i]
        rows.append(
            [
                est.series.frame_index_offset + i,
                fmt(frame.raw_value),
                fmt(smoothed),
                fmt(smoothed * k) if k is not None else "",
                fmt(gt[i]) if gt is not None else "",
                int(frame.tc_triggered),
            ]
        )
    _write_rows(path, TRACE_COLUMNS, rows)


def read_trace(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty CSV")
        cols: dict[str, list] = {name: [] for name in reader.fieldnames}
        for row in reader:
            for name in reader.fieldnames:
                cell = (row.get(name) or "").strip()
                cols[name].append(float(cell) if cell else math.nan)
    if not cols or not any(len(v) for v in cols.values()):
        raise DataError(f"{path}: CSV has no data rows")
    return {k: np.asarray(v, dtype=np.float64) for k, v in cols.items()}


def write_scale(path, fits: dict[str, ScaleFit], pooled_rmse: Optional[float] = None) -> None:
    rows = [
        [scope, fmt(fit.k), fit.method.value, fit.n_samples, fmt(pooled_rmse) if scope == "pooled" else ""]
        for scope, fit in fits.items()
    ]
    _write_rows(path, ("scope", "k", "method", "n_samples", "rmse"), rows)


def write_evaluation(path, rows: Sequence[EvaluationRow], crop_names: Sequence[str]) -> None:
    ids = sorted({i for r in rows for i in r.rmse_per_recording})
    header = ["config", "crop", "mode", "pixel_smooth", "tc", "fit", "k", "rmse_pooled"]
    header += [f"rmse_{i}" for i in ids]
    out = []
    for row, crop in zip(rows, crop_names):
        cfg = row.config
        out.append(
            [
                row.label,
                crop,
                cfg.mode.value,
                int(cfg.pixel_level_smoothing),
                int(cfg.turning_compensation),
                row.fit.method.value,
                fmt(row.k),
                fmt(row.rmse_pooled),
            ]
            + [fmt(row.rmse_per_recording.get(i)) for i in ids]
        )
    _write_rows(path, header, out)


def write_metrics(path, names: Sequence[str], rows: Sequence) -> None:
    fields = [n for n in asdict(rows[0]) if n != "n_pixels"]
    body = [[name] + [fmt(getattr(r, f)) for f in fields] + [r.n_pixels] for name, r in zip(names, rows)]
    _write_rows(path, ["name", *fields, "n_pixels"], body)


# ---------------------------------------------------------------------------
# SVG

PALETTE = ("#000000", "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def line_chart_svg(series: Sequence[tuple[str, np.ndarray]], title: str = "", width: int = 800, height: int = 400) -> str:
    """One polyline per series over the frame index; missing points are skipped."""
    if not series:
        raise DataError("nothing to plot")
    margin = 50
    finite = [v[np.isfinite(v)] for _, v in series]
    finite = [v for v in finite if v.size]
    if not finite:
        raise DataError("all series are empty")
    y_max = max(float(v.max()) for v in finite)
    y_min = min(0.0, min(float(v.min()) for v in finite))
    if y_max <= y_min:
        y_max = y_min + 1.0
    n_max = max(len(v) for _, v in series)
    x_span = max(n_max - 1, 1)

    def px(i, val):
        x = margin + (width - 2 * margin) * i / x_span
        y = height - margin - (height - 2 * margin) * (val - y_min) / (y_max - y_min)
        return f"{x:.2f},{y:.2f}"

    svg = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(width),
        height=str(height),
        viewBox=f"0 0 {width} {height}",
    )
    if title:
        ET.SubElement(svg, "title").text = title
    axes = ET.SubElement(svg, "g", {"class": "axes", "stroke": "#888888"})
    ET.SubElement(axes, "line", x1=str(margin), y1=str(height - margin), x2=str(width - margin), y2=str(height - margin))
    ET.SubElement(axes, "line", x1=str(margin), y1=str(margin), x2=str(margin), y2=str(height - margin))
    labels = ET.SubElement(svg, "g", {"class": "ticks", "font-size": "11", "font-family": "sans-serif"})
    end = {"text-anchor": "end"}
    ET.SubElement(labels, "text", end, x=str(margin - 5), y=str(margin)).text = f"{y_max:.1f}"
    ET.SubElement(labels, "text", end, x=str(margin - 5), y=str(height - margin)).text = f"{y_min:.1f}"
    ET.SubElement(labels, "text", x=str(width - margin), y=str(height - margin + 15)).text = str(n_max - 1)
    ET.SubElement(labels, "text", x=str(width // 2), y=str(height - 10)).text = "frame"

    plot = ET.SubElement(svg, "g", {"class": "series", "fill": "none", "stroke-width": "1.5"})
    legend = ET.SubElement(svg, "g", {"class": "legend", "font-size": "12", "font-family": "sans-serif"})
    for n, (name, values) in enumerate(series):
        color = PALETTE[n % len(PALETTE)]
        points = " ".join(px(i, v) for i, v in enumerate(values) if np.isfinite(v))
        ET.SubElement(plot, "polyline", points=points, stroke=color).set("data-label", name)
        ET.SubElement(legend, "text", x=str(width - margin - 150), y=str(margin + 16 * n), fill=color).text = name
    return ET.tostring(svg, encoding="unicode") + "\n"
