"""SVG + CSV renderings of robustness and weight-sweep reports.

Output is byte-stable: the SVG id salt is fixed, the date metadata is dropped and
text is kept as text rather than glyph paths.
"""

from __future__ import annotations

import csv
from collections import OrderedDict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SVG_RC = {"svg.hashsalt": "bodyhand", "svg.fonttype": "none", "path.simplify": False}


class ReportError(ValueError):
    pass


def read_report(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"report not found: {path}")
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if len(rows) < 2:
        raise ReportError(f"report is empty: {path}")
    return rows[0], rows[1:]


def report_kind(header: list[str]) -> str:
    if header[:3] == ["series", "rate", "accuracy"]:
        return "robustness"
    if header and header[-1] == "accuracy" and all(h.startswith("scale_") for h in header[:-1]):
        return "sweep"
    raise ReportError(f"unrecognised report header {header}")


def robustness_series(paths) -> "OrderedDict[str, list[tuple[float, float]]]":
    series: OrderedDict[str, list] = OrderedDict()
    for p in paths:
        header, rows = read_report(p)
        if report_kind(header) != "robustness":
            raise ReportError(f"{p} is not a robustness report")
        for name, rate, acc, *_ in rows:
            series.setdefault(name, []).append((float(rate), float(acc)))
    return series


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_robustness(paths, out_dir) -> list[Path]:
    """Accuracy against drop rate, one line per series, plus the merged CSV."""
    out_dir = Path(out_dir)
    series = robustness_series(paths)
    svg, table = out_dir / "robustness.svg", out_dir / "robustness.csv"
    with matplotlib.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for name, pts in series.items():
            ax.plot([r for r, _ in pts], [a for _, a in pts], marker="o", label=name, gid=f"series-{name}")
        ax.set_xlabel("frame drop rate")
        ax.set_ylabel("accuracy")
        ax.set_ylim(0, 1.05)
        ax.legend()
        fig.tight_layout()
        _save(fig, svg)
    with open(table, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["series", "rate", "accuracy"])
        for name, pts in series.items():
            w.writerows([name, repr(r), repr(a)] for r, a in pts)
    return [svg, table]


def plot_sweep(path, out_dir) -> list[Path]:
    """Weight-sweep factorial table, sorted by accuracy, rendered as an SVG table."""
    header, rows = read_report(path)
    if report_kind(header) != "sweep":
        raise ReportError(f"{path} is not a weight-sweep report")
    rows = sorted(rows, key=lambda r: (-float(r[-1]), r[:-1]))
    stem = Path(path).stem
    svg, table = Path(out_dir) / f"{stem}_table.svg", Path(out_dir) / f"{stem}_table.csv"
    with open(table, "w", newline="") as f:
        csv.writer(f).writerows([header] + rows)
    with matplotlib.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(1.2 * len(header), 0.25 * (len(rows) + 2)))
        ax.axis("off")
        cells = [[f"{float(c):g}" for c in r[:-1]] + [f"{float(r[-1]):.4f}"] for r in rows]
        ax.table(cellText=cells, colLabels=header, loc="center")
        _save(fig, svg)
    return [svg, table]


def emit_plots(report_paths, out_dir) -> list[Path]:
    """Render every report; robustness reports are merged into one figure."""
    if not report_paths:
        raise ReportError("no report files given")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    robustness, sweeps = [], []
    for p in report_paths:
        header, _ = read_report(p)
        (robustness if report_kind(header) == "robustness" else sweeps).append(p)
    written = plot_robustness(robustness, out_dir) if robustness else []
    for p in sweeps:
        written += plot_sweep(p, out_dir)
    return written
