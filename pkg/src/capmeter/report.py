"""Sweep aggregation: one summary row per trained width, CSV output and SVG trend charts."""

import io
import json
import logging
import math
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from capmeter.bounds import bound_panel
from capmeter.config import Config, GammaSource
from capmeter.exceptions import CapmeterError, NonFiniteError, ShapeError
from capmeter.linalg import percentile_nearest_rank
from capmeter.measures import MeasurePanel, measure_panel
from capmeter.nn import LabeledDataset, TwoLayerNet, load_checkpoint, margin_distribution
from capmeter.train import report_path
from capmeter.utils import atomic_write_text

logger = logging.getLogger(__name__)

SVG_WIDTH = 800
SVG_HEIGHT = 480
SVG_MARGIN = {"left": 70, "right": 180, "top": 30, "bottom": 60}


########################################
# Summary rows
########################################
# MARK: measure_row
def measure_row(net: TwoLayerNet, panel: MeasurePanel) -> dict[str, Any]:
    """Width, margin percentile, unit statistics and layer norms of one measured network."""
    return {
        Config.H: net.h,
        Config.GAMMA: panel.gamma_5pct,
        **panel.summary,
        "fro_U": panel.fro_U,
        "fro_V": panel.fro_V,
        "fro_dU": panel.fro_dU,
        "fro_dV": panel.fro_dV,
        "spec_U": panel.spec_U,
        "spec_U0": panel.spec_U0,
        "spec_V": panel.spec_V,
    }


# MARK: summary_row
def summary_row(
    net: TwoLayerNet,
    data: LabeledDataset,
    *,
    test_data: LabeledDataset | None = None,
    gamma_source: GammaSource = GammaSource.TRAIN,
    delta: float = Config.DELTA,
    ps: tuple[str, ...] = Config.THM4_P,
    epochs: int | None = None,
) -> tuple[dict[str, Any], MeasurePanel]:
    """Measure and bound one network. gamma is the 5th-percentile margin of the chosen set."""
    panel = measure_panel(net, data)
    gamma = panel.gamma_5pct
    if gamma_source is GammaSource.TEST:
        if test_data is None:
            raise ValueError("gamma from the test set needs test data")
        test_margins = margin_distribution(net, test_data)
        gamma = percentile_nearest_rank(test_margins, Config.GAMMA_PERCENTILE)

    bounds = bound_panel(net, data, gamma, delta, ps, profile=panel)
    test_error = math.nan
    if test_data is not None:
        test_error = float(np.mean(margin_distribution(net, test_data) <= 0))

    row = {
        **measure_row(net, panel),
        Config.TRAIN_ERROR: bounds.train_error,
        Config.TEST_ERROR: test_error,
        Config.EPOCHS: math.nan if epochs is None else epochs,
        Config.GAMMA: gamma,
        **bounds.columns(),
    }
    return row, panel


# MARK: sweep_summary
def sweep_summary(rows: list[dict[str, Any]]) -> pd.DataFrame:
    """Rows sorted by h with a max-normalized copy of every bound column."""
    if not rows:
        raise ValueError("no rows to summarize")
    df = pd.DataFrame(rows).sort_values(Config.H, kind="stable").reset_index(drop=True)
    for column in [c for c in df.columns if c.startswith(("thm", "table1"))]:
        peak = df[column].max()
        df[column + Config.NORMALIZED_SUFFIX] = df[column] / peak if peak > 0 else 0.0
    return df


# MARK: _load_epochs
def _load_epochs(checkpoint: Path) -> int | None:
    path = report_path(checkpoint)
    if not path.exists():
        return None
    return json.loads(path.read_text())["epochs_run"]


# MARK: summarize_sweep
def summarize_sweep(
    sweep_dir: Path,
    data: LabeledDataset,
    *,
    test_data: LabeledDataset | None = None,
    gamma_source: GammaSource = GammaSource.TRAIN,
    delta: float = Config.DELTA,
    ps: tuple[str, ...] = Config.THM4_P,
    workers: int = Config.THREADS,
) -> tuple[pd.DataFrame, dict[int, MeasurePanel]]:
    """Summary table and measure panels for every checkpoint in ``sweep_dir``.

    Checkpoints that cannot be measured are logged and left out.
    """
    checkpoints = sorted(Path(sweep_dir).glob(f"*{Config.CHECKPOINT_SUFFIX}"))
    if not checkpoints:
        raise FileNotFoundError(f"no checkpoints in {sweep_dir}")

    def measure(checkpoint: Path) -> tuple[dict[str, Any], MeasurePanel] | None:
        try:
            net, _ = load_checkpoint(checkpoint)
            return summary_row(
                net,
                data,
                test_data=test_data,
                gamma_source=gamma_source,
                delta=delta,
                ps=ps,
                epochs=_load_epochs(checkpoint),
            )
        except CapmeterError as exc:
            logger.warning("skipping %s: %s", checkpoint.name, exc)
            return None

    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(checkpoints)))) as pool:
        results = [r for r in pool.map(measure, checkpoints) if r is not None]

    rows = [row for row, _ in results]
    panels = {int(row[Config.H]): panel for row, panel in results}
    return sweep_summary(rows), panels


########################################
# CSV
########################################
# MARK: write_csv
def write_csv(df: pd.DataFrame, path: Path) -> None:
    """CSV preceded by a ``#schema=`` line naming the columns."""
    buffer = io.StringIO()
    buffer.write(Config.SCHEMA_PREFIX + ",".join(map(str, df.columns)) + "\n")
    df.to_csv(buffer, index=False, lineterminator="\n")
    atomic_write_text(path, buffer.getvalue())
    logger.info("wrote %s (%d rows)", path, len(df))


# MARK: read_csv
def read_csv(path: Path) -> pd.DataFrame:
    """Read a CSV, skipping the ``#schema=`` line when it leads the file."""
    with open(path, encoding="utf-8") as handle:
        has_schema = handle.readline().startswith(Config.SCHEMA_PREFIX)
    return pd.read_csv(path, skiprows=1 if has_schema else 0)


# MARK: append_row
def append_row(path: Path, row: dict[str, Any]) -> pd.DataFrame:
    """Append one row to a schema CSV, creating it when missing."""
    new = pd.DataFrame([row])
    df = pd.concat([read_csv(path), new], ignore_index=True) if Path(path).exists() else new
    write_csv(df, path)
    return df


########################################
# SVG charts
########################################
# MARK: _ticks
def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


# MARK: emit_svg
def emit_svg(
    summary: pd.DataFrame,
    columns: list[str],
    path: Path,
    *,
    title: str = "",
) -> None:
    """Line chart of ``columns`` against h on a log2 axis, one polyline per column."""
    if len(summary) < 2:
        raise ValueError("a trend chart needs at least two rows")
    missing = [c for c in columns if c not in summary.columns]
    if missing:
        raise ShapeError(f"summary has no columns {missing}")
    if not columns:
        raise ValueError("no columns to plot")

    df = summary.sort_values(Config.H, kind="stable")
    x = np.log2(df[Config.H].to_numpy(dtype=np.float64))
    values = df[columns].to_numpy(dtype=np.float64)
    if not np.isfinite(values).all():
        raise NonFiniteError("chart columns contain NaN or Inf")

    left, top = SVG_MARGIN["left"], SVG_MARGIN["top"]
    plot_w = SVG_WIDTH - left - SVG_MARGIN["right"]
    plot_h = SVG_HEIGHT - top - SVG_MARGIN["bottom"]
    x_lo, x_hi = float(x.min()), float(x.max())
    y_lo, y_hi = min(0.0, float(values.min())), float(values.max())
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def px(value: float) -> float:
        return left + plot_w * (value - x_lo) / (x_hi - x_lo) if x_hi > x_lo else left + plot_w / 2

    def py(value: float) -> float:
        return top + plot_h * (1 - (value - y_lo) / (y_hi - y_lo))

    svg = ET.Element(
        "svg",
        {
            "xmlns": "http://www.w3.org/2000/svg",
            "width": str(SVG_WIDTH),
            "height": str(SVG_HEIGHT),
            "viewBox": f"0 0 {SVG_WIDTH} {SVG_HEIGHT}",
            "font-family": Config.FONT,
            "font-size": "12",
        },
    )
    ET.SubElement(svg, "rect", {"width": "100%", "height": "100%", "fill": "white"})
    if title:
        ET.SubElement(svg, "text", {"x": str(left), "y": "18"}).text = title

    axes = ET.SubElement(svg, "g", {"stroke": "black", "fill": "none"})
    ET.SubElement(
        axes,
        "path",
        {"d": f"M{left},{top} V{top + plot_h} H{left + plot_w}"},
    )
    labels = ET.SubElement(svg, "g", {"fill": "black"})
    for h, xv in zip(df[Config.H], x):
        ET.SubElement(
            labels,
            "text",
            {"x": f"{px(xv):.2f}", "y": str(top + plot_h + 18), "text-anchor": "middle"},
        ).text = str(int(h))
    for tick in _ticks(y_lo, y_hi):
        ET.SubElement(
            labels,
            "text",
            {"x": str(left - 8), "y": f"{py(tick) + 4:.2f}", "text-anchor": "end"},
        ).text = f"{tick:.3g}"
    ET.SubElement(
        labels,
        "text",
        {"x": str(left + plot_w / 2), "y": str(SVG_HEIGHT - 15), "text-anchor": "middle"},
    ).text = "hidden units h (log2 scale)"
    ET.SubElement(
        labels,
        "text",
        {
            "x": "18",
            "y": str(top + plot_h / 2),
            "text-anchor": "middle",
            "transform": f"rotate(-90 18 {top + plot_h / 2})",
        },
    ).text = "value"

    legend_x = left + plot_w + 20
    for index, column in enumerate(columns):
        color = Config.COLORWAY[index % len(Config.COLORWAY)]
        points = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, values[:, index]))
        ET.SubElement(
            svg,
            "polyline",
            {
                "points": points,
                "fill": "none",
                "stroke": color,
                "stroke-width": "2",
                "data-column": column,
            },
        )
        y = top + 10 + 20 * index
        ET.SubElement(
            svg,
            "rect",
            {"x": str(legend_x), "y": str(y - 8), "width": "12", "height": "12", "fill": color},
        )
        ET.SubElement(svg, "text", {"x": str(legend_x + 18), "y": str(y + 2)}).text = column

    atomic_write_text(path, ET.tostring(svg, encoding="unicode") + "\n")
    logger.info("wrote %s (%d series)", path, len(columns))
