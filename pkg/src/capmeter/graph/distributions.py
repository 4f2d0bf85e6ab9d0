import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from capmeter import theme  # noqa: F401
from capmeter.config import Config
from capmeter.measures import MeasurePanel

__all__ = ["angle_distributions", "normalized_margin_distributions"]


# MARK: _frequency_lines
def _frequency_lines(df: pd.DataFrame, x_title: str) -> go.Figure:
    fig = px.line(df, x="bin", y="frequency", color=Config.H, line_shape="hvh")
    fig.layout.xaxis.title = x_title
    fig.layout.yaxis.title = "Fraction of units" if "angle" in x_title.lower() else "Fraction"
    fig.layout.legend.title = "h"
    return fig


# MARK: angle_distributions
def angle_distributions(panels: dict[int, MeasurePanel], **kwargs) -> go.Figure:
    """Histogram of the angle between each unit's weights and their initial value."""
    edges = np.linspace(0, 180, Config.ANGLE_BINS + 1)
    centers = (edges[:-1] + edges[1:]) / 2
    frames = []
    for h, panel in sorted(panels.items()):
        counts = np.asarray(panel.angle_histogram, dtype=np.float64)
        total = counts.sum() or 1.0
        frames.append(pd.DataFrame({Config.H: str(h), "bin": centers, "frequency": counts / total}))
    return _frequency_lines(pd.concat(frames, ignore_index=True), "Angle to initialization [deg]")


# MARK: normalized_margin_distributions
def normalized_margin_distributions(panels: dict[int, MeasurePanel], **kwargs) -> go.Figure:
    """Histogram of margins divided by the capacity normalizer."""
    frames = []
    for h, panel in sorted(panels.items()):
        hist = panel.normalized_margin_histogram
        if hist is None:
            continue
        counts = np.asarray(hist["counts"], dtype=np.float64)
        edges = np.asarray(hist["edges"])
        frames.append(
            pd.DataFrame(
                {
                    Config.H: str(h),
                    "bin": (edges[:-1] + edges[1:]) / 2,
                    "frequency": counts / counts.sum(),
                }
            )
        )
    if not frames:
        raise ValueError("no panel has a normalized margin histogram")
    return _frequency_lines(pd.concat(frames, ignore_index=True), "Normalized margin")
