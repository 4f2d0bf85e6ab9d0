import pandas as pd
import plotly.graph_objects as go

from capmeter import theme  # noqa: F401
from capmeter.config import Config


# MARK: log2_xaxis
def log2_xaxis(fig: go.Figure, widths: pd.Series) -> go.Figure:
    """Log-scaled x axis with one tick per trained width."""
    ticks = sorted({int(h) for h in widths})
    fig.update_xaxes(type="log", tickvals=ticks, ticktext=[str(h) for h in ticks])
    fig.layout.xaxis.title = "Hidden units h"
    return fig


# MARK: put_legend_inside_subplot
def put_legend_inside_subplot(fig: go.Figure, x: float, y: float) -> go.Figure:
    ref = "paper"
    fig.layout.legend = {
        "x": x,
        "y": y,
        "xanchor": "right" if x > 0.5 else "left",
        "yanchor": "top" if y > 0.5 else "bottom",
        "xref": ref,
        "yref": ref,
    }
    return fig


# MARK: long_form
def long_form(summary: pd.DataFrame, labels: dict[str, str]) -> pd.DataFrame:
    """One row per (h, measure) for the columns in ``labels``, renamed to their labels."""
    present = [c for c in labels if c in summary.columns]
    df = summary[[Config.H, *present]].melt(
        id_vars=Config.H,
        var_name="measure",
        value_name="value",
    )
    df["measure"] = df["measure"].map(labels)
    return df.dropna(subset=["value"])
