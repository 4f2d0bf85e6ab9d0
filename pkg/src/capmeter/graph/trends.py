import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from capmeter import theme  # noqa: F401
from capmeter.config import Config
from capmeter.graph import utils

__all__ = [
    "bound_comparison",
    "epochs_to_fit",
    "layer_norm_trends",
    "normalized_bound_comparison",
    "train_test_error",
    "unit_measure_trends",
]

BOUND_LABELS = {
    "thm2_bound": "Ours (l2 bound)",
    "thm4_bound_lnh": "Ours (lp bound, p = ln h)",
    "table1_row1": "VC dimension",
    "table1_row2": "l1,inf path",
    "table1_row3": "Frobenius product",
    "table1_row4": "Spectral l1",
    "table1_row5": "Spectral Frobenius",
    "table1_row6": "Unit capacity measure",
}


# MARK: _trend
def _trend(
    summary: pd.DataFrame,
    labels: dict[str, str],
    y_title: str,
    *,
    log_y: bool = False,
) -> go.Figure:
    """Line plot of the labelled summary columns against h."""
    df = utils.long_form(summary, labels)
    fig = px.line(df, x=Config.H, y="value", color="measure", markers=True, log_y=log_y)
    fig.layout.yaxis.title = y_title
    fig.layout.legend.title = ""
    return utils.log2_xaxis(fig, summary[Config.H])


# MARK: unit_measure_trends
def unit_measure_trends(summary: pd.DataFrame, **kwargs) -> go.Figure:
    """Largest and average unit capacity and unit impact per width."""
    return _trend(
        summary,
        {
            "beta_max": "Unit capacity (max)",
            "beta_mean": "Unit capacity (mean)",
            "alpha_max": "Unit impact (max)",
            "alpha_mean": "Unit impact (mean)",
        },
        "Norm",
        log_y=True,
    )


# MARK: train_test_error
def train_test_error(summary: pd.DataFrame, **kwargs) -> go.Figure:
    fig = _trend(
        summary,
        {Config.TRAIN_ERROR: "Training error", Config.TEST_ERROR: "Test error"},
        "Error",
    )
    return utils.put_legend_inside_subplot(fig, 0.95, 0.95)


# MARK: epochs_to_fit
def epochs_to_fit(summary: pd.DataFrame, **kwargs) -> go.Figure:
    """Epochs needed to reach the stopping cross-entropy."""
    fig = _trend(summary, {Config.EPOCHS: "Epochs"}, "Epochs to stop loss")
    fig.update_layout(showlegend=False)
    return fig


# MARK: bound_comparison
def bound_comparison(summary: pd.DataFrame, **kwargs) -> go.Figure:
    return _trend(summary, BOUND_LABELS, "Capacity", log_y=True)


# MARK: normalized_bound_comparison
def normalized_bound_comparison(summary: pd.DataFrame, **kwargs) -> go.Figure:
    """Each capacity measure divided by its largest value over the sweep."""
    labels = {k + Config.NORMALIZED_SUFFIX: v for k, v in BOUND_LABELS.items()}
    return _trend(summary, labels, "Capacity / max")


# MARK: layer_norm_trends
def layer_norm_trends(summary: pd.DataFrame, **kwargs) -> go.Figure:
    """Frobenius and spectral norms of both layers and their distances to initialization."""
    return _trend(
        summary,
        {
            "fro_U": "||U||_F",
            "fro_dU": "||U - U0||_F",
            "spec_U": "||U||_2",
            "fro_V": "||V||_F",
            "fro_dV": "||V - V0||_F",
            "spec_V": "||V||_2",
        },
        "Norm",
        log_y=True,
    )
