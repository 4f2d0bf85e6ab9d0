from dataclasses import replace
from inspect import getmembers, isfunction

import pandas as pd
import plotly.graph_objects as go
import pytest

from capmeter import graph, report
from capmeter.config import Config
from capmeter.data import synthetic_gaussian
from capmeter.graph import utils
from capmeter.measures import MeasurePanel, measure_panel
from capmeter.train import init_network

WIDTHS = [8, 32, 128]
MEASURES = [
    "alpha_max",
    "alpha_mean",
    "beta_max",
    "beta_mean",
    "fro_U",
    "fro_V",
    "fro_dU",
    "fro_dV",
    "spec_U",
    "spec_V",
    *Config.BOUND_COLUMNS,
]


@pytest.fixture(scope="module")
def summary() -> pd.DataFrame:
    rows = []
    for index, h in enumerate(WIDTHS):
        row = {column: float(h + index + 1) for column in MEASURES}
        row[Config.H] = h
        row[Config.TRAIN_ERROR] = 0.0
        row[Config.TEST_ERROR] = 0.1 / (index + 1)
        row[Config.EPOCHS] = 50 - 10 * index
        rows.append(row)
    return report.sweep_summary(rows)


@pytest.fixture(scope="module")
def panels() -> dict[int, MeasurePanel]:
    data = synthetic_gaussian(d=4, m=40, c=2, seed=0, separation=2.0)
    return {h: measure_panel(init_network(4, h, 2, seed=h), data) for h in WIDTHS}


# MARK: figures
def test_every_graph_function_renders(summary: pd.DataFrame, panels) -> None:
    """
    Ensure every public graph function builds a figure from a sweep.

    This is the loop the figure script runs.
    """
    functions = [f for name, f in getmembers(graph, isfunction) if not name.startswith("_")]
    assert len(functions) == 8
    for func in functions:
        fig = func(summary=summary, panels=panels)
        assert isinstance(fig, go.Figure)
        assert len(fig.data) >= 1


def test_bound_comparison_has_one_trace_per_measure(summary: pd.DataFrame) -> None:
    fig = graph.bound_comparison(summary)
    names = {trace.name for trace in fig.data}
    assert names == set(graph.trends.BOUND_LABELS.values())


def test_angle_distributions_have_one_line_per_width(panels) -> None:
    fig = graph.angle_distributions(panels)
    assert sorted(trace.name for trace in fig.data) == sorted(str(h) for h in WIDTHS)


def test_normalized_margins_need_a_histogram(panels) -> None:
    stripped = {h: replace(p, normalized_margin_histogram=None) for h, p in panels.items()}
    with pytest.raises(ValueError):
        graph.normalized_margin_distributions(stripped)


# MARK: utils
def test_long_form_skips_missing_columns(summary: pd.DataFrame) -> None:
    df = utils.long_form(summary, {"fro_U": "U", "missing": "M"})
    assert set(df["measure"]) == {"U"}
    assert len(df) == len(WIDTHS)


def test_log2_axis_ticks(summary: pd.DataFrame) -> None:
    fig = utils.log2_xaxis(go.Figure(), summary[Config.H])
    assert list(fig.layout.xaxis.tickvals) == WIDTHS
    assert fig.layout.xaxis.type == "log"


# MARK: theme
@pytest.mark.parametrize(
    argnames=["template", "width"],
    argvalues=[("capmeter", 800), ("capmeter+print", 480)],
)
def test_templates(summary: pd.DataFrame, template: str, width: int) -> None:
    fig = graph.bound_comparison(summary)
    fig.update_layout(template=template)
    assert fig.layout.template.layout.width == width
    assert list(fig.layout.template.layout.colorway) == Config.COLORWAY
