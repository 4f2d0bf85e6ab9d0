"""Plotly templates for capacity figures.

``capmeter`` is the default. Stack ``print`` on top of it ("capmeter+print") for
figures that go into documents at a smaller size.
"""

import plotly.graph_objects as go
import plotly.io as pio

from capmeter.config import Config

AXIS = {"showline": True, "linecolor": "black", "ticks": "outside", "gridcolor": "#ededed"}

capmeter = {
    "layout": {
        "width": 800,
        "height": 500,
        "colorway": Config.COLORWAY,
        "plot_bgcolor": "white",
        "font_family": Config.FONT,
        "hovermode": "x unified",
        "xaxis": AXIS,
        "yaxis": AXIS,
        "legend": {"bgcolor": "rgba(255,255,255,0.8)"},
    },
    "data": {
        "scatter": [{"mode": "lines+markers", "marker": {"size": 6}, "line": {"width": 2}}],
    },
}

# For figures placed side by side in a document.
print_sizes = {
    "layout": {
        "width": 480,
        "height": 320,
        "font_size": 10,
        "legend_font_size": 9,
        "margin": {"l": 50, "r": 10, "t": 30, "b": 40},
    },
}

pio.templates["capmeter"] = go.layout.Template(capmeter)
pio.templates["print"] = go.layout.Template(print_sizes)
pio.templates.default = "capmeter"
