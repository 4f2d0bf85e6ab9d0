"""Render every graph function for one sweep directory.

usage: create_figures.py SWEEP_DIR DATA [TEST_DATA]
"""

import sys
import warnings
from datetime import datetime
from inspect import getmembers, isfunction

import plotly.io as pio

from capmeter import graph
from capmeter.config import Config
from capmeter.data import DatasetSpec, load_path
from capmeter.report import summarize_sweep

warnings.filterwarnings("ignore")
pio.templates.default = "capmeter+print"

if len(sys.argv) < 3:
    sys.exit(__doc__)

train_data = load_path(sys.argv[2], DatasetSpec(), "train")
test_spec = DatasetSpec(scale=train_data.scale)
test_data = load_path(sys.argv[3], test_spec, "test") if len(sys.argv) > 3 else None
summary, panels = summarize_sweep(sys.argv[1], train_data, test_data=test_data)

output_dir = Config.EXPORT_DIR / "figures" / datetime.now().strftime("%Y-%m-%d")
output_dir.mkdir(parents=True, exist_ok=True)

for name, func in getmembers(graph, isfunction):
    if name.startswith("_"):
        continue
    print(name, "...", end="")

    try:
        fig = func(summary=summary, panels=panels)
    except Exception:
        print("❌❌ Bad Function Call")
        continue

    try:
        file = output_dir / f"{name}.png"
        fig.write_image(str(file))
        print("✅")
    except Exception:
        print("❌ Could Not Save Image")
