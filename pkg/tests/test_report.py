import math
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from capmeter import report
from capmeter.config import Config, GammaSource, Stream
from capmeter.data import DatasetSpec, load_mnist
from capmeter.exceptions import NonFiniteError, ShapeError
from capmeter.measures import unit_capacities, unit_impacts
from capmeter.nn import LabeledDataset, load_checkpoint
from capmeter.train import TrainConfig, width_sweep
from capmeter.utils import rng_stream

WIDTHS = [8, 16, 32]


def clusters(m: int, seed: int) -> LabeledDataset:
    """Two tight classes around (4, 0, 1) and (0, 4, 1)."""
    rng = rng_stream(seed, Stream.DATA)
    y = np.arange(m) % 2
    X = np.array([[4.0, 0.0, 1.0], [0.0, 4.0, 1.0]])[y] + 0.5 * rng.standard_normal((m, 3))
    return LabeledDataset(X=X, y=y, c=2, name=f"clusters-{seed}")


@pytest.fixture(scope="module")
def datasets() -> tuple[LabeledDataset, LabeledDataset]:
    return clusters(60, 0), clusters(30, 1)


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory, datasets) -> Path:
    out = tmp_path_factory.mktemp("sweep")
    cfg = TrainConfig(lr=0.05, batch_size=8, max_epochs=100)
    width_sweep(WIDTHS, datasets[0], cfg, out, workers=2)
    return out


@pytest.fixture(scope="module")
def summary(sweep_dir: Path, datasets) -> tuple[pd.DataFrame, dict]:
    train, test = datasets
    return report.summarize_sweep(sweep_dir, train, test_data=test, workers=2)


# MARK: summarize_sweep
def test_summary_has_one_row_per_width(summary) -> None:
    df, panels = summary
    assert df[Config.H].tolist() == WIDTHS
    assert sorted(panels) == WIDTHS
    assert (df[Config.EPOCHS] >= 1).all()
    assert df[Config.TEST_ERROR].between(0, 1).all()
    for column in Config.BOUND_COLUMNS:
        assert column in df.columns
        assert column + Config.NORMALIZED_SUFFIX in df.columns


def test_normalized_columns_peak_at_one(summary) -> None:
    df, _ = summary
    for column in Config.BOUND_COLUMNS:
        normalized = df[column + Config.NORMALIZED_SUFFIX]
        assert normalized.max() == pytest.approx(1.0)
        assert np.allclose(normalized, df[column] / df[column].max())


def test_gamma_from_test_set(sweep_dir: Path, datasets) -> None:
    train, test = datasets
    df, _ = report.summarize_sweep(
        sweep_dir, train, test_data=test, gamma_source=GammaSource.TEST, workers=1
    )
    assert df[Config.GAMMA].notna().all()
    with pytest.raises(ValueError):
        report.summarize_sweep(sweep_dir, train, gamma_source=GammaSource.TEST)


def test_unreadable_checkpoints_are_skipped(tmp_path: Path, sweep_dir: Path, datasets) -> None:
    for path in sweep_dir.iterdir():
        (tmp_path / path.name).write_bytes(path.read_bytes())
    (tmp_path / "h99999.capm").write_bytes(b"junk")
    df, _ = report.summarize_sweep(tmp_path, datasets[0])
    assert df[Config.H].tolist() == WIDTHS
    assert df[Config.TEST_ERROR].isna().all()


def test_empty_sweep_directory(tmp_path: Path, datasets) -> None:
    with pytest.raises(FileNotFoundError):
        report.summarize_sweep(tmp_path, datasets[0])


def test_sweep_summary_rejects_no_rows() -> None:
    with pytest.raises(ValueError):
        report.sweep_summary([])


# MARK: CSV
def test_csv_has_schema_line(tmp_path: Path, summary) -> None:
    df, _ = summary
    path = tmp_path / "summary.csv"
    report.write_csv(df, path)
    first = path.read_text().splitlines()[0]
    assert first == Config.SCHEMA_PREFIX + ",".join(df.columns)
    back = report.read_csv(path)
    assert back.shape == df.shape
    assert np.allclose(back["thm2_bound"], df["thm2_bound"])


def test_append_row(tmp_path: Path) -> None:
    path = tmp_path / "rows.csv"
    report.append_row(path, {"h": 4, "value": 1.0})
    df = report.append_row(path, {"h": 8, "value": 2.0})
    assert df["h"].tolist() == [4, 8]
    assert report.read_csv(path)["value"].tolist() == [1.0, 2.0]


def test_fields_with_hash_survive_a_round_trip(tmp_path: Path) -> None:
    path = tmp_path / "rows.csv"
    report.append_row(path, {"checkpoint": "run#1.capm", "value": 1.0})
    report.append_row(path, {"checkpoint": "run#2.capm", "value": 2.0})
    df = report.read_csv(path)
    assert df["checkpoint"].tolist() == ["run#1.capm", "run#2.capm"]
    assert df["value"].tolist() == [1.0, 2.0]


def test_read_csv_without_schema_line(tmp_path: Path) -> None:
    path = tmp_path / "plain.csv"
    path.write_text("h,value\n4,1.5\n")
    assert report.read_csv(path)["value"].tolist() == [1.5]


# MARK: emit_svg
def test_emit_svg_draws_one_polyline_per_column(tmp_path: Path, summary) -> None:
    """
    Ensure the chart is valid SVG with a polyline for each requested column.

    Every polyline has one point per width and the file is byte-identical across runs.
    """
    df, _ = summary
    columns = ["thm2_bound_norm", "table1_row6_norm"]
    path = tmp_path / "chart.svg"
    report.emit_svg(df, columns, path, title="trend")

    root = ET.parse(path).getroot()
    lines = root.findall("{http://www.w3.org/2000/svg}polyline")
    assert [line.get("data-column") for line in lines] == columns
    assert all(len(line.get("points").split()) == len(WIDTHS) for line in lines)

    again = tmp_path / "again.svg"
    report.emit_svg(df, columns, again, title="trend")
    assert path.read_bytes() == again.read_bytes()


def test_emit_svg_errors(tmp_path: Path) -> None:
    df = pd.DataFrame({Config.H: [4, 8], "a": [1.0, math.nan]})
    with pytest.raises(ValueError):
        report.emit_svg(df.head(1), ["a"], tmp_path / "x.svg")
    with pytest.raises(ShapeError):
        report.emit_svg(df, ["b"], tmp_path / "x.svg")
    with pytest.raises(NonFiniteError):
        report.emit_svg(df, ["a"], tmp_path / "x.svg")
    assert not (tmp_path / "x.svg").exists()


# MARK: MNIST sweep
MNIST_WIDTHS = [64, 256, 1024, 4096]


def mnist_summary(train_data: LabeledDataset, seed: int, out: Path) -> tuple[list, pd.DataFrame]:
    results = width_sweep(MNIST_WIDTHS, train_data, TrainConfig(seed=seed), out)
    df, _ = report.summarize_sweep(out, train_data)
    return results, df.set_index(Config.H)


@pytest.mark.slow
@pytest.mark.skipif(Config.MNIST_DIR is None, reason="CAPMETER_MNIST_DIR not set")
def test_mnist_width_sweep_trends(tmp_path: Path) -> None:
    """
    Ensure a 2000-sample MNIST sweep shows the over-parametrization trends.

    Every width reaches the stop loss and wider nets need no more epochs. From h = 256 to 4096
    the largest unit capacity and unit impact shrink, the row 6 measure falls and row 3 rises.
    When one of these trends misses, the median over three seeds decides.
    """
    train_data = load_mnist(Config.MNIST_DIR, DatasetSpec(limit=2000))
    results, df = mnist_summary(train_data, Config.SEED, tmp_path / "seed0")
    assert all(r.report.reached_stop for r in results)
    epochs = [r.report.epochs_run for r in results]
    assert epochs == sorted(epochs, reverse=True)

    trends = {"beta_max": -1, "alpha_max": -1, "table1_row6": -1, "table1_row3": 1}
    frames = [df]
    if any(sign * (df.at[4096, col] - df.at[256, col]) <= 0 for col, sign in trends.items()):
        for offset in (1, 2):
            _, extra = mnist_summary(train_data, Config.SEED + offset, tmp_path / f"seed{offset}")
            frames.append(extra)
    for col, sign in trends.items():
        change = np.median([f.at[4096, col] - f.at[256, col] for f in frames])
        assert sign * change > 0, col

    checkpoints = sorted(tmp_path.glob(f"*/*{Config.CHECKPOINT_SUFFIX}"))
    assert len(checkpoints) == len(MNIST_WIDTHS) * len(frames)
    for path in checkpoints:
        net, _ = load_checkpoint(path)
        assert np.linalg.norm(unit_capacities(net)) == pytest.approx(
            np.linalg.norm(net.U - net.U0), rel=1e-9
        )
        assert np.linalg.norm(unit_impacts(net)) == pytest.approx(np.linalg.norm(net.V), rel=1e-9)
