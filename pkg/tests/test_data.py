import struct
from pathlib import Path

import numpy as np
import pytest

from capmeter import data
from capmeter.config import Config, Normalize
from capmeter.data import DatasetSpec
from capmeter.exceptions import (
    CsvFormatError,
    DatasetError,
    IdxMagicError,
    LabelRangeError,
    TruncatedFileError,
)
from capmeter.nn import FeatureScale, LabeledDataset

RAW = DatasetSpec(normalize=Normalize.NONE)


def write_idx_pair(
    directory: Path,
    pixels: np.ndarray,
    labels: list[int],
    *,
    image_magic: int = Config.IDX_IMAGE_MAGIC,
    label_magic: int = Config.IDX_LABEL_MAGIC,
) -> tuple[Path, Path]:
    count, rows, cols = pixels.shape
    images = directory / "images-idx3-ubyte"
    images.write_bytes(
        struct.pack(">IIII", image_magic, count, rows, cols) + pixels.astype(np.uint8).tobytes()
    )
    label_file = directory / "labels-idx1-ubyte"
    label_file.write_bytes(struct.pack(">II", label_magic, len(labels)) + bytes(labels))
    return images, label_file


@pytest.fixture
def two_images() -> np.ndarray:
    pixels = np.zeros((2, 28, 28), dtype=np.uint8)
    pixels[0, 0, 0] = 51
    pixels[1, 27, 27] = 255
    return pixels


# MARK: load_idx
def test_load_idx_flattens_and_scales(tmp_path, two_images: np.ndarray) -> None:
    """
    Ensure IDX images become rows of 784 features.

    Unit-range scaling divides the raw bytes by 255.
    """
    images, labels = write_idx_pair(tmp_path, two_images, [3, 7])
    dataset = data.load_idx(images, labels, DatasetSpec())
    assert dataset.X.shape == (2, 784)
    assert dataset.X[0, 0] == pytest.approx(51 / 255)
    assert dataset.X[1, -1] == 1.0
    assert dataset.y.tolist() == [3, 7]
    assert dataset.c == 10


def test_load_idx_limit(tmp_path, two_images: np.ndarray) -> None:
    images, labels = write_idx_pair(tmp_path, two_images, [3, 7])
    assert data.load_idx(images, labels, DatasetSpec(limit=1)).m == 1


@pytest.mark.parametrize(
    argnames=["kwargs", "labels", "error"],
    argvalues=[
        ({"image_magic": 0x00000801}, [1, 2], IdxMagicError),
        ({"label_magic": 0x00000803}, [1, 2], IdxMagicError),
        ({}, [1, 12], LabelRangeError),
        ({}, [1], DatasetError),
    ],
)
def test_load_idx_errors(tmp_path, two_images, kwargs: dict, labels: list, error) -> None:
    images, label_file = write_idx_pair(tmp_path, two_images, labels, **kwargs)
    with pytest.raises(error):
        data.load_idx(images, label_file, DatasetSpec())


def test_load_idx_truncated(tmp_path, two_images: np.ndarray) -> None:
    images, labels = write_idx_pair(tmp_path, two_images, [3, 7])
    images.write_bytes(images.read_bytes()[:-10])
    with pytest.raises(TruncatedFileError):
        data.load_idx(images, labels, DatasetSpec())
    images.write_bytes(b"\x00\x00")
    with pytest.raises(TruncatedFileError):
        data.load_idx(images, labels, DatasetSpec())


def test_load_path_accepts_mnist_directory(tmp_path, two_images: np.ndarray) -> None:
    images, labels = write_idx_pair(tmp_path, two_images, [3, 7])
    images.rename(tmp_path / Config.MNIST_FILES["test"][0])
    labels.rename(tmp_path / Config.MNIST_FILES["test"][1])
    assert data.load_path(str(tmp_path), DatasetSpec(), "test").m == 2


# MARK: load_csv
def test_load_csv(shared_datadir: Path) -> None:
    dataset = data.load_csv(shared_datadir / "toy.csv", RAW)
    assert (dataset.m, dataset.d, dataset.c) == (2, 2, 2)
    assert np.array_equal(dataset.X, [[1.0, 2.0], [3.0, 4.0]])
    assert dataset.y.tolist() == [0, 1]


def test_load_csv_header_is_detected(shared_datadir: Path) -> None:
    plain = data.load_csv(shared_datadir / "toy.csv", RAW)
    header = data.load_csv(shared_datadir / "toy_header.csv", RAW)
    assert np.array_equal(plain.X, header.X)
    assert np.array_equal(plain.y, header.y)


def test_load_csv_unit_range(shared_datadir: Path) -> None:
    """Each feature is scaled into [0, 1]; a constant feature becomes 0."""
    dataset = data.load_csv(shared_datadir / "constant_feature.csv", DatasetSpec())
    assert np.array_equal(dataset.X[:, 0], [0.0, 0.0, 0.0])
    assert np.allclose(dataset.X[:, 1], [0.0, 1.0, 0.5])
    assert dataset.c == 3


def test_held_out_csv_reuses_the_training_scale(tmp_path: Path) -> None:
    """
    Ensure a held-out set is mapped with the range fitted on the training set.

    Its own range would send the first test row to 0 instead of 0.5.
    """
    (tmp_path / "train.csv").write_text("0,0\n10,1\n")
    (tmp_path / "test.csv").write_text("5,0\n6,1\n")
    train = data.load_csv(tmp_path / "train.csv", DatasetSpec())
    test = data.load_csv(tmp_path / "test.csv", DatasetSpec(scale=train.scale))
    assert np.allclose(test.X[:, 0], [0.5, 0.6])
    assert test.scale is train.scale


def test_held_out_values_outside_the_training_range_are_clipped(tmp_path: Path) -> None:
    (tmp_path / "train.csv").write_text("0,0\n10,1\n")
    (tmp_path / "test.csv").write_text("-5,0\n20,1\n")
    train = data.load_csv(tmp_path / "train.csv", DatasetSpec())
    test = data.load_csv(tmp_path / "test.csv", DatasetSpec(scale=train.scale))
    assert test.X[:, 0].tolist() == [0.0, 1.0]


def test_scale_is_fitted_on_the_kept_rows(tmp_path: Path) -> None:
    (tmp_path / "train.csv").write_text("0,0\n2,1\n10,0\n")
    dataset = data.load_csv(tmp_path / "train.csv", DatasetSpec(limit=2))
    assert np.allclose(dataset.X[:, 0], [0.0, 1.0])
    assert dataset.scale.to_dict() == {"lo": [0.0], "span": [2.0]}


def test_scale_with_wrong_width_is_rejected(shared_datadir: Path) -> None:
    scale = FeatureScale(lo=[0.0], span=[1.0])
    with pytest.raises(DatasetError, match="scale expects 1"):
        data.load_csv(shared_datadir / "toy.csv", DatasetSpec(scale=scale))


def test_unscaled_load_has_no_scale(shared_datadir: Path) -> None:
    assert data.load_csv(shared_datadir / "toy.csv", RAW).scale is None


# MARK: apply_spec
def test_apply_spec_limits_and_scales_synthetic_data() -> None:
    dataset = data.synthetic_gaussian(d=3, m=30, c=3, seed=0, separation=2.0)
    limited = data.apply_spec(dataset, DatasetSpec(limit=10))
    assert limited.m == 10
    assert limited.X.min() == 0.0 and limited.X.max() == 1.0
    assert np.array_equal(limited.y, dataset.y[:10])


@pytest.mark.parametrize(
    argnames=["name", "message"],
    argvalues=[
        ("ragged.csv", "line 2"),
        ("non_numeric.csv", "line 2"),
        ("empty.csv", "empty"),
    ],
)
def test_load_csv_errors(shared_datadir: Path, name: str, message: str) -> None:
    with pytest.raises(CsvFormatError, match=message):
        data.load_csv(shared_datadir / name, RAW)


def test_load_path_dispatch(shared_datadir: Path) -> None:
    assert data.load_path(str(shared_datadir / "toy.csv"), RAW).m == 2
    with pytest.raises(DatasetError):
        data.load_path(str(shared_datadir / "toy.txt"), RAW)


# MARK: synthetic_gaussian
def test_synthetic_is_deterministic_and_balanced() -> None:
    a = data.synthetic_gaussian(d=4, m=11, c=3, seed=5, separation=2.0)
    b = data.synthetic_gaussian(d=4, m=11, c=3, seed=5, separation=2.0)
    assert np.array_equal(a.X, b.X)
    assert np.bincount(a.y).tolist() == [5, 3, 3]


def test_synthetic_one_sample_per_class() -> None:
    dataset = data.synthetic_gaussian(d=2, m=4, c=4, seed=0, separation=1.0)
    assert sorted(dataset.y.tolist()) == [0, 1, 2, 3]


def test_synthetic_zero_separation_shares_the_mean() -> None:
    """With separation 0 the class means coincide, so large samples have close class averages."""
    dataset = data.synthetic_gaussian(d=3, m=20_000, c=2, seed=1, separation=0.0)
    means = [dataset.X[dataset.y == k].mean(axis=0) for k in range(2)]
    assert np.abs(means[0] - means[1]).max() < 0.1


def test_synthetic_well_separated_is_linearly_separable() -> None:
    """A nearest-class-mean linear classifier on well-separated classes beats 95% accuracy."""
    dataset = data.synthetic_gaussian(d=5, m=500, c=3, seed=2, separation=10.0)
    means = np.stack([dataset.X[dataset.y == k].mean(axis=0) for k in range(3)])
    scores = dataset.X @ means.T - 0.5 * np.sum(means**2, axis=1)
    accuracy = np.mean(np.argmax(scores, axis=1) == dataset.y)
    assert accuracy > 0.95


@pytest.mark.parametrize(
    argnames=["text"],
    argvalues=[("1,2,3",), ("a,10,2,1.0,0",), ("2,10,1,1.0,0",)],
)
def test_parse_synthetic_rejects_bad_input(text: str) -> None:
    with pytest.raises(DatasetError):
        data.parse_synthetic(text)


def test_parse_synthetic() -> None:
    dataset = data.parse_synthetic("3,12,2,4.0,7")
    assert (dataset.d, dataset.m, dataset.c) == (3, 12, 2)


# MARK: basis_dataset
def test_basis_dataset() -> None:
    dataset = data.basis_dataset(2, 3)
    assert dataset.X.shape == (12, 4)
    assert np.array_equal(dataset.X[3:6], np.tile([0.0, 1.0, 0.0, 0.0], (3, 1)))
    assert dataset.c == 1


# MARK: randomize_labels
def test_randomize_labels_zero_fraction_is_identity() -> None:
    dataset = data.synthetic_gaussian(d=2, m=50, c=3, seed=0, separation=1.0)
    assert np.array_equal(data.randomize_labels(dataset, 0.0, 1).y, dataset.y)


def test_randomize_labels_is_deterministic() -> None:
    dataset = data.synthetic_gaussian(d=2, m=50, c=3, seed=0, separation=1.0)
    a = data.randomize_labels(dataset, 0.5, 3)
    b = data.randomize_labels(dataset, 0.5, 3)
    assert np.array_equal(a.y, b.y)
    assert np.sum(a.y != dataset.y) <= 25


def test_randomize_all_labels_changes_about_half_for_two_classes() -> None:
    """Uniform resampling over two classes keeps the true label half of the time."""
    m = 100_000
    dataset = LabeledDataset(X=np.zeros((m, 1)), y=np.zeros(m, dtype=np.int64), c=2)
    changed = np.mean(data.randomize_labels(dataset, 1.0, 4).y != dataset.y)
    assert abs(changed - 0.5) < 0.01


# MARK: MNIST
@pytest.mark.slow
@pytest.mark.skipif(Config.MNIST_DIR is None, reason="CAPMETER_MNIST_DIR not set")
def test_load_mnist_subset() -> None:
    dataset = data.load_mnist(Config.MNIST_DIR, DatasetSpec(limit=100))
    assert dataset.X.shape == (100, 784)
    assert 0.0 <= dataset.X.min() and dataset.X.max() <= 1.0
