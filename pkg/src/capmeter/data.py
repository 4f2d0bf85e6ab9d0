import logging
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from capmeter.config import Config, Normalize, Stream
from capmeter.exceptions import (
    CsvFormatError,
    DatasetError,
    IdxMagicError,
    LabelRangeError,
    TruncatedFileError,
)
from capmeter.nn import FeatureScale, LabeledDataset
from capmeter.utils import rng_stream

logger = logging.getLogger(__name__)


# MARK: DatasetSpec
@dataclass(frozen=True)
class DatasetSpec:
    limit: int | None = None
    normalize: Normalize = Normalize.UNIT_RANGE
    random_label_fraction: float = 0.0
    label_seed: int = Config.SEED
    scale: FeatureScale | None = None

    def __post_init__(self) -> None:
        if self.limit is not None and self.limit < 1:
            raise ValueError("limit must be at least 1 when given")
        if not 0.0 <= self.random_label_fraction <= 1.0:
            raise ValueError("random_label_fraction must lie in [0, 1]")


########################################
# General Utilities
########################################
# MARK: apply_spec
def apply_spec(data: LabeledDataset, spec: DatasetSpec) -> LabeledDataset:
    """Keep the first ``spec.limit`` rows, scale the features and corrupt labels as requested.

    Unit-range scaling uses ``spec.scale`` when given and otherwise fits a new one on the kept
    rows. The scale used is stored on the result so held-out sets can reuse it.
    """
    X, y = data.X, data.y
    if spec.limit is not None:
        X, y = X[: spec.limit], y[: spec.limit]

    scale = None
    if spec.normalize is Normalize.UNIT_RANGE:
        scale = spec.scale or FeatureScale.fit(X)
        if scale.d != X.shape[1]:
            raise DatasetError(f"{data.name} has {X.shape[1]} features, scale expects {scale.d}")
        X = scale.apply(X)

    data = replace(data, X=X, y=y, scale=scale)
    if spec.random_label_fraction > 0:
        data = randomize_labels(data, spec.random_label_fraction, spec.label_seed)
    logger.info("loaded %s: m=%d, d=%d, c=%d", data.name, data.m, data.d, data.c)
    return data


########################################
# IDX Files
########################################
# MARK: _read_idx
def _read_idx(path: Path, magic: int, ndim: int) -> tuple[tuple[int, ...], bytes]:
    """Return the dimensions and the payload of a big-endian IDX file of unsigned bytes."""
    raw = Path(path).read_bytes()
    header = struct.Struct(">" + "I" * (ndim + 1))
    if len(raw) < header.size:
        raise TruncatedFileError(f"{path}: header needs {header.size} bytes, file has {len(raw)}")

    found, *dims = header.unpack_from(raw, 0)
    if found != magic:
        raise IdxMagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")

    size = math.prod(dims)
    payload = raw[header.size :]
    if len(payload) < size:
        raise TruncatedFileError(f"{path}: expected {size} data bytes, found {len(payload)}")
    return tuple(dims), payload[:size]


# MARK: load_idx
def load_idx(images_path: Path, labels_path: Path, spec: DatasetSpec) -> LabeledDataset:
    """Load an IDX image/label pair (MNIST layout), flattening each image into a row."""
    (count, rows, cols), pixels = _read_idx(images_path, Config.IDX_IMAGE_MAGIC, 3)
    (n_labels,), label_bytes = _read_idx(labels_path, Config.IDX_LABEL_MAGIC, 1)
    if n_labels != count:
        raise DatasetError(f"{count} images but {n_labels} labels")

    X = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols).astype(np.float64)
    y = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    if y.size and y.max() >= Config.MNIST_CLASSES:
        bad = int(np.argmax(y >= Config.MNIST_CLASSES))
        raise LabelRangeError(f"label {y[bad]} at index {bad} is not below {Config.MNIST_CLASSES}")

    if spec.scale is None:
        pixel_scale = FeatureScale(lo=np.zeros(rows * cols), span=np.full(rows * cols, 255.0))
        spec = replace(spec, scale=pixel_scale)

    data = LabeledDataset(X=X, y=y, c=Config.MNIST_CLASSES, name=Path(images_path).name)
    return apply_spec(data, spec)


# MARK: load_mnist
def load_mnist(directory: Path, spec: DatasetSpec, split: str = "train") -> LabeledDataset:
    images, labels = Config.MNIST_FILES[split]
    return load_idx(Path(directory) / images, Path(directory) / labels, spec)


########################################
# CSV
########################################
# MARK: load_csv
def load_csv(path: Path, spec: DatasetSpec) -> LabeledDataset:
    """Rows of d features followed by an integer label. A non-numeric first row is a header."""
    try:
        df = pd.read_csv(
            path,
            header=None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError as exc:
        raise CsvFormatError(f"{path}: empty file") from exc
    except pd.errors.ParserError as exc:
        raise CsvFormatError(f"{path}: ragged row ({exc})") from exc

    df = df.fillna("")
    df.index = df.index + 1  # 1-based line numbers
    df = df[~(df == "").all(axis=1)]
    if df.empty:
        raise CsvFormatError(f"{path}: empty file")

    values = df.apply(pd.to_numeric, errors="coerce")
    if values.iloc[0].isna().any() and not (df.iloc[0] == "").any():
        df, values = df.iloc[1:], values.iloc[1:]
        if df.empty:
            raise CsvFormatError(f"{path}: header without data rows")

    ragged = (df == "").any(axis=1)
    if ragged.any():
        raise CsvFormatError(f"{path}: ragged row at line {ragged.idxmax()}")
    bad = values.isna().any(axis=1)
    if bad.any():
        raise CsvFormatError(f"{path}: non-numeric field at line {bad.idxmax()}")
    if values.shape[1] < 2:
        raise CsvFormatError(f"{path}: rows need at least one feature and a label")

    labels = values.iloc[:, -1].to_numpy()
    if (labels != np.round(labels)).any() or (labels < 0).any():
        raise CsvFormatError(f"{path}: labels must be non-negative integers")

    X = values.iloc[:, :-1].to_numpy(dtype=np.float64)
    y = labels.astype(np.int64)
    data = LabeledDataset(X=X, y=y, c=int(y.max()) + 1, name=Path(path).name)
    return apply_spec(data, spec)


########################################
# Synthetic Data
########################################
# MARK: synthetic_gaussian
def synthetic_gaussian(
    d: int,
    m: int,
    c: int,
    seed: int,
    separation: float,
) -> LabeledDataset:
    """Balanced Gaussian classes with unit noise around means on a sphere of radius separation.

    The sphere is centred on a random point, so separation = 0 puts every mean at that point.
    Each class gets floor(m / c) samples; the remainder goes to class 0.
    """
    if c < 2:
        raise ValueError("synthetic data needs at least two classes")
    if separation < 0:
        raise ValueError("separation must be non-negative")
    if d < 1 or m < 1:
        raise ValueError("d and m must be positive")

    rng = rng_stream(seed, Stream.DATA)
    center = rng.standard_normal(d)
    directions = rng.standard_normal((c, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = center + separation * directions

    counts = np.full(c, m // c)
    counts[0] += m % c
    y = np.repeat(np.arange(c), counts)
    X = means[y] + rng.standard_normal((m, d))

    return LabeledDataset(X=X, y=y, c=c, name=f"synthetic-d{d}-m{m}-c{c}-sep{separation:g}")


# MARK: parse_synthetic
def parse_synthetic(text: str) -> LabeledDataset:
    """Build a synthetic set from the CLI form ``d,m,c,separation,seed``."""
    try:
        d, m, c, separation, seed = text.split(",")
        return synthetic_gaussian(int(d), int(m), int(c), int(seed), float(separation))
    except ValueError as exc:
        raise DatasetError(f"--synthetic expects d,m,c,separation,seed, got {text!r}") from exc


# MARK: basis_dataset
def basis_dataset(k: int, n: int) -> LabeledDataset:
    """n copies of each standard basis vector of R^(2^k); sample i is e_(i // n)."""
    size = 2**k
    X = np.repeat(np.eye(size), n, axis=0)
    return LabeledDataset(X=X, y=np.zeros(size * n, dtype=np.int64), c=1, name=f"basis-k{k}-n{n}")


# MARK: randomize_labels
def randomize_labels(data: LabeledDataset, fraction: float, seed: int) -> LabeledDataset:
    """Resample floor(fraction * m) seeded-chosen labels uniformly from [0, c)."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")

    count = math.floor(fraction * data.m)
    rng = rng_stream(seed, Stream.LABELS)
    chosen = rng.choice(data.m, size=count, replace=False)
    y = data.y.copy()
    y[chosen] = rng.integers(0, data.c, size=count)

    name = data.name if count == 0 else f"{data.name}-random{fraction:g}"
    return replace(data, y=y, name=name)


########################################
# Dispatch
########################################
# MARK: load_path
def load_path(source: str, spec: DatasetSpec, split: str = "train") -> LabeledDataset:
    """Load from a CSV file, a directory holding the MNIST IDX files, or ``images,labels``."""
    if "," in source:
        images, labels = source.split(",", 1)
        return load_idx(Path(images), Path(labels), spec)

    path = Path(source)
    if path.is_dir():
        return load_mnist(path, spec, split)
    if path.suffix.lower() == ".csv":
        return load_csv(path, spec)
    raise DatasetError(f"cannot tell the format of {source!r}; use a .csv file or an IDX pair")
