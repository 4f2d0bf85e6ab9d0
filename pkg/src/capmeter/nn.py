"""Two layer ReLU network f(x) = V [U x]_+ without biases, its margins and losses.

The ramp loss is the continuous ramp: 1 below margin 0, 1 - mu/gamma on [0, gamma], 0 above.
A margin of exactly 0 is a classification error.
"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy.special import logsumexp

from capmeter.config import Config
from capmeter.exceptions import BoundDomainError, CheckpointError, LabelRangeError, ShapeError
from capmeter.linalg import DenseMatrix, Vector, as_matrix, as_vector
from capmeter.utils import atomic_write_bytes, write_json

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<4sHIII")
_SEED = struct.Struct("<Q")


########################################
# Types
########################################
# MARK: TwoLayerNet
@dataclass(eq=False)
class TwoLayerNet:
    """Weights V (c x h) and U (h x d) plus their frozen initial values V0 and U0."""

    U: DenseMatrix
    V: DenseMatrix
    U0: DenseMatrix
    V0: DenseMatrix
    seed: int = 0

    def __post_init__(self) -> None:
        self.U = as_matrix(self.U)
        self.V = as_matrix(self.V)
        self.U0 = as_matrix(self.U0, readonly=True)
        self.V0 = as_matrix(self.V0, readonly=True)
        if self.V.shape[1] != self.U.shape[0]:
            raise ShapeError(f"V is {self.V.shape} but U is {self.U.shape}; need V.cols == U.rows")
        if self.U0.shape != self.U.shape or self.V0.shape != self.V.shape:
            raise ShapeError("reference matrices must match the shapes of U and V")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @classmethod
    def at_init(cls, U: npt.ArrayLike, V: npt.ArrayLike, seed: int = 0) -> "TwoLayerNet":
        """Network whose reference matrices are copies of the given weights."""
        return cls(U=U, V=V, U0=np.array(U), V0=np.array(V), seed=seed)

    @property
    def d(self) -> int:
        return self.U.shape[1]

    @property
    def h(self) -> int:
        return self.U.shape[0]

    @property
    def c(self) -> int:
        return self.V.shape[0]

    def copy(self) -> "TwoLayerNet":
        return TwoLayerNet(U=self.U, V=self.V, U0=self.U0, V0=self.V0, seed=self.seed)


# MARK: FeatureScale
@dataclass(frozen=True, eq=False)
class FeatureScale:
    """Per-feature map x -> (x - lo) / span clipped into [0, 1], fitted once on a training set.

    Held-out data reuses the training fit, so its values outside the training range clip to
    the ends of the unit interval.
    """

    lo: Vector
    span: Vector

    def __post_init__(self) -> None:
        lo, span = as_vector(self.lo), as_vector(self.span)
        if lo.shape != span.shape:
            raise ShapeError(f"{lo.size} offsets but {span.size} spans")
        if (span <= 0).any():
            raise ValueError("feature spans must be positive")
        lo.setflags(write=False)
        span.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "span", span)

    @classmethod
    def fit(cls, X: npt.ArrayLike) -> "FeatureScale":
        """Map every column of ``X`` onto [0, 1]; constant columns map to 0."""
        X = as_matrix(X)
        lo = X.min(axis=0)
        span = X.max(axis=0) - lo
        return cls(lo=lo, span=np.where(span > 0, span, 1.0))

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "FeatureScale":
        return cls(lo=payload["lo"], span=payload["span"])

    @property
    def d(self) -> int:
        return self.lo.size

    def apply(self, X: npt.ArrayLike) -> DenseMatrix:
        X = as_matrix(X)
        if X.shape[1] != self.d:
            raise ShapeError(f"data has {X.shape[1]} features, the scale was fitted on {self.d}")
        return np.clip((X - self.lo) / self.span, 0.0, 1.0)

    def to_dict(self) -> dict[str, list[float]]:
        return {"lo": self.lo.tolist(), "span": self.span.tolist()}


# MARK: LabeledDataset
@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Design matrix X (m x d), labels y in [0, c) and the class count c.

    ``scale`` is the feature map already applied to X, if any.
    """

    X: DenseMatrix
    y: npt.NDArray[np.int64]
    c: int
    name: str = "dataset"
    scale: FeatureScale | None = None

    def __post_init__(self) -> None:
        X = as_matrix(self.X, readonly=True)
        y = np.array(self.y, dtype=np.int64).reshape(-1)
        if y.size != X.shape[0]:
            raise ShapeError(f"{X.shape[0]} samples but {y.size} labels")
        if self.c < 1:
            raise ValueError("class count must be at least 1")
        if y.size and (y.min() < 0 or y.max() >= self.c):
            raise LabelRangeError(f"labels must lie in [0, {self.c})")
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


# MARK: MarginParams
@dataclass(frozen=True)
class MarginParams:
    gamma: float
    delta: float = Config.DELTA

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise BoundDomainError(f"gamma must be positive, got {self.gamma}")
        if not 0 < self.delta < 1:
            raise BoundDomainError(f"delta must lie in (0, 1), got {self.delta}")


########################################
# Network
########################################
# MARK: forward
def forward(net: TwoLayerNet, x: Vector) -> Vector:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != net.d:
        raise ShapeError(f"input has {x.size} features, network expects {net.d}")
    return net.V @ np.maximum(net.U @ x, 0.0)


# MARK: score_matrix
def score_matrix(net: TwoLayerNet, X: DenseMatrix) -> DenseMatrix:
    """Scores for every row of X, shape (m, c)."""
    if X.shape[1] != net.d:
        raise ShapeError(f"data has {X.shape[1]} features, network expects {net.d}")
    return np.maximum(X @ net.U.T, 0.0) @ net.V.T


########################################
# Margins and losses
########################################
# MARK: margin_operator
def margin_operator(scores: Vector, y: int) -> float:
    """Correct-class score minus the best other score."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size < 2:
        raise ValueError("the margin operator needs at least two classes")
    if not 0 <= y < scores.size:
        raise ValueError(f"label {y} out of range for {scores.size} classes")
    return float(scores[y] - np.delete(scores, y).max())


# MARK: _margins
def _margins(S: DenseMatrix, y: npt.NDArray[np.int64]) -> Vector:
    if S.shape[1] < 2:
        raise ValueError("the margin operator needs at least two classes")
    rows = np.arange(S.shape[0])
    others = S.copy()
    others[rows, y] = -np.inf
    return S[rows, y] - others.max(axis=1)


# MARK: margin_distribution
def margin_distribution(net: TwoLayerNet, data: LabeledDataset) -> Vector:
    """Margin of every sample, in sample order."""
    if data.c > net.c:
        raise ShapeError(f"dataset has {data.c} classes, network outputs {net.c}")
    return _margins(score_matrix(net, data.X), data.y)


# MARK: ramp_loss
def ramp_loss(mu: float | Vector, gamma: float) -> float | Vector:
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    loss = np.clip(1.0 - np.asarray(mu, dtype=np.float64) / gamma, 0.0, 1.0)
    return float(loss) if loss.ndim == 0 else loss


# MARK: empirical_margin_loss
def empirical_margin_loss(net: TwoLayerNet, data: LabeledDataset, gamma: float) -> float:
    """Mean ramp loss at margin gamma; gamma = 0 gives the 0/1 training error."""
    return margin_loss_from_margins(margin_distribution(net, data), gamma)


# MARK: margin_loss_from_margins
def margin_loss_from_margins(margins: Vector, gamma: float) -> float:
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    if gamma == 0:
        return float(np.mean(margins <= 0))
    return float(np.mean(ramp_loss(margins, gamma)))


# MARK: cross_entropy
def cross_entropy(scores: Vector, y: int) -> float:
    """-log softmax(scores)[y]; logsumexp subtracts the max internally."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    return float(logsumexp(scores) - scores[y])


# MARK: mean_cross_entropy
def mean_cross_entropy(S: DenseMatrix, y: npt.NDArray[np.int64]) -> float:
    rows = np.arange(S.shape[0])
    return float(np.mean(logsumexp(S, axis=1) - S[rows, y]))


########################################
# Checkpoints
########################################
# MARK: save_checkpoint
def save_checkpoint(
    net: TwoLayerNet,
    path: Path,
    provenance: dict[str, Any] | None = None,
) -> None:
    """Write the binary checkpoint and its JSON sidecar ``<path>.json``.

    Layout: b"CAPM", u16 version, u32 d, h, c, then U, V, U0, V0 as little-endian float64
    in row-major order, then the u64 seed.
    """
    path = Path(path)
    payload = b"".join(
        [
            _HEADER.pack(Config.CHECKPOINT_MAGIC, Config.CHECKPOINT_VERSION, net.d, net.h, net.c),
            *(M.astype("<f8").tobytes(order="C") for M in (net.U, net.V, net.U0, net.V0)),
            _SEED.pack(net.seed),
        ]
    )
    atomic_write_bytes(path, payload)

    sidecar = {
        "format": "CAPM",
        "version": Config.CHECKPOINT_VERSION,
        "shapes": {
            "U": list(net.U.shape),
            "V": list(net.V.shape),
            "U0": list(net.U0.shape),
            "V0": list(net.V0.shape),
        },
        "d": net.d,
        "h": net.h,
        "c": net.c,
        "seed": net.seed,
        "provenance": provenance or {},
    }
    write_json(sidecar_path(path), sidecar)
    logger.info("wrote checkpoint %s (d=%d, h=%d, c=%d)", path, net.d, net.h, net.c)


# MARK: load_checkpoint
def load_checkpoint(path: Path) -> tuple[TwoLayerNet, dict[str, Any]]:
    """Read a checkpoint and, when present, its sidecar provenance."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size + _SEED.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")

    magic, version, d, h, c = _HEADER.unpack_from(raw, 0)
    if magic != Config.CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != Config.CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")

    sizes = [h * d, c * h, h * d, c * h]
    expected = _HEADER.size + 8 * sum(sizes) + _SEED.size
    if len(raw) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes, found {len(raw)}")

    offset = _HEADER.size
    blocks = []
    for size, shape in zip(sizes, [(h, d), (c, h), (h, d), (c, h)]):
        blocks.append(np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(shape))
        offset += 8 * size
    (seed,) = _SEED.unpack_from(raw, offset)

    sidecar = sidecar_path(path)
    provenance = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    net = TwoLayerNet(U=blocks[0], V=blocks[1], U0=blocks[2], V0=blocks[3], seed=int(seed))
    return net, provenance


# MARK: sidecar_path
def sidecar_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")

