import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt

from capmeter.config import Config, InitScheme, Stream
from capmeter.exceptions import CapmeterError, DivergenceError, ShapeError
from capmeter.linalg import DenseMatrix
from capmeter.nn import (
    FeatureScale,
    LabeledDataset,
    TwoLayerNet,
    mean_cross_entropy,
    save_checkpoint,
)
from capmeter.utils import rng_stream, write_json

logger = logging.getLogger(__name__)


########################################
# Types
########################################
# MARK: TrainConfig
@dataclass(frozen=True)
class TrainConfig:
    lr: float = Config.LR
    momentum: float = Config.MOMENTUM
    batch_size: int = Config.BATCH_SIZE
    stop_loss: float = Config.STOP_LOSS
    max_epochs: int = Config.MAX_EPOCHS
    seed: int = Config.SEED
    init_scheme: InitScheme = InitScheme.UNIFORM_FAN_IN
    init_sigma: float = 1.0
    shuffle: bool = True
    log_every: int = Config.LOG_EVERY

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not self.stop_loss > 0:
            raise ValueError("stop_loss must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.init_sigma < 0:
            raise ValueError("init_sigma must be non-negative")


# MARK: TrainReport
@dataclass
class TrainReport:
    epochs_run: int
    final_train_cross_entropy: float
    reached_stop: bool
    wall_time_s: float
    loss_curve: list[float] = field(default_factory=list)

    def to_dict(self, *, include_wall_time: bool = False) -> dict[str, Any]:
        """JSON form. Wall time is left out by default so reruns write identical bytes."""
        payload = asdict(self)
        if not include_wall_time:
            payload.pop("wall_time_s")
        return payload


# MARK: SweepResult
@dataclass
class SweepResult:
    h: int
    seed: int
    net: TwoLayerNet | None = None
    report: TrainReport | None = None
    checkpoint: Path | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


########################################
# Initialization
########################################
# MARK: init_network
def init_network(
    d: int,
    h: int,
    c: int,
    scheme: InitScheme = InitScheme.UNIFORM_FAN_IN,
    seed: int = Config.SEED,
    sigma: float = 1.0,
) -> TwoLayerNet:
    """Draw U (h x d) and V (c x h) i.i.d.; the reference matrices are copies of the draw.

    uniform_fan_in: U ~ U(-1/sqrt(d), 1/sqrt(d)), V ~ U(-1/sqrt(h), 1/sqrt(h)).
    gaussian: every entry ~ N(0, sigma^2).
    """
    if min(d, h, c) < 1:
        raise ValueError(f"d, h, c must be positive, got {(d, h, c)}")

    rng = rng_stream(seed, Stream.INIT)
    if scheme is InitScheme.UNIFORM_FAN_IN:
        U = rng.uniform(-1 / np.sqrt(d), 1 / np.sqrt(d), size=(h, d))
        V = rng.uniform(-1 / np.sqrt(h), 1 / np.sqrt(h), size=(c, h))
    elif scheme is InitScheme.GAUSSIAN:
        U = sigma * rng.standard_normal((h, d))
        V = sigma * rng.standard_normal((c, h))
    else:
        raise ValueError(f"unknown init scheme {scheme}")

    return TwoLayerNet.at_init(U, V, seed=seed)


########################################
# Gradients
########################################
# MARK: _loss_and_grads
def _loss_and_grads(
    U: DenseMatrix,
    V: DenseMatrix,
    X: DenseMatrix,
    y: npt.NDArray[np.int64],
) -> tuple[float, DenseMatrix, DenseMatrix]:
    """Mean cross-entropy over the rows of X and its gradients; relu'(0) = 0."""
    b = X.shape[0]
    Z = X @ U.T
    A = np.maximum(Z, 0.0)
    S = A @ V.T
    loss = mean_cross_entropy(S, y)

    P = np.exp(S - S.max(axis=1, keepdims=True))
    P /= P.sum(axis=1, keepdims=True)
    P[np.arange(b), y] -= 1.0
    dS = P / b

    dV = dS.T @ A
    dZ = (dS @ V) * (Z > 0)
    dU = dZ.T @ X
    return loss, dU, dV


# MARK: loss_and_gradients
def loss_and_gradients(
    net: TwoLayerNet,
    X: DenseMatrix,
    y: npt.NDArray[np.int64],
) -> tuple[float, DenseMatrix, DenseMatrix]:
    """Mean cross-entropy of ``net`` on (X, y) and its gradients with respect to U and V."""
    if X.shape[1] != net.d:
        raise ShapeError(f"data has {X.shape[1]} features, network expects {net.d}")
    return _loss_and_grads(net.U, net.V, X, np.asarray(y, dtype=np.int64))


# MARK: gradient_check
def gradient_check(
    net: TwoLayerNet,
    X: DenseMatrix,
    y: npt.NDArray[np.int64],
    step: float = 1e-5,
) -> float:
    """Largest elementwise relative error between analytic and central-difference gradients.

    Entry errors are |a - n| / max(|a|, |n|, floor), where the floor is 1e-3 of the largest
    analytic entry of the same matrix, so entries that are zero up to rounding do not dominate.
    """
    _, dU, dV = loss_and_gradients(net, X, y)
    U = net.U.copy()
    V = net.V.copy()

    errors = []
    for W, analytic in ((U, dU), (V, dV)):
        numeric = np.zeros_like(W)
        for index in np.ndindex(W.shape):
            original = W[index]
            W[index] = original + step
            plus = _loss_and_grads(U, V, X, y)[0]
            W[index] = original - step
            minus = _loss_and_grads(U, V, X, y)[0]
            W[index] = original
            numeric[index] = (plus - minus) / (2 * step)

        floor = max(1e-3 * float(np.abs(analytic).max(initial=0.0)), 1e-12)
        scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        errors.append(float(np.max(np.abs(analytic - numeric) / scale, initial=0.0)))
    return max(errors)


########################################
# Training
########################################
# MARK: train
def train(net: TwoLayerNet, data: LabeledDataset, cfg: TrainConfig) -> TrainReport:
    """Minibatch SGD with heavy-ball momentum on mean cross-entropy. Updates ``net`` in place.

    Each epoch reshuffles from the shuffle stream of ``cfg.seed``. The final short batch is kept.
    Training stops when the epoch-mean loss reaches ``cfg.stop_loss`` or after ``cfg.max_epochs``.
    """
    if data.d != net.d:
        raise ShapeError(f"data has {data.d} features, network expects {net.d}")
    if data.c > net.c:
        raise ShapeError(f"dataset has {data.c} classes, network outputs {net.c}")

    rng = rng_stream(cfg.seed, Stream.SHUFFLE)
    vel_U = np.zeros_like(net.U)
    vel_V = np.zeros_like(net.V)
    curve: list[float] = []
    reached = False
    start = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(data.m) if cfg.shuffle else np.arange(data.m)
        total = 0.0
        for lo in range(0, data.m, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            loss, dU, dV = _loss_and_grads(net.U, net.V, data.X[batch], data.y[batch])
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}; lr={cfg.lr} is probably too high"
                )
            total += loss * batch.size

            vel_U *= cfg.momentum
            vel_U -= cfg.lr * dU
            vel_V *= cfg.momentum
            vel_V -= cfg.lr * dV
            net.U += vel_U
            net.V += vel_V

        epoch_loss = total / data.m
        curve.append(epoch_loss)
        if epoch % cfg.log_every == 0 or epoch == 1:
            logger.info("h=%d epoch %d: cross-entropy %.6f", net.h, epoch, epoch_loss)
        if epoch_loss <= cfg.stop_loss:
            reached = True
            break

    elapsed = time.perf_counter() - start
    logger.info(
        "h=%d finished after %d epochs (loss %.6f, reached stop: %s)",
        net.h,
        len(curve),
        curve[-1],
        reached,
    )
    return TrainReport(
        epochs_run=len(curve),
        final_train_cross_entropy=curve[-1],
        reached_stop=reached,
        wall_time_s=elapsed,
        loss_curve=curve,
    )


########################################
# Sweeps
########################################
# MARK: report_path
def report_path(checkpoint: Path) -> Path:
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(checkpoint.stem + Config.REPORT_SUFFIX)


# MARK: provenance
def provenance(cfg: TrainConfig, data: LabeledDataset) -> dict[str, Any]:
    """Metadata stored in checkpoint sidecars."""
    return {
        "dataset": data.name,
        "m": data.m,
        "init_scheme": cfg.init_scheme.value,
        "init_sigma": cfg.init_sigma,
        "train_config": {k: v for k, v in asdict(cfg).items() if k != "init_scheme"},
        "feature_scale": data.scale.to_dict() if data.scale is not None else None,
        "conventions": Config.CONVENTIONS,
    }


# MARK: stored_scale
def stored_scale(sidecar: dict[str, Any]) -> FeatureScale | None:
    """The feature scale a checkpoint was trained with, from its loaded sidecar."""
    payload = sidecar.get("provenance", {}).get("feature_scale")
    return FeatureScale.from_dict(payload) if payload else None


# MARK: train_width
def train_width(
    h: int,
    data: LabeledDataset,
    cfg: TrainConfig,
    out_dir: Path | None = None,
) -> SweepResult:
    """Train a fresh width-h network seeded with cfg.seed XOR h, and persist it when asked."""
    seed = cfg.seed ^ h
    result = SweepResult(h=h, seed=seed)
    run_cfg = replace(cfg, seed=seed)
    try:
        net = init_network(data.d, h, data.c, cfg.init_scheme, seed, cfg.init_sigma)
        report = train(net, data, run_cfg)
    except CapmeterError as exc:
        logger.warning("width h=%d failed: %s", h, exc)
        result.error = str(exc)
        return result

    result.net, result.report = net, report
    if out_dir is not None:
        path = Path(out_dir) / f"h{h:05d}{Config.CHECKPOINT_SUFFIX}"
        save_checkpoint(net, path, provenance(run_cfg, data))
        write_json(report_path(path), report.to_dict())
        result.checkpoint = path
    return result


# MARK: width_sweep
def width_sweep(
    widths: list[int],
    data: LabeledDataset,
    cfg_template: TrainConfig,
    out_dir: Path | None = None,
    workers: int = Config.THREADS,
) -> list[SweepResult]:
    """Train one network per width, in parallel threads. Results follow the order of ``widths``.

    A failing width is flagged on its result and does not stop the others.
    """
    if not widths:
        raise ValueError("widths must be nonempty")
    if any(h < 1 for h in widths):
        raise ValueError(f"widths must be positive, got {widths}")

    logger.info("sweeping %d widths on %s with %d workers", len(widths), data.name, workers)
    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(widths)))) as pool:
        futures = [pool.submit(train_width, h, data, cfg_template, out_dir) for h in widths]
        results = [future.result() for future in futures]

    failed = [r.h for r in results if r.failed]
    if failed:
        logger.warning("widths %s failed", failed)
    return results
