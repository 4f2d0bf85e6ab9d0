"""Adversarial lower-bound construction for the Rademacher complexity of the unit-wise class.

The instance has d = h = 2^k and m = n 2^k samples, sample i being the basis vector e_(i // n).
For a sign vector xi, the witness network keeps column j of the sign-adjusted Hadamard matrix F
when the sum of xi over group j is non-negative and zeroes it otherwise. Every witness lies in the
constrained class, so averaging its correlation with xi bounds the complexity from below.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, NamedTuple

import numpy as np

from capmeter.config import Config, RademacherMode, Stream
from capmeter.data import basis_dataset
from capmeter.exceptions import ConstraintViolation, SizeLimitError
from capmeter.linalg import DenseMatrix, Vector, as_matrix, as_vector, hadamard, spectral_norm
from capmeter.nn import LabeledDataset
from capmeter.utils import rng_stream, sign_patterns

logger = logging.getLogger(__name__)


########################################
# Types
########################################
# MARK: LowerBoundInstance
@dataclass(frozen=True, eq=False)
class LowerBoundInstance:
    k: int
    n: int
    alpha: Vector
    beta: Vector
    F: DenseMatrix
    dataset: LabeledDataset

    @property
    def h(self) -> int:
        return 2**self.k

    @property
    def m(self) -> int:
        return self.n * 2**self.k

    @property
    def s(self) -> Vector:
        return self.alpha * self.beta


# MARK: RademacherEstimate
class RademacherEstimate(NamedTuple):
    value: float
    stderr: float
    trials: int
    mode: RademacherMode


# MARK: LinearRademacher
class LinearRademacher(NamedTuple):
    value: float
    grid_value: float | None
    bound: float


########################################
# Construction
########################################
# MARK: build_instance
def build_instance(k: int, n: int, alpha: Vector, beta: Vector) -> LowerBoundInstance:
    """Repeated-basis dataset plus the Hadamard matrix with every column signed so that
    <s, [f]_+> >= <s, [-f]_+> (ties keep the sign), where s = alpha * beta."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    F = hadamard(k)
    h = F.shape[0]
    alpha, beta = as_vector(alpha), as_vector(beta)
    if alpha.size != h or beta.size != h:
        raise ValueError(f"alpha and beta need {h} entries, got {alpha.size} and {beta.size}")
    if (alpha <= 0).any() or (beta <= 0).any():
        raise ValueError("alpha and beta must be entrywise positive")

    s = alpha * beta
    plus = s @ np.maximum(F, 0.0)
    minus = s @ np.maximum(-F, 0.0)
    F = F * np.where(minus > plus, -1.0, 1.0)

    return LowerBoundInstance(k=k, n=n, alpha=alpha, beta=beta, F=F, dataset=basis_dataset(k, n))


# MARK: _check_signs
def _check_signs(xi: Vector, m: int) -> Vector:
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    if xi.size != m:
        raise ValueError(f"sign vector needs {m} entries, got {xi.size}")
    if not np.isin(xi, (-1.0, 1.0)).all():
        raise ValueError("sign vector entries must be -1 or +1")
    return xi


# MARK: group_sums
def group_sums(instance: LowerBoundInstance, xi: np.ndarray) -> np.ndarray:
    """Sum of the signs over each group of n samples; works on one vector or a block of rows."""
    xi = np.asarray(xi, dtype=np.float64)
    return xi.reshape(*xi.shape[:-1], instance.h, instance.n).sum(axis=-1)


# MARK: _witness_from_mask
def _witness_from_mask(
    instance: LowerBoundInstance,
    keep: np.ndarray,
) -> tuple[DenseMatrix, DenseMatrix]:
    U = instance.beta[:, None] * (instance.F * keep[None, :])
    V = instance.alpha[None, :].copy()
    _check_constraints(instance, U, V)
    return V, U


# MARK: _check_constraints
def _check_constraints(
    instance: LowerBoundInstance,
    U: DenseMatrix,
    V: DenseMatrix,
    rtol: float = 1e-9,
) -> None:
    """Per-unit impact, per-unit capacity and spectral budgets, reference matrix U0 = 0."""
    impacts = np.linalg.norm(V, axis=0)
    if (impacts > instance.alpha * (1 + rtol)).any():
        raise ConstraintViolation("a unit impact exceeds its budget alpha_j")
    capacities = np.linalg.norm(U, axis=1)
    if (capacities > instance.beta * (1 + rtol)).any():
        raise ConstraintViolation("a unit capacity exceeds its budget beta_j")
    if spectral_norm(U) > instance.beta.max() * (1 + rtol):
        raise ConstraintViolation("||U||_2 exceeds max_j beta_j")


# MARK: witness
def witness(instance: LowerBoundInstance, xi: Vector) -> tuple[DenseMatrix, DenseMatrix]:
    """(V, U) = (alpha^T, Diag(beta) F~) for the sign vector ``xi``; group sums of 0 keep the
    column. Raises ConstraintViolation if the pair leaves the constrained class."""
    xi = _check_signs(xi, instance.m)
    return _witness_from_mask(instance, group_sums(instance, xi) >= 0)


########################################
# Estimation
########################################
# MARK: _outputs
def _outputs(instance: LowerBoundInstance, keep: np.ndarray) -> Vector:
    """Witness outputs V [U x_i]_+ on every sample, for one kept-column mask."""
    V, U = _witness_from_mask(instance, keep)
    return (np.maximum(instance.dataset.X @ U.T, 0.0) @ V.T)[:, 0]


# MARK: _block_values
def _block_values(
    instance: LowerBoundInstance,
    signs: np.ndarray,
    cache: dict[bytes, Vector],
) -> Vector:
    """value(xi) = sum_i xi_i V [U(xi) x_i]_+ for every row of ``signs``."""
    masks = group_sums(instance, signs) >= 0
    unique, inverse = np.unique(masks, axis=0, return_inverse=True)
    values = np.empty(signs.shape[0])
    for index, keep in enumerate(unique):
        key = keep.tobytes()
        if key not in cache:
            cache[key] = _outputs(instance, keep)
        rows = inverse.reshape(-1) == index
        values[rows] = signs[rows] @ cache[key]
    return values


# MARK: _sampled_chunk
def _sampled_chunk(instance: LowerBoundInstance, seed: int, chunk: int, size: int) -> Vector:
    rng = rng_stream(seed, Stream.SAMPLING, chunk)
    signs = rng.integers(0, 2, size=(size, instance.m)).astype(np.float64) * 2 - 1
    return _block_values(instance, signs, {})


# MARK: rademacher_lower_estimate
def rademacher_lower_estimate(
    instance: LowerBoundInstance,
    mode: RademacherMode = RademacherMode.EXACT,
    trials: int = Config.SAMPLED_TRIALS,
    seed: int = Config.SEED,
    workers: int = Config.THREADS,
) -> RademacherEstimate:
    """(1/m) E_xi[value(xi)] over every sign vector (exact) or ``trials`` seeded draws (sampled)."""
    m = instance.m
    if mode is RademacherMode.EXACT:
        if m > Config.EXACT_MAX_SAMPLES:
            raise SizeLimitError(f"exact enumeration is capped at m = {Config.EXACT_MAX_SAMPLES}")
        cache: dict[bytes, Vector] = {}
        total = sum(float(_block_values(instance, b, cache).sum()) for b in sign_patterns(m))
        logger.debug("exact enumeration over 2^%d signs used %d witnesses", m, len(cache))
        return RademacherEstimate(total / 2**m / m, 0.0, 2**m, mode)

    if trials < 2:
        raise ValueError("sampled mode needs at least two trials")
    chunk = Config.SAMPLED_CHUNK
    sizes = [min(chunk, trials - start) for start in range(0, trials, chunk)]
    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(sizes)))) as pool:
        blocks = list(
            pool.map(
                _sampled_chunk,
                [instance] * len(sizes),
                [seed] * len(sizes),
                range(len(sizes)),
                sizes,
            )
        )
    values = np.concatenate(blocks) / m
    return RademacherEstimate(
        value=float(values.mean()),
        stderr=float(values.std(ddof=1) / math.sqrt(trials)),
        trials=trials,
        mode=mode,
    )


# MARK: analytic_lower_value
def analytic_lower_value(instance: LowerBoundInstance) -> float:
    """alpha^T beta sqrt(2m) / (8m)."""
    return float(instance.alpha @ instance.beta) * math.sqrt(2 * instance.m) / (8 * instance.m)


# MARK: general_lower_value
def general_lower_value(instance: LowerBoundInstance) -> float:
    """alpha^T beta sqrt(m) / (16m), the value for sizes that are not powers of two."""
    return float(instance.alpha @ instance.beta) * math.sqrt(instance.m) / (16 * instance.m)


# MARK: certification_report
def certification_report(
    instance: LowerBoundInstance,
    estimate: RademacherEstimate,
) -> dict[str, Any]:
    analytic = analytic_lower_value(instance)
    return {
        "k": instance.k,
        "n": instance.n,
        "m": instance.m,
        "h": instance.h,
        "mode": estimate.mode.value,
        "trials": estimate.trials,
        "estimate": estimate.value,
        "stderr": estimate.stderr,
        "analytic_lower_value": analytic,
        "general_lower_value": general_lower_value(instance),
        "certification_margin": estimate.value - analytic,
        "certified": estimate.value >= analytic - 1e-12,
    }


########################################
# Oracles
########################################
# MARK: abs_sum_expectation
def abs_sum_expectation(n: int) -> float:
    """E|xi_1 + ... + xi_n| computed exactly from binomial counts."""
    if not 1 <= n <= Config.ABS_SUM_MAX_N:
        raise SizeLimitError(f"n must lie in [1, {Config.ABS_SUM_MAX_N}], got {n}")
    total = sum(abs(n - 2 * j) * math.comb(n, j) for j in range(n + 1))
    return float(Fraction(total, 2**n))


# MARK: brute_force_linear_rademacher
def brute_force_linear_rademacher(
    c: int,
    r: float,
    X: DenseMatrix,
    grid_density: int = 0,
    seed: int = Config.SEED,
) -> LinearRademacher:
    """E_xi sup_{||V||_F <= r} sum_i <xi_i, V x_i> for X of shape d x m and xi in {-1, +1}^(c x m).

    The supremum is r ||sum_i xi_i x_i^T||_F. The expectation is exact when c m is small and
    sampled otherwise. With ``grid_density`` > 0 the supremum is also searched over that many
    seeded directions of norm r, which can only come out lower.
    """
    X = as_matrix(X)
    d, m = X.shape
    if m > Config.LINEAR_MAX_SAMPLES:
        raise SizeLimitError(f"linear-class oracle is capped at m = {Config.LINEAR_MAX_SAMPLES}")
    if r < 0:
        raise ValueError("r must be non-negative")

    if c * m <= Config.LINEAR_MAX_SIGNS:
        blocks = list(sign_patterns(c * m))
    else:
        rng = rng_stream(seed, Stream.SAMPLING)
        blocks = [rng.integers(0, 2, size=(Config.SAMPLED_TRIALS, c * m)) * 2.0 - 1]

    directions = None
    if grid_density > 0:
        rng = rng_stream(seed, Stream.SAMPLING, grid_density)
        directions = rng.standard_normal((grid_density, c * d))
        directions *= r / np.linalg.norm(directions, axis=1, keepdims=True)

    total, grid_total, count = 0.0, 0.0, 0
    for signs in blocks:
        M = (signs.reshape(-1, c, m) @ X.T).reshape(-1, c * d)
        total += float(np.linalg.norm(M, axis=1).sum())
        if directions is not None:
            grid_total += float((M @ directions.T).max(axis=1).sum())
        count += signs.shape[0]

    return LinearRademacher(
        value=r * total / count,
        grid_value=grid_total / count if directions is not None else None,
        bound=r * math.sqrt(c) * float(np.linalg.norm(X)),
    )


# MARK: contraction_check
def contraction_check(v: Vector) -> tuple[float, float]:
    """(||v||_2, sqrt(2) E|<xi, v>|) with the expectation enumerated exactly."""
    v = as_vector(v)
    if not 1 <= v.size <= Config.CONTRACTION_MAX_DIM:
        raise SizeLimitError(f"dimension must lie in [1, {Config.CONTRACTION_MAX_DIM}]")
    total = sum(float(np.abs(signs @ v).sum()) for signs in sign_patterns(v.size))
    return float(np.linalg.norm(v)), math.sqrt(2) * total / 2**v.size
