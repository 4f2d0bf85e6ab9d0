"""Dense matrices, the norms the bounds need, and the Hadamard matrix of the lower bound.

DenseMatrix and Vector are float64 numpy arrays. ``as_matrix``/``as_vector`` are the
constructors: they copy into C (row-major) order and reject empty or non-finite input.
"""

import logging
import math
from typing import NamedTuple, TypeAlias

import numpy as np
import numpy.typing as npt
import scipy.linalg

from capmeter.config import Axis, Config, Stream
from capmeter.exceptions import (
    ConvergenceError,
    DegenerateInputError,
    NonFiniteError,
    ShapeError,
    SizeLimitError,
)
from capmeter.utils import rng_stream

logger = logging.getLogger(__name__)

DenseMatrix: TypeAlias = npt.NDArray[np.float64]
Vector: TypeAlias = npt.NDArray[np.float64]


class PowerIteration(NamedTuple):
    value: float
    iterations: int
    converged: bool


########################################
# Containers
########################################
# MARK: as_matrix
def as_matrix(data: npt.ArrayLike, *, readonly: bool = False) -> DenseMatrix:
    """Validate and copy ``data`` into a row-major float64 matrix."""
    M = np.array(data, dtype=np.float64, order="C", copy=True)
    if M.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got {M.ndim} dimension(s)")
    if M.shape[0] < 1 or M.shape[1] < 1:
        raise ShapeError(f"matrix shape must be at least 1x1, got {M.shape}")
    if not np.isfinite(M).all():
        raise NonFiniteError("matrix contains NaN or Inf entries")
    if readonly:
        M.setflags(write=False)
    return M


# MARK: as_vector
def as_vector(data: npt.ArrayLike) -> Vector:
    v = np.array(data, dtype=np.float64, copy=True).reshape(-1)
    if not np.isfinite(v).all():
        raise NonFiniteError("vector contains NaN or Inf entries")
    return v


########################################
# Norms
########################################
# MARK: frobenius_norm
def frobenius_norm(M: DenseMatrix) -> float:
    return float(np.linalg.norm(M, ord="fro"))


# MARK: power_iteration
def power_iteration(
    M: DenseMatrix,
    tol: float = Config.POWER_TOL,
    max_iter: int = Config.POWER_MAX_ITER,
) -> PowerIteration:
    """Largest singular value of ``M`` by power iteration on the smaller Gram matrix.

    The start vector is all-ones. If the iterate collapses (the start lies in the null space)
    the run restarts from a seeded random vector. A second short run from a perturbed copy of
    the converged vector guards against an all-ones start orthogonal to the top eigenvector.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")

    G = M.T @ M if M.shape[1] <= M.shape[0] else M @ M.T
    scale = float(np.abs(G).max())
    if scale == 0.0:
        return PowerIteration(0.0, 0, True)

    rng = rng_stream(0, Stream.SAMPLING, G.shape[0])
    start = np.ones(G.shape[0])
    result, x = _iterate(G, start, tol, max_iter)
    if result is None:
        logger.debug("all-ones start vector collapsed, restarting from a random vector")
        result, x = _iterate(G, rng.standard_normal(G.shape[0]), tol, max_iter)
    if result is None:
        return PowerIteration(0.0, max_iter, True)

    nudged = x + 1e-3 * rng.standard_normal(G.shape[0])
    check, _ = _iterate(G, nudged, tol, max_iter)
    if check is not None and check.value > result.value * (1 + tol):
        result = PowerIteration(check.value, result.iterations + check.iterations, check.converged)

    return PowerIteration(math.sqrt(max(result.value, 0.0)), result.iterations, result.converged)


# MARK: _iterate
def _iterate(
    G: DenseMatrix,
    x: Vector,
    tol: float,
    max_iter: int,
) -> tuple[PowerIteration | None, Vector]:
    """Run power iteration on the symmetric PSD matrix ``G``; None when the iterate vanishes."""
    x = x / np.linalg.norm(x)
    floor = np.finfo(np.float64).eps * float(np.abs(G).max()) * G.shape[0]
    Gx = G @ x
    lam = float(x @ Gx)
    for iteration in range(1, max_iter + 1):
        y_norm = float(np.linalg.norm(Gx))
        if y_norm <= floor:
            return None, x
        x = Gx / y_norm
        Gx = G @ x
        lam_new = float(x @ Gx)
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return PowerIteration(lam_new, iteration, True), x
        lam = lam_new
    return PowerIteration(lam, max_iter, False), x


# MARK: spectral_norm
def spectral_norm(
    M: DenseMatrix,
    tol: float = Config.POWER_TOL,
    max_iter: int = Config.POWER_MAX_ITER,
    *,
    strict: bool = False,
) -> float:
    """Largest singular value of ``M``.

    On non-convergence, raises ConvergenceError when ``strict`` and otherwise logs a warning and
    returns the last iterate. Use ``power_iteration`` directly to keep the flag.
    """
    result = power_iteration(M, tol, max_iter)
    if not result.converged:
        if strict:
            raise ConvergenceError(f"power iteration did not reach tol={tol} in {max_iter} steps")
        logger.warning("spectral norm not converged after %d iterations", max_iter)
    return result.value


# MARK: group_norm
def group_norm(M: DenseMatrix, axis: Axis, p: float, inner_q: float = 2) -> float:
    """l_p norm (max for p = inf) of the l_q norms of the rows or columns of ``M``."""
    if p < 1:
        raise ValueError(f"group norm needs p >= 1, got {p}")
    if inner_q not in (1, 2):
        raise ValueError(f"inner_q must be 1 or 2, got {inner_q}")

    inner = np.linalg.norm(M, ord=inner_q, axis=1 if axis is Axis.ROWS else 0)
    return float(np.linalg.norm(inner, ord=p))


# MARK: singular_values
def singular_values(M: DenseMatrix) -> Vector:
    """All singular values, descending."""
    return np.linalg.svd(M, compute_uv=False)


########################################
# Special matrices
########################################
# MARK: hadamard
def hadamard(k: int, max_size: int = Config.HADAMARD_MAX_SIZE) -> DenseMatrix:
    """Sylvester Hadamard matrix of order 2^k scaled by 2^(-k/2), so that F^T F = I."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if 2**k > max_size:
        raise SizeLimitError(f"hadamard order 2^{k} exceeds the cap of {max_size}")
    return scipy.linalg.hadamard(2**k, dtype=np.float64) / 2 ** (k / 2)


########################################
# Vector helpers
########################################
# MARK: angle_degrees
def angle_degrees(u: Vector, v: Vector) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < Config.DEGENERATE_NORM or nv < Config.DEGENERATE_NORM:
        raise DegenerateInputError("angle undefined for a (near) zero vector")
    cosine = float(np.dot(u, v)) / (nu * nv)
    return float(np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0))))


# MARK: percentile_nearest_rank
def percentile_nearest_rank(values: Vector, q: float) -> float:
    """Nearest-rank percentile: the element at 1-based rank ceil(q * n / 100) after sorting."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError("percentile of an empty vector")
    if not 0 < q <= 100:
        raise ValueError(f"q must lie in (0, 100], got {q}")

    rank = max(1, math.ceil(q * values.size / 100))
    return float(np.sort(values)[rank - 1])
