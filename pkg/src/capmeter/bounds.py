"""Generalization bounds with their exact constants, the comparator capacity measures, and the
covering numbers behind the union bound over per-unit norm budgets.

Every bound is evaluated with the unnormalized ||X||_F (samples as the columns of X) over
gamma * sqrt(m). The cover count uses N = binom(K + D - 1, D - 1).
"""

import logging
import math
from collections.abc import Iterator
from dataclasses import asdict, dataclass, field
from typing import Any, NamedTuple

import numpy as np
from scipy.special import gammaln

from capmeter.config import Axis, Config
from capmeter.exceptions import BoundDomainError, SizeLimitError
from capmeter.linalg import Vector, frobenius_norm, group_norm, power_iteration
from capmeter.measures import UnitProfile, design_norms, unit_profile
from capmeter.nn import (
    LabeledDataset,
    MarginParams,
    TwoLayerNet,
    empirical_margin_loss,
    margin_distribution,
    margin_loss_from_margins,
)

logger = logging.getLogger(__name__)


########################################
# Types
########################################
# MARK: BoundTerms
class BoundTerms(NamedTuple):
    """Empirical margin loss, capacity term and confidence term of a bound."""

    margin_loss: float
    capacity: float
    confidence: float

    @property
    def total(self) -> float:
        return self.margin_loss + self.capacity + self.confidence

    @property
    def gap(self) -> float:
        return self.capacity + self.confidence


# MARK: Table1
class Table1(NamedTuple):
    values: dict[int, float]
    converged: bool


# MARK: CoverSpec
@dataclass(frozen=True)
class CoverSpec:
    D: int
    p: float
    eps: float
    beta_radius: float = 1.0

    def __post_init__(self) -> None:
        if self.D < 1:
            raise ValueError(f"D must be at least 1, got {self.D}")
        if self.p < 2:
            raise ValueError(f"p must be at least 2, got {self.p}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not self.beta_radius > 0:
            raise ValueError(f"beta_radius must be positive, got {self.beta_radius}")


# MARK: BoundPanel
@dataclass
class BoundPanel:
    """Bounds for one network at one (gamma, delta). thm2/thm4 exclude the empirical loss."""

    thm1_first_form: float
    thm1_second_form: float
    thm2_bound: float
    thm2_second_form_capacity: float
    thm4_bound: dict[str, float]
    table1: dict[int, float]
    table1_converged: bool
    margin_loss: float
    train_error: float
    gamma: float
    delta: float
    m: int
    c: int
    h: int
    d: int
    x_fro: float
    u0x_fro: float
    metadata: dict[str, str] = field(default_factory=lambda: dict(Config.CONVENTIONS))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def columns(self) -> dict[str, float]:
        """Flat values named as in the sweep summary."""
        row = {
            "thm1_first_form": self.thm1_first_form,
            "thm1_second_form": self.thm1_second_form,
            "thm2_bound": self.thm2_bound,
            "thm2_second_form_capacity": self.thm2_second_form_capacity,
        }
        for key, value in self.thm4_bound.items():
            row[f"thm4_bound_{key if key == 'lnh' else 'p' + key}"] = value
        for key, value in self.table1.items():
            row[f"table1_row{key}"] = value
        return row


########################################
# Shared pieces
########################################
# MARK: _class_factor
def _class_factor(c: int) -> float:
    return math.sqrt(2 * c) + 1


# MARK: _confidence
def _confidence(cover_log: float, params: MarginParams, m: int) -> float:
    """3 sqrt((cover_log + ln(gamma sqrt(m) / delta)) / m)."""
    log_term = math.log(params.gamma * math.sqrt(m) / params.delta)
    if log_term < 0:
        logger.warning("ln(gamma sqrt(m) / delta) = %.4g is negative", log_term)
    radicand = (cover_log + log_term) / m
    if radicand < 0:
        raise BoundDomainError(f"confidence term radicand is negative ({radicand:.4g})")
    return 3 * math.sqrt(radicand)


# MARK: resolve_p
def resolve_p(token: str | float, h: int) -> float:
    """``lnh`` means p = ln h clamped to at least 2; anything else is read as a number."""
    if token == "lnh":
        return max(2.0, math.log(h))
    p = float(token)
    if p < 2:
        raise ValueError(f"p must be at least 2, got {p}")
    return p


# MARK: log_binomial
def log_binomial(n: float, k: float) -> float:
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


########################################
# Rademacher bounds
########################################
# MARK: thm1_bounds
def thm1_bounds(
    profile: UnitProfile,
    net: TwoLayerNet,
    data: LabeledDataset,
    gamma: float,
) -> tuple[float, float]:
    """Both forms of the Rademacher bound of the ramp-loss class, the first one never larger."""
    if not gamma > 0:
        raise BoundDomainError(f"gamma must be positive, got {gamma}")

    m = data.m
    const = 2 * math.sqrt(2 * net.c) + 2
    alpha, beta = profile.alpha, profile.beta
    x_fro, u0x_fro = design_norms(net, data)
    unit_u0x = np.linalg.norm(data.X @ net.U0.T, axis=0)

    first = const / (gamma * m) * float(np.sum(alpha * (beta * x_fro + unit_u0x)))
    second = (
        const
        / (gamma * math.sqrt(m))
        * float(np.linalg.norm(alpha))
        * (float(np.linalg.norm(beta)) * x_fro / math.sqrt(m) + u0x_fro / math.sqrt(m))
    )
    return first, second


########################################
# Generalization bounds
########################################
# MARK: thm2_terms
def thm2_terms(net: TwoLayerNet, data: LabeledDataset, gamma: float, delta: float) -> BoundTerms:
    params = MarginParams(gamma, delta)
    if net.h < 2:
        raise ValueError(f"the bound needs h >= 2, got {net.h}")

    m = data.m
    x_fro, u0x_fro = design_norms(net, data)
    dU = frobenius_norm(net.U - net.U0)
    capacity = (
        3
        * math.sqrt(2)
        * _class_factor(net.c)
        * (frobenius_norm(net.V) + 1)
        * (dU * x_fro + u0x_fro + 1)
        / (gamma * math.sqrt(m))
    )
    return BoundTerms(
        margin_loss=empirical_margin_loss(net, data, gamma),
        capacity=capacity,
        confidence=_confidence(5 * net.h, params, m),
    )


# MARK: thm2_bound
def thm2_bound(net: TwoLayerNet, data: LabeledDataset, gamma: float, delta: float) -> float:
    return thm2_terms(net, data, gamma, delta).total


# MARK: thm2_second_form_capacity
def thm2_second_form_capacity(net: TwoLayerNet, data: LabeledDataset, gamma: float) -> float:
    """sqrt(c) ||V||_F (||U - U0||_F + ||U0||_2) sqrt(mean ||x||^2) / (gamma sqrt(m))."""
    if not gamma > 0:
        raise BoundDomainError(f"gamma must be positive, got {gamma}")
    rms_x = math.sqrt(float(np.mean(np.sum(data.X**2, axis=1))))
    spec_u0 = power_iteration(net.U0).value
    dU = frobenius_norm(net.U - net.U0)
    return math.sqrt(net.c) * frobenius_norm(net.V) * (dU + spec_u0) * rms_x / (
        gamma * math.sqrt(data.m)
    )


# MARK: _lp_capacity
def _lp_capacity(net: TwoLayerNet, data: LabeledDataset, gamma: float, p: float) -> float:
    """(h^(1/2-1/p) ||V^T||_{p,2} + 1)(h^(1/2-1/p) ||U-U0||_{p,2} ||X||_F + ||U0 X||_F + 1)
    / (gamma sqrt(m)), without the class constant."""
    x_fro, u0x_fro = design_norms(net, data)
    scale = net.h ** (0.5 - 1 / p)
    v_norm = group_norm(net.V, Axis.COLS, p)
    u_norm = group_norm(net.U - net.U0, Axis.ROWS, p)
    return (scale * v_norm + 1) * (scale * u_norm * x_fro + u0x_fro + 1) / (
        gamma * math.sqrt(data.m)
    )


# MARK: thm4_terms
def thm4_terms(
    net: TwoLayerNet,
    data: LabeledDataset,
    gamma: float,
    delta: float,
    p: float,
) -> BoundTerms:
    params = MarginParams(gamma, delta)
    if p < 2:
        raise ValueError(f"p must be at least 2, got {p}")

    h = net.h
    cover_log = max(0, math.ceil(math.exp(1 - p) * h - 1)) * math.log(math.e * h)
    return BoundTerms(
        margin_loss=empirical_margin_loss(net, data, gamma),
        capacity=4 * math.e**2 * _class_factor(net.c) * _lp_capacity(net, data, gamma, p),
        confidence=_confidence(cover_log, params, data.m),
    )


# MARK: thm4_bound
def thm4_bound(
    net: TwoLayerNet,
    data: LabeledDataset,
    gamma: float,
    delta: float,
    p: float | str,
) -> float:
    """The l_p bound; ``p="lnh"`` evaluates the corollary at p = max(2, ln h)."""
    return thm4_terms(net, data, gamma, delta, resolve_p(p, net.h)).total


# MARK: mu_cover_log
def mu_cover_log(h: int, mu: float) -> float:
    """ln binom(ceil(h / mu) + h - 2, h - 1)."""
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    return log_binomial(math.ceil(h / mu) + h - 2, h - 1)


# MARK: mu_bound
def mu_bound(
    net: TwoLayerNet,
    data: LabeledDataset,
    gamma: float,
    delta: float,
    p: float,
    mu: float,
) -> BoundTerms:
    """General form: constant 4 (sqrt(2c) + 1)(mu + 1)^(2/p) and an exact log cover count.

    mu = 3 sqrt(2) / 4 - 1 with p = 2 and mu = e^p - 1 give the constants of the l_2 and l_p
    bounds above.
    """
    params = MarginParams(gamma, delta)
    if p < 2:
        raise ValueError(f"p must be at least 2, got {p}")

    const = 4 * _class_factor(net.c) * (mu + 1) ** (2 / p)
    return BoundTerms(
        margin_loss=empirical_margin_loss(net, data, gamma),
        capacity=const * _lp_capacity(net, data, gamma, p),
        confidence=_confidence(mu_cover_log(net.h, mu), params, data.m),
    )


########################################
# Comparator measures
########################################
# MARK: table1_measures
def table1_measures(net: TwoLayerNet, tol: float = Config.POWER_TOL) -> Table1:
    """The six comparator capacity measures, displayed constants set to 1.

    Row 2 is scaled by c and row 3 by sqrt(c). Group norms run along the hidden-unit axis and the
    reference matrices are the initial weights.
    """
    spectral = [power_iteration(M, tol) for M in (net.U, net.U0, net.V)]
    converged = all(result.converged for result in spectral)
    if not converged:
        logger.warning("spectral norm not converged in comparator measures, using last iterate")
    spec_U, spec_U0, spec_V = (result.value for result in spectral)

    dU = net.U - net.U0
    dV = net.V - net.V0
    fro_U, fro_V, fro_dU = frobenius_norm(net.U), frobenius_norm(net.V), frobenius_norm(dU)
    sqrt_h = math.sqrt(net.h)

    values = {
        1: float(net.d * net.h),
        2: net.c
        * group_norm(net.U, Axis.ROWS, math.inf, inner_q=1)
        * group_norm(net.V, Axis.ROWS, math.inf, inner_q=1),
        3: math.sqrt(net.c) * fro_U * fro_V,
        4: spec_U * group_norm(dV, Axis.COLS, 1) + group_norm(dU, Axis.ROWS, 1) * spec_V,
        5: spec_U * frobenius_norm(dV) + sqrt_h * fro_dU * spec_V,
        6: spec_U0 * fro_V + fro_dU * fro_V + sqrt_h,
    }
    return Table1(values=values, converged=converged)


########################################
# Covering numbers
########################################
# MARK: cover_size
def cover_size(spec: CoverSpec) -> int:
    """K = ceil(D / ((1 + eps)^p - 1)), snapped to the nearest integer within relative 1e-6."""
    ratio = spec.D / ((1 + spec.eps) ** spec.p - 1)
    nearest = round(ratio)
    if nearest >= 1 and abs(ratio - nearest) <= 1e-6 * ratio:
        return int(nearest)
    return max(1, math.ceil(ratio))


# MARK: cover_count_log
def cover_count_log(spec: CoverSpec) -> float:
    """ln N with N = binom(K + D - 1, D - 1)."""
    return log_binomial(cover_size(spec) + spec.D - 1, spec.D - 1)


# MARK: _compositions
def _compositions(total: int, parts: int, cap: int) -> Iterator[tuple[int, ...]]:
    """Tuples of ``parts`` integers in [1, cap] summing to ``total``, lexicographic order."""
    if parts == 1:
        if 1 <= total <= cap:
            yield (total,)
        return
    lo = max(1, total - cap * (parts - 1))
    hi = min(cap, total - (parts - 1))
    for first in range(lo, hi + 1):
        for rest in _compositions(total - first, parts - 1, cap):
            yield (first, *rest)


# MARK: cover_construct
def cover_construct(spec: CoverSpec) -> np.ndarray:
    """Dominance boxes covering the nonnegative part of the l_p ball of radius beta.

    Each row alpha has alpha_i^p = j_i beta^p / K with j_i in [1, K] and sum(j) = K + D, so
    ||alpha||_p^p = beta^p (1 + D / K). These are the maximal points of the lattice set, which
    dominate the rest. When no such j exists (D = 1 or K = 1) the single box with every
    alpha_i = beta is returned.
    """
    if spec.D > Config.COVER_MAX_DIM:
        raise SizeLimitError(f"cover construction is capped at D = {Config.COVER_MAX_DIM}")
    count_log = cover_count_log(spec)
    if count_log > math.log(Config.COVER_MAX_BOXES):
        raise SizeLimitError(f"cover would have up to exp({count_log:.1f}) boxes")

    K = cover_size(spec)
    j = np.array(list(_compositions(K + spec.D, spec.D, K)), dtype=np.float64)
    if j.size == 0:
        j = np.full((1, spec.D), float(K))
    boxes = (j * spec.beta_radius**spec.p / K) ** (1 / spec.p)
    logger.debug("cover D=%d p=%g eps=%g: K=%d, %d boxes", spec.D, spec.p, spec.eps, K, len(boxes))
    return boxes


# MARK: dominated
def dominated(boxes: np.ndarray, x: Vector, atol: float = 1e-12) -> bool:
    """True when |x| is entrywise below some box."""
    return bool(np.any(np.all(boxes + atol >= np.abs(x), axis=1)))


# MARK: sample_lp_ball
def sample_lp_ball(
    spec: CoverSpec,
    size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """``size`` points of the nonnegative part of the l_p ball of radius beta."""
    directions = np.abs(rng.standard_normal((size, spec.D)))
    directions /= np.linalg.norm(directions, ord=spec.p, axis=1, keepdims=True)
    radii = spec.beta_radius * rng.uniform(size=(size, 1)) ** (1 / spec.D)
    return directions * radii


########################################
# Panels
########################################
# MARK: bound_panel
def bound_panel(
    net: TwoLayerNet,
    data: LabeledDataset,
    gamma: float,
    delta: float = Config.DELTA,
    ps: tuple[str, ...] = Config.THM4_P,
    profile: UnitProfile | None = None,
) -> BoundPanel:
    MarginParams(gamma, delta)
    profile = profile or unit_profile(net)
    first, second = thm1_bounds(profile, net, data, gamma)
    thm2 = thm2_terms(net, data, gamma, delta)
    thm4 = {str(p): thm4_terms(net, data, gamma, delta, resolve_p(p, net.h)).gap for p in ps}
    table = table1_measures(net)
    x_fro, u0x_fro = design_norms(net, data)
    margins = margin_distribution(net, data)

    return BoundPanel(
        thm1_first_form=first,
        thm1_second_form=second,
        thm2_bound=thm2.gap,
        thm2_second_form_capacity=thm2_second_form_capacity(net, data, gamma),
        thm4_bound=thm4,
        table1=table.values,
        table1_converged=table.converged,
        margin_loss=thm2.margin_loss,
        train_error=margin_loss_from_margins(margins, 0.0),
        gamma=gamma,
        delta=delta,
        m=data.m,
        c=net.c,
        h=net.h,
        d=net.d,
        x_fro=x_fro,
        u0x_fro=u0x_fro,
    )
