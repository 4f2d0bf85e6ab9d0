"""Desk-sized property checks run by ``capmeter selftest``."""

import logging
import math
from collections.abc import Callable, Iterator
from typing import NamedTuple

import numpy as np

from capmeter.bounds import (
    CoverSpec,
    cover_construct,
    cover_count_log,
    dominated,
    sample_lp_ball,
    thm1_bounds,
)
from capmeter.config import Config, Stream
from capmeter.data import synthetic_gaussian
from capmeter.exceptions import CapmeterError
from capmeter.lowerbound import (
    LowerBoundInstance,
    analytic_lower_value,
    brute_force_linear_rademacher,
    build_instance,
    contraction_check,
    rademacher_lower_estimate,
)
from capmeter.measures import UnitProfile, unit_capacities, unit_impacts
from capmeter.nn import TwoLayerNet
from capmeter.train import TrainConfig, gradient_check, init_network, train
from capmeter.utils import rng_stream

logger = logging.getLogger(__name__)

LOWER_BOUND_CASES = [(0, n) for n in range(1, 5)] + [(1, 1), (1, 2), (2, 1)]


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


# MARK: _instances
def _instances(seed: int) -> Iterator[LowerBoundInstance]:
    rng = rng_stream(seed, Stream.SAMPLING)
    for k, n in LOWER_BOUND_CASES:
        h = 2**k
        yield build_instance(k, n, rng.uniform(0.1, 2.0, h), rng.uniform(0.1, 2.0, h))


# MARK: check_lower_bound
def check_lower_bound(seed: int = Config.SEED) -> str:
    worst = math.inf
    for instance in _instances(seed):
        margin = rademacher_lower_estimate(instance).value - analytic_lower_value(instance)
        if margin < -1e-12:
            raise AssertionError(f"k={instance.k}, n={instance.n}: estimate below analytic value")
        worst = min(worst, margin)
    return f"smallest certification margin {worst:.4g}"


# MARK: check_upper_vs_lower
def check_upper_vs_lower(seed: int = Config.SEED) -> str:
    for instance in _instances(seed):
        h, m = instance.h, instance.m
        zeros = np.zeros((h, h))
        net = TwoLayerNet(U=zeros, V=instance.alpha[None, :], U0=zeros, V0=np.zeros((1, h)))
        profile = UnitProfile(alpha=instance.alpha, beta=instance.beta)
        first, _ = thm1_bounds(profile, net, instance.dataset, 1.0)
        upper = first * m / (2 * math.sqrt(2 * net.c) + 2)
        lower = m * rademacher_lower_estimate(instance).value
        if upper < lower - 1e-9:
            raise AssertionError(f"k={instance.k}, n={instance.n}: {upper} < {lower}")
    return f"{len(LOWER_BOUND_CASES)} instances"


# MARK: check_cover
def check_cover(seed: int = Config.SEED, samples: int = 1000) -> str:
    rng = rng_stream(seed, Stream.SAMPLING)
    for D in (2, 3):
        for eps in (0.3, math.sqrt(2) - 1, 1.0):
            spec = CoverSpec(D=D, p=2, eps=eps)
            boxes = cover_construct(spec)
            if len(boxes) > math.exp(cover_count_log(spec)) + 1e-9:
                raise AssertionError(f"D={D}, eps={eps}: too many boxes")
            limit = D ** (0.5 - 1 / spec.p) * spec.beta_radius * (1 + eps) + 1e-12
            if (np.linalg.norm(boxes, axis=1) > limit).any():
                raise AssertionError(f"D={D}, eps={eps}: box norm above the lemma's bound")
            points = sample_lp_ball(spec, samples, rng)
            if not all(dominated(boxes, x) for x in points):
                raise AssertionError(f"D={D}, eps={eps}: a ball point is not dominated")
    return f"{samples} points per cover"


# MARK: check_oracles
def check_oracles(seed: int = Config.SEED) -> str:
    rng = rng_stream(seed, Stream.SAMPLING)
    for _ in range(20):
        lhs, rhs = contraction_check(rng.standard_normal(rng.integers(1, 9)))
        if lhs > rhs + 1e-12:
            raise AssertionError(f"contraction inequality fails: {lhs} > {rhs}")
    for _ in range(5):
        X = rng.standard_normal((2, 3))
        result = brute_force_linear_rademacher(2, 1.5, X)
        if result.value > result.bound + 1e-12:
            raise AssertionError(f"linear class exceeds r sqrt(c) ||X||_F: {result}")
    return "20 contraction vectors, 5 linear instances"


# MARK: check_gradients
def check_gradients(seed: int = Config.SEED) -> str:
    rng = rng_stream(seed, Stream.SAMPLING)
    worst = 0.0
    for trial in range(3):
        net = init_network(4, 5, 3, seed=seed + trial)
        X = rng.standard_normal((7, 4))
        y = rng.integers(0, 3, 7)
        worst = max(worst, gradient_check(net, X, y))
    if worst >= 1e-5:
        raise AssertionError(f"relative gradient error {worst:.3g}")
    return f"largest relative error {worst:.3g}"


# MARK: check_identities
def check_identities(seed: int = Config.SEED) -> str:
    data = synthetic_gaussian(d=5, m=60, c=3, seed=seed, separation=4.0)
    net = init_network(data.d, 16, data.c, seed=seed)
    train(net, data, TrainConfig(max_epochs=20, seed=seed, log_every=1000))
    gaps = (
        abs(np.linalg.norm(unit_capacities(net)) - np.linalg.norm(net.U - net.U0)),
        abs(np.linalg.norm(unit_impacts(net)) - np.linalg.norm(net.V)),
    )
    if max(gaps) > 1e-9:
        raise AssertionError(f"norm identities off by {max(gaps):.3g}")
    return "unit norms match layer norms"


CHECKS: dict[str, Callable[[], str]] = {
    "lower bound certification": check_lower_bound,
    "upper bound dominates lower estimate": check_upper_vs_lower,
    "covering lemma": check_cover,
    "contraction and linear-class oracles": check_oracles,
    "gradient check": check_gradients,
    "unit norm identities": check_identities,
}


# MARK: run_selftest
def run_selftest() -> list[CheckResult]:
    results = []
    for name, check in CHECKS.items():
        try:
            detail = check()
            passed = True
        except (AssertionError, CapmeterError) as exc:
            detail, passed = str(exc), False
        results.append(CheckResult(name, passed, detail))
        log = logger.info if passed else logger.error
        log("%s: %s (%s)", name, "pass" if passed else "FAIL", detail)
    return results
