"""Per-unit and per-layer measurements of a trained network.

Unit capacity beta_i is the distance of hidden unit i's incoming weights from initialization,
unit impact alpha_i is the l2 norm of its outgoing weights (column i of V).
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from capmeter.config import Axis, Config
from capmeter.exceptions import DegenerateInputError
from capmeter.linalg import (
    Vector,
    frobenius_norm,
    group_norm,
    percentile_nearest_rank,
    power_iteration,
    singular_values,
)
from capmeter.nn import LabeledDataset, TwoLayerNet, margin_distribution

logger = logging.getLogger(__name__)


########################################
# Types
########################################
# MARK: UnitProfile
@dataclass
class UnitProfile:
    """Unit impacts alpha and unit capacities beta, one entry per hidden unit."""

    alpha: Vector
    beta: Vector


# MARK: MeasurePanel
@dataclass
class MeasurePanel(UnitProfile):
    angles_deg: Vector
    degenerate_units: list[int]
    fro_U: float
    fro_V: float
    fro_dU: float
    fro_dV: float
    spec_U: float
    spec_U0: float
    spec_V: float
    spectral_converged: bool
    group_norms: dict[str, float]
    margins: Vector
    gamma_5pct: float
    gamma_percentile: float
    angle_histogram: list[int]
    normalized_margin_histogram: dict[str, list[float]] | None
    summary: dict[str, float] = field(default_factory=dict)
    spectrum_U: Vector | None = None

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["conventions"] = Config.CONVENTIONS
        return payload


########################################
# Unit measures
########################################
# MARK: unit_capacities
def unit_capacities(net: TwoLayerNet) -> Vector:
    return np.linalg.norm(net.U - net.U0, axis=1)


# MARK: unit_impacts
def unit_impacts(net: TwoLayerNet) -> Vector:
    return np.linalg.norm(net.V, axis=0)


# MARK: unit_profile
def unit_profile(net: TwoLayerNet) -> UnitProfile:
    return UnitProfile(alpha=unit_impacts(net), beta=unit_capacities(net))


# MARK: unit_angles
def unit_angles(net: TwoLayerNet) -> tuple[Vector, list[int]]:
    """Angle in degrees between u_i and u_i^0; NaN and flagged where either norm is (near) zero."""
    u_norms = np.linalg.norm(net.U, axis=1)
    u0_norms = np.linalg.norm(net.U0, axis=1)
    degenerate = np.flatnonzero(np.minimum(u_norms, u0_norms) < Config.DEGENERATE_NORM)
    with np.errstate(divide="ignore", invalid="ignore"):
        cosine = np.einsum("ij,ij->i", net.U, net.U0) / (u_norms * u0_norms)
    angles = np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0)))
    angles[degenerate] = np.nan
    if degenerate.size:
        logger.warning("%d of %d units have no defined angle to init", degenerate.size, net.h)
    return angles, degenerate.tolist()


# MARK: _stats
def _stats(name: str, values: Vector) -> dict[str, float]:
    return {
        f"{name}_max": float(values.max()),
        f"{name}_mean": float(values.mean()),
        f"{name}_median": float(np.median(values)),
    }


########################################
# Data-dependent measures
########################################
# MARK: design_norms
def design_norms(net: TwoLayerNet, data: LabeledDataset) -> tuple[float, float]:
    """||X||_F and ||U0 X||_F with the samples of ``data`` as the columns of X."""
    return frobenius_norm(data.X), frobenius_norm(data.X @ net.U0.T)


# MARK: capacity_normalizer
def capacity_normalizer(net: TwoLayerNet, data: LabeledDataset) -> float:
    """sqrt(c) ||V||_F (||U - U0||_F ||X||_F + ||U0 X||_F)."""
    x_fro, u0x_fro = design_norms(net, data)
    dU = frobenius_norm(net.U - net.U0)
    return math.sqrt(net.c) * frobenius_norm(net.V) * (dU * x_fro + u0x_fro)


# MARK: normalized_margins
def normalized_margins(net: TwoLayerNet, data: LabeledDataset) -> Vector:
    normalizer = capacity_normalizer(net, data)
    if normalizer == 0:
        raise DegenerateInputError("capacity normalizer is zero; margins cannot be normalized")
    return margin_distribution(net, data) / normalizer


# MARK: _layer_group_norms
def _layer_group_norms(net: TwoLayerNet) -> dict[str, float]:
    """Group norms along the hidden-unit axis, keyed ``matrix:p:q``."""
    dU = net.U - net.U0
    dV = net.V - net.V0
    norms = {}
    for p in (1, 2, math.inf):
        tag = "inf" if p == math.inf else str(p)
        norms[f"U-U0:{tag}:2"] = group_norm(dU, Axis.ROWS, p)
        norms[f"V^T:{tag}:2"] = group_norm(net.V, Axis.COLS, p)
        norms[f"V-V0^T:{tag}:2"] = group_norm(dV, Axis.COLS, p)
    norms["U:inf:1"] = group_norm(net.U, Axis.ROWS, math.inf, inner_q=1)
    norms["V:inf:1"] = group_norm(net.V, Axis.ROWS, math.inf, inner_q=1)
    return norms


# MARK: measure_panel
def measure_panel(
    net: TwoLayerNet,
    data: LabeledDataset,
    gamma_percentile: float = Config.GAMMA_PERCENTILE,
    *,
    spectrum: bool = False,
) -> MeasurePanel:
    profile = unit_profile(net)
    angles, degenerate = unit_angles(net)
    margins = margin_distribution(net, data)

    spectral = [power_iteration(M) for M in (net.U, net.U0, net.V)]
    converged = all(s.converged for s in spectral)
    if not converged:
        logger.warning("spectral norm not converged for at least one layer, using last iterate")

    defined = angles[~np.isnan(angles)]
    angle_counts, _ = np.histogram(defined, bins=Config.ANGLE_BINS, range=(0, 180))

    normalizer = capacity_normalizer(net, data)
    margin_hist = None
    if normalizer > 0:
        counts, edges = np.histogram(margins / normalizer, bins=Config.MARGIN_BINS)
        margin_hist = {"counts": counts.tolist(), "edges": edges.tolist()}

    summary = {**_stats("alpha", profile.alpha), **_stats("beta", profile.beta)}
    return MeasurePanel(
        alpha=profile.alpha,
        beta=profile.beta,
        angles_deg=angles,
        degenerate_units=degenerate,
        fro_U=frobenius_norm(net.U),
        fro_V=frobenius_norm(net.V),
        fro_dU=frobenius_norm(net.U - net.U0),
        fro_dV=frobenius_norm(net.V - net.V0),
        spec_U=spectral[0].value,
        spec_U0=spectral[1].value,
        spec_V=spectral[2].value,
        spectral_converged=converged,
        group_norms=_layer_group_norms(net),
        margins=margins,
        gamma_5pct=percentile_nearest_rank(margins, gamma_percentile),
        gamma_percentile=gamma_percentile,
        angle_histogram=angle_counts.tolist(),
        normalized_margin_histogram=margin_hist,
        summary=summary,
        spectrum_U=singular_values(net.U) if spectrum else None,
    )
