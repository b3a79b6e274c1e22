"""Stylised Merton model: default at U iff W_U <= K.

W is the normalised log-asset level, a Brownian motion under the pricing
measure. The measure has a single atom at U with weight 1, so the forward
curve is the constant short rate off U and -log Phi(z) at U, with
z = (W_t - K) / sqrt(U - t).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .curves import DefaultStatus, ForwardCurveModel, ShortRateModel
from .measure import CompensatorSpec, RiskyMeasure
from .noarb import HjmCoefficients
from .numerics import mills_ratio, norm_cdf, norm_logcdf


@dataclass(frozen=True)
class MertonParams:
    K: float
    U: float
    r: float = 0.0
    T_star: float | None = None

    def __post_init__(self):
        if not self.U > 0:
            raise ValueError("debt maturity U must be positive")
        if self.T_star is None:
            object.__setattr__(self, "T_star", self.U)
        if self.T_star < self.U:
            raise ValueError("T_star must be at least U")

    @property
    def measure(self) -> RiskyMeasure:
        return RiskyMeasure(((self.U, 1.0),))


def _z(p: MertonParams, w: float, t: float) -> float:
    if t >= p.U:
        raise ValueError(f"t={t} must be before the debt maturity U={p.U}")
    if t < 0:
        raise ValueError("t must be non-negative")
    return (w - p.K) / math.sqrt(p.U - t)


def survival_prob(p: MertonParams, w: float, t: float) -> float:
    """Phi((w - K) / sqrt(U - t)), the conditional probability of W_U > K."""
    return norm_cdf(_z(p, w, t))


def forward_atom(p: MertonParams, w: float, t: float) -> float:
    """f(t, U) = -log Phi(z); stays finite deep out of the money."""
    return -norm_logcdf(_z(p, w, t))


def vol_b(p: MertonParams, w: float, t: float) -> float:
    """b(t, U) = -phi(z) / Phi(z) / sqrt(U - t)."""
    z = _z(p, w, t)
    return -mills_ratio(z) / math.sqrt(p.U - t)


def drift_a(p: MertonParams, w: float, t: float) -> float:
    return 0.5 * vol_b(p, w, t) ** 2


def atom_default_prob(p: MertonParams, w: float, t: float) -> float:
    """lambda_t(U) with w = dA = 1: the conditional probability of default at U."""
    return norm_cdf(-_z(p, w, t))


def price(p: MertonParams, w: float, t: float, T: float, status: DefaultStatus = DefaultStatus()) -> float:
    """Zero-recovery bond price P(t, T) given W_t = w.

    For t >= U the default has been decided, so ``status`` alone determines
    the price; ``w`` is ignored there.
    """
    if t > T:
        raise ValueError(f"t={t} > T={T}")
    if not status.survived(t):
        return 0.0
    disc = math.exp(-p.r * (T - t))
    if T < p.U or t >= p.U:
        return disc
    return disc * survival_prob(p, w, t)


def curve_model(p: MertonParams, state: Callable[[float], float], tampered: bool = False) -> ForwardCurveModel:
    """Forward curve along a path of W given by ``state(t)``.

    With ``tampered=True`` the atom forward rate is forced to zero, the
    classical HJM curve that ignores the risky time.
    """
    if tampered:
        atom = lambda t, i: 0.0
    else:
        atom = lambda t, i: forward_atom(p, state(t), t)
    return ForwardCurveModel(ac_part=lambda t, T: p.r, atom_values=atom, measure=p.measure)


def hjm_coefficients(p: MertonParams, state: Callable[[float], float]) -> HjmCoefficients:
    """Forward-rate coefficients: zero off U, (drift_a, vol_b) at the atom."""
    return HjmCoefficients(
        a=lambda t, T: 0.0,
        b=lambda t, T: 0.0,
        a_atom=lambda t, i: drift_a(p, state(t), t),
        b_atom=lambda t, i: vol_b(p, state(t), t),
    )


def compensator(p: MertonParams, state: Callable[[float], float]) -> CompensatorSpec:
    """No continuous intensity; at U, dA = 1 and lambda is the forecast default probability."""
    return CompensatorSpec(
        intensity=0.0,
        base_jumps=((p.U, 1.0),),
        atom_intensity=lambda t, i: atom_default_prob(p, state(t), t),
    )


def short_rate(p: MertonParams) -> ShortRateModel:
    return ShortRateModel(p.r)
