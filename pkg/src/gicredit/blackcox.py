"""First-passage default against a barrier that jumps up at U.

The barrier is D0 before U and DU >= D0 from U on; default is the first
time the Brownian level W falls to or below the barrier. At U itself a
path with W_U in (D0, DU] defaults, which gives the default time an atom
at U.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .curves import DefaultStatus
from .numerics import gauss_legendre, halfplane_band_prob, norm_cdf, norm_pdf

log = logging.getLogger(__name__)

CLAMP_WARN = 1e-9


@dataclass(frozen=True)
class BlackCoxParams:
    D0: float
    DU: float
    U: float

    def __post_init__(self):
        if not self.D0 < 0:
            raise ValueError("initial barrier D0 must be negative")
        if self.DU < self.D0:
            raise ValueError("barrier may only jump upward: need DU >= D0")
        if not self.U > 0:
            raise ValueError("jump time U must be positive")


def barrier(p: BlackCoxParams, t: float) -> float:
    return p.DU if t >= p.U else p.D0


def _reflection(D: float, w: float, horizon: float) -> float:
    """P(no passage below D within ``horizon``) for a level currently at w > D."""
    return 1.0 - 2.0 * norm_cdf((D - w) / math.sqrt(horizon))


def _clamp(x: float, what: str) -> float:
    if x < -CLAMP_WARN or x > 1.0 + CLAMP_WARN:
        log.warning("%s left [0, 1] by more than %g: %r", what, CLAMP_WARN, x)
    return min(1.0, max(0.0, x))


def _check_alive(p: BlackCoxParams, w: float, t: float) -> None:
    if w <= barrier(p, t):
        raise ValueError(f"level {w} is not above the barrier {barrier(p, t)} at t={t}")


def survival_prob(p: BlackCoxParams, w: float, t: float, T: float) -> float:
    """P(tau > T | W_t = w, tau > t).

    Three regimes: T < U and t >= U are plain reflection formulas. For
    t < U <= T the surviving mass at U has density f_t on (DU, inf) and each
    such x then needs to avoid DU on [U, T]:

        int_DU^inf [1 - 2 Phi((DU - x)/sqrt(T-U))] f_t(x) dx

    The reflection part integrates f_t in closed form; the Phi-weighted part
    splits into two bivariate-normal half-plane probabilities.
    """
    if not T > t:
        raise ValueError(f"need T > t, got t={t}, T={T}")
    _check_alive(p, w, t)
    if t >= p.U:
        return _clamp(_reflection(p.DU, w, T - t), "survival probability")
    if T < p.U:
        return _clamp(_reflection(p.D0, w, T - t), "survival probability")

    s = math.sqrt(p.U - t)
    # reflected starting point for the image term of f_t
    w_img = 2.0 * p.D0 - w
    above_DU = norm_cdf((w - p.DU) / s) - norm_cdf((w_img - p.DU) / s)
    if T == p.U:
        return _clamp(above_DU, "survival probability")

    a = math.sqrt(T - p.U)
    direct = halfplane_band_prob(a, s, p.DU - w, (p.DU - w) / s)
    image = halfplane_band_prob(a, s, p.DU - w_img, (p.DU - w_img) / s)
    return _clamp(above_DU - 2.0 * (direct - image), "survival probability")


def no_crossing_density(p: BlackCoxParams, w: float, t: float, x):
    """f_t(x): density of W_U at x on the event that W stays above D0 on [t, U]."""
    if t >= p.U:
        raise ValueError("density is defined for t < U")
    s = math.sqrt(p.U - t)
    x = np.asarray(x, dtype=float)
    dens = (norm_pdf((w - x) / s) - norm_pdf((2.0 * p.D0 - x - w) / s)) / s
    out = np.where(x > p.D0, dens, 0.0)
    return float(out) if out.ndim == 0 else out


def default_prob_at_U(p: BlackCoxParams, w: float, t: float) -> float:
    """P(tau = U | W_t = w, tau > t): mass of f_t on (D0, DU]."""
    if not t < p.U:
        raise ValueError("default_prob_at_U needs t < U")
    _check_alive(p, w, t)
    if p.DU == p.D0:
        return 0.0
    mass = gauss_legendre(lambda x: no_crossing_density(p, w, t, x), p.D0, p.DU, tol=1e-13)
    return _clamp(mass, "atom default probability")


def price(p: BlackCoxParams, w: float, t: float, T: float, status: DefaultStatus = DefaultStatus(), r: float = 0.0) -> float:
    """Zero-recovery bond price e^{-r(T-t)} P(tau > T | F_t)."""
    if t > T:
        raise ValueError(f"t={t} > T={T}")
    if not status.survived(t):
        return 0.0
    if T == t:
        return 1.0
    return math.exp(-r * (T - t)) * survival_prob(p, w, t, T)
