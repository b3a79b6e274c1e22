"""Forward curves against a measure with atoms, and the resulting bond prices."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .measure import DEFAULT_MAX_STEP, RiskyMeasure, _as_function, lebesgue_integrate


@dataclass(frozen=True)
class ForwardCurveModel:
    """f(t, .) split into its absolutely continuous part and per-atom values.

    ``ac_part(t, T)`` is the forward rate for maturities off the atoms;
    ``atom_values(t, i)`` is f(t, u_i), which enters prices weighted by w_i.
    """

    ac_part: Callable[[float, float], float]
    atom_values: Callable[[float, int], float]
    measure: RiskyMeasure


@dataclass(frozen=True)
class ShortRateModel:
    r: Callable[[float], float]

    def __post_init__(self):
        object.__setattr__(self, "r", _as_function(self.r))


@dataclass(frozen=True)
class DefaultStatus:
    tau: float = math.inf

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("default time must be positive")

    def survived(self, t: float) -> bool:
        return self.tau > t


ALIVE = DefaultStatus()


def forward_integral(curve: ForwardCurveModel, t: float, T: float, max_step: float = DEFAULT_MAX_STEP) -> float:
    """J(t, T) = int_(t,T] f(t, u) nu(du)."""
    if t > T:
        raise ValueError(f"t={t} > T={T}")
    total = lebesgue_integrate(lambda u: curve.ac_part(t, u), t, T, curve.measure.times, max_step)
    for i, _, w in curve.measure.atoms_in(t, T):
        total += w * float(curve.atom_values(t, i))
    return total


def bond_price(curve: ForwardCurveModel, status: DefaultStatus, t: float, T: float, max_step: float = DEFAULT_MAX_STEP) -> float:
    """P(t, T) = 1{tau > t} exp(-J(t, T)) with zero recovery."""
    if t > T:
        raise ValueError(f"t={t} > T={T}")
    if not status.survived(t):
        return 0.0
    return math.exp(-forward_integral(curve, t, T, max_step))


def numeraire(model: ShortRateModel, t: float, max_step: float = DEFAULT_MAX_STEP) -> float:
    """X0_t = exp(int_0^t r_s ds)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return math.exp(lebesgue_integrate(model.r, 0.0, t, (), max_step))


def flat_curve(rate: float, measure: RiskyMeasure | None = None, atom_rates: dict[int, float] | None = None) -> ForwardCurveModel:
    """Deterministic curve with constant ac forward rate and fixed atom values."""
    atom_rates = dict(atom_rates or {})
    return ForwardCurveModel(
        ac_part=lambda t, T: rate,
        atom_values=lambda t, i: atom_rates.get(i, 0.0),
        measure=measure or RiskyMeasure(),
    )
