"""Audit of the no-arbitrage drift conditions for forward curves with atoms.

Three residuals are reported, each maximised over the audit grid:

* ``max_ac_residual``: |abar(t,T) - 1/2 |bbar(t,T)|^2|, the HJM drift
  condition integrated against the measure with atoms;
* ``max_short_rate_residual``: |f(t,t) - r_t - lambda_t| on the
  absolutely continuous part;
* ``max_atom_residual``: |f(t,u_i) - log(w_i / (w_i - lambda(u_i) dA(u_i)))|
  for atoms still ahead of t.

Structural violations (compensator jumps off the atoms, atom masses not
below the weights, negative intensity) are listed separately. A model is
certified when every residual is within tolerance and the list is empty.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .curves import ForwardCurveModel, ShortRateModel
from .measure import (
    DEFAULT_MAX_STEP,
    ONE_SIDED,
    CompensatorSpec,
    RiskyMeasure,
    Violation,
    lebesgue_integrate,
    validate_structure,
)
from .numerics import TIME_EPS, Grid, simpson, simpson_nodes

DEFAULT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class HjmCoefficients:
    """Drift a(t,T) and volatility b(t,T) of the forward rates.

    ``a`` and ``b`` describe maturities off the atoms. ``a_atom(t, i)`` and
    ``b_atom(t, i)`` are the coefficients of f(t, u_i); when omitted the
    continuous functions are evaluated at u_i.
    """

    a: Callable[[float, float], float]
    b: Callable[[float, float], Sequence[float] | float]
    a_atom: Callable[[float, int], float] | None = None
    b_atom: Callable[[float, int], Sequence[float] | float] | None = None

    def atom_a(self, t: float, i: int, u: float) -> float:
        return float(self.a_atom(t, i)) if self.a_atom is not None else float(self.a(t, u))

    def atom_b(self, t: float, i: int, u: float) -> np.ndarray:
        val = self.b_atom(t, i) if self.b_atom is not None else self.b(t, u)
        return np.atleast_1d(np.asarray(val, dtype=float))


ZERO_COEFFICIENTS = HjmCoefficients(a=lambda t, T: 0.0, b=lambda t, T: 0.0)


def _integrate_vector(g, t: float, T: float, breaks: Iterable[float], max_step: float) -> np.ndarray:
    if T - t <= TIME_EPS:
        return np.zeros_like(np.atleast_1d(np.asarray(g(t), dtype=float)))
    cuts = [t] + sorted(b for b in breaks if t + TIME_EPS < b < T - TIME_EPS) + [T]
    total = None
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        nodes, h = simpson_nodes(lo, hi, max_step)
        eps = ONE_SIDED * max(1.0, abs(lo), abs(hi))
        nodes = nodes.copy()
        nodes[0] += eps
        nodes[-1] -= eps
        vals = np.array([np.atleast_1d(np.asarray(g(float(u)), dtype=float)) for u in nodes])
        part = np.array([simpson(vals[:, k], h) for k in range(vals.shape[1])])
        total = part if total is None else total + part
    return total


def bar_coefficients(
    coeffs: HjmCoefficients,
    measure: RiskyMeasure,
    t: float,
    T: float,
    max_step: float = DEFAULT_MAX_STEP,
) -> tuple[float, np.ndarray]:
    """(abar, bbar) = (int_(t,T] a(t,u) nu(du), int_(t,T] b(t,u) nu(du))."""
    if t > T:
        raise ValueError(f"t={t} > T={T}")
    a_bar = lebesgue_integrate(lambda u: coeffs.a(t, u), t, T, measure.times, max_step)
    b_bar = _integrate_vector(lambda u: coeffs.b(t, u), t, T, measure.times, max_step)
    for i, u, w in measure.atoms_in(t, T):
        a_bar += w * coeffs.atom_a(t, i, u)
        b_bar = b_bar + w * coeffs.atom_b(t, i, u)
    return a_bar, b_bar


def hjm_residual(coeffs: HjmCoefficients, measure: RiskyMeasure, t: float, T: float, max_step: float = DEFAULT_MAX_STEP) -> float:
    a_bar, b_bar = bar_coefficients(coeffs, measure, t, T, max_step)
    return abs(a_bar - 0.5 * float(np.dot(b_bar, b_bar)))


def atom_target_rate(w: float, lambda_u: float, dA: float) -> float:
    """Arbitrage-free forward rate at a risky time: log(w / (w - lambda dA))."""
    mass = lambda_u * dA
    if mass < 0 or mass >= w:
        raise ValueError(f"atom target undefined: need 0 <= lambda*dA < w, got {mass} vs w={w}")
    return -math.log1p(-mass / w)


def h_prime(spec: CompensatorSpec, measure: RiskyMeasure, t: float, max_step: float = DEFAULT_MAX_STEP) -> float:
    """H'(t) = int_0^t lambda_s ds - sum_{u_i <= t} log((w_i - lambda dA) / w_i)."""
    total = lebesgue_integrate(spec.intensity, 0.0, t, measure.times, max_step)
    for i, (u, w) in enumerate(measure.atoms):
        if u <= t + TIME_EPS:
            total += atom_target_rate(w, spec.lambda_at_atom(u, i, u), spec.jump(u))
    return total


def _finite_or_str(x: float):
    return x if math.isfinite(x) else str(x)


@dataclass
class DriftReport:
    max_ac_residual: float = 0.0
    max_atom_residual: float = 0.0
    max_short_rate_residual: float = 0.0
    structural_violations: list[Violation] = field(default_factory=list)
    tolerance: float = DEFAULT_TOLERANCE
    worst: dict[str, list[float]] = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return (
            self.max_ac_residual <= self.tolerance
            and self.max_atom_residual <= self.tolerance
            and self.max_short_rate_residual <= self.tolerance
            and not self.structural_violations
        )

    def _update(self, name: str, value: float, where: list[float]) -> None:
        attr = f"max_{name}_residual"
        if value > getattr(self, attr) or (math.isnan(value)):
            setattr(self, attr, value)
            self.worst[name] = where

    def to_dict(self) -> dict:
        return {
            "max_ac_residual": _finite_or_str(self.max_ac_residual),
            "max_atom_residual": _finite_or_str(self.max_atom_residual),
            "max_short_rate_residual": _finite_or_str(self.max_short_rate_residual),
            "structural_violations": [v.to_dict() for v in self.structural_violations],
            "tolerance": self.tolerance,
            "certified": self.certified,
            "worst": {k: list(v) for k, v in sorted(self.worst.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def merge(cls, reports: Sequence["DriftReport"]) -> "DriftReport":
        """Worst case over several reports, e.g. one per simulated path."""
        out = cls(tolerance=min(r.tolerance for r in reports) if reports else DEFAULT_TOLERANCE)
        seen = set()
        for r in reports:
            for name in ("ac", "atom", "short_rate"):
                out._update(name, getattr(r, f"max_{name}_residual"), r.worst.get(name, []))
            for v in r.structural_violations:
                if (v.kind, v.time) not in seen:
                    seen.add((v.kind, v.time))
                    out.structural_violations.append(v)
        return out


def audit(
    curve: ForwardCurveModel,
    coeffs: HjmCoefficients,
    spec: CompensatorSpec,
    short_rate: ShortRateModel,
    grid: Grid,
    tolerance: float = DEFAULT_TOLERANCE,
    maturities: Sequence[float] | None = None,
    max_step: float = DEFAULT_MAX_STEP,
) -> DriftReport:
    """Check the drift conditions on every grid time t (and maturity T > t).

    ``maturities`` defaults to the grid points themselves.
    """
    measure = curve.measure
    report = DriftReport(tolerance=tolerance)
    report.structural_violations = validate_structure(measure, spec, horizon=float(grid.points[-1]))
    mats = np.asarray(grid.points if maturities is None else maturities, dtype=float)

    for t in grid.points:
        t = float(t)
        resid = abs(float(curve.ac_part(t, t)) - float(short_rate.r(t)) - float(spec.intensity(t)))
        report._update("short_rate", resid, [t])

        for i, u, w in measure.atoms_in(t, math.inf):
            lam = spec.lambda_at_atom(t, i, u)
            try:
                target = atom_target_rate(w, lam, spec.jump(u))
            except ValueError:
                target = math.inf
            report._update("atom", abs(float(curve.atom_values(t, i)) - target), [t, u])

        for T in mats:
            if T <= t + TIME_EPS:
                continue
            report._update("ac", hjm_residual(coeffs, measure, t, float(T), max_step), [t, float(T)])
    return report
