"""Pricing measure with atoms and the compensator of the default indicator.

The measure is Lebesgue plus finitely many weighted point masses at the
risky times. Every integral over an interval uses the half-open convention
(t, T]: an atom sitting exactly at t is excluded, one at T is included.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .numerics import TIME_EPS, simpson, simpson_nodes

DEFAULT_MAX_STEP = 1e-3
# inward shift of segment endpoints, well clear of TIME_EPS
ONE_SIDED = 1e-9


@dataclass(frozen=True)
class RiskyMeasure:
    """nu(du) = du + sum_i w_i delta_{u_i}(du)."""

    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        atoms = tuple((float(u), float(w)) for u, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        prev = 0.0
        for u, w in atoms:
            if not u > prev:
                raise ValueError(f"atom times must satisfy 0 < u_1 < u_2 < ..., got {u} after {prev}")
            if not w > 0:
                raise ValueError(f"atom weight must be positive, got {w} at u={u}")
            prev = u

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(u for u, _ in self.atoms)

    def weight(self, u: float) -> float:
        for ui, wi in self.atoms:
            if abs(ui - u) <= TIME_EPS:
                return wi
        return 0.0

    def atoms_in(self, t: float, T: float) -> list[tuple[int, float, float]]:
        """(index, u_i, w_i) for every atom with u_i in (t, T]."""
        return [(i, u, w) for i, (u, w) in enumerate(self.atoms) if t + TIME_EPS < u <= T + TIME_EPS]

    def check_horizon(self, horizon: "Horizon") -> None:
        for u, _ in self.atoms:
            if u > horizon.T_star + TIME_EPS:
                raise ValueError(f"atom {u} lies beyond the horizon {horizon.T_star}")


@dataclass(frozen=True)
class Horizon:
    T_star: float

    def __post_init__(self):
        if not self.T_star > 0:
            raise ValueError("T_star must be positive")


def _as_function(value) -> Callable[[float], float]:
    if callable(value):
        return value
    c = float(value)
    return lambda t: c


@dataclass(frozen=True)
class CompensatorSpec:
    """Generalized intensity and the jumps of the compensator base A.

    ``intensity(t)`` is lambda_t for the deterministic variant. Entries of
    ``base_jumps`` are ``(u, dA)`` or ``(u, dA, lambda_u)``; the optional third
    value is lambda(u) at the jump when it differs from ``intensity(u)``.
    For state-dependent models ``atom_intensity(t, i)`` gives lambda(u_i) as
    forecast from time t < u_i.
    """

    intensity: Callable[[float], float]
    base_jumps: tuple[tuple[float, ...], ...] = ()
    atom_intensity: Callable[[float, int], float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "intensity", _as_function(self.intensity))
        jumps = []
        for entry in self.base_jumps:
            if len(entry) not in (2, 3):
                raise ValueError(f"base jump must be (u, dA) or (u, dA, lambda_u), got {entry!r}")
            jumps.append(tuple(float(v) for v in entry))
        object.__setattr__(self, "base_jumps", tuple(jumps))

    def jump(self, u: float) -> float:
        """Delta A(u); zero away from the registered jump times."""
        for entry in self.base_jumps:
            if abs(entry[0] - u) <= TIME_EPS:
                return entry[1]
        return 0.0

    def jump_intensity(self, u: float) -> float:
        """lambda(u) at a jump of A."""
        for entry in self.base_jumps:
            if abs(entry[0] - u) <= TIME_EPS and len(entry) == 3:
                return entry[2]
        return float(self.intensity(u))

    def jump_mass(self, u: float) -> float:
        """lambda(u) * Delta A(u), the compensator jump at u."""
        dA = self.jump(u)
        return self.jump_intensity(u) * dA if dA else 0.0

    def lambda_at_atom(self, t: float, i: int, u: float) -> float:
        if self.atom_intensity is not None:
            return float(self.atom_intensity(t, i))
        return self.jump_intensity(u)


def _eval(g: Callable, nodes: np.ndarray) -> np.ndarray:
    """Evaluate g on nodes, vectorised when g accepts arrays."""
    try:
        vals = np.asarray(g(nodes), dtype=float)
        if vals.shape == nodes.shape:
            return vals
        if vals.ndim == 0:
            return np.full(nodes.shape, float(vals))
    except (TypeError, ValueError):
        pass
    return np.array([g(float(u)) for u in nodes], dtype=float)


def lebesgue_integrate(g: Callable, t: float, T: float, breaks: Sequence[float] = (), max_step: float = DEFAULT_MAX_STEP) -> float:
    """int_t^T g(u) du by composite Simpson, split at the given break points.

    Splitting at atoms lets the integrand jump there without degrading the
    quadrature order.
    """
    if t > T:
        raise ValueError(f"integration interval reversed: t={t} > T={T}")
    if T - t <= TIME_EPS:
        return 0.0
    cuts = [t] + sorted(b for b in breaks if t + TIME_EPS < b < T - TIME_EPS) + [T]
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        nodes, h = simpson_nodes(lo, hi, max_step)
        vals = _eval(g, nodes)
        # evaluate just inside each segment so one-sided limits are used at atoms
        vals[0] = float(g(lo + ONE_SIDED * max(1.0, abs(lo))))
        vals[-1] = float(g(hi - ONE_SIDED * max(1.0, abs(hi))))
        total += simpson(vals, h)
    return total


def nu_integrate(
    g: Callable,
    t: float,
    T: float,
    measure: RiskyMeasure,
    atom_values: Callable[[int, float], float] | None = None,
    max_step: float = DEFAULT_MAX_STEP,
) -> float:
    """int_(t,T] g(u) nu(du) = int_t^T g(u) du + sum_{u_i in (t,T]} w_i g(u_i).

    ``atom_values(i, u_i)`` overrides the integrand at atoms, for quantities
    whose value at a risky time is not the continuous-part function.
    """
    total = lebesgue_integrate(g, t, T, measure.times, max_step)
    for i, u, w in measure.atoms_in(t, T):
        total += w * (atom_values(i, u) if atom_values is not None else float(g(u)))
    return total


def compensator_accumulate(spec: CompensatorSpec, t: float, max_step: float = DEFAULT_MAX_STEP) -> float:
    """Lambda_t = int_0^t lambda_s ds + sum_{u_i <= t} lambda(u_i) Delta A(u_i), pre-default."""
    if t < 0:
        raise ValueError("t must be non-negative")
    problems = [v for v in _spec_violations(spec, horizon=max(t, TIME_EPS)) if v.kind != "jump_at_non_atom"]
    if problems:
        raise ValueError("; ".join(v.message for v in problems))
    total = lebesgue_integrate(spec.intensity, 0.0, t, [j[0] for j in spec.base_jumps], max_step)
    for entry in spec.base_jumps:
        if entry[0] <= t + TIME_EPS:
            total += spec.jump_mass(entry[0])
    return total


@dataclass(frozen=True)
class Violation:
    kind: str
    time: float
    message: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "time": self.time, "message": self.message}


def _spec_violations(spec: CompensatorSpec, horizon: float, samples: int = 201) -> list[Violation]:
    out = []
    for u, dA, *_ in spec.base_jumps:
        if dA < 0:
            out.append(Violation("negative_base_jump", u, f"negative compensator base jump {dA} at {u}"))
    for s in np.linspace(0.0, horizon, samples):
        lam = float(spec.intensity(float(s)))
        if lam < 0 or not math.isfinite(lam):
            out.append(Violation("negative_intensity", float(s), f"intensity {lam} < 0 at t={s:g}"))
            break
    return out


def validate_structure(measure: RiskyMeasure, spec: CompensatorSpec, horizon: float | None = None) -> list[Violation]:
    """All violations of the structural conditions; an empty list means compliant.

    Checks that A only jumps at atoms of the measure, that
    0 <= lambda(u_i) Delta A(u_i) < w_i at every atom, and that the intensity
    is non-negative on a sample grid.
    """
    if horizon is None:
        horizon = max([u for u, _ in measure.atoms] + [j[0] for j in spec.base_jumps] + [1.0])
    out = _spec_violations(spec, horizon)
    atom_times = measure.times
    for u, dA, *_ in spec.base_jumps:
        if dA != 0 and not any(abs(u - a) <= TIME_EPS for a in atom_times):
            out.append(Violation("jump_at_non_atom", u, f"jump at non-atom {u:g}"))
    for i, (u, w) in enumerate(measure.atoms):
        dA = spec.jump(u)
        mass = spec.lambda_at_atom(0.0, i, u) * dA
        if mass < 0:
            out.append(Violation("negative_atom_mass", u, f"lambda*dA = {mass:g} < 0 at atom {u:g}"))
        elif mass >= w:
            out.append(Violation("atom_mass_exceeds_weight", u, f"lambda*dA = {mass:g} >= w = {w:g} at atom {u:g}"))
    return out
