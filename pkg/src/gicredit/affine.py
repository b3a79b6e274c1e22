"""Piecewise-continuous affine term-structure models.

The state X is an affine diffusion on R_+^m x R^n with

    mu(x) = mu0 + sum_k x_k mu_k,    1/2 sigma(x) sigma(x)^T = sigma0 + sum_k x_k sigma_k,

the default compensator has density phi0(s) + psi0(s).X_s and jumps
1 - exp(-phi_i - psi_i.X_{u_i}) at the risky times, and bond prices are
P(t,T) = 1{tau > t} exp(-A(t,T) - B(t,T).X_t). A and B solve backward
Riccati equations whose solutions jump by (phi_i w_i, psi_i w_i) at each u_i.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Protocol, Sequence

import numpy as np

from .curves import DefaultStatus, ForwardCurveModel, ShortRateModel
from .measure import CompensatorSpec, RiskyMeasure
from .noarb import HjmCoefficients
from .numerics import TIME_EPS, Grid, PiecewisePath, rk4_backward_with_jumps, rk4_step

# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineParams:
    """Affine diffusion coefficients; ``mu[k]`` and ``sigma[k]`` multiply x_k."""

    m: int
    n: int
    mu0: np.ndarray
    mu: np.ndarray
    sigma0: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        d = self.m + self.n
        if self.m < 0 or self.n < 0 or d == 0:
            raise ValueError("need m, n >= 0 with m + n > 0")
        shapes = {"mu0": (d,), "mu": (d, d), "sigma0": (d, d), "sigma": (d, d, d)}
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=float).reshape(shape)
            object.__setattr__(self, name, arr)

    @property
    def d(self) -> int:
        return self.m + self.n

    @classmethod
    def cir(cls, mu0: float, mu1: float, sigma: float) -> "AffineParams":
        """dX = (mu0 + mu1 X) dt + sigma sqrt(X) dW."""
        return cls(1, 0, [mu0], [[mu1]], [[0.0]], [[[0.5 * sigma**2]]])

    def drift(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.mu0 + self.mu.T @ x

    def diffusion(self, x) -> np.ndarray:
        """sigma0 + sum_k x_k sigma_k, i.e. half the instantaneous covariance."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.sigma0 + np.tensordot(x, self.sigma, axes=1)

    def vol(self, x) -> np.ndarray:
        """Symmetric square root of the covariance 2 * diffusion(x)."""
        vals, vecs = np.linalg.eigh(2.0 * self.diffusion(x))
        return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _is_psd(mat: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.allclose(mat, mat.T, atol=tol) and np.linalg.eigvalsh(0.5 * (mat + mat.T)).min() >= -tol)


def validate_admissible(p: AffineParams) -> list[str]:
    """Admissibility violations for the canonical state space R_+^m x R^n."""
    out = []
    I = range(p.m)
    J = range(p.m, p.d)
    if not _is_psd(p.sigma0):
        out.append("sigma0 not PSD")
    elif any(abs(p.sigma0[i, i]) > 0 for i in I):
        out.append("sigma0 must vanish on the R_+ block")
    for k in J:
        if np.any(p.sigma[k] != 0):
            out.append(f"sigma_{k + 1} must be zero for a real-valued factor")
    for i in I:
        if not _is_psd(p.sigma[i]):
            out.append(f"sigma_{i + 1} not PSD")
        for k in I:
            if k != i and p.sigma[i][k, k] != 0:
                out.append(f"sigma_{i + 1} must vanish in row/column {k + 1}")
    for i in I:
        if p.mu0[i] < 0:
            out.append(f"drift points outward at boundary: mu0[{i + 1}] < 0")
        for j in range(p.d):
            if j == i:
                continue
            coef = p.mu[j][i]
            if j in J and coef != 0:
                out.append(f"mu_{j + 1}[{i + 1}] must be zero: R_+ factor drift may not load on a real factor")
            elif j in I and coef < 0:
                out.append(f"drift points outward at boundary: mu_{j + 1}[{i + 1}] < 0")
    return out


def _time_function(value, d: int | None = None) -> Callable[[float], object]:
    if callable(value):
        return value
    if d is None:
        c = float(value)
        return lambda t: c
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    return lambda t: arr


@dataclass(frozen=True)
class HazardAtom:
    u: float
    w: float
    phi: float
    psi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "psi", np.atleast_1d(np.asarray(self.psi, dtype=float)))
        if not self.u > 0 or not self.w > 0:
            raise ValueError("atom needs u > 0 and w > 0")

    def exponent(self, x):
        """kappa = phi + psi.x for one state, or per path when ``x`` has a path axis."""
        x = np.asarray(x, dtype=float)
        if len(self.psi) == 1 and x.ndim < 2:
            return self.phi + self.psi[0] * x
        return self.phi + x @ self.psi


@dataclass(frozen=True)
class HazardSpec:
    phi0: Callable[[float], float]
    psi0: Callable[[float], np.ndarray]
    atoms: tuple[HazardAtom, ...] = ()
    d: int = 1

    def __post_init__(self):
        object.__setattr__(self, "phi0", _time_function(self.phi0))
        object.__setattr__(self, "psi0", _time_function(self.psi0, self.d))
        atoms = tuple(sorted(self.atoms, key=lambda a: a.u))
        object.__setattr__(self, "atoms", atoms)

    @property
    def measure(self) -> RiskyMeasure:
        return RiskyMeasure(tuple((a.u, a.w) for a in self.atoms))

    def rate(self, t: float, x) -> np.ndarray:
        """phi0(t) + psi0(t).x; ``x`` may carry a leading path axis."""
        x = np.asarray(x, dtype=float)
        psi = np.atleast_1d(self.psi0(t))
        if x.ndim == 2:
            return self.phi0(t) + x @ psi
        if self.d == 1:
            return self.phi0(t) + psi[0] * x
        return self.phi0(t) + float(psi @ x)


def validate_hazard(h: HazardSpec, p: AffineParams, horizon: float, samples: int = 101) -> list[str]:
    """Positivity of the hazard on the whole state space, checked on a time sample."""
    out = []
    real = range(p.m, p.d)
    for s in np.linspace(0.0, horizon, samples):
        phi, psi = h.phi0(float(s)), np.atleast_1d(h.psi0(float(s)))
        if phi < 0 or np.any(psi[: p.m] < 0) or np.any(psi[list(real)] != 0):
            out.append(f"phi0 + psi0.x can be negative on the state space at t={s:g}")
            break
    for a in h.atoms:
        if a.phi < 0 or np.any(a.psi[: p.m] < 0) or np.any(a.psi[list(real)] != 0):
            out.append(f"phi_i + psi_i.x can be negative on the state space at atom u={a.u:g}")
    return out


@dataclass(frozen=True)
class CirParams:
    """One-factor CIR state with a single risky time u1 (phi0 = phi1 = 0, psi0 = 1, w1 = 1)."""

    mu0: float
    mu1: float
    sigma: float
    psi1: float = 0.0
    u1: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.psi1 < 0:
            raise ValueError("psi1 must be non-negative")
        if not self.u1 > 0:
            raise ValueError("u1 must be positive")

    @property
    def theta(self) -> float:
        return math.sqrt(self.mu1**2 + 2.0 * self.sigma**2)

    @property
    def affine(self) -> AffineParams:
        return AffineParams.cir(self.mu0, self.mu1, self.sigma)

    @property
    def hazard(self) -> HazardSpec:
        return HazardSpec(0.0, [1.0], (HazardAtom(self.u1, 1.0, 0.0, [self.psi1]),))


# ---------------------------------------------------------------------------
# Riccati solutions
# ---------------------------------------------------------------------------


def _riccati_rhs(p: AffineParams, h: HazardSpec):
    M = p.mu
    S = p.sigma
    S0 = p.sigma0

    def rhs(t, y):
        B = y[1:]
        dA = -(h.phi0(t) + p.mu0 @ B - B @ S0 @ B)
        dB = -(np.atleast_1d(h.psi0(t)) + M @ B - np.einsum("i,kij,j->k", B, S, B))
        return np.concatenate(([dA], dB))

    return rhs


def _tangent_rhs(p: AffineParams, h: HazardSpec):
    """Riccati system augmented with the maturity derivatives (dA/dT, dB/dT)."""
    base = _riccati_rhs(p, h)
    d = p.d

    def rhs(t, y):
        B = y[1 : 1 + d]
        bp = y[2 + d :]
        da = -(p.mu0 @ bp - 2.0 * B @ p.sigma0 @ bp)
        db = -(p.mu @ bp - 2.0 * np.einsum("i,kij,j->k", B, p.sigma, bp))
        return np.concatenate((base(t, y[: 1 + d]), [da], db))

    return rhs


@dataclass
class PiecewiseRiccatiSolution:
    """Right-continuous A(., T), B(., T) on a grid, with left limits at atoms."""

    T: float
    times: np.ndarray
    A: np.ndarray
    B: np.ndarray
    pre_atom: dict[float, tuple[float, np.ndarray]] = field(default_factory=dict)

    def _index(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t - TIME_EPS))
        if i >= len(self.times) or abs(self.times[i] - t) > TIME_EPS:
            raise KeyError(f"t={t} is not a solution grid point")
        return i

    def at(self, t: float) -> tuple[float, np.ndarray]:
        i = self._index(t)
        return float(self.A[i]), self.B[i].copy()

    def left_limit(self, t: float) -> tuple[float, np.ndarray]:
        for u, (a, b) in self.pre_atom.items():
            if abs(u - t) <= TIME_EPS:
                return a, b.copy()
        return self.at(t)

    def jumps(self) -> dict[float, tuple[float, np.ndarray]]:
        """(A(u-) - A(u), B(u-) - B(u)) at every atom in (0, T]."""
        out = {}
        for u, (a_pre, b_pre) in self.pre_atom.items():
            a, b = self.at(u)
            out[u] = (a_pre - a, b_pre - b)
        return out

    def rows(self) -> list[tuple]:
        """(t, A, B_1..B_d, is_pre_atom_limit) with the left limit listed first at atoms."""
        out = []
        for i, t in enumerate(self.times):
            t = float(t)
            for u, (a_pre, b_pre) in self.pre_atom.items():
                if abs(u - t) <= TIME_EPS:
                    out.append((t, a_pre, *b_pre.tolist(), 1))
            out.append((t, float(self.A[i]), *self.B[i].tolist(), 0))
        return out

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        writer = csv.writer(buf, lineterminator="\n")
        d = self.B.shape[1]
        writer.writerow(["t", "A"] + [f"B_{k + 1}" for k in range(d)] + ["is_pre_atom_limit"])
        for row in self.rows():
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue() if fh is None else ""


def riccati_grid(T: float, step: float, events: Sequence[float] = (), start: float = 0.0) -> Grid:
    evs = [u for u in events if start <= u <= T]
    return Grid.uniform(start, T, step, evs + [T])


def solve_riccati(
    p: AffineParams,
    h: HazardSpec,
    T: float,
    grid: Grid | None = None,
    measure: RiskyMeasure | None = None,
    step: float = 1e-3,
) -> PiecewiseRiccatiSolution:
    """Backward RK4 for (A, B) with the atom jumps applied algebraically."""
    if measure is not None and measure.atoms != h.measure.atoms:
        raise ValueError("hazard atoms and measure atoms disagree")
    atoms = [a for a in h.atoms if a.u <= T + TIME_EPS]
    if grid is None:
        grid = riccati_grid(T, step, [a.u for a in atoms])
    for a in atoms:
        if not grid.contains(a.u):
            raise ValueError(f"grid misses atom {a.u}")
    if not grid.contains(T):
        raise ValueError("grid misses the maturity")
    jumps = [(a.u, np.concatenate(([a.phi * a.w], a.psi * a.w))) for a in atoms]
    path = rk4_backward_with_jumps(_riccati_rhs(p, h), np.zeros(1 + p.d), T, jumps, grid)
    pre = {u: (float(v[0]), v[1:].copy()) for u, v in path.left_limits.items()}
    return PiecewiseRiccatiSolution(T, path.times, path.values[:, 0].copy(), path.values[:, 1:].copy(), pre)


def bond_price_affine(sol: PiecewiseRiccatiSolution, x, t: float, status: DefaultStatus = DefaultStatus()) -> float:
    """P(t, T) = 1{tau > t} exp(-A(t,T) - B(t,T).x)."""
    if t > sol.T + TIME_EPS:
        raise ValueError("t beyond the maturity")
    if not status.survived(t):
        return 0.0
    A, B = sol.at(t)
    return math.exp(-A - float(B @ np.atleast_1d(np.asarray(x, dtype=float))))


# ---------------------------------------------------------------------------
# CIR closed form
# ---------------------------------------------------------------------------


def _cir_L(p: CirParams, s: float):
    th = p.theta
    e = math.expm1(th * s)
    return 2.0 * e, th * (e + 2.0) + p.mu1 * e, th * (e + 2.0) - p.mu1 * e, p.sigma**2 * e


def _cir_flow(p: CirParams, s: float, v: float) -> tuple[float, float]:
    """(A, B) after running the CIR Riccati flow for a duration s from terminal (0, v)."""
    L1, L2, L3, L4 = _cir_L(p, s)
    den = L3 + L4 * v
    if den <= 0:
        raise ValueError(f"Riccati solution explodes: L3 + L4*u = {den} <= 0")
    th = p.theta
    A = -(2.0 * p.mu0 / p.sigma**2) * (math.log(2.0 * th) + 0.5 * (th - p.mu1) * s - math.log(den))
    return A, (L1 + L2 * v) / den


def _cir_flow_dv(p: CirParams, s: float, v: float) -> tuple[float, float]:
    L1, L2, L3, L4 = _cir_L(p, s)
    den = L3 + L4 * v
    return (2.0 * p.mu0 / p.sigma**2) * L4 / den, (L2 * L3 - L1 * L4) / den**2


def cir_closed_form(p: CirParams, t: float, T: float, left: bool = False) -> tuple[float, float]:
    """(A(t,T), B(t,T)) for the CIR example with one risky time.

    With no atom in (t, T] this is the classical CIR pair A0(T-t), B0(T-t).
    Otherwise the flow is restarted at u1 from B(u1-, T) = B0(T - u1) + psi1.
    ``left=True`` at t = u1 gives the left limit in t, which still carries
    the atom.
    """
    if t > T:
        raise ValueError(f"t={t} > T={T}")
    if left and t == p.u1 <= T:
        A_post, B_post = _cir_flow(p, T - p.u1, 0.0)
        return A_post, B_post + p.psi1
    if t >= p.u1 or T < p.u1:
        return _cir_flow(p, T - t, 0.0)
    A_post, B_post = _cir_flow(p, T - p.u1, 0.0)
    A, B = _cir_flow(p, p.u1 - t, B_post + p.psi1)
    return A + A_post, B


# ---------------------------------------------------------------------------
# Term structures and drift-compliant HJM coefficients
# ---------------------------------------------------------------------------


class TermStructure(Protocol):
    """(A, B) as functions of conditioning time t and maturity T."""

    atoms: tuple[HazardAtom, ...]

    def exponents(self, t: float, T: float) -> tuple[float, np.ndarray]: ...

    def exponents_before(self, t: float, i: int) -> tuple[float, np.ndarray]: ...

    def forward_parts(self, t: float, T: float) -> tuple[float, np.ndarray]: ...


class CirTermStructure:
    """Closed-form CIR term structure with analytic maturity derivatives."""

    def __init__(self, p: CirParams):
        self.p = p
        self.atoms = p.hazard.atoms

    def exponents(self, t, T):
        A, B = cir_closed_form(self.p, t, T)
        return A, np.array([B])

    def exponents_before(self, t, i):
        A, B = _cir_flow(self.p, self.p.u1 - t, 0.0)
        return A, np.array([B])

    def forward_parts(self, t, T):
        p = self.p

        def slope(s):
            _, B0 = _cir_flow(p, s, 0.0)
            return p.mu0 * B0, 1.0 + p.mu1 * B0 - 0.5 * p.sigma**2 * B0**2

        if t >= p.u1 or T < p.u1:
            dA, dB = slope(T - t)
            return dA, np.array([dB])
        _, B_post = _cir_flow(p, T - p.u1, 0.0)
        dA_post, dB_post = slope(T - p.u1)
        dA_dv, dB_dv = _cir_flow_dv(p, p.u1 - t, B_post + p.psi1)
        return dA_dv * dB_post + dA_post, np.array([dB_dv * dB_post])


class RiccatiTermStructure:
    """Numerical term structure from backward RK4 solves, one per maturity.

    Maturity derivatives come from the linearised (tangent) Riccati system.
    Values between grid points are reached with a single RK4 step from the
    next grid point above.
    """

    def __init__(self, p: AffineParams, h: HazardSpec, step: float = 1e-3):
        self.p, self.h, self.step = p, h, step
        self.atoms = h.atoms
        self._solve = lru_cache(maxsize=4096)(self._solve_uncached)

    def _solve_uncached(self, T: float, with_terminal_atom: bool) -> PiecewisePath:
        d = self.p.d
        atoms = [a for a in self.atoms if a.u < T - TIME_EPS or (with_terminal_atom and abs(a.u - T) <= TIME_EPS)]
        grid = riccati_grid(T, self.step, [a.u for a in atoms])
        jumps = [(a.u, np.concatenate(([a.phi * a.w], a.psi * a.w, np.zeros(1 + d)))) for a in atoms]
        terminal = np.concatenate((np.zeros(1 + d), [self.h.phi0(T)], np.atleast_1d(self.h.psi0(T))))
        return rk4_backward_with_jumps(_tangent_rhs(self.p, self.h), terminal, T, jumps, grid)

    def _state(self, t: float, T: float, with_terminal_atom: bool = True) -> np.ndarray:
        path = self._solve(float(T), with_terminal_atom)
        k = int(np.searchsorted(path.times, t - TIME_EPS))
        if k < len(path.times) and abs(path.times[k] - t) <= TIME_EPS:
            return path.values[k]
        if k >= len(path.times):
            raise ValueError(f"t={t} beyond maturity {T}")
        anchor = float(path.times[k])
        y = path.left(anchor)
        return rk4_step(_tangent_rhs(self.p, self.h), anchor, y, t - anchor)

    def exponents(self, t, T):
        y = self._state(t, T)
        return float(y[0]), y[1 : 1 + self.p.d].copy()

    def exponents_before(self, t, i):
        y = self._state(t, self.atoms[i].u, with_terminal_atom=False)
        return float(y[0]), y[1 : 1 + self.p.d].copy()

    def forward_parts(self, t, T):
        y = self._state(t, T)
        d = self.p.d
        return float(y[1 + d]), y[2 + d :].copy()


def _time_derivative(fn: Callable[[float], np.ndarray], t: float, atoms: Sequence[float], h: float) -> np.ndarray:
    """Right derivative in t by second-order differences that avoid atom crossings."""
    near_right = any(t < u <= t + 2 * h for u in atoms)
    near_left = any(t - 2 * h < u <= t for u in atoms) or t - 2 * h < 0
    if not near_right and not near_left:
        return (fn(t + h) - fn(t - h)) / (2 * h)
    if near_right and not (t - 2 * h < 0):
        return (3 * fn(t) - 4 * fn(t - h) + fn(t - 2 * h)) / (2 * h)
    return (-3 * fn(t) + 4 * fn(t + h) - fn(t + 2 * h)) / (2 * h)


@dataclass(frozen=True)
class AffineHjmModel:
    curve: ForwardCurveModel
    coeffs: HjmCoefficients
    spec: CompensatorSpec
    short_rate: ShortRateModel


def affine_hjm_model(
    ts: TermStructure,
    p: AffineParams,
    h: HazardSpec,
    state: Callable[[float], np.ndarray],
    tampered: bool = False,
    fd_step: float = 1e-5,
) -> AffineHjmModel:
    """Forward curve, HJM coefficients and compensator implied by an affine term structure.

    The forward rate off the atoms is f(t,T) = dA/dT + dB/dT . X_t, and at a
    risky time w_i f(t,u_i) is the maturity jump of A + B.X_t. The Ito
    coefficients follow from differentiating these in t at frozen X (drift)
    and from the state loading (volatility); the state enters through
    ``state(t)``, e.g. a simulated path.

    ``tampered=True`` drops the atom terms from the forward curve while
    leaving the compensator untouched.
    """
    atoms = ts.atoms
    atom_times = [a.u for a in atoms]

    def x_at(t):
        return np.atleast_1d(np.asarray(state(t), dtype=float))

    def parts(t, T):
        dA, dB = ts.forward_parts(t, T)
        return np.concatenate(([dA], dB))

    def atom_jump(t, i):
        A1, B1 = ts.exponents(t, atoms[i].u)
        A0, B0 = ts.exponents_before(t, i)
        return np.concatenate(([A1 - A0], B1 - B0)) / atoms[i].w

    def contract(vec, x):
        return vec[0] + float(vec[1:] @ x)

    def drift(fn, t, x):
        deriv = _time_derivative(fn, t, atom_times, fd_step)
        val = fn(t)
        return contract(deriv, x) + float(val[1:] @ p.drift(x))

    def f_ac(t, T):
        return contract(parts(t, T), x_at(t))

    def f_atom(t, i):
        return 0.0 if tampered else contract(atom_jump(t, i), x_at(t))

    def a_ac(t, T):
        return drift(lambda s: parts(s, T), t, x_at(t))

    def b_ac(t, T):
        return p.vol(x_at(t)).T @ parts(t, T)[1:]

    def a_atom(t, i):
        return drift(lambda s: atom_jump(s, i), t, x_at(t))

    def b_atom(t, i):
        return p.vol(x_at(t)).T @ atom_jump(t, i)[1:]

    def atom_intensity(t, i):
        # chosen so that the atom target rate equals the model's own atom forward
        w = atoms[i].w
        return w * -math.expm1(-contract(atom_jump(t, i), x_at(t)))

    curve = ForwardCurveModel(f_ac, f_atom, h.measure)
    coeffs = HjmCoefficients(a_ac, b_ac, a_atom, b_atom)
    spec = CompensatorSpec(
        intensity=lambda t: np.asarray(h.rate(t, x_at(t)), dtype=float).item(),
        base_jumps=tuple((a.u, 1.0) for a in atoms),
        atom_intensity=atom_intensity,
    )
    return AffineHjmModel(curve, coeffs, spec, ShortRateModel(0.0))


# ---------------------------------------------------------------------------
# Hazard accumulation
# ---------------------------------------------------------------------------


def hazard_paths(h: HazardSpec, times: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Accumulated hazard K and its atom jumps along paths.

    ``X`` has shape (paths, times) for d = 1 or (paths, times, d). K uses the
    trapezoid rule on the time grid plus kappa_i = phi_i + psi_i.X_{u_i} at
    the atoms, which must be grid points.
    """
    times = np.asarray(times, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    n = X.shape[0]
    rates = np.stack([np.asarray(h.rate(float(t), X[:, k]), dtype=float).reshape(n) for k, t in enumerate(times)], axis=1)
    cont = np.zeros_like(rates)
    if len(times) > 1:
        cont[:, 1:] = np.cumsum(0.5 * (rates[:, 1:] + rates[:, :-1]) * np.diff(times), axis=1)
    jumps = np.zeros_like(rates)
    for a in h.atoms:
        k = int(np.searchsorted(times, a.u - TIME_EPS))
        if k >= len(times):
            continue
        if abs(times[k] - a.u) > TIME_EPS:
            raise ValueError(f"atom {a.u} is not on the path grid")
        kappa = np.asarray(a.exponent(X[:, k]), dtype=float).reshape(n)
        if np.any(kappa < 0):
            raise ValueError(f"phi_i + psi_i.X is negative at atom {a.u}")
        jumps[:, k] += kappa
    return cont + np.cumsum(jumps, axis=1), jumps


def hazard_eval(h: HazardSpec, times: Sequence[float], x_path, t: float) -> float:
    """K(t) = int_0^t (phi0 + psi0.X_s) ds + sum_{u_i <= t} (phi_i + psi_i.X_{u_i})."""
    times = np.asarray(times, dtype=float)
    x = np.asarray(x_path, dtype=float)
    K, jumps = hazard_paths(h, times, x[None, ...])
    k = int(np.searchsorted(times, t - TIME_EPS))
    if k < len(times) and abs(times[k] - t) <= TIME_EPS:
        return float(K[0, k])
    if k == 0 or k >= len(times):
        raise ValueError(f"t={t} outside the path grid")
    # strictly between grid points there is no atom; interpolate the continuous part
    lo, hi = times[k - 1], times[k]
    cont_hi = K[0, k] - jumps[0, k]
    return float(K[0, k - 1] + (t - lo) / (hi - lo) * (cont_hi - K[0, k - 1]))


def compensator_jump(kappa: float) -> float:
    """Compensator jump 1 - exp(-kappa) induced by an exponent jump kappa."""
    return -math.expm1(-kappa)
