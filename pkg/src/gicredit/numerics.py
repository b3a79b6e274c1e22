"""Shared numerical substrate: normal distribution helpers, quadrature,
backward RK4 with event jumps, finite differences and reproducible RNG streams.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr

SQRT_2PI = math.sqrt(2.0 * math.pi)
TRUNCATION = 8.0

# Grid points closer than this are treated as identical.
TIME_EPS = 1e-12


def norm_cdf(z):
    """Standard normal CDF, accurate to ~1e-16 absolute."""
    out = ndtr(z)
    return float(out) if np.ndim(out) == 0 else out


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    out = np.exp(-0.5 * z * z) / SQRT_2PI
    return float(out) if out.ndim == 0 else out


def norm_logcdf(z):
    """log Phi(z), finite for very negative z (no underflow to -inf)."""
    out = log_ndtr(z)
    return float(out) if np.ndim(out) == 0 else out


def mills_ratio(z):
    """phi(z) / Phi(z), evaluated in log space so it stays finite for z << 0."""
    z = np.asarray(z, dtype=float)
    out = np.exp(-0.5 * z * z - math.log(SQRT_2PI) - log_ndtr(z))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def _gl_panel(f, a: float, b: float, order: int) -> float:
    x, w = _legendre(order)
    half = 0.5 * (b - a)
    nodes = 0.5 * (b + a) + half * x
    return half * float(np.dot(w, f(nodes)))


def gauss_legendre(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = 1e-12,
    order: int = 20,
    max_depth: int = 40,
) -> float:
    """Adaptive Gauss-Legendre quadrature of a vectorised integrand on [a, b].

    Each panel is compared with the sum over its two halves and bisected
    until the difference drops below the local share of ``tol``.
    """
    if b == a:
        return 0.0
    if b < a:
        return -gauss_legendre(f, b, a, tol, order, max_depth)

    total = 0.0
    stack = [(a, b, _gl_panel(f, a, b, order), tol, 0)]
    while stack:
        lo, hi, whole, local_tol, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left = _gl_panel(f, lo, mid, order)
        right = _gl_panel(f, mid, hi, order)
        if abs(left + right - whole) <= local_tol or depth >= max_depth:
            total += left + right
        else:
            stack.append((lo, mid, left, 0.5 * local_tol, depth + 1))
            stack.append((mid, hi, right, 0.5 * local_tol, depth + 1))
    return total


def simpson(values: np.ndarray, h: float) -> float:
    """Composite Simpson rule on an odd number of equally spaced samples."""
    n = len(values) - 1
    if n < 2 or n % 2:
        raise ValueError("simpson needs an even number of panels")
    return h / 3.0 * float(values[0] + values[-1] + 4.0 * values[1:-1:2].sum() + 2.0 * values[2:-1:2].sum())


def simpson_nodes(a: float, b: float, max_step: float) -> tuple[np.ndarray, float]:
    n = max(2, int(math.ceil((b - a) / max_step)))
    n += n % 2
    return np.linspace(a, b, n + 1), (b - a) / n


def halfplane_band_prob(a: float, b: float, c: float, d: float, tol: float = 1e-12) -> float:
    """P(a*xi + b*eta <= c, eta > d) for independent standard normals xi, eta.

    Reduces to int_d^inf Phi((c - b*y)/a) phi(y) dy, integrated adaptively
    on [max(d, -8), 8]; the discarded tail mass is below 1e-15.
    """
    if not a > 0:
        raise ValueError(f"halfplane_band_prob requires a > 0, got {a}")
    lo = max(d, -TRUNCATION)
    if lo >= TRUNCATION:
        return 0.0

    def integrand(y):
        return ndtr((c - b * y) / a) * np.exp(-0.5 * y * y) / SQRT_2PI

    return gauss_legendre(integrand, lo, TRUNCATION, tol=tol)


# ---------------------------------------------------------------------------
# Time grids and backward integration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Strictly increasing time points that contain every registered event."""

    points: np.ndarray
    events: tuple[float, ...] = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or len(pts) == 0:
            raise ValueError("grid needs at least one point")
        if pts[0] < 0:
            raise ValueError("grid starts before 0")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        for e in self.events:
            if not self.contains(e):
                raise ValueError(f"event time {e} is not a grid point")

    @classmethod
    def uniform(cls, start: float, stop: float, step: float, events: Iterable[float] = ()) -> "Grid":
        """Regular grid from start to stop (both included) with events merged in."""
        if stop < start:
            raise ValueError("stop < start")
        n = max(1, int(math.ceil((stop - start) / step - 1e-9)))
        base = np.linspace(start, stop, n + 1)
        evs = tuple(sorted(float(e) for e in events if start <= e <= stop))
        return cls(merge_times(base, evs), evs)

    def contains(self, t: float) -> bool:
        return self.index(t) is not None

    def index(self, t: float) -> int | None:
        i = int(np.searchsorted(self.points, t - TIME_EPS))
        if i < len(self.points) and abs(self.points[i] - t) <= TIME_EPS:
            return i
        return None

    def __len__(self) -> int:
        return len(self.points)


def merge_times(points: Iterable[float], extra: Iterable[float] = ()) -> np.ndarray:
    """Sorted union of time points with near-duplicates collapsed."""
    allpts = np.sort(np.concatenate([np.asarray(list(points), float), np.asarray(list(extra), float)]))
    if len(allpts) == 0:
        return allpts
    keep = np.concatenate([[True], np.diff(allpts) > 1e-9])
    merged = allpts[keep]
    # snap to the exact extra values so event lookups are exact
    for e in extra:
        j = int(np.argmin(np.abs(merged - e)))
        merged[j] = e
    return merged


@dataclass
class PiecewisePath:
    """Right-continuous path on a grid with left limits recorded at events."""

    times: np.ndarray
    values: np.ndarray
    left_limits: dict[float, np.ndarray] = field(default_factory=dict)

    def at(self, t: float) -> np.ndarray:
        i = _lookup(self.times, t)
        return self.values[i]

    def left(self, t: float) -> np.ndarray:
        for u, v in self.left_limits.items():
            if abs(u - t) <= TIME_EPS:
                return v
        return self.at(t)


def _lookup(times: np.ndarray, t: float) -> int:
    i = int(np.searchsorted(times, t - TIME_EPS))
    if i >= len(times) or abs(times[i] - t) > TIME_EPS:
        raise KeyError(f"time {t} is not on the path grid")
    return i


def rk4_step(rhs, t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class BlowUpError(ArithmeticError):
    def __init__(self, t: float):
        super().__init__(f"non-finite state during integration at t={t}")
        self.t = t


def rk4_backward_with_jumps(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    terminal,
    terminal_time: float,
    jumps: Sequence[tuple[float, Sequence[float] | float]],
    grid: Grid,
) -> PiecewisePath:
    """Integrate y' = rhs(t, y) backward from ``terminal_time`` over ``grid``.

    The step between neighbouring grid points is the RK4 step, so event times
    are hit exactly. When the integration reaches an event time u from the
    right, the stored value is the right-continuous y(u); the left limit
    y(u-) = y(u) + increment is recorded and used to continue leftward.
    """
    y = np.atleast_1d(np.asarray(terminal, dtype=float)).copy()
    pts = grid.points[grid.points <= terminal_time + TIME_EPS]
    if len(pts) == 0 or abs(pts[-1] - terminal_time) > TIME_EPS:
        raise ValueError("terminal_time must be a grid point")

    increments: dict[int, np.ndarray] = {}
    for u, inc in jumps:
        if u > terminal_time + TIME_EPS:
            continue
        j = grid.index(u)
        if j is None:
            raise ValueError(f"jump time {u} is not a grid point")
        inc = np.broadcast_to(np.asarray(inc, dtype=float), y.shape)
        increments[j] = increments.get(j, 0.0) + inc

    values = np.empty((len(pts), y.size))
    left_limits: dict[float, np.ndarray] = {}
    for k in range(len(pts) - 1, -1, -1):
        values[k] = y
        if k in increments:
            y = y + increments[k]
            left_limits[float(pts[k])] = y.copy()
        if k == 0:
            break
        y = rk4_step(rhs, pts[k], y, pts[k - 1] - pts[k])
        if not np.all(np.isfinite(y)):
            raise BlowUpError(float(pts[k - 1]))
    return PiecewisePath(pts.copy(), values, left_limits)


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


def finite_diff(f: Callable[[float], float], x: float, h: float = 1e-5) -> float:
    return (f(x + h) - f(x - h)) / (2.0 * h)


def finite_diff2(f: Callable[[float], float], x: float, h: float = 1e-4) -> float:
    return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)


def richardson(estimate: Callable[[float], float], h: float, order: int = 2) -> float:
    """Combine estimates at h and h/2 to cancel the leading O(h^order) error."""
    fine = estimate(0.5 * h)
    coarse = estimate(h)
    return fine + (fine - coarse) / (2.0**order - 1.0)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


class RngStream:
    """Counter-based random stream keyed by (seed, stream_id, purpose).

    ``purpose`` separates independent auxiliary streams (thresholds, bridge
    uniforms) from the main path stream with the same id. A mirrored stream
    replays the same underlying draws with antithetic transforms: normals
    change sign and uniforms map to 1 - u.
    """

    def __init__(self, seed: int, stream_id: int, mirrored: bool = False, purpose: int = 0):
        if stream_id < 0 or purpose < 0:
            raise ValueError("stream_id and purpose must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.purpose = int(purpose)
        self.mirrored = mirrored
        key = (self.stream_id, self.purpose) if self.purpose else (self.stream_id,)
        ss = np.random.SeedSequence(entropy=self.seed & (2**64 - 1), spawn_key=key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def normal(self, size=None) -> np.ndarray:
        z = self._gen.standard_normal(size)
        return -z if self.mirrored else z

    def uniform(self, size=None) -> np.ndarray:
        u = self._gen.random(size)
        return 1.0 - u if self.mirrored else u

    def exponential(self, size=None) -> np.ndarray:
        return -np.log1p(-self.uniform(size))

    def mirror(self) -> "RngStream":
        return RngStream(self.seed, self.stream_id, mirrored=not self.mirrored, purpose=self.purpose)
