"""Monte Carlo engine: Brownian and CIR paths, default sampling, prices and
martingale tests.

Paths are generated in blocks. Block ``b`` draws from ``RngStream(seed, b)``
one step at a time, so every estimator is a pure function of the
configuration regardless of how many worker threads process the blocks.
With antithetics each block is split into a half drawn from the stream and
a half drawn from its mirror.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import blackcox, merton
from .affine import CirParams, HazardSpec, cir_closed_form
from .blackcox import BlackCoxParams
from .merton import MertonParams
from .numerics import TIME_EPS, Grid, RngStream, norm_cdf

AUX = 1  # purpose key for threshold and bridge uniforms
# absolute slack for payoffs that are constant in exact arithmetic but not in floating point
ROUNDING_SLACK = 1e-12


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    dt: float
    seed: int
    horizon: float
    start: float = 0.0
    block_size: int = 65536
    antithetic: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 100:
            raise ValueError("n_paths must be at least 100")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon > self.start:
            raise ValueError("horizon must exceed the start time")
        if self.block_size < 1 or self.workers < 1:
            raise ValueError("block_size and workers must be positive")
        if self.antithetic and (self.n_paths % 2 or self.block_size % 2):
            raise ValueError("antithetic sampling needs even n_paths and block_size")

    def grid(self, events: Sequence[float] = ()) -> Grid:
        """Uniform grid on [start, horizon]; events must sit on multiples of dt."""
        for e in events:
            if self.start < e <= self.horizon:
                k = (e - self.start) / self.dt
                if abs(k - round(k)) > 1e-9:
                    raise ValueError(f"dt={self.dt} does not divide the offset of event {e}")
        return Grid.uniform(self.start, self.horizon, self.dt, [e for e in events if self.start <= e <= self.horizon])

    def blocks(self) -> list[tuple[int, int]]:
        out, left, b = [], self.n_paths, 0
        while left > 0:
            n = min(self.block_size, left)
            out.append((b, n))
            left -= n
            b += 1
        return out

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_error: float
    n: int

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be non-negative")

    def within(self, value: float, k: float = 3.0) -> bool:
        return abs(self.mean - value) <= k * self.std_error + ROUNDING_SLACK

    def z_score(self, value: float) -> float:
        diff = self.mean - value
        if self.std_error == 0:
            return 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return diff / self.std_error


@dataclass
class PathBundle:
    times: Grid
    values: np.ndarray
    stream_ids: np.ndarray
    cfg: SimConfig

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite path values")
        if self.values.shape[:2] != (self.cfg.n_paths, len(self.times)):
            raise ValueError("values must have shape n_paths x len(times)")


class BlockDraws:
    """Random draws for one block of paths, antithetic-aware."""

    def __init__(self, seed: int, block_id: int, n: int, antithetic: bool = False, purpose: int = 0):
        self.seed, self.block_id, self.n, self.antithetic = seed, block_id, n, antithetic
        self._main = RngStream(seed, block_id, purpose=purpose)
        self._mirror = self._main.mirror() if antithetic else None
        self._m = n // 2 if antithetic else n

    def _draw(self, method: str, tail: tuple) -> np.ndarray:
        a = getattr(self._main, method)((self._m, *tail))
        if self._mirror is None:
            return a
        return np.concatenate([a, getattr(self._mirror, method)((self._m, *tail))])

    def normal(self, *tail: int) -> np.ndarray:
        return self._draw("normal", tail)

    def uniform(self, *tail: int) -> np.ndarray:
        return self._draw("uniform", tail)

    def exponential(self, *tail: int) -> np.ndarray:
        return self._draw("exponential", tail)

    def aux(self) -> "BlockDraws":
        return BlockDraws(self.seed, self.block_id, self.n, self.antithetic, purpose=AUX)


def _run_blocks(fn: Callable[[BlockDraws], np.ndarray], cfg: SimConfig) -> list[np.ndarray]:
    jobs = [BlockDraws(cfg.seed, b, n, cfg.antithetic) for b, n in cfg.blocks()]
    if cfg.workers == 1 or len(jobs) == 1:
        return [fn(d) for d in jobs]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, jobs))


def _estimate_blocks(parts: list[np.ndarray], antithetic: bool) -> list[Estimate]:
    """Mean and standard error per column; antithetic pairs are averaged first."""
    cols = []
    for v in parts:
        v = np.asarray(v, dtype=float)
        v = v.reshape(len(v), -1)
        if antithetic:
            m = len(v) // 2
            v = 0.5 * (v[:m] + v[m:])
        cols.append(v)
    allv = np.concatenate(cols)
    n_eff = len(allv)
    n_paths = sum(len(p) for p in parts)
    out = []
    for k in range(allv.shape[1]):
        col = allv[:, k]
        se = float(np.std(col, ddof=1) / math.sqrt(n_eff)) if n_eff > 1 else 0.0
        out.append(Estimate(float(np.mean(col)), se, n_paths))
    return out


# ---------------------------------------------------------------------------
# Path simulation
# ---------------------------------------------------------------------------


def _brownian_block(draws: BlockDraws, times: np.ndarray, w0: float) -> np.ndarray:
    out = np.empty((draws.n, len(times)))
    out[:, 0] = w0
    for k in range(len(times) - 1):
        out[:, k + 1] = out[:, k] + math.sqrt(times[k + 1] - times[k]) * draws.normal()
    return out


def simulate_brownian(cfg: SimConfig, w0: float = 0.0, events: Sequence[float] = ()) -> PathBundle:
    """Brownian paths from w0 at cfg.start on the config grid."""
    grid = cfg.grid(events)
    parts = _run_blocks(lambda d: _brownian_block(d, grid.points, w0), cfg)
    ids = np.concatenate([np.full(n, b) for b, n in cfg.blocks()])
    return PathBundle(grid, np.concatenate(parts), ids, cfg)


def _cir_step(p, x: np.ndarray, dt: float, z: np.ndarray) -> np.ndarray:
    xp = np.maximum(x, 0.0)
    return x + (p.mu0 + p.mu1 * xp) * dt + p.sigma * np.sqrt(xp * dt) * z


def simulate_cir(p, cfg: SimConfig, x0: float, events: Sequence[float] = ()) -> PathBundle:
    """Full-truncation Euler paths of dX = (mu0 + mu1 X) dt + sigma sqrt(X) dW.

    The stored state may dip below zero; only the drift and the square root
    see max(X, 0).
    """
    if x0 < 0:
        raise ValueError("x0 must be non-negative")
    grid = cfg.grid(events)
    times = grid.points

    def block(d: BlockDraws):
        out = np.empty((d.n, len(times)))
        out[:, 0] = x0
        for k in range(len(times) - 1):
            out[:, k + 1] = _cir_step(p, out[:, k], times[k + 1] - times[k], d.normal())
        return out

    parts = _run_blocks(block, cfg)
    ids = np.concatenate([np.full(n, b) for b, n in cfg.blocks()])
    return PathBundle(grid, np.concatenate(parts), ids, cfg)


# ---------------------------------------------------------------------------
# Default sampling
# ---------------------------------------------------------------------------


def default_times(times: np.ndarray, K: np.ndarray, jumps: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """tau = inf{t : K_t >= zeta} per path, inf when K stays below zeta.

    When the crossing happens through a jump of K at a grid point the
    default lands exactly on that point; a crossing by the continuous part
    is located by linear interpolation within the step.
    """
    times = np.asarray(times, dtype=float)
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    jumps = np.atleast_2d(np.asarray(jumps, dtype=float))
    shape = (len(zeta), len(times))
    K, jumps = np.broadcast_to(K, shape), np.broadcast_to(jumps, shape)
    if np.any(np.diff(K, axis=1) < -1e-14):
        raise ValueError("accumulated hazard must be nondecreasing")
    if np.any(np.abs(K[:, 0]) > 1e-14):
        raise ValueError("accumulated hazard must start at 0")
    hit = K >= zeta[:, None]
    crossed = hit.any(axis=1)
    k = np.argmax(hit, axis=1)
    tau = np.full(len(zeta), math.inf)
    rows = np.nonzero(crossed)[0]
    if len(rows) == 0:
        return tau
    kk = k[rows]
    tau[rows] = times[kk]
    before = K[rows, np.maximum(kk - 1, 0)]
    cont_end = K[rows, kk] - jumps[rows, kk]
    interp = (kk > 0) & (zeta[rows] <= cont_end)
    if np.any(interp):
        r, j = rows[interp], kk[interp]
        lo, hi = before[interp], cont_end[interp]
        frac = np.where(hi > lo, (zeta[r] - lo) / np.where(hi > lo, hi - lo, 1.0), 1.0)
        tau[r] = times[j - 1] + frac * (times[j] - times[j - 1])
    return tau


def sample_default_doubly_stochastic(times, K, stream: RngStream, jumps=None) -> float:
    """Draw zeta ~ Exp(1) from ``stream`` and return the first time K reaches it."""
    K = np.asarray(K, dtype=float)
    jumps = np.zeros_like(K) if jumps is None else np.asarray(jumps, dtype=float)
    zeta = stream.exponential(1)
    return float(default_times(times, K[None, :], jumps[None, :], zeta)[0])


@dataclass(frozen=True)
class Barrier:
    """Piecewise-constant barrier D0 before U and DU from U on."""

    D0: float
    DU: float
    U: float

    def at(self, t: float) -> float:
        return self.DU if t >= self.U - TIME_EPS else self.D0

    @classmethod
    def from_blackcox(cls, p: BlackCoxParams) -> "Barrier":
        return cls(p.D0, p.DU, p.U)


def _passage_block(draws: BlockDraws, times: np.ndarray, w0: float, barrier: Barrier, bridge: bool, W: np.ndarray | None = None):
    """Default times along Brownian paths, stepping forward with bridge checks.

    Paths come from ``draws`` unless pre-simulated values ``W`` are given
    (they must have been generated from the same block stream).
    """
    aux = draws.aux()
    n = draws.n
    tau = np.full(n, math.inf)
    w = np.full(n, float(w0))
    tau[w <= barrier.at(times[0])] = times[0]
    for k in range(len(times) - 1):
        dt = times[k + 1] - times[k]
        w_next = W[:, k + 1] if W is not None else w + math.sqrt(dt) * draws.normal()
        u = aux.uniform()
        D = barrier.at(times[k])
        alive = np.isinf(tau)
        hit = w_next <= D
        if bridge:
            gap = np.maximum(w - D, 0.0) * np.maximum(w_next - D, 0.0)
            hit |= u < np.exp(-2.0 * gap / dt)
        tau[alive & hit] = times[k + 1]
        # barrier jump at t_{k+1}: default exactly there if the level is now at or below it
        D_new = barrier.at(times[k + 1])
        if D_new > D:
            tau[np.isinf(tau) & (w_next <= D_new)] = times[k + 1]
        w = w_next
    return tau, w


def first_passage_default(paths: PathBundle, barrier: Barrier, bridge: bool = True) -> np.ndarray:
    """Per-path default time tau = inf{t : W_t <= D(t)} on a Brownian bundle.

    An interior crossing detected by the bridge check is reported at the
    end of its step. The bridge uniforms come from the auxiliary stream of
    each block, so the result is reproducible from the bundle alone.
    """
    cfg = paths.cfg
    times = paths.times.points
    if barrier.D0 != barrier.DU and barrier.U <= times[-1] and not paths.times.contains(barrier.U):
        raise ValueError("barrier jump time must be a grid point")
    out, start = [], 0
    for b, n in cfg.blocks():
        d = BlockDraws(cfg.seed, b, n, cfg.antithetic)
        W = paths.values[start : start + n]
        tau, _ = _passage_block(d, times, float(W[0, 0]), barrier, bridge, W)
        out.append(tau)
        start += n
    return np.concatenate(out)


def first_passage_survival(
    cfg: SimConfig, w0: float, barrier: Barrier, maturities: Sequence[float], bridge: bool = True
) -> list[Estimate]:
    """P(tau > T) for each maturity, streaming over blocks without storing paths.

    Uses the same draws as ``first_passage_default(simulate_brownian(cfg, w0, ...))``.
    """
    events = [barrier.U, *maturities]
    grid = cfg.grid([e for e in events if e > cfg.start])
    times = grid.points
    mats = np.asarray(maturities, dtype=float)

    def block(d: BlockDraws):
        tau, _ = _passage_block(d, times, w0, barrier, bridge)
        return (tau[:, None] > mats[None, :]).astype(float)

    return _estimate_blocks(_run_blocks(block, cfg), cfg.antithetic)


# ---------------------------------------------------------------------------
# Doubly stochastic defaults driven by CIR
# ---------------------------------------------------------------------------


@dataclass
class CirDefaultSample:
    """CIR state and accumulated hazard recorded at chosen times, plus tau."""

    times: np.ndarray
    X: np.ndarray
    K: np.ndarray
    tau: np.ndarray


def _cir_default_block(draws: BlockDraws, times: np.ndarray, p, x0: float, hazard: HazardSpec, rec: np.ndarray):
    n = draws.n
    zeta = draws.aux().exponential()
    x = np.full(n, float(x0))
    K = np.zeros(n)
    tau = np.full(n, math.inf)
    Xr = np.empty((n, len(rec)))
    Kr = np.empty((n, len(rec)))
    atom_at = {}
    for a in hazard.atoms:
        j = int(np.searchsorted(times, a.u - TIME_EPS))
        if j < len(times) and abs(times[j] - a.u) <= TIME_EPS:
            atom_at.setdefault(j, []).append(a)
        elif a.u <= times[-1]:
            raise ValueError(f"atom {a.u} is not on the simulation grid")
    rec_pos: dict[int, list[int]] = {}
    for i, j in enumerate(rec):
        rec_pos.setdefault(int(j), []).append(i)
    for i in rec_pos.get(0, ()):
        Xr[:, i], Kr[:, i] = x, K
    rate = np.asarray(hazard.rate(times[0], np.maximum(x, 0.0)), dtype=float)
    for k in range(len(times) - 1):
        dt = times[k + 1] - times[k]
        x_next = _cir_step(p, x, dt, draws.normal())
        xp = np.maximum(x_next, 0.0)
        rate_next = np.asarray(hazard.rate(times[k + 1], xp), dtype=float)
        K_cont = K + 0.5 * (rate + rate_next) * dt
        # continuous crossing: linear interpolation of K inside the step
        new = np.isinf(tau) & (K_cont >= zeta)
        if np.any(new):
            frac = (zeta[new] - K[new]) / (K_cont[new] - K[new])
            tau[new] = times[k] + frac * dt
        K = K_cont
        for a in atom_at.get(k + 1, ()):
            kappa = np.asarray(a.exponent(xp), dtype=float)
            if np.any(kappa < 0):
                raise ValueError(f"negative hazard jump at atom {a.u}")
            K = K + kappa
        new = np.isinf(tau) & (K >= zeta)
        tau[new] = times[k + 1]
        x, rate = x_next, rate_next
        for i in rec_pos.get(k + 1, ()):
            Xr[:, i], Kr[:, i] = x, K
    return Xr, Kr, tau


def simulate_cir_defaults(p, hazard: HazardSpec, cfg: SimConfig, x0: float, record: Sequence[float]) -> CirDefaultSample:
    """CIR paths with hazard phi0 + psi0.X^+ and atom jumps, and tau from an Exp(1) threshold.

    The same state path drives the hazard and any pricing done at the
    recorded times, preserving the doubly stochastic structure. Paths match
    ``simulate_cir`` with the same configuration.
    """
    grid = cfg.grid([a.u for a in hazard.atoms] + list(record))
    times = grid.points
    rec = np.array([grid.index(t) for t in record], dtype=int)
    parts = _run_blocks(lambda d: _cir_default_block(d, times, p, x0, hazard, rec), cfg)
    return CirDefaultSample(
        np.asarray(record, dtype=float),
        np.concatenate([q[0] for q in parts]),
        np.concatenate([q[1] for q in parts]),
        np.concatenate([q[2] for q in parts]),
    )


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def mc_price(payoff: Callable[[BlockDraws], np.ndarray], cfg: SimConfig) -> Estimate:
    """Mean and standard error of a per-path discounted payoff.

    ``payoff(draws)`` returns ``draws.n`` values for one block.
    """
    return _estimate_blocks(_run_blocks(payoff, cfg), cfg.antithetic)[0]


def estimate_columns(values: np.ndarray, cfg: SimConfig) -> list[Estimate]:
    """Estimates per column of per-path values laid out in the config's block order."""
    values = np.asarray(values, dtype=float)
    parts, start = [], 0
    for _, n in cfg.blocks():
        parts.append(values[start : start + n])
        start += n
    return _estimate_blocks(parts, cfg.antithetic)


def mc_estimates(payoff: Callable[[BlockDraws], np.ndarray], cfg: SimConfig) -> list[Estimate]:
    """Like mc_price for payoffs returning one column per quantity."""
    return _estimate_blocks(_run_blocks(payoff, cfg), cfg.antithetic)


@dataclass
class MartingaleTest:
    checkpoints: list[float]
    increments: list[Estimate]
    k: float = 3.0

    @property
    def passed(self) -> bool:
        return all(e.within(0.0, self.k) for e in self.increments)

    def rows(self) -> list[tuple]:
        pairs = zip(self.checkpoints[:-1], self.checkpoints[1:])
        return [(t1, t2, e.mean, e.std_error, e.n, e.within(0.0, self.k)) for (t1, t2), e in zip(pairs, self.increments)]


PricingRule = Callable[[BlockDraws, np.ndarray], np.ndarray]


def martingale_drift_test(rule: PricingRule, cfg: SimConfig, T: float, checkpoints: Sequence[float]) -> MartingaleTest:
    """Mean increments of discounted prices between consecutive checkpoints.

    ``rule(draws, checkpoints)`` returns P(t, T) / X0_t along each path of a
    block at every checkpoint. The test passes iff every mean increment is
    within three standard errors of zero, plus a tiny absolute slack so
    that increments which vanish in exact arithmetic are not failed over
    rounding.
    """
    cps = np.asarray(sorted(checkpoints), dtype=float)
    if len(cps) < 2:
        raise ValueError("need at least two checkpoints")
    if cps[-1] > T + TIME_EPS or cps[0] < cfg.start - TIME_EPS:
        raise ValueError("checkpoints must lie in [start, T]")

    def block(d):
        vals = np.asarray(rule(d, cps), dtype=float)
        return np.diff(vals, axis=1)

    return MartingaleTest(cps.tolist(), mc_estimates(block, cfg))


def constant_rate_rule(r: float, T: float) -> PricingRule:
    """Default-free bond under a constant short rate."""

    def rule(d, cps):
        return np.tile(np.exp(-r * (T - cps) - r * cps), (d.n, 1))

    return rule


def merton_rule(p: MertonParams, T: float, w0: float = 0.0, start: float = 0.0, tampered: bool = False) -> PricingRule:
    """Merton bond prices along simulated W, default decided at U.

    With ``tampered=True`` the price ignores the atom, P(t, T) = 1{tau > t}
    e^{-r(T-t)}, while defaults still happen at U.
    """

    def rule(d, cps):
        times = np.unique(np.concatenate([[start], cps, [p.U] if start < p.U <= cps[-1] else []]))
        W = _brownian_block(d, times, w0)
        at = {float(t): W[:, i] for i, t in enumerate(times)}
        defaulted = at[p.U] <= p.K if p.U in at else np.zeros(d.n, bool)
        out = np.empty((d.n, len(cps)))
        for j, t in enumerate(cps):
            disc = math.exp(-p.r * (T - t)) * math.exp(-p.r * t)
            if t < p.U:
                surv = 1.0 if (tampered or T < p.U) else norm_cdf((at[float(t)] - p.K) / math.sqrt(p.U - t))
                out[:, j] = disc * surv
            else:
                out[:, j] = disc * ~defaulted
        return out

    return rule


def merton_tamper_drift(p: MertonParams, w: float, t: float, T: float) -> float:
    """Expected discounted increment of the tampered price across U: -e^{-rT} P(W_U <= K)."""
    return -math.exp(-p.r * T) * merton.atom_default_prob(p, w, t)


def blackcox_rule(p: BlackCoxParams, T: float, dt: float, w0: float = 0.0, start: float = 0.0, r: float = 0.0) -> PricingRule:
    """Black-Cox bond prices along bridge-corrected first-passage paths."""
    barrier = Barrier.from_blackcox(p)

    def rule(d, cps):
        n_steps = max(1, int(round((cps[-1] - start) / dt)))
        grid = Grid.uniform(start, cps[-1], (cps[-1] - start) / n_steps, [c for c in cps] + ([p.U] if start < p.U <= cps[-1] else []))
        times = grid.points
        W = _brownian_block(d, times, w0)
        out = np.empty((d.n, len(cps)))
        # default times from the same increments
        tau, _ = _passage_block(d, times, w0, barrier, True, W)
        for j, t in enumerate(cps):
            wt = W[:, grid.index(float(t))]
            alive = tau > t
            disc = math.exp(-r * T)
            if t >= T - TIME_EPS:
                out[:, j] = disc * alive
                continue
            vals = np.zeros(d.n)
            for i in np.nonzero(alive)[0]:
                vals[i] = blackcox.survival_prob(p, float(wt[i]), float(t), T)
            out[:, j] = disc * vals
        return out

    return rule


def cir_rule(p: CirParams, T: float, x0: float, dt: float, start: float = 0.0) -> PricingRule:
    """Affine CIR bond prices along the same paths that drive the default."""
    hazard = p.hazard

    def rule(d, cps):
        grid = Grid.uniform(start, cps[-1], dt, [c for c in cps] + [a.u for a in hazard.atoms if start < a.u <= cps[-1]])
        rec = np.array([grid.index(float(t)) for t in cps], dtype=int)
        X, K, tau = _cir_default_block(d, grid.points, p, x0, hazard, rec)
        out = np.empty((d.n, len(cps)))
        for j, t in enumerate(cps):
            A, B = cir_closed_form(p, float(t), T)
            out[:, j] = (tau > t) * np.exp(-A - B * X[:, j])
        return out

    return rule


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


def estimates_csv(rows: Sequence[tuple[str, Estimate]], cfg: SimConfig) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["estimator", "mean", "std_error", "n", "config_hash"])
    h = cfg.config_hash()
    for name, e in rows:
        writer.writerow([name, repr(e.mean), repr(e.std_error), e.n, h])
    return buf.getvalue()
