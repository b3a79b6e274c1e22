"""Batch front end: ``gicredit price|audit|simulate|riccati --scenario file.json``.

Exit codes: 0 success (or certified audit), 1 audit violation, 2 invalid
input, 3 operation not supported for the model.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from . import blackcox, merton
from .affine import CirParams, CirTermStructure, affine_hjm_model, cir_closed_form, solve_riccati
from .blackcox import BlackCoxParams
from .curves import DefaultStatus, ForwardCurveModel, ShortRateModel, bond_price
from .measure import CompensatorSpec, RiskyMeasure
from .merton import MertonParams
from .mc import (
    Barrier,
    Estimate,
    SimConfig,
    default_times,
    estimate_columns,
    estimates_csv,
    first_passage_survival,
    martingale_drift_test,
    mc_estimates,
    merton_rule,
    blackcox_rule,
    cir_rule,
    simulate_cir_defaults,
)
from .noarb import DEFAULT_TOLERANCE, ZERO_COEFFICIENTS, atom_target_rate, audit
from .numerics import TIME_EPS, Grid

EXIT_OK, EXIT_VIOLATION, EXIT_INVALID, EXIT_UNSUPPORTED = 0, 1, 2, 3
MODELS = ("merton", "blackcox", "cir_affine", "custom_curve")
OUTPUTS = ("prices", "audit", "estimates", "martingale", "riccati")


class ScenarioError(Exception):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


class Unsupported(Exception):
    pass


# ---------------------------------------------------------------------------
# Scenario loading
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    model: str
    params: Any
    measure: RiskyMeasure
    sim: SimConfig | None
    outputs: list[str]
    t: float = 0.0
    maturities: list[float] = field(default_factory=list)
    state: dict = field(default_factory=dict)
    tampered: bool = False
    compensator: CompensatorSpec | None = None
    audit: dict = field(default_factory=dict)
    checkpoints: list[float] = field(default_factory=list)

    @property
    def status(self) -> DefaultStatus:
        tau = self.state.get("tau")
        return DefaultStatus(math.inf if tau is None else float(tau))


def _build(cls, raw: dict, errors: list[str], what: str):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        errors.append(f"{what}: unknown fields {unknown}")
        return None
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        errors.append(f"{what}: {exc}")
        return None


def _parse_jumps(raw):
    out = []
    for j in raw:
        if isinstance(j, dict):
            u, dA = float(j["u"]), float(j.get("dA", 1.0))
            if "kappa" in j:
                out.append((u, dA, -math.expm1(-float(j["kappa"])) / dA))
            elif "lambda" in j:
                out.append((u, dA, float(j["lambda"])))
            else:
                out.append((u, dA))
        else:
            out.append(tuple(float(v) for v in j))
    return tuple(out)


def parse_scenario(raw: dict) -> Scenario:
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ScenarioError(["scenario must be a JSON object"])
    model = raw.get("model")
    if model not in MODELS:
        raise ScenarioError([f"model must be one of {list(MODELS)}, got {model!r}"])
    params_raw = dict(raw.get("params", {}))
    tampered = bool(params_raw.pop("tampered", False))
    outputs = list(raw.get("outputs", []))
    bad = [o for o in outputs if o not in OUTPUTS]
    if bad:
        errors.append(f"unknown outputs {bad}; allowed {list(OUTPUTS)}")
    t = float(raw.get("t", 0.0))
    if t < 0:
        errors.append("t must be non-negative")
    maturities = [float(T) for T in raw.get("maturities", [])]
    if any(T < t for T in maturities):
        errors.append("maturities must not precede t")
    state = dict(raw.get("state", {}))

    try:
        measure = RiskyMeasure(tuple(tuple(float(v) for v in a) for a in raw.get("measure", {}).get("atoms", [])))
    except (TypeError, ValueError) as exc:
        errors.append(f"measure: {exc}")
        measure = None

    compensator = None
    if model == "merton":
        params = _build(MertonParams, params_raw, errors, "params")
        implied = params.measure if params else None
    elif model == "blackcox":
        r = float(params_raw.pop("r", 0.0))
        params = _build(BlackCoxParams, params_raw, errors, "params")
        if params is not None:
            params = (params, r)
        implied = RiskyMeasure(((params[0].U, 1.0),)) if params else None
    elif model == "cir_affine":
        step = float(params_raw.pop("riccati_step", 1e-3))
        params = _build(CirParams, params_raw, errors, "params")
        if params is not None:
            params = (params, step)
        implied = RiskyMeasure(((params[0].u1, 1.0),)) if params else None
        if "x" not in state:
            errors.append("state.x is required for cir_affine")
        elif float(state["x"]) < 0:
            errors.append("state.x must be non-negative")
    else:
        r = float(params_raw.pop("r", 0.0))
        params = {"r": r, "ac_rate": params_raw.pop("ac_rate", None), "atom_values": params_raw.pop("atom_values", None)}
        if params_raw:
            errors.append(f"params: unknown fields {sorted(params_raw)}")
        comp_raw = raw.get("compensator", {})
        try:
            compensator = CompensatorSpec(float(comp_raw.get("lambda", 0.0)), _parse_jumps(comp_raw.get("base_jumps", [])))
        except (TypeError, ValueError, KeyError) as exc:
            errors.append(f"compensator: {exc}")
        implied = None

    if measure is not None and implied is not None:
        if measure.atoms and measure.atoms != implied.atoms:
            errors.append(f"measure atoms {list(measure.atoms)} do not match the model's risky time {list(implied.atoms)}")
        measure = implied
    if model == "merton" and "w" not in state and params is not None:
        errors.append("state.w is required for merton")
    if model == "blackcox" and "w" not in state:
        errors.append("state.w is required for blackcox")

    sim = None
    if "sim" in raw:
        sim_raw = dict(raw["sim"])
        sim_raw.setdefault("start", t)
        sim = _build(SimConfig, sim_raw, errors, "sim")
        if sim is not None and maturities and max(maturities) > sim.horizon + TIME_EPS:
            errors.append("sim.horizon must cover every maturity")
    checkpoints = [float(c) for c in raw.get("checkpoints", [])]
    try:
        tau = state.get("tau")
        if tau is not None:
            DefaultStatus(float(tau))
    except ValueError as exc:
        errors.append(f"state.tau: {exc}")
    if errors:
        raise ScenarioError(errors)
    return Scenario(model, params, measure, sim, outputs, t, maturities, state, tampered, compensator, dict(raw.get("audit", {})), checkpoints)


def load_scenario(path: str | Path) -> Scenario:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScenarioError([f"cannot read scenario: {exc}"]) from None
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"malformed JSON: {exc}"]) from None
    return parse_scenario(raw)


# ---------------------------------------------------------------------------
# Model wiring
# ---------------------------------------------------------------------------


def _custom_curve(sc: Scenario) -> tuple[ForwardCurveModel, CompensatorSpec, ShortRateModel]:
    spec, measure, p = sc.compensator, sc.measure, sc.params
    ac = p["ac_rate"] if p["ac_rate"] is not None else p["r"] + float(spec.intensity(0.0))
    if p["atom_values"] is not None:
        atom_vals = [float(v) for v in p["atom_values"]]
    else:
        atom_vals = []
        for i, (u, w) in enumerate(measure.atoms):
            try:
                atom_vals.append(atom_target_rate(w, spec.lambda_at_atom(0.0, i, u), spec.jump(u)))
            except ValueError:
                atom_vals.append(math.inf)
    if sc.tampered:
        atom_vals = [0.0] * len(measure.atoms)
    if len(atom_vals) != len(measure.atoms):
        raise ScenarioError(["params.atom_values must have one entry per atom"])
    curve = ForwardCurveModel(lambda t, T: ac, lambda t, i: atom_vals[i], measure)
    return curve, spec, ShortRateModel(p["r"])


def _custom_hazard(sc: Scenario, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic accumulated hazard with atom jumps -log(1 - lambda dA)."""
    spec = sc.compensator
    lam = float(spec.intensity(0.0))
    jumps = np.zeros(len(times))
    for i, (u, _) in enumerate(sc.measure.atoms):
        k = int(np.searchsorted(times, u - TIME_EPS))
        if k < len(times) and abs(times[k] - u) <= TIME_EPS:
            jumps[k] += -math.log1p(-spec.jump_mass(u))
    K = lam * (times - times[0]) + np.cumsum(jumps)
    return K, jumps


def _custom_survival(sc: Scenario, t: float, T: float) -> float:
    spec = sc.compensator
    out = math.exp(-float(spec.intensity(0.0)) * (T - t))
    for _, u, _ in sc.measure.atoms_in(t, T):
        out *= 1.0 - spec.jump_mass(u)
    return out


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_price(sc: Scenario) -> dict[str, str]:
    t, status = sc.t, sc.status
    rows = []
    for T in sc.maturities:
        if not status.survived(t):
            rows.append([T, 0.0, "defaulted"])
            continue
        if sc.model == "merton":
            p = sc.params
            price = merton.price(p, float(sc.state["w"]), t, T, status)
            regime = "after U" if t >= p.U else ("maturity before U" if T < p.U else "maturity at or after U")
        elif sc.model == "blackcox":
            p, r = sc.params
            price = blackcox.price(p, float(sc.state["w"]), t, T, status, r)
            regime = "after U" if t >= p.U else ("maturity before U" if T < p.U else "maturity at or after U")
        elif sc.model == "cir_affine":
            p, _ = sc.params
            A, B = cir_closed_form(p, t, T)
            price = math.exp(-A - B * float(sc.state["x"]))
            regime = "no atom ahead" if t >= p.u1 or T < p.u1 else "atom in (t, T]"
        else:
            curve, _, _ = _custom_curve(sc)
            price = bond_price(curve, status, t, T)
            n_atoms = len(sc.measure.atoms_in(t, T))
            regime = f"{n_atoms} atom(s) in (t, T]"
        rows.append([T, price, regime])
    return {"prices.csv": _csv(["T", "price", "regime"], rows)}


def _audit_grid(sc: Scenario, horizon: float) -> Grid:
    step = float(sc.audit.get("grid_step", 0.25))
    return Grid.uniform(sc.t, horizon, step, [u for u in sc.measure.times if sc.t <= u <= horizon])


def cmd_audit(sc: Scenario, tolerance: float = DEFAULT_TOLERANCE) -> tuple[dict[str, str], int]:
    if sc.model == "blackcox":
        raise Unsupported("the Black-Cox model exposes no forward-rate coefficients; use `simulate` with the martingale output")
    mats = sc.audit.get("maturities") or sc.maturities or None
    if sc.model == "merton":
        p = sc.params
        w = float(sc.state["w"])
        state = lambda s: w
        curve = merton.curve_model(p, state, tampered=sc.tampered)
        coeffs, spec, rate = merton.hjm_coefficients(p, state), merton.compensator(p, state), merton.short_rate(p)
        # the atom forecast needs t < U; audit times stop short of U
        horizon = p.T_star
        grid = _audit_grid(sc, horizon)
        grid = Grid(np.array([s for s in grid.points if s < p.U] or [sc.t]))
    elif sc.model == "cir_affine":
        p, _ = sc.params
        x = np.array([float(sc.state["x"])])
        model = affine_hjm_model(CirTermStructure(p), p.affine, p.hazard, lambda s: x, tampered=sc.tampered)
        curve, coeffs, spec, rate = model.curve, model.coeffs, model.spec, model.short_rate
        horizon = max([p.u1 * 2] + list(sc.maturities))
        grid = _audit_grid(sc, horizon)
    else:
        curve, spec, rate = _custom_curve(sc)
        coeffs = ZERO_COEFFICIENTS
        horizon = max([1.0] + list(sc.maturities) + list(sc.measure.times))
        grid = _audit_grid(sc, horizon)
    report = audit(curve, coeffs, spec, rate, grid, tolerance=tolerance, maturities=mats)
    return {"audit.json": report.to_json() + "\n"}, (EXIT_OK if report.certified else EXIT_VIOLATION)


def _comparison(name: str, est: Estimate, exact: float) -> dict:
    return {
        "estimator": name,
        "mc_mean": est.mean,
        "std_error": est.std_error,
        "closed_form": exact,
        "z_score": est.z_score(exact),
        "within_3se": est.within(exact),
    }


def cmd_simulate(sc: Scenario) -> dict[str, str]:
    cfg = sc.sim
    if cfg is None:
        raise ScenarioError(["simulate needs a sim block"])
    t, mats = sc.t, sc.maturities
    rows: list[tuple[str, Estimate]] = []
    comps = []
    summary: dict[str, Any] = {"model": sc.model, "config_hash": cfg.config_hash()}
    mart = None

    if sc.model == "merton":
        p = sc.params
        w = float(sc.state["w"])
        if t >= p.U:
            raise ScenarioError(["merton simulation needs t < U"])

        def payoff(d):
            wu = w + math.sqrt(p.U - t) * d.normal()
            alive = wu > p.K
            return np.stack([math.exp(-p.r * (T - t)) * (alive if T >= p.U else np.ones(d.n)) for T in mats], axis=1)

        ests = mc_estimates(payoff, cfg)
        for T, e in zip(mats, ests):
            name = f"price(T={T!r})"
            rows.append((name, e))
            comps.append(_comparison(name, e, merton.price(p, w, t, T)))
        if "martingale" in sc.outputs:
            T = max(mats) if mats else p.T_star
            cps = sc.checkpoints or sorted({t, 0.5 * (t + p.U), p.U, T})
            mart = martingale_drift_test(merton_rule(p, T, w0=w, start=t, tampered=sc.tampered), cfg, T, cps)
    elif sc.model == "blackcox":
        p, r = sc.params
        w = float(sc.state["w"])
        ests = first_passage_survival(cfg, w, Barrier.from_blackcox(p), mats)
        for T, e in zip(mats, ests):
            name = f"survival(T={T!r})"
            rows.append((name, e))
            comps.append(_comparison(name, e, blackcox.survival_prob(p, w, t, T)))
        if "martingale" in sc.outputs:
            T = max(mats)
            cps = sc.checkpoints or sorted({t, p.U, T})
            mart = martingale_drift_test(blackcox_rule(p, T, cfg.dt, w0=w, start=t, r=r), cfg, T, cps)
    elif sc.model == "cir_affine":
        p, _ = sc.params
        x0 = float(sc.state["x"])
        if t != 0.0:
            raise ScenarioError(["cir_affine simulation starts at t = 0"])
        sample = simulate_cir_defaults(p, p.hazard, cfg, x0, [p.u1] + list(mats))
        atom = (np.abs(sample.tau - p.u1) <= TIME_EPS).astype(float)
        cols = [atom] + [(sample.tau > T).astype(float) for T in mats]
        ests = estimate_columns(np.stack(cols, axis=1), cfg)
        rows.append(("atom_default(u1)", ests[0]))
        # P(tau = u1) = P(tau >= u1) - P(tau > u1)
        ts = CirTermStructure(p)
        A_before, B_before = ts.exponents_before(0.0, 0)
        A_after, B_after = ts.exponents(0.0, p.u1)
        exact_atom = math.exp(-A_before - float(B_before[0]) * x0) - math.exp(-A_after - float(B_after[0]) * x0)
        comps.append(_comparison("atom_default(u1)", ests[0], exact_atom))
        for T, e in zip(mats, ests[1:]):
            name = f"survival(T={T!r})"
            rows.append((name, e))
            A, B = cir_closed_form(p, 0.0, T)
            comps.append(_comparison(name, e, math.exp(-A - B * x0)))
        if "martingale" in sc.outputs:
            T = max(mats)
            cps = sc.checkpoints or sorted({0.0, p.u1, T})
            mart = martingale_drift_test(cir_rule(p, T, x0, cfg.dt), cfg, T, cps)
    else:
        grid = cfg.grid(list(sc.measure.times) + mats)
        times = grid.points
        K, jumps = _custom_hazard(sc, times)

        def payoff(d):
            tau = default_times(times, K, jumps, d.aux().exponential())
            cols = [np.abs(tau - u) <= TIME_EPS for u in sc.measure.times if u > t]
            cols += [tau > T for T in mats]
            return np.stack(cols, axis=1).astype(float)

        ests = mc_estimates(payoff, cfg)
        k = 0
        for u in sc.measure.times:
            if u <= t:
                continue
            name = f"atom_default(u={u!r})"
            rows.append((name, ests[k]))
            # survive every earlier atom and the intensity up to u, then default at u
            mass = sc.compensator.jump_mass(u)
            exact = _custom_survival(sc, t, u) / (1.0 - mass) * mass
            comps.append(_comparison(name, ests[k], exact))
            k += 1
        for T in mats:
            name = f"survival(T={T!r})"
            rows.append((name, ests[k]))
            comps.append(_comparison(name, ests[k], _custom_survival(sc, t, T)))
            k += 1

    summary["comparisons"] = comps
    if mart is not None:
        summary["martingale"] = {
            "passed": mart.passed,
            "verdict": "PASS" if mart.passed else "FAIL",
            "increments": [
                {"t1": a, "t2": b, "mean": m, "std_error": s, "n": n, "within_3se": ok} for a, b, m, s, n, ok in mart.rows()
            ],
        }
        for a, b, m, s, n, _ in mart.rows():
            rows.append((f"martingale_increment({a!r},{b!r})", Estimate(m, s, n)))
    return {"estimates.csv": estimates_csv(rows, cfg), "simulate.json": _json(summary)}


def cmd_riccati(sc: Scenario) -> dict[str, str]:
    if sc.model != "cir_affine":
        raise Unsupported("riccati needs a cir_affine scenario")
    p, step = sc.params
    rows = []
    max_diff = 0.0
    for T in sc.maturities:
        sol = solve_riccati(p.affine, p.hazard, T, step=step)
        for t, A, B, pre in sol.rows():
            Ac, Bc = cir_closed_form(p, t, T, left=bool(pre))
            diff = max(abs(A - Ac), abs(B - Bc))
            max_diff = max(max_diff, diff)
            rows.append([T, t, A, B, pre, Ac, Bc])
    table = _csv(["T", "t", "A", "B_1", "is_pre_atom_limit", "A_closed_form", "B_1_closed_form"], rows)
    summary = {"max_abs_diff_closed_form": max_diff, "step": step, "maturities": sc.maturities}
    return {"riccati.csv": table, "riccati.json": _json(summary)}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _emit(files: dict[str, str], out: str | None) -> None:
    if out is None:
        for name in sorted(files):
            sys.stdout.write(files[name])
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(files.items()):
        (d / name).write_text(text, encoding="utf-8", newline="\n")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gicredit", description="Credit term structures with risky times.")
    ap.add_argument("command", choices=["price", "audit", "simulate", "riccati"])
    ap.add_argument("--scenario", required=True, help="scenario JSON file")
    ap.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE, help="audit tolerance")
    ap.add_argument("--out", help="output directory (default: stdout)")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = load_scenario(args.scenario)
        code = EXIT_OK
        if args.command == "price":
            files = cmd_price(sc)
        elif args.command == "audit":
            files, code = cmd_audit(sc, args.tolerance)
        elif args.command == "simulate":
            files = cmd_simulate(sc)
        else:
            files = cmd_riccati(sc)
    except ScenarioError as exc:
        sys.stderr.write(_json({"errors": exc.errors}))
        return EXIT_INVALID
    except Unsupported as exc:
        sys.stderr.write(_json({"errors": [str(exc)]}))
        return EXIT_UNSUPPORTED
    except ValueError as exc:
        sys.stderr.write(_json({"errors": [str(exc)]}))
        return EXIT_INVALID
    _emit(files, args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
