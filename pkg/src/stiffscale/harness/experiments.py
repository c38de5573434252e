"""The four convergence studies with pass/fail gates and report files.

``order_reduction``  direct ERK solve of the toy problem: uniform slope drops to ~1.
``uniform``          micro-macro sweep; slope of the sup-over-eps error.
``micro_scaling``    sup_t |w|, |w(0)| and sup_t |E| against eps for several orders.
``near_equilibrium`` well-prepared data; order 3 from an order-1 decomposition.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from ..expkit import scheme_for_order
from ..micromacro import e_diagnostic, init_conditions, solve_micromacro
from .cases import make_case
from .sweep import Fit, SweepConfig, SweepResult, fit_order, run_sweep, write_config, write_csv

log = logging.getLogger(__name__)

EXPERIMENTS = ("order_reduction", "uniform", "micro_scaling", "near_equilibrium")

SLOPE_BAND = 0.3
WINDOW = 4  # finest dt values used for per-eps slopes


@dataclass
class Gate:
    name: str
    value: float
    expected: str
    passed: bool


def band(name, value, target, tol=SLOPE_BAND) -> Gate:
    return Gate(name, float(value), f"{target} +/- {tol}", bool(abs(value - target) <= tol))


def at_least(name, value, lo) -> Gate:
    return Gate(name, float(value), f">= {lo}", bool(value >= lo))


def at_most(name, value, hi) -> Gate:
    return Gate(name, float(value), f"<= {hi}", bool(value <= hi))


@dataclass
class Report:
    name: str
    gates: list
    summary: dict
    results: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.gates)

    def to_dict(self):
        return {"experiment": self.name, "passed": self.passed,
                "gates": [asdict(g) for g in self.gates], **self.summary}


def _norm_for(problem: str) -> str:
    return "err_H1" if problem in ("telegraph", "conservation") else "err_mod"


def per_eps_slopes(res: SweepResult, norm: str, window: int = WINDOW) -> dict:
    out = {}
    for e, (dts, errs) in res.per_eps(norm).items():
        dts, errs = dts[:window], errs[:window]
        if np.all(errs > 0):
            out[e] = fit_order(dts, errs).slope
    return out


def uniform_fit(res: SweepResult, norm: str):
    """Slope of the sup-over-eps error; NaN when some error is zero or missing."""
    dts, sup = res.uniform(norm)
    if dts.size < 3 or np.any(~(sup > 0)) or not np.all(np.isfinite(sup)):
        log.warning("no slope fit for %s: errors must be positive and finite", norm)
        return Fit(np.nan, np.nan, np.nan), dts, sup
    return fit_order(dts, sup), dts, sup


def _sweep_summary(res: SweepResult, norm: str) -> dict:
    fit, dts, sup = uniform_fit(res, norm)
    return {
        "norm": norm,
        "fit": fit.to_dict(),
        "dt": dts.tolist(),
        "sup_error": sup.tolist(),
        "per_eps_slope": {repr(k): v for k, v in per_eps_slopes(res, norm).items()},
        "reference": {"method": res.reference.method, "estimate": res.reference.achieved,
                      "dt": res.reference.dt},
        "failures": res.failures,
    }


def _cfg(base: dict, overrides: dict | None) -> SweepConfig:
    d = dict(base)
    for k, v in (overrides or {}).items():
        if k == "problem":
            d["problem"] = {**d.get("problem", {}), **v}
        else:
            d[k] = v
    return SweepConfig.from_dict(d)


def order_reduction(config: dict | None = None) -> Report:
    cfg = _cfg({"problem": {"problem": "toy"}, "mode": "direct", "n": 0, "q": 2}, config)
    norm = _norm_for(cfg.problem["problem"])
    res = run_sweep(cfg)
    fit, _, _ = uniform_fit(res, norm)
    one = run_sweep(_cfg(cfg.to_dict(), {"eps": [1.0]}))
    fit1, _, _ = uniform_fit(one, norm)
    gates = [at_most("uniform slope (direct)", fit.slope, 1.3),
             at_least("slope at eps = 1", fit1.slope, 1.7)]
    summary = {"sweep": _sweep_summary(res, norm), "eps_one": _sweep_summary(one, norm)}
    return Report("order_reduction", gates, summary, [res, one])


def _expected_order(cfg: SweepConfig) -> int:
    return min(cfg.q, cfg.n + 1)


def uniform(config: dict | None = None) -> Report:
    problem = (config or {}).get("problem", {}).get("problem", "toy")
    base = {"problem": {"problem": problem}, "n": 1, "q": 2 if problem == "toy" else 3}
    cfg = _cfg(base, config)
    norm = _norm_for(problem)
    res = run_sweep(cfg)
    fit, dts, sup = uniform_fit(res, norm)
    p = _expected_order(cfg)
    summary = {"sweep": _sweep_summary(res, norm), "expected_order": p}
    if problem == "toy":
        slopes = per_eps_slopes(res, norm)
        gates = [band("uniform slope", fit.slope, p),
                 at_least("min per-eps slope", min(slopes.values()), p - SLOPE_BAND)]
    else:
        errs = np.array([getattr(r, norm) for r in res.records])
        steps = np.array([r.dt for r in res.records])
        C = float(np.max(errs / steps**p))
        summary["envelope_C"] = C
        gates = [at_least("uniform slope", fit.slope, p - SLOPE_BAND)]
    if problem == "telegraph":
        summary["aliasing_error"] = make_case(cfg.problem).field.aliasing_error
    if problem == "conservation":
        gates.append(_mass_gate(cfg))
        summary["max_wave_speed"] = _wave_speed(cfg, res)
    return Report("uniform", gates, summary, [res])


def _mass_gate(cfg: SweepConfig) -> Gate:
    case = make_case(cfg.problem)
    batch = case.batch(np.array(cfg.eps))
    dt = min(cfg.dt)
    t = np.linspace(0, case.T, int(round(case.T / max(cfg.dt))) + 1)
    sol = solve_micromacro(batch.decomposition(cfg.n), batch.problem, scheme_for_order(cfg.q),
                           batch.eps, batch.u0, t, max_dt=dt)
    drift = np.abs(case.law.mass(sol.u) - case.law.mass(batch.u0)).max()
    return at_most("mass drift", drift, 1e-10)


def _wave_speed(cfg, res):
    case = make_case(cfg.problem)
    return max(case.law.max_wave_speed(u) for u in res.reference.u)


def scaling_run(case, eps, n: int, q: int = 3, dt: float = 2.0**-9):
    """sup_t |w|, |w(0)| and sup_t |E| per eps along a micro-macro solve."""
    batch = case.batch(np.asarray(eps, dtype=float))
    dec = batch.decomposition(n)
    t = np.linspace(0.0, case.T, int(round(case.T / dt)) + 1)
    w0 = init_conditions(dec, batch.u0, batch.eps).w
    sol = solve_micromacro(dec, batch.problem, scheme_for_order(q), batch.eps, batch.u0, t,
                           use_exact_macro=False)
    w_sup = np.max([case.micro_size(batch, w) for w in sol.w], axis=0)
    E = [e_diagnostic(dec, batch.problem, batch.eps, ti, sol.v[i], sol.w[i]) for i, ti in enumerate(t)]
    E_sup = np.max([case.micro_size(batch, e) for e in E], axis=0)
    return w_sup, case.micro_size(batch, w0), E_sup


def micro_scaling(config: dict | None = None) -> Report:
    config = dict(config or {})
    block = {"problem": "toy", **config.get("problem", {})}
    case = make_case(block)
    eps = np.array(config.get("eps", [2.0**-k for k in range(3, 16)]))
    orders = config.get("orders", [0, 1, 2])
    dt = config.get("dt", 2.0**-9)
    gates, summary, rows = [], {"eps": eps.tolist()}, []
    for n in orders:
        w_sup, w0, E_sup = scaling_run(case, eps, n, dt=dt)
        s = fit_order(eps, w_sup).slope
        gates.append(band(f"sup|w| slope n={n}", s, n + 1))
        entry = {"sup_w": w_sup.tolist(), "sup_w_slope": s, "w0": w0.tolist(), "sup_E": E_sup.tolist()}
        if n >= 1:
            s0 = fit_order(eps, w0).slope
            gates.append(band(f"|w(0)| slope n={n}", s0, n + 1, 0.2))
            sE = fit_order(eps, E_sup).slope
            gates.append(band(f"sup|E| slope n={n}", sE, n))
            entry.update(w0_slope=s0, sup_E_slope=sE)
        summary[f"n{n}"] = entry
        rows.extend((n, e, a, b, c) for e, a, b, c in zip(eps, w_sup, w0, E_sup))
    summary["rows"] = [list(map(float, r)) for r in rows]
    return Report("micro_scaling", gates, summary)


def near_equilibrium(config: dict | None = None) -> Report:
    problem = (config or {}).get("problem", {}).get("problem", "toy")
    prep = {"toy": {"z0": 0.0}, "telegraph": {"j0": "equilibrium"}}
    if problem not in prep:
        raise ValueError("near_equilibrium is defined for toy and telegraph")
    cfg = _cfg({"problem": {"problem": problem, **prep[problem]}, "n": 1, "q": 3}, config)
    norm = "err_abs" if problem == "toy" else "err_H1"
    res = run_sweep(cfg)
    fit, _, _ = uniform_fit(res, norm)
    gates = [band("uniform slope (well-prepared)", fit.slope, 3)]
    return Report("near_equilibrium", gates, {"sweep": _sweep_summary(res, norm)}, [res])


_RUNNERS = {"order_reduction": order_reduction, "uniform": uniform,
            "micro_scaling": micro_scaling, "near_equilibrium": near_equilibrium}


def experiment(name: str, config: dict | None = None, out_dir: str | None = None) -> Report:
    """Run one named study; write CSV, summary JSON and config when ``out_dir`` is given."""
    if name not in _RUNNERS:
        raise ValueError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    report = _RUNNERS[name](config)
    if out_dir:
        write_report(report, out_dir, config)
    return report


def write_report(report: Report, out_dir: str, config: dict | None = None):
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(out_dir, report.name)
    records = [r for res in report.results for r in res.records]
    if records:
        write_csv(records, stem + ".csv")
    with open(stem + "_summary.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True, default=float)
    if report.results:
        write_config(report.results[0].config, stem + "_config.json", {"overrides": config or {}})
    else:
        with open(stem + "_config.json", "w") as fh:
            json.dump({"overrides": config or {}}, fh, indent=1, sort_keys=True)
