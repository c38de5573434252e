"""Command line entry point ``stiffscale``.

    stiffscale solve --config run.json
    stiffscale sweep --config sweep.json --out results/
    stiffscale experiment uniform --config cfg.json --out results/
    stiffscale derive --problem toy --order 2 [--json]
    stiffscale check [--suite defect ...]
    stiffscale reference --problem toy --eps 0.125 0.0625 --out ref.npz

Exit status is 0 iff every enabled pass/fail gate passes.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from ..autoderive import derive
from ..expkit import integrate, scheme_for_order
from ..micromacro import solve_micromacro
from ..problems import toy
from . import checks
from .cases import PROBLEMS, make_case
from .experiments import EXPERIMENTS, at_least, at_most, experiment, uniform_fit
from .reference import compute_reference
from .sweep import SweepConfig, run_sweep, write_config, write_csv

log = logging.getLogger("stiffscale")


def _load(path):
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _print_gates(gates, stream=None):
    stream = stream or sys.stdout
    for g in gates:
        mark = "PASS" if g.passed else "FAIL"
        print(f"{mark}  {g.name}: {g.value:.4g} (expected {g.expected})", file=stream)
    return all(g.passed for g in gates)


def _complex_json(a):
    a = np.asarray(a)
    return {"re": np.real(a).tolist(), "im": np.imag(a).tolist()}


def cmd_solve(args) -> int:
    raw = _load(args.config)
    cfg = SweepConfig.from_dict(raw)
    case = cfg.case()
    eps = np.array(cfg.eps)
    batch = case.batch(eps)
    dt = min(cfg.dt)
    points = max(1, int(round(case.T / dt)))
    t = np.linspace(0.0, case.T, points + 1)
    scheme = scheme_for_order(cfg.q)
    out = {"problem": case.name, "mode": cfg.mode, "eps": cfg.eps, "dt": dt, "T": case.T}
    if cfg.mode == "direct":
        u = integrate(scheme, batch.problem, batch.eps, batch.u0, t)
    else:
        sol = solve_micromacro(batch.decomposition(cfg.n), batch.problem, scheme, batch.eps, batch.u0, t,
                               use_exact_macro=cfg.use_exact_macro, exact_inverse=cfg.exact_inverse)
        u = sol.u
        out["sup_micro"] = np.max([case.micro_size(batch, w) for w in sol.w], axis=0).tolist()
    out["u_final"] = _complex_json(u[-1])
    if case.name == "conservation":
        out["mass_drift"] = float(np.abs(case.law.mass(u) - case.law.mass(batch.u0)).max())
    text = json.dumps(out, indent=1)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)
    return 0


def cmd_sweep(args) -> int:
    raw = _load(args.config)
    gates_cfg = raw.pop("gates", {})
    cfg = SweepConfig.from_dict(raw)
    res = run_sweep(cfg)
    norm = gates_cfg.get("norm", "err_H1" if cfg.problem["problem"] in ("telegraph", "conservation")
                         else "err_mod")
    fit, dts, sup = uniform_fit(res, norm)
    gates = [at_most("failed cells", len(res.failures), 0)]
    if "slope_min" in gates_cfg:
        gates.append(at_least("uniform slope", fit.slope, gates_cfg["slope_min"]))
    if "slope_max" in gates_cfg:
        gates.append(at_most("uniform slope", fit.slope, gates_cfg["slope_max"]))
    summary = {"norm": norm, "fit": fit.to_dict(), "dt": dts.tolist(), "sup_error": sup.tolist(),
               "reference": {"method": res.reference.method, "estimate": res.reference.achieved},
               "gates": [g.__dict__ for g in gates], "failures": res.failures}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_csv(res.records, os.path.join(args.out, "sweep.csv"))
        write_config(cfg, os.path.join(args.out, "config.json"), {"gates": gates_cfg})
        with open(os.path.join(args.out, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
    print(f"slope {fit.slope:.3f} (residual {fit.residual:.3g}) in {norm}")
    return 0 if _print_gates(gates) else 1


def cmd_experiment(args) -> int:
    rep = experiment(args.name, _load(args.config) or None, args.out)
    print(f"experiment {rep.name}")
    return 0 if _print_gates(rep.gates) else 1


def cmd_derive(args) -> int:
    if args.problem != "toy":
        print("symbolic derivation is available for the polynomial toy field only", file=sys.stderr)
        return 2
    if args.g_order is None:
        d = toy.toy_derivation(args.order)
    else:
        d = derive(toy.toy_poly_field(), toy.LAM, args.order, args.g_order)
    if args.json:
        print(d.to_json())
        return 0
    names = ["x1", "x2", "z"]
    maps = d.decomposition.maps
    print(f"order {d.n}, lambda = {list(d.lam)}")
    print("Omega_tau(u):")
    print(maps.shifted_phi.pretty(names, var="tau", dissipative=True))
    print("F(u):")
    print(maps.G.scale(1j).pretty(names))
    print("eta_tau(u):")
    print(maps.shifted_delta.scale(1j).pretty(names, var="tau", dissipative=True))
    return 0


def cmd_check(args) -> int:
    names = args.suite or list(checks.SUITES)
    unknown = set(names) - set(checks.SUITES)
    if unknown:
        print(f"unknown suites {sorted(unknown)}", file=sys.stderr)
        return 2
    return 0 if _print_gates(checks.run_checks(names)) else 1


def cmd_reference(args) -> int:
    block = {"problem": args.problem, **_load(args.config)}
    if args.T is not None:
        block["T"] = args.T
    case = make_case(block)
    eps = np.array(args.eps, dtype=float)
    ref = compute_reference(case, eps, args.points)
    print(f"{case.name}: {ref.method}, estimate {ref.achieved:.3g}, dt {ref.dt}")
    if args.out:
        np.savez(args.out, t=ref.t, u=ref.u, eps=eps, estimate=ref.achieved)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stiffscale", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="integrate one configuration")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("sweep", help="(eps, dt) convergence sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("experiment", help="named study with gates")
    s.add_argument("name", choices=EXPERIMENTS)
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("derive", help="print autoderived maps")
    s.add_argument("--problem", default="toy")
    s.add_argument("--order", type=int, default=1)
    s.add_argument("--g-order", type=int)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_derive)

    s = sub.add_parser("check", help="run invariant suites")
    s.add_argument("--suite", action="append", help=f"one of {sorted(checks.SUITES)}")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("reference", help="compute a reference trajectory")
    s.add_argument("--problem", choices=PROBLEMS, required=True)
    s.add_argument("--eps", type=float, nargs="+", required=True)
    s.add_argument("--T", type=float)
    s.add_argument("--points", type=int, default=16)
    s.add_argument("--config", help="JSON problem block")
    s.add_argument("--out")
    s.set_defaults(func=cmd_reference)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
