"""Convergence sweeps over (eps, dt) and log-log slope fits."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..core import NonFiniteError
from ..expkit import integrate, scheme_for_order
from ..micromacro import solve_micromacro
from .cases import Case, make_case
from .reference import Reference, compute_reference

log = logging.getLogger(__name__)

CSV_HEADER = ("problem", "mode", "n", "q", "eps", "dt", "err_abs", "err_mod", "err_H1",
              "err_macro", "err_micro", "wallclock")

DEFAULT_EPS = {
    "toy": [2.0**-k for k in range(3, 16)],
    "telegraph": [2.0**-k for k in range(0, 19)],
    "conservation": [2.0**-k for k in range(0, 19)],
    "zero": [2.0**-k for k in range(0, 10)],
}
DEFAULT_DT = {
    "toy": [2.0**-k for k in range(4, 11)],
    "telegraph": [0.25 * 2.0**-k for k in range(2, 8)],
    "conservation": [0.25 * 2.0**-k for k in range(3, 9)],
    "zero": [2.0**-k for k in range(2, 6)],
}


@dataclass
class SweepConfig:
    """One convergence study: a problem block, a method and the (eps, dt) grid."""

    problem: dict = field(default_factory=lambda: {"problem": "toy"})
    n: int = 1
    q: int = 2
    eps: list | None = None
    dt: list | None = None
    T: float | None = None
    mode: str = "micromacro"
    norms: tuple = ("err_abs", "err_mod", "err_H1")
    seed: int = 0
    exact_inverse: bool = False
    use_exact_macro: bool = True
    out_points: int | None = None
    workers: int = 1
    timing: bool = True

    def __post_init__(self):
        name = self.problem.get("problem")
        if self.T is not None:
            self.problem = {**self.problem, "T": self.T}
        if self.eps is None:
            self.eps = list(DEFAULT_EPS.get(name, DEFAULT_EPS["toy"]))
        if self.dt is None:
            self.dt = list(DEFAULT_DT.get(name, DEFAULT_DT["toy"]))
        self.eps = [float(e) for e in self.eps]
        self.dt = sorted((float(d) for d in self.dt), reverse=True)
        if not self.eps or not self.dt:
            raise ValueError("eps and dt lists must be nonempty")
        if any(e <= 0 for e in self.eps) or any(d <= 0 for d in self.dt):
            raise ValueError("eps and dt must be positive")
        if self.mode not in ("direct", "micromacro"):
            raise ValueError("mode must be 'direct' or 'micromacro'")
        self.norms = tuple(self.norms)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["norms"] = list(self.norms)
        return out

    def case(self) -> Case:
        c = make_case(self.problem)
        if min(self.dt) * 4 > c.T:
            raise ValueError("need dt_min * 4 <= T")
        return c


@dataclass
class ErrorRecord:
    problem: str
    mode: str
    n: int
    q: int
    eps: float
    dt: float
    err_abs: float
    err_mod: float
    err_H1: float
    err_macro: float
    err_micro: float
    wallclock: float

    def row(self):
        return [getattr(self, k) for k in CSV_HEADER]


@dataclass
class SweepResult:
    config: SweepConfig
    records: list
    failures: list
    reference: Reference
    extras: dict = field(default_factory=dict)

    def by_dt(self, norm="err_mod"):
        """``{dt: array of per-eps errors}`` in config eps order."""
        out = {}
        for r in self.records:
            out.setdefault(r.dt, []).append(getattr(r, norm))
        return {dt: np.array(v) for dt, v in sorted(out.items())}

    def uniform(self, norm="err_mod"):
        """``(dts, sup-over-eps errors)`` sorted by dt."""
        d = self.by_dt(norm)
        dts = np.array(sorted(d))
        return dts, np.array([np.max(d[t]) for t in dts])

    def per_eps(self, norm="err_mod"):
        """``{eps: (dts, errors)}``."""
        out = {}
        for r in self.records:
            out.setdefault(r.eps, []).append((r.dt, getattr(r, norm)))
        return {e: tuple(np.array(x) for x in zip(*sorted(v))) for e, v in out.items()}


def output_points(cfg: SweepConfig, T: float) -> int:
    """Number of output intervals: the coarsest dt's step count unless set."""
    if cfg.out_points:
        return int(cfg.out_points)
    return max(1, int(round(T / max(cfg.dt))))


def _check_grid(T, points, dt):
    m = (T / points) / dt
    if abs(m - round(m)) > 1e-9:
        raise ValueError(f"dt={dt:g} does not divide the output spacing {T / points:g}")


def _sup(errs):
    """Max over the output grid (axis 0)."""
    return np.max(errs, axis=0)


def run_cell(cfg: SweepConfig, case: Case, batch, ref: Reference, dt: float) -> dict:
    """Integrate every eps at step ``dt``; per-eps max-over-grid errors."""
    scheme = scheme_for_order(cfg.q)
    t_out = ref.t
    _check_grid(case.T, t_out.size - 1, dt)
    start = time.perf_counter()
    macro = micro = None
    if cfg.mode == "direct":
        u = integrate(scheme, batch.problem, batch.eps, batch.u0, t_out, max_dt=dt)
    else:
        dec = batch.decomposition(cfg.n)
        sol = solve_micromacro(dec, batch.problem, scheme, batch.eps, batch.u0, t_out, max_dt=dt,
                               use_exact_macro=cfg.use_exact_macro, exact_inverse=cfg.exact_inverse)
        u = sol.u
        macro = u - sol.w
        micro = np.stack([case.micro_size(batch, w) for w in sol.w])
    wall = time.perf_counter() - start
    per_t = [batch.errors(u[i], ref.u[i]) for i in range(t_out.size)]
    out = {k: _sup(np.stack([p[k] for p in per_t])) for k in per_t[0]}
    if macro is not None:
        out["err_macro"] = _sup(np.stack([batch.errors(macro[i], ref.u[i])["err_abs"]
                                          for i in range(t_out.size)]))
        out["err_micro"] = _sup(micro)
    else:
        zero = np.zeros(len(cfg.eps))
        out["err_macro"], out["err_micro"] = zero, zero
    out["wallclock"] = wall / len(cfg.eps) if cfg.timing else 0.0
    return out


def run_sweep(cfg: SweepConfig, reference: Reference | None = None) -> SweepResult:
    """All (eps, dt) cells of ``cfg``; failed cells are logged and listed, not raised."""
    case = cfg.case()
    eps = np.array(cfg.eps)
    batch = case.batch(eps)
    ref = reference or compute_reference(case, eps, output_points(cfg, case.T))
    records, failures = [], []

    def job(dt):
        try:
            return dt, run_cell(cfg, case, batch, ref, dt), None
        except (NonFiniteError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("cell dt=%g failed: %s", dt, exc)
            return dt, None, str(exc)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(job, cfg.dt))
    else:
        results = [job(dt) for dt in cfg.dt]

    name = case.name
    for dt, res, err in results:
        if res is None:
            failures.extend({"dt": dt, "eps": e, "error": err} for e in cfg.eps)
            continue
        for i, e in enumerate(cfg.eps):
            rec = ErrorRecord(name, cfg.mode, cfg.n, cfg.q, e, dt,
                              *(float(res[k][i]) for k in ("err_abs", "err_mod", "err_H1")),
                              float(res["err_macro"][i]), float(res["err_micro"][i]),
                              float(res["wallclock"]))
            records.append(rec)
    records.sort(key=lambda r: (-r.dt, -r.eps))
    return SweepResult(cfg, records, failures, ref)


@dataclass
class Fit:
    slope: float
    intercept: float
    residual: float

    def to_dict(self):
        return asdict(self)


def fit_order(dts, errs) -> Fit:
    """Least squares on ``(log dt, log err)``; residual is the RMS misfit in log space."""
    dts = np.asarray(dts, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if dts.size < 3:
        raise ValueError("need at least 3 dt values for a fit")
    if np.any(errs <= 0) or not np.all(np.isfinite(errs)):
        raise ValueError("errors must be positive and finite")
    x, y = np.log(dts), np.log(errs)
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ [slope, intercept] - y) ** 2)))
    return Fit(float(slope), float(intercept), resid)


def write_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.row()])


def write_config(cfg: SweepConfig, path, extra: dict | None = None):
    payload = {"config": cfg.to_dict(), **(extra or {})}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
