"""Reference trajectories on an output grid.

* toy: ERK3 on the order-2 micro-macro system, step halved until two
  successive references agree to ``tol`` in the modified sup norm;
* telegraph: exact per-mode 2x2 propagator;
* conservation: implicit Radau IIA (scipy) on the original stiff system at
  two tolerances; their difference in the modified H1 norm is the estimate;
* zero field: closed form.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import solve_ivp

from ..core import modified_norm
from ..expkit import ERK3
from ..micromacro import solve_micromacro
from ..problems import telegraph as tg
from .cases import Batch, Case

log = logging.getLogger(__name__)


class ReferenceError(RuntimeError):
    """The refinement loop did not reach its tolerance."""


@dataclass
class Reference:
    t: np.ndarray
    u: np.ndarray          # (len(t),) + batch_shape + (d,)
    achieved: float        # last successive-difference estimate (0 for closed forms)
    dt: float | None = None
    method: str = "exact"


def output_grid(T: float, points: int) -> np.ndarray:
    if T < 0:
        raise ValueError("final time must be nonnegative")
    if T == 0:
        return np.zeros(1)
    return np.linspace(0.0, T, points + 1)


def _mm_solver(batch: Batch, n: int, t_out):
    dec = batch.decomposition(n)

    def solve(dt):
        return solve_micromacro(dec, batch.problem, ERK3, batch.eps, batch.u0, t_out, max_dt=dt).u

    return solve


def refine(solve, dt0: float, tol: float, size, max_halvings: int = 6, accept: float | None = None,
           richardson: bool = True):
    """Halve the step until the estimated error of the finest solution is below ``tol``.

    Without ``richardson`` the estimate is the plain successive difference.
    Otherwise it is Richardson's ``|u_h - u_2h| / (2^p - 1)`` with the order
    ``p`` observed per batch entry from the last two differences (clipped to
    [1, 4]; ``p = 1`` before two differences exist).  When the halving budget
    runs out the result is still returned if the estimate is below ``accept``.
    Returns ``(u, estimate, dt)``.
    """
    dt = dt0
    prev = solve(dt)
    prev_size = None
    est = np.inf
    for _ in range(max_halvings):
        dt /= 2
        cur = solve(dt)
        dsize = size(cur - prev)
        if not richardson or prev_size is None:
            p = np.ones_like(dsize)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                p = np.clip(np.nan_to_num(np.log2(prev_size / dsize), nan=1.0), 1.0, 4.0)
        est = float(np.max(dsize / (2.0**p - 1)))
        log.debug("reference dt=%g estimate=%.3e", dt, est)
        if est < tol:
            return cur, est, dt
        prev, prev_size = cur, dsize
    if accept is not None and est < accept:
        log.warning("reference stopped at %.3e (target %g, accepted below %g)", est, tol, accept)
        return cur, est, dt
    raise ReferenceError(f"reference did not reach {tol:g} (estimate {est:.3e} at dt={dt:g})")


_CACHE: dict = {}


def clear_cache():
    _CACHE.clear()


def compute_reference(case: Case, eps, points: int = 16, tol: float | None = None,
                      dt0: float | None = None, max_halvings: int | None = None,
                      accept: float | None = None, cache: bool = True) -> Reference:
    """Reference solution of ``case`` for every eps on ``points + 1`` uniform times.

    Results are memoised in-process on the problem block and arguments.
    """
    key = (case.name, json.dumps(case.block, sort_keys=True, default=str),
           tuple(np.asarray(eps, dtype=float).ravel()), points, tol, dt0, max_halvings, accept)
    if cache and key in _CACHE:
        ref = _CACHE[key]
        return replace(ref, u=ref.u.copy(), t=ref.t.copy())
    ref = _compute(case, eps, points, tol, dt0, max_halvings, accept)
    if cache:
        _CACHE[key] = ref
        ref = replace(ref, u=ref.u.copy(), t=ref.t.copy())
    return ref


def _compute(case, eps, points, tol, dt0, max_halvings, accept) -> Reference:
    batch = case.batch(eps)
    t_out = output_grid(case.T, points)
    if case.T == 0:
        return Reference(t_out, batch.u0[None].copy(), 0.0)
    name = case.name
    lam = batch.problem.lam_array

    if name == "zero":
        u = np.stack([case.exact(eps, t) for t in t_out])
        return Reference(t_out, u, 0.0)
    if name == "telegraph":
        ks = np.broadcast_to(case.field.ks.astype(float), batch.eps.shape)
        u = np.stack([tg.exact_propagate(ks, case.alpha, batch.eps, batch.u0, t) for t in t_out])
        return Reference(t_out, u, 0.0)

    def size(diff):
        return modified_norm(batch.eps, lam, diff)

    if name == "toy":
        tol = 1e-11 if tol is None else tol
        dt0 = dt0 or 2.0**-11
        u, achieved, dt = refine(_mm_solver(batch, 2, t_out), dt0, tol, size, max_halvings or 6, accept,
                                 richardson=False)
        return Reference(t_out, u, achieved, dt, "ERK3 micro-macro n=2, halving")
    if name == "conservation":
        tol = 1e-12 if tol is None else tol
        return _radau_reference(case, batch, t_out, tol, accept)
    raise ValueError(f"no reference method for {name!r}")


RADAU_RTOL = (1e-13, 2.3e-14)  # the finer one sits just above scipy's floor


def _radau_reference(case, batch, t_out, tol, accept) -> Reference:
    """Radau IIA per eps at two tolerances; the finer solve is the reference."""
    law, problem = case.law, batch.problem
    lam = problem.lam_array
    if np.max(np.abs(np.imag(batch.u0))) > 0:
        raise ValueError("the implicit reference expects real data")
    starts = np.real(batch.u0).reshape(-1, batch.u0.shape[-1])
    out = np.empty((t_out.size,) + batch.u0.shape, dtype=complex)
    est = 0.0
    for i, eps in enumerate(np.ravel(batch.eps)):
        decay = lam / eps
        u0 = starts[i]

        def rhs(t, u):
            return -decay * u + np.real(problem.f(u + 0j))

        def jac(t, u):
            return law.jacobian(u) - np.diag(decay)

        sols = []
        for rtol in RADAU_RTOL:
            sol = solve_ivp(rhs, (0.0, case.T), u0, method="Radau", rtol=rtol, atol=rtol * 1e-2,
                            jac=jac, t_eval=t_out)
            if not sol.success:
                raise ReferenceError(f"Radau failed at eps={eps:g}: {sol.message}")
            sols.append(sol.y.T)
        diff = float(np.max(law.modified_h1(sols[0] - sols[1], eps)))
        log.debug("radau reference eps=%g estimate=%.3e", eps, diff)
        est = max(est, diff)
        out[:, i] = sols[1]
    if est >= tol:
        if accept is None or est >= accept:
            raise ReferenceError(f"reference did not reach {tol:g} (estimate {est:.3e})")
        log.warning("reference stopped at %.3e (target %g, accepted below %g)", est, tol, accept)
    return Reference(t_out, out, est, None, "Radau IIA on the stiff system, two tolerances")
