"""phi-functions and explicit exponential Runge-Kutta steppers.

All stiff operators here are diagonal, so every matrix function reduces to an
entrywise scalar evaluation.  A scheme solves ``y' = -decay * y + N(t, y)`` with
stages

    Y_i = exp(-c_i h decay) y + h sum_j a_ij(-h decay) N(t + c_j h, Y_j)
    y1  = exp(-h decay) y + h sum_i b_i(-h decay) N(t + c_i h, Y_i)

where each ``a_ij``/``b_i`` is a linear combination of ``phi_k(s z)``.

Tableaus shipped:

* ``EXP_EULER``: b_1 = phi_1.
* ``ERK2`` (exponential Heun, c_2 = 1): a_21 = phi_1, b_1 = phi_1 - phi_2, b_2 = phi_2.
* ``ERK3`` (Heun-type, c = 0, 1/3, 2/3): a_21 = phi_1(z/3)/3,
  a_31 = 2/3 phi_1(2z/3) - 4/3 phi_2(2z/3), a_32 = 4/3 phi_2(2z/3),
  b_1 = phi_1 - 3/2 phi_2, b_2 = 0, b_3 = 3/2 phi_2.
  This satisfies the stiff order conditions up to order three.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import Callable

import numpy as np

from .core import NonFiniteError, SemilinearProblem, as_state

# The recurrence loses ~|z|^-k digits near 0; at |z| = 1 both branches are
# accurate to ~1e-15 for k <= 3 (a 0.1 seam costs 2e-13 for phi_3).
TAYLOR_CUTOFF = 1.0
TAYLOR_TERMS = 20


class StepFailure(NonFiniteError):
    """A stage or step produced non-finite values."""

    def __init__(self, message, stage=None, time=None):
        super().__init__(message)
        self.stage = stage
        self.time = time


@dataclass(frozen=True)
class PhiEvaluator:
    taylor_cutoff: float = TAYLOR_CUTOFF
    taylor_terms: int = TAYLOR_TERMS

    def __call__(self, k: int, z):
        return phi(k, z, self.taylor_cutoff, self.taylor_terms)


def _phi_taylor(k, z, terms):
    # Horner on sum_m z^m / (m + k)!
    acc = np.full_like(z, 1.0 / factorial(terms - 1 + k))
    for m in range(terms - 2, -1, -1):
        acc = acc * z + 1.0 / factorial(m + k)
    return acc


def _phi_recurrence(k, z):
    if k == 0:
        return np.exp(z)
    val = np.expm1(z) / z
    for j in range(1, k):
        val = (val - 1.0 / factorial(j)) / z
    return val


def phi(k: int, z, taylor_cutoff: float = TAYLOR_CUTOFF, taylor_terms: int = TAYLOR_TERMS):
    """``phi_k(z)`` for ``k`` in 0..3, evaluated entrywise."""
    if not 0 <= k <= 3:
        raise ValueError("phi is provided for k = 0..3")
    scalar = np.ndim(z) == 0
    z = np.asarray(z, dtype=complex if np.iscomplexobj(z) else float)
    if k == 0:
        out = np.exp(z)
    else:
        small = np.abs(z) <= taylor_cutoff
        out = np.empty_like(z)
        if np.any(small):
            out[small] = _phi_taylor(k, z[small], taylor_terms)
        big = ~small
        if np.any(big):
            with np.errstate(over="ignore"):
                out[big] = _phi_recurrence(k, z[big])
    return out[()] if scalar else out


# (phi index, node scale, weight): contributes weight * phi_k(scale * z)
Combo = tuple


@dataclass(frozen=True)
class ERKScheme:
    label: str
    order: int
    c: tuple
    a: dict = field(default_factory=dict)
    b: tuple = ()

    @property
    def stages(self) -> int:
        return len(self.c)

    def coefficients(self, z):
        """Evaluate ``exp(c_i z)``, ``a_ij(z)``, ``b_i(z)`` for a given ``z = -h decay``."""
        cache = {}

        def ph(k, s):
            key = (k, s)
            if key not in cache:
                cache[key] = phi(k, s * z)
            return cache[key]

        def combo(terms):
            if not terms:
                return None
            return sum(w * ph(k, s) for k, s, w in terms)

        expc = [ph(0, ci) for ci in self.c]
        a = {ij: combo(t) for ij, t in self.a.items()}
        b = [combo(t) for t in self.b]
        return expc, a, b, ph(0, 1.0)


EXP_EULER = ERKScheme("ExpEuler", 1, (0.0,), {}, (((1, 1.0, 1.0),),))

ERK2 = ERKScheme(
    "ERK2",
    2,
    (0.0, 1.0),
    {(1, 0): ((1, 1.0, 1.0),)},
    (((1, 1.0, 1.0), (2, 1.0, -1.0)), ((2, 1.0, 1.0),)),
)

ERK3 = ERKScheme(
    "ERK3",
    3,
    (0.0, 1.0 / 3.0, 2.0 / 3.0),
    {
        (1, 0): ((1, 1.0 / 3.0, 1.0 / 3.0),),
        (2, 0): ((1, 2.0 / 3.0, 2.0 / 3.0), (2, 2.0 / 3.0, -4.0 / 3.0)),
        (2, 1): ((2, 2.0 / 3.0, 4.0 / 3.0),),
    },
    (((1, 1.0, 1.0), (2, 1.0, -1.5)), (), ((2, 1.0, 1.5),)),
)

SCHEMES = {1: EXP_EULER, 2: ERK2, 3: ERK3}


def scheme_for_order(q: int) -> ERKScheme:
    try:
        return SCHEMES[q]
    except KeyError:
        raise ValueError(f"no exponential scheme of order {q}") from None


Nonlinearity = Callable[[float, np.ndarray], np.ndarray]


class _Stepper:
    """Precomputed coefficients for a fixed step size and decay array."""

    def __init__(self, scheme: ERKScheme, decay, h: float):
        self.scheme = scheme
        self.h = h
        z = -h * np.asarray(decay, dtype=float)
        self.expc, self.a, self.b, self.exph = scheme.coefficients(z)

    def step(self, nonlin: Nonlinearity, t: float, y: np.ndarray) -> np.ndarray:
        s, h = self.scheme, self.h
        ks = []
        for i in range(s.stages):
            yi = y if s.c[i] == 0.0 else self.expc[i] * y
            for j in range(i):
                aij = self.a.get((i, j))
                if aij is not None:
                    yi = yi + h * aij * ks[j]
            k = nonlin(t + s.c[i] * h, yi)
            if not np.all(np.isfinite(k)):
                raise StepFailure(f"non-finite stage {i} at t={t}", stage=i, time=t)
            ks.append(k)
        out = self.exph * y
        for bi, k in zip(self.b, ks):
            if bi is not None:
                out = out + h * bi * k
        if not np.all(np.isfinite(out)):
            raise StepFailure(f"non-finite step at t={t}", time=t)
        return out


def exp_rk_step(scheme: ERKScheme, decay, nonlin: Nonlinearity, t: float, y, h: float):
    """One step of ``scheme`` for ``y' = -decay * y + nonlin(t, y)``."""
    if h <= 0:
        raise ValueError("step size must be positive")
    return _Stepper(scheme, decay, h).step(nonlin, t, np.asarray(y, dtype=complex))


def exp_rk_integrate(scheme, decay, nonlin, y0, t_grid, max_dt=None, callback=None):
    """Integrate on ``t_grid`` with uniform substeps no larger than ``max_dt``.

    Returns an array of shape ``(len(t_grid),) + y0.shape``.  ``callback(i, t, y)``
    is invoked at every grid point when given.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("t_grid must be a nonempty 1-d sequence")
    if t_grid[0] != 0.0:
        raise ValueError("t_grid must start at 0")
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    y = np.asarray(y0, dtype=complex)
    out = np.empty((t_grid.size,) + y.shape, dtype=complex)
    out[0] = y
    if callback is not None:
        callback(0, 0.0, y)
    steppers = {}
    for i in range(1, t_grid.size):
        t0, t1 = t_grid[i - 1], t_grid[i]
        span = t1 - t0
        m = 1 if max_dt is None else max(1, int(np.ceil(span / max_dt - 1e-9)))
        h = span / m
        key = round(h, 15)
        if key not in steppers:
            steppers[key] = _Stepper(scheme, decay, h)
        st = steppers[key]
        for s in range(m):
            t = t0 + s * h
            try:
                y = st.step(nonlin, t, y)
            except StepFailure as exc:
                exc.time = t
                raise
        out[i] = y
        if callback is not None:
            callback(i, t1, y)
    return out


def erk_step(scheme: ERKScheme, problem: SemilinearProblem, eps, t: float, u, h: float):
    """One exponential RK step on the original stiff problem."""
    u = as_state(u, problem.d)
    return exp_rk_step(scheme, problem.decay(eps), lambda s, y: problem.f(y, eps), t, u, h)


def integrate(scheme: ERKScheme, problem: SemilinearProblem, eps, u0, t_grid, max_dt=None):
    """States of the original problem at every point of ``t_grid``."""
    u0 = as_state(u0, problem.d)
    return exp_rk_integrate(
        scheme, problem.decay(eps), lambda s, y: problem.f(y, eps), u0, t_grid, max_dt
    )
