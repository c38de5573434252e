"""Micro-macro solution of ``u' = -(1/eps) Lam u + f(u)``.

The solution is written ``u(t) = Omega_{t/eps}(v(t)) + w(t)`` where the macro
part follows the slow field ``v' = F(v)`` and the micro part solves

    w' = -(1/eps) Lam w + [f(Omega + w) - f(Omega)] - eta_{t/eps}(v).

Both parts are advanced with the same exponential RK scheme on the same grid;
the macro part sees a zero stiff operator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import SemilinearProblem, as_state, col
from .expkit import ERKScheme, exp_rk_integrate


FD_STEP = 1e-3


def _fd_dtau(omega, h=FD_STEP):
    # fourth-order central difference
    def dtau(tau, u, eps):
        tau = np.asarray(tau, dtype=float)
        return (8 * (omega(tau + h, u, eps) - omega(tau - h, u, eps))
                - (omega(tau + 2 * h, u, eps) - omega(tau - 2 * h, u, eps))) / (12 * h)

    return dtau


def _fd_du(omega, h=FD_STEP):
    def du(tau, u, eps, direction):
        d = h * direction
        return (8 * (omega(tau, u + d, eps) - omega(tau, u - d, eps))
                - (omega(tau, u + 2 * d, eps) - omega(tau, u - 2 * d, eps))) / (12 * h)

    return du


@dataclass
class Decomposition:
    """Change of variable ``Omega``, slow field ``F`` and defect ``eta`` of order ``n``.

    Evaluator signatures: ``omega(tau, u, eps)``, ``macro_field(u, eps)``,
    ``eta(tau, u, eps)``, ``shift_phi(u, eps)`` returning ``Omega_0(u) - u``,
    ``domega_dtau(tau, u, eps)``, ``domega_du(tau, u, eps, h)`` (directional).

    ``exact_macro(t, v0, eps)`` when set returns the rescaled macro state
    ``exp(-t Lam/eps) v(t)``.  It is only offered for decompositions where
    ``Omega_tau(u) = Omega_0(exp(-tau Lam) u)`` and likewise for ``eta``, so the
    solver can work with the rescaled state alone.
    """

    order_n: int
    omega: Callable
    macro_field: Callable
    eta: Callable
    shift_phi: Callable
    domega_dtau: Optional[Callable] = None
    domega_du: Optional[Callable] = None
    exact_macro: Optional[Callable] = None
    exact_init: Optional[Callable] = None
    label: str = "decomposition"
    maps: object = None

    def __post_init__(self):
        self.exact_partials = self.domega_dtau is not None and self.domega_du is not None
        if self.domega_dtau is None:
            self.domega_dtau = _fd_dtau(self.omega)
        if self.domega_du is None:
            self.domega_du = _fd_du(self.omega)

    def fd_partials(self, h=FD_STEP):
        return _fd_dtau(self.omega, h), _fd_du(self.omega, h)


@dataclass
class MicroMacroState:
    """Macro and micro parts at one time.

    With ``rescaled`` set, ``v`` holds ``exp(-t Lam/eps) v(t)`` rather than ``v(t)``.
    """

    v: np.ndarray
    w: np.ndarray
    rescaled: bool = False


@dataclass
class MicroMacroSolution:
    t: np.ndarray
    v: np.ndarray
    w: np.ndarray
    u: np.ndarray
    rescaled: bool = False

    def states(self):
        return [(MicroMacroState(self.v[i], self.w[i], self.rescaled), self.u[i])
                for i in range(self.t.size)]


def init_conditions(decomp: Decomposition, u0, eps, exact_inverse: bool = False) -> MicroMacroState:
    """Initial macro/micro pair.

    Iterates ``v <- u0 - eps phi(v)`` ``n`` times starting from ``u0``, where
    ``eps phi = Omega_0 - id``, and sets ``w = u0 - Omega_0(v)``.  The micro part
    is formed as ``eps phi(v_{n-1}) - eps phi(v_n)``, which equals
    ``u0 - Omega_0(v_n)`` without cancelling two O(1) quantities.
    """
    u0 = np.asarray(u0, dtype=complex)
    n = decomp.order_n
    if exact_inverse:
        if decomp.exact_init is None:
            raise ValueError("decomposition has no exact inverse of Omega_0")
        v = decomp.exact_init(u0, eps)
        return MicroMacroState(v, np.zeros_like(u0))
    if n == 0:
        return MicroMacroState(u0.copy(), np.zeros_like(u0))
    prev_corr = np.zeros_like(u0)
    v = u0
    for _ in range(n):
        prev_corr = decomp.shift_phi(v, eps)
        v = u0 - prev_corr
    w = prev_corr - decomp.shift_phi(v, eps)
    return MicroMacroState(v, w)


def micro_rhs(decomp: Decomposition, problem: SemilinearProblem, eps, t, v, w,
              rescaled: bool = False) -> np.ndarray:
    """Full micro right-hand side ``-(1/eps) Lam w + f_diff(Omega, w) - eta``."""
    return -problem.decay(eps) * w + e_diagnostic(decomp, problem, eps, t, v, w, rescaled)


def e_diagnostic(decomp: Decomposition, problem: SemilinearProblem, eps, t, v, w,
                 rescaled: bool = False) -> np.ndarray:
    """Non-stiff part ``E = f_diff(Omega_{t/eps}(v), w) - eta_{t/eps}(v)`` of the micro RHS."""
    if rescaled:
        tau = np.zeros_like(np.asarray(eps, dtype=float))
    else:
        tau = t / np.asarray(eps, dtype=float)
    om = decomp.omega(tau, v, eps)
    return problem.f_diff(om, w, eps) - decomp.eta(tau, v, eps)


def recompose(decomp: Decomposition, eps, t, v, w, rescaled: bool = False):
    tau = np.zeros_like(np.asarray(eps, dtype=float)) if rescaled else t / np.asarray(eps, dtype=float)
    return decomp.omega(tau, v, eps) + w


def solve_micromacro(decomp: Decomposition, problem: SemilinearProblem, scheme: ERKScheme,
                     eps, u0, t_grid, max_dt=None, use_exact_macro: bool = True,
                     exact_inverse: bool = False, init: MicroMacroState | None = None
                     ) -> MicroMacroSolution:
    """Advance the micro-macro system and recompose ``u`` on ``t_grid``."""
    d = problem.d
    u0 = as_state(u0, d)
    eps_arr = np.asarray(eps, dtype=float)
    st = init if init is not None else init_conditions(decomp, u0, eps, exact_inverse)
    t_grid = np.asarray(t_grid, dtype=float)
    decay_w = problem.decay(eps)

    if use_exact_macro and decomp.exact_macro is not None:
        v0 = st.v
        zero_tau = np.zeros_like(eps_arr)

        def nonlin(t, w):
            s = decomp.exact_macro(t, v0, eps)
            om = decomp.omega(zero_tau, s, eps)
            return problem.f_diff(om, w, eps) - decomp.eta(zero_tau, s, eps)

        w = exp_rk_integrate(scheme, decay_w, nonlin, st.w, t_grid, max_dt)
        v = np.stack([decomp.exact_macro(t, v0, eps) for t in t_grid])
        u = np.stack([decomp.omega(zero_tau, v[i], eps) + w[i] for i in range(t_grid.size)])
        return MicroMacroSolution(t_grid, v, w, u, rescaled=True)

    decay = np.concatenate([np.zeros_like(decay_w), decay_w], axis=-1)

    def nonlin(t, y):
        v, w = y[..., :d], y[..., d:]
        tau = t / eps_arr
        om = decomp.omega(tau, v, eps)
        dw = problem.f_diff(om, w, eps) - decomp.eta(tau, v, eps)
        return np.concatenate([decomp.macro_field(v, eps), dw], axis=-1)

    y0 = np.concatenate([st.v, st.w], axis=-1)
    y = exp_rk_integrate(scheme, decay, nonlin, y0, t_grid, max_dt)
    v, w = y[..., :d], y[..., d:]
    u = np.stack([decomp.omega(t / eps_arr, v[i], eps) + w[i] for i, t in enumerate(t_grid)])
    return MicroMacroSolution(t_grid, v, w, u)


def defect_vector(decomp: Decomposition, problem: SemilinearProblem, eps, tau, u,
                  partials=None) -> np.ndarray:
    """``eta - [(1/eps)(d_tau + Lam) Omega + d_u Omega . F - f(Omega)]``."""
    dtau, du = partials if partials is not None else (decomp.domega_dtau, decomp.domega_du)
    u = np.asarray(u, dtype=complex)
    om = decomp.omega(tau, u, eps)
    F = decomp.macro_field(u, eps)
    rhs = (dtau(tau, u, eps) + problem.lam_array * om) / col(eps) + du(tau, u, eps, F) - problem.f(om, eps)
    return decomp.eta(tau, u, eps) - rhs


def defect_residual(decomp: Decomposition, problem: SemilinearProblem, eps, tau, u,
                    partials=None, relative: bool = False):
    """Norm of the defect identity mismatch; optionally relative to ``1 + |eta|``."""
    r = np.linalg.norm(defect_vector(decomp, problem, eps, tau, u, partials), axis=-1)
    if relative:
        r = r / (1.0 + np.linalg.norm(decomp.eta(tau, u, eps), axis=-1))
    return r
