"""Three-dimensional oscillating toy problem.

    x' = (1 - z) J x,        J = [[0, -1], [1, 0]]
    z' = -z/eps + (x1 x2)^2

with hand-written micro-macro decompositions of orders 0, 1 and 2.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..autoderive import PolyVectorField, derive
from ..core import SemilinearProblem, col
from ..micromacro import Decomposition

LAM = (0, 0, 1)
X0 = (0.1, 0.7)
Z0 = 0.05
T_FINAL = 1.0


def _f(u, eps=None):
    u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
    return np.stack([-(1 - u3) * u2, (1 - u3) * u1, (u1 * u2) ** 2], axis=-1)


def _f_diff(u, du, eps=None):
    x1, x2, z = u[..., 0], u[..., 1], u[..., 2]
    a1, a2, c = du[..., 0], du[..., 1], du[..., 2]
    return np.stack(
        [
            -(1 - z) * a2 + (x2 + a2) * c,
            (1 - z) * a1 - (x1 + a1) * c,
            (x1 * x2 + (x1 + a1) * (x2 + a2)) * (x1 * a2 + a1 * x2 + a1 * a2),
        ],
        axis=-1,
    )


def toy_problem() -> SemilinearProblem:
    return SemilinearProblem(2, 1, LAM, _f, _f_diff, label="toy")


def toy_poly_field() -> PolyVectorField:
    return PolyVectorField(
        3,
        (
            {(0, 1, 0): -1.0, (0, 1, 1): 1.0},
            {(1, 0, 0): 1.0, (1, 0, 1): -1.0},
            {(2, 2, 0): 1.0},
        ),
    )


def toy_initial(z0: float = Z0, x0=X0) -> np.ndarray:
    return np.array([x0[0], x0[1], z0], dtype=complex)


def _parts(u):
    return u[..., 0], u[..., 1], u[..., 2]


def _omega(n):
    def omega(tau, u, eps):
        x1, x2, z = _parts(u)
        e = np.asarray(eps)
        q = np.exp(-np.asarray(tau))
        ze = q * z
        if n == 0:
            return np.stack([x1, x2, ze], axis=-1)
        p = (x1 * x2) ** 2
        r1 = x1 - e * q * x2 * z
        r2 = x2 + e * q * x1 * z
        r3 = ze + e * p
        if n == 2:
            r1 = r1 - 0.5 * e**2 * q**2 * z**2 * x1
            r2 = r2 - 0.5 * e**2 * q**2 * z**2 * x2
            r3 = r3 - 2 * e**2 * x1 * x2 * (x1**2 - x2**2)
        return np.stack([r1, r2, r3], axis=-1)

    return omega


def _shift_phi(n):
    om = _omega(n)

    def shift(u, eps):
        x1, x2, z = _parts(u)
        e = np.asarray(eps)
        if n == 0:
            return np.zeros_like(u)
        p = (x1 * x2) ** 2
        r1 = -e * x2 * z
        r2 = e * x1 * z
        r3 = e * p
        if n == 2:
            r1 = r1 - 0.5 * e**2 * z**2 * x1
            r2 = r2 - 0.5 * e**2 * z**2 * x2
            r3 = r3 - 2 * e**2 * x1 * x2 * (x1**2 - x2**2)
        return np.stack([r1, r2, r3], axis=-1)

    return shift


def _macro(n):
    def F(u, eps):
        x1, x2, z = _parts(u)
        e = np.asarray(eps)
        if n == 0:
            return np.stack([-x2, x1, np.zeros_like(z)], axis=-1)
        s = 1 - e * (x1 * x2) ** 2
        if n == 2:
            s = s + 2 * e**2 * x1 * x2 * (x1**2 - x2**2)
        return np.stack([-s * x2, s * x1, 2 * e * z * x1 * x2 * (x1**2 - x2**2)], axis=-1)

    return F


def _dtau(n):
    def dtau(tau, u, eps):
        x1, x2, z = _parts(u)
        e = np.asarray(eps)
        q = np.exp(-np.asarray(tau))
        if n == 0:
            zero = np.zeros_like(x1)
            return np.stack([zero, zero, -q * z], axis=-1)
        r1 = e * q * x2 * z
        r2 = -e * q * x1 * z
        if n == 2:
            r1 = r1 + e**2 * q**2 * z**2 * x1
            r2 = r2 + e**2 * q**2 * z**2 * x2
        return np.stack([r1, r2, -q * z], axis=-1)

    return dtau


def _jac(n, tau, u, eps):
    x1, x2, z = _parts(u)
    e = np.asarray(eps)
    q = np.exp(-np.asarray(tau)) * np.ones_like(x1)
    one, zero = np.ones_like(x1), np.zeros_like(x1)
    if n == 0:
        rows = [[one, zero, zero], [zero, one, zero], [zero, zero, q]]
    else:
        rows = [
            [one, -e * q * z, -e * q * x2],
            [e * q * z, one, e * q * x1],
            [2 * e * x1 * x2**2, 2 * e * x1**2 * x2, q],
        ]
        if n == 2:
            h = 0.5 * e**2 * q**2
            rows[0][0] = rows[0][0] - h * z**2
            rows[0][2] = rows[0][2] - 2 * h * z * x1
            rows[1][1] = rows[1][1] - h * z**2
            rows[1][2] = rows[1][2] - 2 * h * z * x2
            # d/dx of -2 eps^2 (x1^3 x2 - x1 x2^3)
            rows[2][0] = rows[2][0] - 2 * e**2 * (3 * x1**2 * x2 - x2**3)
            rows[2][1] = rows[2][1] - 2 * e**2 * (x1**3 - 3 * x1 * x2**2)
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def _du(n):
    def du(tau, u, eps, h):
        return np.einsum("...ij,...j->...i", _jac(n, tau, u, eps), h)

    return du


def _eta_from_identity(n):
    om, F, dt, du = _omega(n), _macro(n), _dtau(n), _du(n)
    lam = np.array(LAM, dtype=float)

    def eta(tau, u, eps):
        o = om(tau, u, eps)
        return (dt(tau, u, eps) + lam * o) / col(eps) + du(tau, u, eps, F(u, eps)) - _f(o)

    return eta


@lru_cache(maxsize=None)
def toy_derivation(n: int):
    """Autoderived maps for the toy field (cached per order)."""
    return derive(toy_poly_field(), LAM, n)


def toy_decomposition(n: int, eps=None) -> Decomposition:
    """Hand-written decomposition of order ``n`` (0, 1 or 2).

    Orders 0 and 1 define ``eta`` through the defect identity; order 2 takes
    ``eta`` from the symbolic derivation.  ``eps`` is accepted for call-site
    symmetry; every evaluator takes ``eps`` at call time.
    """
    if n not in (0, 1, 2):
        raise ValueError("toy decompositions exist for n = 0, 1, 2")
    eta = _eta_from_identity(n) if n < 2 else toy_derivation(2).decomposition.eta
    return Decomposition(
        order_n=n,
        omega=_omega(n),
        macro_field=_macro(n),
        eta=eta,
        shift_phi=_shift_phi(n),
        domega_dtau=_dtau(n),
        domega_du=_du(n),
        label=f"toy-n{n}",
    )


def center_manifold(x, eps):
    """``tau -> infinity`` limit of the fast row of ``Omega^[2]``."""
    x1, x2 = x[..., 0], x[..., 1]
    return eps * (x1 * x2) ** 2 - 2 * eps**2 * x1 * x2 * (x1**2 - x2**2)
