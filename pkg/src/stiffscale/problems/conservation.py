"""Relaxation system for a scalar conservation law on a periodic grid.

With ``U1`` the conserved density and ``U2`` the stabilised flux deviation,

    U1' = -D (U2 + g(U1))
    U2' = -U2/eps + g'(U1) D U2 - T(U1),      T(U1) = D U1 - g'(U1) D g(U1)

where ``g(u) = b u^2`` and ``D`` is the centred periodic difference.  The state
is the concatenation ``(U1, U2)`` of length ``2N`` with ``Lam = (0..0, 1..1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import SemilinearProblem
from ..micromacro import Decomposition

T_FINAL = 0.25


def _circulant(first_col):
    n = len(first_col)
    return np.array([np.roll(first_col, j) for j in range(n)]).T


@dataclass
class ConservationLaw:
    """Grid, flux and difference operators.  ``D``, ``L`` are dense circulants."""

    N: int = 16
    b: float = 0.2
    include_viscosity: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.dx = 2 * np.pi / self.N
        # first column of (v[i+1] - v[i-1]) / (2 dx)
        c = np.zeros(self.N)
        c[1], c[-1] = -1.0, 1.0
        self.D = _circulant(c) / (2 * self.dx)
        c = np.zeros(self.N)
        c[0], c[1], c[-1] = -2.0, 1.0, 1.0
        self.L = _circulant(c) / self.dx**2
        self.x = self.dx * np.arange(self.N)
        self.D.setflags(write=False)
        self.L.setflags(write=False)

    # flux -----------------------------------------------------------------
    def g(self, u):
        return self.b * u * u

    def gp(self, u):
        return 2 * self.b * u

    def gpp(self, h1, h2):
        """Second derivative ``g''(u)(h1, h2)``; constant for a quadratic flux."""
        return 2 * self.b * h1 * h2

    def Dx(self, v):
        return v @ self.D.T

    def Lx(self, v):
        return v @ self.L.T

    def T(self, rho):
        return self.Dx(rho) - self.gp(rho) * self.Dx(self.g(rho))

    def Tp(self, rho, h):
        """Directional derivative ``T'(rho) h``."""
        return self.Dx(h) - self.gpp(h, self.Dx(self.g(rho))) - self.gp(rho) * self.Dx(self.gp(rho) * h)

    def d_tilde(self, eps) -> np.ndarray:
        """``(I - 2 eps D^2)^{-1} D`` with shape ``eps.shape + (N, N)``."""
        e = np.asarray(eps, dtype=float)
        key = e.tobytes() + bytes(str(e.shape), "ascii")
        if key not in self._cache:
            A = np.eye(self.N) - 2 * e[..., None, None] * (self.D @ self.D)
            # symbol 1 + 2 eps sin^2(k dx)/dx^2 >= 1
            if np.min(np.abs(np.linalg.det(A))) < 1e-300:
                raise np.linalg.LinAlgError("singular regularisation operator")
            self._cache[key] = np.linalg.solve(A, np.broadcast_to(self.D, A.shape))
            if len(self._cache) > 64:
                self._cache.pop(next(iter(self._cache)))
        return self._cache[key]

    def Dt(self, v, eps):
        return np.einsum("...ij,...j->...i", self.d_tilde(eps), v)

    def jacobian(self, u) -> np.ndarray:
        """Jacobian of the field ``f`` at one real state, shape (2N, 2N)."""
        r = np.real(self.split(np.asarray(u))[0])
        D, b = self.D, self.b
        gp = np.diag(self.gp(r))
        J = np.zeros((2 * self.N, 2 * self.N))
        J[: self.N, self.N:] = -D
        J[: self.N, : self.N] = -D @ gp
        J[self.N:, self.N:] = gp @ D
        z = np.real(self.split(np.asarray(u))[1])
        # d/dr of g'(r) D z - D r + g'(r) D g(r)
        J[self.N:, : self.N] = (np.diag(2 * b * (D @ z)) - D + np.diag(2 * b * (D @ self.g(r)))
                                + gp @ D @ gp)
        if self.include_viscosity:
            L, half = self.L, self.dx / 2
            J[: self.N, : self.N] += half * L
            J[self.N:, self.N:] += half * L
            J[self.N:, : self.N] += half * (L @ gp - np.diag(2 * b * (L @ r)) - gp @ L)
        return J

    # data -----------------------------------------------------------------
    def initial_state(self) -> np.ndarray:
        """``U1 = exp(sin x)/2`` and ``U2 = cos x - g(U1)``."""
        u1 = 0.5 * np.exp(np.sin(self.x))
        u2 = np.cos(self.x) - self.g(u1)
        return np.concatenate([u1, u2]).astype(complex)

    def split(self, u):
        return u[..., : self.N], u[..., self.N:]

    def mass(self, u):
        return np.sum(self.split(u)[0], axis=-1) * self.dx

    def max_wave_speed(self, u):
        return float(np.max(np.abs(self.gp(self.split(np.asarray(u))[0]))))

    def h1(self, u):
        """Discrete ``sqrt(|U|^2 dx + |DU|^2 dx)`` summed over both blocks."""
        r, z = self.split(u)
        tot = 0.0
        for p in (r, z):
            tot = tot + np.sum(np.abs(p) ** 2 + np.abs(self.Dx(p)) ** 2, axis=-1) * self.dx
        return np.sqrt(tot)

    def modified_h1(self, err, eps):
        """H1 norm of ``(e1, (1 + 1/eps) e2)``."""
        r, z = self.split(err)
        e = np.asarray(eps, dtype=float)[..., None]
        return self.h1(np.concatenate([r, (1 + 1 / e) * z], axis=-1))


def conservation_problem(law: ConservationLaw | None = None, **kw) -> SemilinearProblem:
    law = law or ConservationLaw(**kw)
    N, visc = law.N, law.include_viscosity
    half = law.dx / 2

    def f(u, eps=None):
        r, z = law.split(u)
        f1 = -law.Dx(z + law.g(r))
        f2 = law.gp(r) * law.Dx(z) - law.T(r)
        if visc:
            f1 = f1 + half * law.Lx(r)
            f2 = f2 + half * (law.Lx(z + law.g(r)) - law.gp(r) * law.Lx(r))
        return np.concatenate([f1, f2], axis=-1)

    def f_diff(u, du, eps=None):
        r, z = law.split(u)
        a, c = law.split(du)
        dg = law.b * (2 * r + a) * a  # g(r + a) - g(r)
        r1, z1 = r + a, z + c
        f1 = -law.Dx(c + dg)
        # g'(r1) D g(r1) - g'(r) D g(r)
        dgdg = 2 * law.b * a * law.Dx(law.g(r1)) + law.gp(r) * law.Dx(dg)
        f2 = 2 * law.b * a * law.Dx(z1) + law.gp(r) * law.Dx(c) - (law.Dx(a) - dgdg)
        if visc:
            f1 = f1 + half * law.Lx(a)
            dgl = 2 * law.b * a * law.Lx(r1) + law.gp(r) * law.Lx(a)
            f2 = f2 + half * (law.Lx(c + dg) - dgl)
        return np.concatenate([f1, f2], axis=-1)

    lam = (0,) * N + (1,) * N
    label = "conservation-visc" if visc else "conservation"
    return SemilinearProblem(N, N, lam, f, f_diff, label=label)


def conservation_decomposition(law: ConservationLaw, eps=None, n: int = 1) -> Decomposition:
    """Closed-form decomposition of order 0 or 1 for the viscosity-free system.

    ``eps`` is optional; when given, ``D~`` is precomputed for it.
    """
    if n not in (0, 1):
        raise ValueError("conservation decompositions exist for n = 0, 1")
    if law.include_viscosity:
        raise ValueError("decompositions are derived for the viscosity-free system")
    if eps is not None:
        law.d_tilde(eps)
    cat = lambda a, b: np.concatenate([a, b], axis=-1)  # noqa: E731
    D, g, gp, T, Tp = law.Dx, law.g, law.gp, law.T, law.Tp

    def ecol(eps):
        return np.asarray(eps, dtype=float)[..., None]

    def omega(tau, u, eps):
        r, z = law.split(u)
        q = np.exp(-np.asarray(tau, dtype=float))[..., None]
        if n == 0:
            return cat(r, q * z)
        e = ecol(eps)
        return cat(r + e * q * law.Dt(z, eps), q * z - e * T(r))

    def shift_phi(u, eps):
        r, z = law.split(u)
        if n == 0:
            return np.zeros_like(u)
        e = ecol(eps)
        return cat(e * law.Dt(z, eps), -e * T(r))

    def macro_field(u, eps):
        r, z = law.split(u)
        if n == 0:
            return cat(-D(g(r)), gp(r) * D(z))
        e = ecol(eps)
        tz = law.Dt(z, eps)
        return cat(-D(g(r)) + e * D(T(r)),
                   gp(r) * D(z) - e * Tp(r, tz) - e**2 * law.gpp(T(r), tz))

    def eta(tau, u, eps):
        r, z = law.split(u)
        z = np.exp(-np.asarray(tau, dtype=float))[..., None] * z
        if n == 0:
            return cat(D(z), T(r))
        e = ecol(eps)
        tz = law.Dt(z, eps)
        Tr = T(r)
        macro2 = gp(r) * D(z) - e * Tp(r, tz) - e**2 * law.gpp(Tr, tz)
        dg = law.b * (2 * r + e * tz) * e * tz  # g(r + e tz) - g(r)
        row1 = D(dg) + D(z) - law.Dt(z, eps) + e * law.Dt(macro2, eps)
        row2 = (-2 * law.b * e * tz * D(z) + T(r + e * tz) - Tr - e * Tp(r, tz)
                + e * gp(r + e * tz) * D(Tr) - e**2 * law.gpp(tz, Tr)
                + e * Tp(r, D(g(r)) - e * D(Tr)))
        return cat(row1, row2)

    def dtau(tau, u, eps):
        r, z = law.split(u)
        q = np.exp(-np.asarray(tau, dtype=float))[..., None]
        if n == 0:
            return cat(np.zeros_like(r), -q * z)
        e = ecol(eps)
        return cat(-e * q * law.Dt(z, eps), -q * z)

    def du(tau, u, eps, h):
        r, _ = law.split(u)
        a, c = law.split(h)
        q = np.exp(-np.asarray(tau, dtype=float))[..., None]
        if n == 0:
            return cat(a, q * c)
        e = ecol(eps)
        return cat(a + e * q * law.Dt(c, eps), q * c - e * Tp(r, a))

    return Decomposition(
        order_n=n,
        omega=omega,
        macro_field=macro_field,
        eta=eta,
        shift_phi=shift_phi,
        domega_dtau=dtau,
        domega_du=du,
        label=f"conservation-n{n}",
    )
