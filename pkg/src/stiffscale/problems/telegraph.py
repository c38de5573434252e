"""Telegraph (Goldstein-Taylor) equation in Fourier space.

Per frequency ``k`` the stabilised unknowns ``u = (rho_k, z_k)`` with
``z_k = j_k + i k / (1 + alpha eps k^2) rho_k`` obey a linear 2x2 system with
``Lam = diag(0, 1)``.  Frequencies may be given as arrays so that many modes
(and many eps values) are advanced as one batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from ..core import SemilinearProblem
from ..micromacro import Decomposition

LAM = (0, 1)


def ihat(k, alpha, eps):
    return 1.0 / (1.0 + alpha * np.asarray(eps) * np.asarray(k, dtype=float) ** 2)


def khat2(k, alpha, eps):
    """Regularised squared frequency ``k^2 / (1 + alpha eps k^2)``."""
    return np.asarray(k, dtype=float) ** 2 * ihat(k, alpha, eps)


def _b(k, alpha, eps):
    return khat2(k, alpha, eps) * (alpha + ihat(k, alpha, eps))


def macro_rate(k, alpha, eps, n):
    """Decay rate ``K`` of the slow row of the macro flow at order ``n``."""
    kh2 = khat2(k, alpha, eps)
    if n == 0:
        return kh2
    return kh2 * (1.0 + np.asarray(eps) * _b(k, alpha, eps))


def stability_lambdas(k, alpha, eps):
    """``(lambda, lambda_tilde)``: fast decay rates of the order-0 and order-1 macro flows."""
    e = np.asarray(eps)
    return 1.0 - e * macro_rate(k, alpha, eps, 0), 1.0 - e * macro_rate(k, alpha, eps, 1)


def lambda_tilde_of_s(s, alpha):
    """``lambda_tilde`` as a function of ``s = eps k^2`` alone."""
    s = np.asarray(s, dtype=float)
    ih = 1.0 / (1.0 + alpha * s)
    skh = s * ih
    return 1.0 - skh * (1.0 + skh * (alpha + ih))


def telegraph_field(k, alpha):
    k = np.asarray(k, dtype=float)

    def f(u, eps):
        rho, z = u[..., 0], u[..., 1]
        kh2 = khat2(k, alpha, eps)
        return np.stack([-kh2 * rho - 1j * k * z, kh2 * z - 1j * k * _b(k, alpha, eps) * rho], axis=-1)

    return f


def telegraph_mode_problem(k, alpha: float = 2.0, eps=None) -> SemilinearProblem:
    """Per-mode linear problem; ``f`` depends on ``eps`` through the regularisation."""
    if alpha < 1:
        raise ValueError("alpha must be at least 1")
    f = telegraph_field(k, alpha)

    def f_diff(u, du, eps):
        return f(du, eps)

    return SemilinearProblem(1, 1, LAM, f, f_diff, label=f"telegraph-k{k}")


def mode_matrix(k, alpha, eps):
    """Full generator ``-(1/eps) Lam + A`` of the per-mode system, shape (..., 2, 2)."""
    k = np.asarray(k, dtype=float)
    e = np.asarray(eps, dtype=float)
    k, e = np.broadcast_arrays(k, e)
    kh2 = khat2(k, alpha, e)
    M = np.empty(k.shape + (2, 2), dtype=complex)
    M[..., 0, 0] = -kh2
    M[..., 0, 1] = -1j * k
    M[..., 1, 0] = -1j * k * _b(k, alpha, e)
    M[..., 1, 1] = kh2 - 1.0 / e
    return M


def exact_propagate(k, alpha, eps, u0, t):
    """``exp(t M) u0`` for the per-mode system via its two eigenvalues."""
    M = mode_matrix(k, alpha, eps)
    u0 = np.broadcast_to(np.asarray(u0, dtype=complex), M.shape[:-1])
    if t == 0:
        return u0.copy()
    tr = M[..., 0, 0] + M[..., 1, 1]
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    s = tr / 2
    q = np.sqrt(s * s - det + 0j)
    q = np.where(np.real(np.conj(s) * q) < 0, q, -q)
    mu2 = s + q  # larger modulus root
    mu1 = np.where(mu2 != 0, det / np.where(mu2 == 0, 1, mu2), 0)
    gap = mu1 - mu2
    I = np.eye(2)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        P = (np.exp(mu1 * t)[..., None, None] * (M - mu2[..., None, None] * I)
             - np.exp(mu2 * t)[..., None, None] * (M - mu1[..., None, None] * I)) / gap[..., None, None]
    bad = ~np.isfinite(P).all(axis=(-1, -2)) | (np.abs(gap) <= 1e-6 * (np.abs(mu2) + 1))
    if np.any(bad):
        flatP = P.reshape(-1, 2, 2)
        flatM = M.reshape(-1, 2, 2)
        for idx in np.flatnonzero(bad.ravel()):
            flatP[idx] = scipy.linalg.expm(t * flatM[idx])
        P = flatP.reshape(P.shape)
    return np.einsum("...ij,...j->...i", P, u0)


def _exact_macro(k, alpha, n):
    def em(t, v0, eps):
        K = macro_rate(k, alpha, eps, n)
        e = np.asarray(eps)
        fast = (1.0 - e * K) / e
        return np.stack([np.exp(-K * t) * v0[..., 0], np.exp(-fast * t) * v0[..., 1]], axis=-1)

    return em


def telegraph_decomposition(k, alpha: float = 2.0, eps=None, n: int = 1) -> Decomposition:
    """Closed-form decomposition of order 0 or 1 for frequency ``k``.

    Order 1 replaces ``eps`` by ``eps / (1 + alpha eps k^2)`` in the recurrence,
    which keeps the fast macro rate ``lambda_tilde`` nonnegative iff ``alpha >= 2``.
    """
    if n not in (0, 1):
        raise ValueError("telegraph decompositions exist for n = 0, 1")
    if n == 1 and alpha < 2:
        raise ValueError("order-1 telegraph decomposition needs alpha >= 2")
    k = np.asarray(k, dtype=float)
    ik = 1j * k

    def coef(eps):
        e = np.asarray(eps)
        if n == 0:
            return 0.0 * e, _b(k, alpha, eps)
        return e * ihat(k, alpha, eps), _b(k, alpha, eps)

    def omega(tau, u, eps):
        a, B = coef(eps)
        q = np.exp(-np.asarray(tau))
        rho, z = u[..., 0], u[..., 1]
        return np.stack([rho + a * ik * q * z, q * z - a * B * ik * rho], axis=-1)

    def shift_phi(u, eps):
        a, B = coef(eps)
        rho, z = u[..., 0], u[..., 1]
        return np.stack([a * ik * z, -a * B * ik * rho], axis=-1)

    def macro_field(u, eps):
        K = macro_rate(k, alpha, eps, n)
        return np.stack([-K * u[..., 0], K * u[..., 1]], axis=-1)

    def eta(tau, u, eps):
        e = np.asarray(eps)
        q = np.exp(-np.asarray(tau))
        rho, z = u[..., 0], u[..., 1]
        B = _b(k, alpha, eps)
        if n == 0:
            return np.stack([ik * q * z, B * ik * rho], axis=-1)
        ih = ihat(k, alpha, eps)
        kh2 = khat2(k, alpha, eps)
        c = ik * e * kh2 * (alpha + ih * (2 + e * kh2 * (alpha + ih)))
        return np.stack([c * q * z, c * B * rho], axis=-1)

    def dtau(tau, u, eps):
        a, B = coef(eps)
        q = np.exp(-np.asarray(tau))
        z = u[..., 1]
        return np.stack([-a * ik * q * z, -q * z], axis=-1)

    def du(tau, u, eps, h):
        return omega(tau, h, eps) - omega(tau, np.zeros_like(h), eps)

    def exact_init(u0, eps):
        a, B = coef(eps)
        # Omega_0 = [[1, a ik], [-a B ik, 1]]
        det = 1.0 - a * a * B * k * k
        rho, z = u0[..., 0], u0[..., 1]
        return np.stack([(rho - a * ik * z) / det, (z + a * B * ik * rho) / det], axis=-1)

    return Decomposition(
        order_n=n,
        omega=omega,
        macro_field=macro_field,
        eta=eta,
        shift_phi=shift_phi,
        domega_dtau=dtau,
        domega_du=du,
        exact_macro=_exact_macro(k, alpha, n),
        exact_init=exact_init,
        label=f"telegraph-n{n}",
    )


def fourier_coefficients(fun: Callable, kmax: int, points: int | None = None) -> np.ndarray:
    """Trapezoid-rule coefficients ``c_k``, ``k = -kmax..kmax``, of a 2pi-periodic function."""
    M = points or 8 * kmax + 1
    x = 2 * np.pi * np.arange(M) / M
    vals = fun(x)
    ks = np.arange(-kmax, kmax + 1)
    return (vals[None, :] * np.exp(-1j * ks[:, None] * x[None, :])).mean(axis=1)


@dataclass
class TelegraphField:
    """Mode set ``-kmax..kmax`` with initial spectra of ``rho`` and ``j``."""

    kmax: int = 12
    alpha: float = 2.0
    rho0: Callable = field(default=lambda x: np.exp(np.cos(x)))
    j0: Callable = field(default=lambda x: 0.5 * np.cos(x) ** 3)

    def __post_init__(self):
        self.ks = np.arange(-self.kmax, self.kmax + 1)
        self.rho_hat = fourier_coefficients(self.rho0, self.kmax)
        self.j_hat = fourier_coefficients(self.j0, self.kmax)
        fine_r = fourier_coefficients(self.rho0, self.kmax, 4 * (8 * self.kmax + 1))
        fine_j = fourier_coefficients(self.j0, self.kmax, 4 * (8 * self.kmax + 1))
        self.aliasing_error = float(max(np.abs(fine_r - self.rho_hat).max(),
                                        np.abs(fine_j - self.j_hat).max()))

    def z_hat(self, eps):
        """Stabilised fast unknown per mode, batched as (..., modes)."""
        e = np.asarray(eps, dtype=float)[..., None]
        return self.j_hat + 1j * self.ks * ihat(self.ks, self.alpha, e) * self.rho_hat

    def initial_modes(self, eps) -> np.ndarray:
        """States ``(rho_k, z_k)`` with shape ``eps.shape + (modes, 2)``."""
        z = self.z_hat(eps)
        rho = np.broadcast_to(self.rho_hat, z.shape)
        return np.stack([rho, z], axis=-1)

    def to_flux(self, modes, eps):
        """Recover ``(rho_k, j_k)`` from ``(rho_k, z_k)``."""
        e = np.asarray(eps, dtype=float)[..., None]
        rho, z = modes[..., 0], modes[..., 1]
        return np.stack([rho, z - 1j * self.ks * ihat(self.ks, self.alpha, e) * rho], axis=-1)


def spectral_h1(modes_err, ks) -> np.ndarray:
    """``sqrt(sum_k (1 + k^2) |e_k|^2)`` over modes and components, shape (..., modes, comps)."""
    w = 1.0 + np.asarray(ks, dtype=float) ** 2
    return np.sqrt(np.sum(w[:, None] * np.abs(modes_err) ** 2, axis=(-1, -2)))


def check_hermitian(coeffs, tol=1e-10):
    """Raise when ``c_{-k} != conj(c_k)`` beyond ``tol``."""
    c = np.asarray(coeffs)
    sym = np.abs(c - np.conj(c[..., ::-1])).max()
    if sym > tol:
        raise ValueError(f"mode data not Hermitian-symmetric (defect {sym:.2e})")


def telegraph_assemble(field: TelegraphField, mode_solutions, eps, x=None):
    """Physical ``(rho, j)`` on grid ``x`` from ``(rho_k, z_k)`` mode data."""
    if x is None:
        x = 2 * np.pi * np.arange(8 * field.kmax + 1) / (8 * field.kmax + 1)
    rj = field.to_flux(np.asarray(mode_solutions), eps)
    check_hermitian(rj[..., 0])
    check_hermitian(rj[..., 1])
    basis = np.exp(1j * np.outer(field.ks, x))  # (modes, points)
    rho = np.einsum("...k,kx->...x", rj[..., 0], basis)
    j = np.einsum("...k,kx->...x", rj[..., 1], basis)
    return np.real(rho), np.real(j)
