"""Invariant suites run by ``stiffscale check`` and the acceptance tests.

Every check returns :class:`~stiffscale.harness.experiments.Gate` objects so the
CLI can report them uniformly and set its exit code.
"""

from __future__ import annotations

import numpy as np

from .. import autoderive as ad
from ..micromacro import defect_residual
from ..problems import conservation as cl
from ..problems import telegraph as tg
from ..problems import toy
from .experiments import Gate, at_least, at_most

PROBES = 100
EXACT_TOL = 1e-10
FD_TOL = 1e-5


def _probe_eps(rng, size, lo=2.0**-18):
    return np.exp(rng.uniform(np.log(lo), 0.0, size))


def _complex(rng, shape, scale=0.5):
    return scale * (rng.normal(size=shape) + 1j * rng.normal(size=shape))


def defect_probes(seed: int = 0, probes: int = PROBES):
    """``[(label, problem, decomposition, eps, tau, u), ...]`` random probes per decomposition."""
    rng = np.random.default_rng(seed)
    out = []
    p = toy.toy_problem()
    for n in (0, 1, 2):
        u = _complex(rng, (probes, 3))
        out.append((f"toy n={n}", p, toy.toy_decomposition(n), rng.uniform(0, 5, probes), u))
    ks = np.arange(0, 13, dtype=float)
    K = np.repeat(ks, -(-probes // ks.size))[:probes]
    for n in (0, 1):
        p = tg.telegraph_mode_problem(K, 2.0)
        d = tg.telegraph_decomposition(K, 2.0, n=n)
        out.append((f"telegraph n={n}", p, d, rng.uniform(0, 5, probes), _complex(rng, (probes, 2))))
    law = cl.ConservationLaw()
    p = cl.conservation_problem(law)
    x = law.x
    for n in (0, 1):
        # smooth random states: a few low Fourier modes
        amp = rng.normal(size=(probes, 4, 2))
        r = 0.5 + sum(0.2 * amp[:, m, 0, None] * np.sin((m + 1) * x + amp[:, m, 1, None]) for m in range(4))
        z = sum(0.2 * amp[:, m, 1, None] * np.cos((m + 1) * x) for m in range(4))
        u = np.concatenate([r, z], axis=-1).astype(complex)
        out.append((f"conservation n={n}", p, cl.conservation_decomposition(law, n=n),
                    rng.uniform(0, 5, probes), u))
    return out, rng


def defect_checks(seed: int = 0, probes: int = PROBES) -> list:
    """Defect identity with exact partials (eps down to 2^-18) and with FD partials."""
    items, rng = defect_probes(seed, probes)
    gates = []
    for label, p, d, tau, u in items:
        eps = _probe_eps(rng, probes)
        r = defect_residual(d, p, eps, tau, u).max()
        gates.append(at_most(f"defect {label} (exact partials)", r, EXACT_TOL))
        r_fd = defect_residual(d, p, eps, tau, u, partials=d.fd_partials()).max()
        gates.append(at_most(f"defect {label} (FD partials)", r_fd, FD_TOL))
    return gates


# ---------------------------------------------------------------------------
# toy displays written out independently of the derivation


def display_phi1(eps, theta, u):
    u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
    e = np.exp(1j * theta)
    return np.stack([u1 - eps * e * u2 * u3, u2 + eps * e * u1 * u3,
                     u3 + eps * np.conj(e) * (u1 * u2) ** 2], axis=-1)


def display_G1(eps, u):
    u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
    s = 1 - eps * (u1 * u2) ** 2
    return -1j * np.stack([-s * u2, s * u1, 2 * eps * u1 * u2 * u3 * (u1**2 - u2**2)], axis=-1)


def display_omega2(eps, tau, u):
    """The order-2 change of variable; the fast row carries ``e^{-tau} z``."""
    x1, x2, z = u[..., 0], u[..., 1], u[..., 2]
    q = np.exp(-tau)
    return np.stack([
        x1 - eps * q * x2 * z - 0.5 * eps**2 * q**2 * z**2 * x1,
        x2 + eps * q * x1 * z - 0.5 * eps**2 * q**2 * z**2 * x2,
        q * z + eps * (x1 * x2) ** 2 - 2 * eps**2 * x1 * x2 * (x1**2 - x2**2),
    ], axis=-1)


def display_F2(eps, u):
    x1, x2, z = u[..., 0], u[..., 1], u[..., 2]
    c = eps * (x1 * x2) ** 2 - 2 * eps**2 * x1 * x2 * (x1**2 - x2**2)
    return np.stack([x2 * (-1 + c), x1 * (1 - c), 2 * eps * z * x1 * x2 * (x1**2 - x2**2)], axis=-1)


def autoderive_checks(seed: int = 0, probes: int = PROBES, tol: float = 1e-12) -> list:
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1, 1, (probes, 3)) + 0j
    eps = rng.uniform(0, 1, probes)
    theta = rng.uniform(0, 2 * np.pi, probes)
    tau = rng.uniform(0, 5, probes)
    d1, d2 = toy.toy_derivation(1), toy.toy_derivation(2)

    def err(a, b):
        return float(np.max(np.abs(a - b)))

    gates = [
        at_most("Phi[1] vs display", err(ad.evaluate(d1.phis[1], eps, theta, u), display_phi1(eps, theta, u)), tol),
        at_most("G[1] vs display", err(ad.evaluate(d1.G, eps, 0.0, u), display_G1(eps, u)), tol),
        at_most("Omega[2] vs display",
                err(d2.decomposition.omega(tau, u, eps), display_omega2(eps, tau, u)), tol),
        at_most("F[2] vs display", err(d2.decomposition.macro_field(u, eps), display_F2(eps, u)), tol),
    ]
    g = d2.g
    for n, phi in enumerate(d2.phis):
        t = ad.operator_T(phi, g, n)
        avg = ad.average(t)
        gates.append(at_most(f"<T(Phi[{n}])> = 0", avg.max_abs_coef(), 1e-12))
    neg = sum(len(ad.negative_modes(ad.shift_map(m, toy.LAM))) for m in (d2.phis[-1], d2.delta))
    gates.append(at_most("negative modes after shift", neg, 0))
    return gates


def telegraph_checks() -> list:
    s = np.logspace(-6, 8, 4001)
    gates = []
    for alpha in (2.0, 3.0, 10.0):
        kh = s / (1 + alpha * s)  # eps k_hat^2 as a function of s
        lam = 1 - kh
        inside = bool(np.all((lam > 1 - 1 / alpha) & (lam <= 1)))
        gates.append(Gate(f"lambda in (1 - 1/alpha, 1], alpha={alpha:g}", float(lam.min()),
                          f"> {1 - 1 / alpha:g}", inside))
    gates.append(at_least("min lambda_tilde, alpha=2", tg.lambda_tilde_of_s(s, 2.0).min(), 0.0))
    neg = tg.lambda_tilde_of_s(s, 1.99).min()
    gates.append(Gate("lambda_tilde < 0 found, alpha=1.99", float(neg), "< 0", bool(neg < 0)))
    spot = np.exp(tg.khat2(10, 2.0, 1e-2))
    gates.append(Gate("exp(k_hat^2) at (10, 2, 1e-2)", float(spot), "3e14 +/- 5%",
                      bool(abs(spot / 3e14 - 1) <= 0.05)))
    return gates


def conservation_checks() -> list:
    law = cl.ConservationLaw()
    p = cl.conservation_problem(law)
    c = np.concatenate([np.full(law.N, 0.7), np.zeros(law.N)])
    gates = [at_most("f(constant) = 0", np.abs(p.f(c)).max(), 1e-14),
             at_most("D antisymmetric", np.abs(law.D + law.D.T).max(), 0.0),
             at_most("L symmetric", np.abs(law.L - law.L.T).max(), 0.0),
             at_most("L negative semidefinite", np.linalg.eigvalsh(law.L).max(), 1e-12)]
    rng = np.random.default_rng(0)
    u = rng.normal(size=2 * law.N)
    gates.append(at_most("column sums of f_1 (mass)", abs(np.sum(p.f(u)[: law.N])), 1e-12))
    return gates


SUITES = {"defect": defect_checks, "autoderive": autoderive_checks,
          "telegraph": telegraph_checks, "conservation": conservation_checks}


def run_checks(names=None) -> list:
    out = []
    for name in names or SUITES:
        out.extend(SUITES[name]())
    return out
