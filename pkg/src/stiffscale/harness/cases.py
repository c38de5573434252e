"""Uniform batched view of the shipped problems for references and sweeps.

A :class:`Case` turns an eps list into one batch: a problem whose leading
axes run over eps (and over Fourier modes for the telegraph equation), the
matching initial data, decompositions of each order and the error norms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..core import SemilinearProblem, modified_norm
from ..micromacro import Decomposition
from ..problems import conservation as cl
from ..problems import telegraph as tg
from ..problems import toy

PROBLEMS = ("toy", "telegraph", "conservation", "zero")

DEFAULT_T = {"toy": toy.T_FINAL, "telegraph": 0.25, "conservation": cl.T_FINAL, "zero": 1.0}


@dataclass
class Batch:
    """Everything needed to advance one eps list at once."""

    problem: SemilinearProblem
    eps: np.ndarray        # per batch entry, shape batch_shape
    u0: np.ndarray         # batch_shape + (d,)
    decomposition: Callable[[int], Decomposition]
    errors: Callable       # (approx, ref) at one time -> dict of per-eps arrays
    reduce_axes: tuple = ()


class Case:
    name = "case"

    def __init__(self, block: dict):
        self.block = dict(block)
        self.T = float(self.block.get("T", DEFAULT_T[self.name]))

    def batch(self, eps) -> Batch:
        raise NotImplementedError

    def micro_size(self, batch: Batch, w) -> np.ndarray:
        """Per-eps Euclidean size of a micro state."""
        return _reduce(np.linalg.norm(w, axis=-1), batch.reduce_axes)


def _reduce(a, axes):
    if not axes:
        return a
    return np.sqrt(np.sum(np.abs(a) ** 2, axis=axes))


class ToyCase(Case):
    name = "toy"

    def __init__(self, block):
        super().__init__(block)
        self.x0 = tuple(self.block.get("x0", toy.X0))
        self.z0 = float(self.block.get("z0", toy.Z0))
        self.problem = toy.toy_problem()

    def batch(self, eps):
        eps = np.asarray(eps, dtype=float)
        u0 = np.broadcast_to(toy.toy_initial(self.z0, self.x0), eps.shape + (3,)).copy()
        lam = self.problem.lam_array

        def errors(u, ref):
            e = u - ref
            return {
                "err_abs": np.linalg.norm(e, axis=-1),
                "err_mod": modified_norm(eps, lam, e),
                "err_H1": np.full(eps.shape, np.nan),
            }

        return Batch(self.problem, eps, u0, lambda n: toy.toy_decomposition(n), errors)


class ZeroCase(Case):
    """``f = 0`` with ``d_x`` slow and ``d_z`` fast unknowns; exact solution known."""

    name = "zero"

    def __init__(self, block):
        super().__init__(block)
        self.d_x = int(self.block.get("d_x", 1))
        self.d_z = int(self.block.get("d_z", 1))
        lam = (0,) * self.d_x + (1,) * self.d_z
        self.problem = SemilinearProblem(self.d_x, self.d_z, lam,
                                         lambda u, eps=None: np.zeros_like(u),
                                         lambda u, du, eps=None: np.zeros_like(du), label="zero")

    def batch(self, eps):
        eps = np.asarray(eps, dtype=float)
        d = self.problem.d
        u0 = np.broadcast_to(np.linspace(1.0, 0.5, d).astype(complex), eps.shape + (d,)).copy()
        lam = self.problem.lam_array

        def decomposition(n):
            def omega(tau, u, e):
                return u * np.exp(-np.asarray(tau, dtype=float)[..., None] * lam)

            def zeros(*args):
                return np.zeros_like(args[1] if len(args) == 3 else args[0])

            return Decomposition(
                n, omega, zeros, zeros, zeros,
                domega_dtau=lambda t, u, e: -lam * omega(t, u, e),
                domega_du=lambda t, u, e, h: omega(t, h, e),
                exact_macro=lambda t, v0, e: v0 * np.exp(-t * lam / np.asarray(e)[..., None]),
                label="zero",
            )

        def errors(u, ref):
            e = u - ref
            return {"err_abs": np.linalg.norm(e, axis=-1), "err_mod": modified_norm(eps, lam, e),
                    "err_H1": np.full(eps.shape, np.nan)}

        return Batch(self.problem, eps, u0, decomposition, errors)

    def exact(self, eps, t):
        b = self.batch(eps)
        return b.u0 * np.exp(-t * self.problem.lam_array / np.asarray(eps)[..., None])


class TelegraphCase(Case):
    name = "telegraph"

    def __init__(self, block):
        super().__init__(block)
        self.alpha = float(self.block.get("alpha", 2.0))
        self.kmax = int(self.block.get("kmax", 12))
        j0 = self.block.get("j0", "cos3")
        if j0 == "equilibrium":
            jf = lambda x: np.sin(x) * np.exp(np.cos(x))  # noqa: E731  (-d/dx e^{cos x})
        elif j0 == "cos3":
            jf = lambda x: 0.5 * np.cos(x) ** 3  # noqa: E731
        else:
            raise ValueError(f"unknown j0 profile {j0!r}")
        self.field = tg.TelegraphField(self.kmax, self.alpha, j0=jf)

    def batch(self, eps):
        eps = np.asarray(eps, dtype=float)
        if eps.ndim != 1:
            raise ValueError("telegraph batches take a 1-d eps list")
        ks = self.field.ks
        E, K = np.meshgrid(eps, ks.astype(float), indexing="ij")
        u0 = self.field.initial_modes(eps)
        problem = tg.telegraph_mode_problem(K, self.alpha)
        fld = self.field

        def errors(u, ref):
            e = u - ref
            lam = problem.lam_array
            rj = fld.to_flux(u, eps) - fld.to_flux(ref, eps)
            return {
                "err_abs": _reduce(np.linalg.norm(e, axis=-1), (1,)),
                "err_mod": tg.spectral_h1(e * (1 + lam / E[..., None]), ks),
                "err_H1": tg.spectral_h1(rj, ks),
            }

        return Batch(problem, E, u0, lambda n: tg.telegraph_decomposition(K, self.alpha, n=n),
                     errors, reduce_axes=(1,))


class ConservationCase(Case):
    name = "conservation"

    def __init__(self, block):
        super().__init__(block)
        self.law = cl.ConservationLaw(int(self.block.get("N", 16)), float(self.block.get("b", 0.2)),
                                      bool(self.block.get("include_viscosity", False)))
        self.problem = cl.conservation_problem(self.law)

    def batch(self, eps):
        eps = np.asarray(eps, dtype=float)
        law = self.law
        u0 = np.broadcast_to(law.initial_state(), eps.shape + (2 * law.N,)).copy()
        lam = self.problem.lam_array

        def errors(u, ref):
            e = u - ref
            return {
                "err_abs": np.linalg.norm(e, axis=-1),
                "err_mod": modified_norm(eps, lam, e),
                "err_H1": law.modified_h1(e, eps),
            }

        return Batch(self.problem, eps, u0, lambda n: cl.conservation_decomposition(law, n=n), errors)


_CASES = {"toy": ToyCase, "telegraph": TelegraphCase, "conservation": ConservationCase, "zero": ZeroCase}


def make_case(block: dict) -> Case:
    name = block.get("problem")
    if name not in _CASES:
        raise ValueError(f"unknown problem {name!r}; expected one of {PROBLEMS}")
    return _CASES[name](block)
