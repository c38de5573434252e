"""Problem abstraction for semilinear stiff systems ``u' = -(1/eps) Lam u + f(u)``.

States are complex numpy arrays whose last axis has length ``d = d_x + d_z``.
Leading axes are batch axes; ``eps`` is either a scalar or an array matching
the batch shape, so one call can advance a whole eps-sweep at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Field = Callable[[np.ndarray, "float | np.ndarray"], np.ndarray]
FieldDiff = Callable[[np.ndarray, np.ndarray, "float | np.ndarray"], np.ndarray]


class NonFiniteError(FloatingPointError):
    """Raised when an evaluation produces inf or nan."""


def as_state(u, d: int | None = None) -> np.ndarray:
    """Return ``u`` as a complex array, checking the trailing dimension."""
    arr = np.asarray(u, dtype=complex)
    if d is not None and arr.shape[-1] != d:
        raise ValueError(f"state has dimension {arr.shape[-1]}, expected {d}")
    return arr


def col(x) -> np.ndarray:
    """Append a trailing unit axis so a batch scalar broadcasts against states."""
    return np.asarray(x)[..., None]


def _naive_diff(f: Field) -> FieldDiff:
    def diff(u, du, eps):
        return f(u + du, eps) - f(u, eps)

    return diff


@dataclass(frozen=True)
class SemilinearProblem:
    """A stiff problem ``u' = -(1/eps) diag(lam) u + f(u, eps)``.

    ``f`` receives ``eps`` because regularised fields (telegraph) depend on it;
    fields that do not simply ignore the argument.  ``f_diff(u, du, eps)``
    returns ``f(u + du) - f(u)`` without forming the two large terms.
    """

    d_x: int
    d_z: int
    lam: tuple
    f: Field
    f_diff: FieldDiff | None = None
    label: str = "problem"

    def __post_init__(self):
        lam = tuple(int(x) for x in self.lam)
        if any(float(a) != float(b) for a, b in zip(lam, self.lam)):
            raise ValueError("lambda entries must be integers")
        if self.d_x < 0 or self.d_z < 1:
            raise ValueError("need d_x >= 0 and d_z >= 1")
        if len(lam) != self.d_x + self.d_z:
            raise ValueError("lambda length must equal d_x + d_z")
        if any(v != 0 for v in lam[: self.d_x]):
            raise ValueError("slow block of lambda must be zero")
        if any(v < 1 for v in lam[self.d_x :]):
            raise ValueError("fast block of lambda must be positive integers")
        object.__setattr__(self, "lam", lam)
        if self.f_diff is None:
            object.__setattr__(self, "f_diff", _naive_diff(self.f))

    @property
    def d(self) -> int:
        return self.d_x + self.d_z

    @property
    def lam_array(self) -> np.ndarray:
        return np.array(self.lam, dtype=float)

    def decay(self, eps) -> np.ndarray:
        """Diagonal of ``Lam / eps`` broadcast against the batch shape of ``eps``."""
        return self.lam_array / col(eps)


def eval_rhs(problem: SemilinearProblem, eps, u) -> np.ndarray:
    """Full right-hand side ``-(1/eps) Lam u + f(u)``."""
    if np.any(np.asarray(eps) <= 0):
        raise ValueError("eps must be positive")
    u = as_state(u, problem.d)
    out = -problem.decay(eps) * u + problem.f(u, eps)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite right-hand side")
    return out


def modified_norm(eps, lam, u) -> np.ndarray:
    """The eps-modified norm ``|u + (1/eps) Lam u|`` over the last axis."""
    u = np.asarray(u)
    scaled = u * (1.0 + np.asarray(lam, dtype=float) / col(eps))
    return np.linalg.norm(scaled, axis=-1)


def f_diff_defect(problem: SemilinearProblem, eps, u, du) -> np.ndarray:
    """``|f_diff(u, du) - (f(u+du) - f(u))|`` scaled by ``1 + |f(u)|``."""
    fu = problem.f(u, eps)
    ref = problem.f(u + du, eps) - fu
    err = np.linalg.norm(problem.f_diff(u, du, eps) - ref, axis=-1)
    return err / (1.0 + np.linalg.norm(fu, axis=-1))
