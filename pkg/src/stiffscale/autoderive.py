"""Symbolic averaging for polynomial vector fields.

A map ``(theta, u) -> phi_theta(u)`` is stored as a truncated series

    phi_theta(u)_r = sum  coef * eps^m * exp(i j theta) * u^alpha

with one sparse dict ``{(j, m, alpha): coef}`` per output component ``r``.
From the oscillatory field ``g_theta(u) = -i exp(-i theta Lam) f(exp(i theta Lam) u)``
the averaging recurrence builds the near-identity maps ``Phi^[n]``, the averaged
field ``G^[n]`` and the defect ``delta^[n]``; shifting by ``exp(i theta Lam)`` and
substituting ``exp(i j theta) -> exp(-j tau)`` gives the dissipative change of
variable ``Omega^[n]``, the slow field ``F^[n] = i G^[n]`` and the defect ``eta^[n]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import col

MAX_TERMS = 20000
MAX_DEGREE = 16
PRUNE = 1e-15


class ExpansionTooLarge(RuntimeError):
    """Term or degree cap exceeded; retry with a lower order."""


class InvariantViolation(RuntimeError):
    """A structural property required by the construction does not hold."""


Key = tuple  # (mode j, eps power m, exponent tuple alpha)


def _unit(d, i):
    return tuple(1 if k == i else 0 for k in range(d))


@dataclass(frozen=True)
class PolyVectorField:
    """Polynomial field: ``terms[r]`` maps exponent tuples to coefficients."""

    d: int
    terms: tuple

    def __post_init__(self):
        if len(self.terms) != self.d:
            raise ValueError("one term dict per component required")

    @property
    def max_degree(self) -> int:
        return max((sum(a) for comp in self.terms for a in comp), default=0)

    def __call__(self, u):
        u = np.asarray(u, dtype=complex)
        out = np.zeros(u.shape, dtype=complex)
        for r, comp in enumerate(self.terms):
            for alpha, c in comp.items():
                out[..., r] += c * np.prod(u ** np.array(alpha), axis=-1)
        return out


class EpsModePolyMap:
    """Truncated eps/Fourier/polynomial series with one dict per component."""

    def __init__(self, comps, trunc_order: int, max_terms: int = MAX_TERMS):
        self.comps = [dict(c) for c in comps]
        self.trunc_order = trunc_order
        self.max_terms = max_terms
        self._check_caps()

    @property
    def d(self) -> int:
        return len(self.comps)

    @property
    def nterms(self) -> int:
        return sum(len(c) for c in self.comps)

    def _check_caps(self):
        if self.nterms > self.max_terms:
            raise ExpansionTooLarge(
                f"{self.nterms} terms exceed cap {self.max_terms}; lower the order"
            )
        for c in self.comps:
            for _, _, alpha in c:
                if sum(alpha) > MAX_DEGREE:
                    raise ExpansionTooLarge(f"degree {sum(alpha)} exceeds cap {MAX_DEGREE}")

    def modes(self) -> set:
        return {j for c in self.comps for j, _, _ in c}

    def eps_powers(self) -> set:
        return {m for c in self.comps for _, m, _ in c}

    def terms(self):
        """Iterate ``(r, j, m, alpha, coef)``."""
        for r, c in enumerate(self.comps):
            for (j, m, alpha), coef in c.items():
                yield r, j, m, alpha, coef

    def __sub__(self, other):
        return EpsModePolyMap(
            [_add(a, b, -1.0) for a, b in zip(self.comps, other.comps)],
            max(self.trunc_order, other.trunc_order),
        )

    def __add__(self, other):
        return EpsModePolyMap(
            [_add(a, b, 1.0) for a, b in zip(self.comps, other.comps)],
            max(self.trunc_order, other.trunc_order),
        )

    def scale(self, c) -> "EpsModePolyMap":
        return EpsModePolyMap([{k: c * v for k, v in comp.items()} for comp in self.comps],
                              self.trunc_order)

    def truncate(self, order: int) -> "EpsModePolyMap":
        return EpsModePolyMap(
            [{k: v for k, v in comp.items() if k[1] <= order} for comp in self.comps], order
        )

    def max_abs_coef(self) -> float:
        return max((abs(v) for c in self.comps for v in c.values()), default=0.0)

    def __call__(self, eps, theta, u, convention="periodic"):
        return evaluate(self, eps, theta, u, convention)

    def to_records(self, d_names=None):
        rec = []
        for r, j, m, alpha, c in sorted(self.terms(), key=lambda t: (t[0], t[2], t[1], t[3])):
            rec.append({"component": r, "mode": j, "eps_power": m,
                        "re": float(np.real(c)), "im": float(np.imag(c)),
                        "exponents": list(alpha)})
        return rec

    def pretty(self, names=None, var="theta", dissipative=False) -> str:
        """Readable sum; modes print as ``e^(j i theta)`` or, dissipative, ``e^(-j tau)``."""
        names = names or [f"u{i + 1}" for i in range(self.d)]
        lines = []
        for r, comp in enumerate(self.comps):
            parts = []
            for (j, m, alpha), c in sorted(comp.items(), key=lambda kv: (kv[0][1], kv[0][0], kv[0][2])):
                mono = "*".join(
                    f"{names[i]}^{p}" if p > 1 else names[i] for i, p in enumerate(alpha) if p
                ) or "1"
                fac = f"eps^{m}*" if m > 1 else ("eps*" if m == 1 else "")
                if not j:
                    osc = ""
                elif dissipative:
                    osc = f"e^(-{j}{var})*" if j != 1 else f"e^(-{var})*"
                else:
                    osc = f"e^({j}i{var})*"
                parts.append(f"({_fmt(c)}){fac}{osc}{mono}")
            lines.append(f"[{r}] " + (" + ".join(parts) if parts else "0"))
        return "\n".join(lines)


def _fmt(c):
    c = complex(c)
    if abs(c.imag) < 1e-15:
        return f"{c.real:.12g}"
    if abs(c.real) < 1e-15:
        return f"{c.imag:.12g}i"
    return f"{c.real:.12g}{c.imag:+.12g}i"


def _add(a: dict, b: dict, sign: float) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0.0) + sign * v
    return {k: v for k, v in out.items() if abs(v) > PRUNE}


def _mul(a: dict, b: dict, trunc: int) -> dict:
    out = {}
    for (j1, m1, a1), c1 in a.items():
        for (j2, m2, a2), c2 in b.items():
            m = m1 + m2
            if m > trunc:
                continue
            key = (j1 + j2, m, tuple(x + y for x, y in zip(a1, a2)))
            out[key] = out.get(key, 0.0) + c1 * c2
            if len(out) > MAX_TERMS:
                raise ExpansionTooLarge("product exceeds term cap; lower the order")
    return {k: v for k, v in out.items() if abs(v) > PRUNE}


def _diff(a: dict, i: int) -> dict:
    out = {}
    for (j, m, alpha), c in a.items():
        p = alpha[i]
        if p:
            beta = alpha[:i] + (p - 1,) + alpha[i + 1:]
            out[(j, m, beta)] = out.get((j, m, beta), 0.0) + p * c
    return out


def identity_map(d: int, trunc_order: int = 0) -> EpsModePolyMap:
    return EpsModePolyMap([{(0, 0, _unit(d, r)): 1.0 + 0j} for r in range(d)], trunc_order)


def poly_field_from_map(field: PolyVectorField) -> EpsModePolyMap:
    return EpsModePolyMap(
        [{(0, 0, tuple(a)): complex(c) for a, c in comp.items()} for comp in field.terms], 0
    )


def lift_to_g(f: PolyVectorField, lam) -> EpsModePolyMap:
    """Oscillatory field ``g_theta(u) = -i exp(-i theta Lam) f(exp(i theta Lam) u)``."""
    lam = [int(x) for x in lam]
    if any(x < 0 for x in lam):
        raise ValueError("lambda must be nonnegative")
    comps = []
    for r, comp in enumerate(f.terms):
        out = {}
        for alpha, c in comp.items():
            j = sum(a * l for a, l in zip(alpha, lam)) - lam[r]
            key = (j, 0, tuple(alpha))
            out[key] = out.get(key, 0.0) - 1j * c
        comps.append({k: v for k, v in out.items() if v != 0})
    return EpsModePolyMap(comps, 0)


def average(phi_map: EpsModePolyMap) -> EpsModePolyMap:
    return EpsModePolyMap(
        [{k: v for k, v in comp.items() if k[0] == 0} for comp in phi_map.comps],
        phi_map.trunc_order,
    )


class _PowerCache:
    def __init__(self, phi_map: EpsModePolyMap, trunc: int):
        self.base = phi_map.comps
        self.trunc = trunc
        self.cache = {}
        d = phi_map.d
        self.one = {(0, 0, (0,) * d): 1.0 + 0j}

    def power(self, i: int, p: int) -> dict:
        if p == 0:
            return self.one
        key = (i, p)
        if key not in self.cache:
            self.cache[key] = self.base[i] if p == 1 else _mul(self.power(i, p - 1), self.base[i], self.trunc)
        return self.cache[key]


def compose(g_map: EpsModePolyMap, phi_map: EpsModePolyMap, trunc_order: int) -> EpsModePolyMap:
    """``(g o phi)_theta(u) = g_theta(phi_theta(u))`` keeping eps powers up to ``trunc_order``."""
    if g_map.d != phi_map.d:
        raise ValueError("dimension mismatch")
    pw = _PowerCache(phi_map, trunc_order)
    comps = []
    for comp in g_map.comps:
        acc = {}
        for (j, m, alpha), c in comp.items():
            if m > trunc_order:
                continue
            prod = {(j, m, (0,) * phi_map.d): c}
            for i, p in enumerate(alpha):
                if p:
                    prod = _mul(prod, pw.power(i, p), trunc_order)
            acc = _add(acc, prod, 1.0)
        comps.append(acc)
    return EpsModePolyMap(comps, trunc_order)


def jacobian_apply(phi_map: EpsModePolyMap, v_map: EpsModePolyMap, trunc_order: int) -> EpsModePolyMap:
    """``(d_u phi) . v`` as a series."""
    comps = []
    for comp in phi_map.comps:
        acc = {}
        for i in range(phi_map.d):
            di = _diff(comp, i)
            if di and v_map.comps[i]:
                acc = _add(acc, _mul(di, v_map.comps[i], trunc_order), 1.0)
        comps.append(acc)
    return EpsModePolyMap(comps, trunc_order)


def is_identity_average(phi_map: EpsModePolyMap) -> bool:
    d = phi_map.d
    for r, comp in enumerate(phi_map.comps):
        for (j, m, alpha), c in comp.items():
            if j != 0:
                continue
            expect = 1.0 if (m == 0 and alpha == _unit(d, r)) else 0.0
            if abs(c - expect) > 1e-13:
                return False
        if abs(comp.get((0, 0, _unit(d, r)), 0.0) - 1.0) > 1e-13:
            return False
    return True


def operator_T(phi_map: EpsModePolyMap, g_map: EpsModePolyMap, trunc_order: int) -> EpsModePolyMap:
    """``T(phi) = g o phi - d_u phi . <g o phi>``."""
    if not is_identity_average(phi_map):
        raise InvariantViolation("operator T requires an identity-average map")
    gphi = compose(g_map, phi_map, trunc_order)
    return gphi - jacobian_apply(phi_map, average(gphi), trunc_order)


def _check_zero_average(t_map: EpsModePolyMap, tol=1e-12):
    scale = max(1.0, t_map.max_abs_coef())
    for comp in t_map.comps:
        for (j, m, alpha), c in comp.items():
            if j == 0 and abs(c) > tol * scale:
                raise InvariantViolation("T(phi) has a nonzero average; integral would be secular")


def next_phi(phi_n: EpsModePolyMap, g_map: EpsModePolyMap, n: int) -> EpsModePolyMap:
    """``Phi^[n+1] = id + eps int_0^theta T - eps <int_0^. T>`` from ``Phi^[n]``.

    ``T(Phi^[n])`` is truncated at ``eps^n`` so the result keeps powers up to ``n+1``.
    """
    t_map = operator_T(phi_n, g_map, n)
    _check_zero_average(t_map)
    d = phi_n.d
    comps = []
    for r, comp in enumerate(t_map.comps):
        out = {(0, 0, _unit(d, r)): 1.0 + 0j}
        for (j, m, alpha), c in comp.items():
            if j == 0:
                continue
            # int_0^theta e^{ij s} ds minus its mean is e^{ij theta} / (ij)
            out[(j, m + 1, alpha)] = c / (1j * j)
        comps.append(out)
    return EpsModePolyMap(comps, n + 1)


def make_G_delta(phi_map: EpsModePolyMap, g_map: EpsModePolyMap, g_order: int | None = None):
    """Averaged field ``G = <g o Phi>`` and defect ``delta``.

    ``delta = (1/eps) d_theta Phi + d_u Phi . G - g o Phi`` is formed without
    truncating the composition, so the defect identity holds for the returned
    ``G`` whatever ``g_order`` is.  With ``g_order`` the field ``G`` keeps only
    eps powers up to that order.
    """
    if not is_identity_average(phi_map):
        raise InvariantViolation("make_G_delta requires an identity-average map")
    full = _full_order(phi_map, g_map)
    gphi = compose(g_map, phi_map, full)
    G = average(gphi)
    if g_order is not None:
        G = G.truncate(g_order)
    comps = []
    for comp in phi_map.comps:
        out = {}
        for (j, m, alpha), c in comp.items():
            if j == 0:
                continue
            if m == 0:
                raise InvariantViolation("theta-dependent term without an eps factor")
            out[(j, m - 1, alpha)] = 1j * j * c
        comps.append(out)
    dtheta = EpsModePolyMap(comps, full)
    delta = dtheta + jacobian_apply(phi_map, G, full) - gphi
    return G, delta


def _full_order(phi_map, g_map):
    # highest eps power any product can reach without truncation
    deg = max((sum(a) for _, _, _, a, _ in g_map.terms()), default=1)
    top_phi = max(phi_map.eps_powers(), default=0)
    top_g = max(g_map.eps_powers(), default=0)
    return top_g + max(1, deg) * top_phi + top_phi


def shift_map(phi_map: EpsModePolyMap, lam) -> EpsModePolyMap:
    """``exp(i theta Lam) phi_theta``: mode index of component ``r`` grows by ``lam[r]``."""
    lam = [int(x) for x in lam]
    return EpsModePolyMap(
        [{(j + lam[r], m, a): c for (j, m, a), c in comp.items()} for r, comp in enumerate(phi_map.comps)],
        phi_map.trunc_order,
    )


def negative_modes(phi_map: EpsModePolyMap) -> list:
    """Terms with a negative Fourier index, as ``(r, j, m, alpha)`` tuples."""
    return [(r, j, m, a) for r, j, m, a, c in phi_map.terms() if j < 0]


# ---------------------------------------------------------------------------
# numeric evaluation


class CompiledMap:
    """Vectorised evaluator of a flat term list over batched states.

    ``records`` holds ``(out_index, j, m, alpha, coef)`` tuples.
    """

    def __init__(self, d: int, out_dim: int, records):
        recs = list(records)
        self.d = d
        self.out_dim = out_dim
        self.n = len(recs)
        self.coef = np.array([c for *_, c in recs], dtype=complex)
        self.modes = np.array([r[1] for r in recs], dtype=float)
        self.pows = np.array([r[2] for r in recs], dtype=float)
        self.exps = np.array([r[3] for r in recs], dtype=int).reshape(self.n, d)
        self.select = np.zeros((self.n, out_dim))
        self.select[np.arange(self.n), [r[0] for r in recs]] = 1.0
        self.has_neg = bool(np.any(self.modes < 0))
        self.max_exp = int(self.exps.max()) if self.n else 0

    @classmethod
    def of(cls, phi_map: "EpsModePolyMap") -> "CompiledMap":
        return cls(phi_map.d, phi_map.d, phi_map.terms())

    def monomials(self, u):
        u = np.asarray(u, dtype=complex)
        if self.n == 0:
            return np.zeros(u.shape[:-1] + (0,), dtype=complex)
        # powers by repeated products, exponents are small integers
        pw = [np.ones_like(u), u]
        for _ in range(2, self.max_exp + 1):
            pw.append(pw[-1] * u)
        table = np.stack(pw, axis=-2)  # (..., max_exp+1, d)
        vals = table[..., self.exps, np.arange(self.d)]  # (..., n, d)
        return np.prod(vals, axis=-1)

    def weights(self, eps, phase):
        """``coef * eps^m * phase^j`` with phase given as the per-term factor array."""
        e = col(eps)
        return self.coef * e ** self.pows * phase

    def eval_periodic(self, eps, theta, u):
        phase = np.exp(1j * col(theta) * self.modes)
        return (self.weights(eps, phase) * self.monomials(u)) @ self.select

    def eval_dissipative(self, eps, tau, u):
        if self.has_neg:
            raise InvariantViolation("dissipative evaluation needs nonnegative modes")
        phase = np.exp(-col(tau) * self.modes)
        return (self.weights(eps, phase) * self.monomials(u)) @ self.select


def evaluate(phi_map: EpsModePolyMap, eps, theta_or_tau, u, convention="periodic"):
    """Evaluate with ``exp(i j theta)`` (periodic) or ``exp(-j tau)`` (dissipative)."""
    cm = CompiledMap.of(phi_map)
    if convention == "periodic":
        return cm.eval_periodic(eps, theta_or_tau, u)
    if convention == "dissipative":
        return cm.eval_dissipative(eps, theta_or_tau, u)
    raise ValueError(f"unknown convention {convention!r}")


def _jacobian_map(phi_map: EpsModePolyMap) -> CompiledMap:
    d = phi_map.d
    recs = []
    for r, comp in enumerate(phi_map.comps):
        for i in range(d):
            for (j, m, alpha), c in _diff(comp, i).items():
                recs.append((r * d + i, j, m, alpha, c))
    return CompiledMap(d, d * d, recs)


def _dtau_map(phi_map: EpsModePolyMap) -> EpsModePolyMap:
    return EpsModePolyMap(
        [{k: -k[0] * c for k, c in comp.items() if k[0] != 0} for comp in phi_map.comps],
        phi_map.trunc_order,
    )


# ---------------------------------------------------------------------------
# dissipative maps


class DissipativeMaps:
    """Compiled evaluators for ``Omega``, ``F``, ``eta`` and their partials."""

    def __init__(self, shifted_phi, shifted_delta, G):
        bad = negative_modes(shifted_phi) + negative_modes(shifted_delta)
        if bad:
            raise InvariantViolation(f"negative modes after shift: {bad[:4]}")
        self.shifted_phi = shifted_phi
        self.shifted_delta = shifted_delta
        self.G = G
        self.d = shifted_phi.d
        self._omega = CompiledMap.of(shifted_phi)
        self._eta = CompiledMap.of(shifted_delta.scale(1j))
        self._F = CompiledMap.of(G.scale(1j))
        self._dtau = CompiledMap.of(_dtau_map(shifted_phi))
        self._jac = _jacobian_map(shifted_phi)
        corr = EpsModePolyMap(
            [{k: c for k, c in comp.items() if k[1] >= 1} for comp in shifted_phi.comps],
            shifted_phi.trunc_order,
        )
        self._shift = CompiledMap.of(corr)

    def omega(self, tau, u, eps):
        return self._omega.eval_dissipative(eps, tau, u)

    def eta(self, tau, u, eps):
        return self._eta.eval_dissipative(eps, tau, u)

    def macro_field(self, u, eps):
        return self._F.eval_dissipative(eps, 0.0, u)

    def shift_phi(self, u, eps):
        return self._shift.eval_dissipative(eps, 0.0, u)

    def domega_dtau(self, tau, u, eps):
        return self._dtau.eval_dissipative(eps, tau, u)

    def omega_jacobian(self, tau, u, eps):
        flat = self._jac.eval_dissipative(eps, tau, u)
        return flat.reshape(flat.shape[:-1] + (self.d, self.d))

    def domega_du(self, tau, u, eps, h):
        J = self.omega_jacobian(tau, u, eps)
        return np.einsum("...ij,...j->...i", J, np.asarray(h, dtype=complex))


def to_dissipative(shifted_phi, shifted_delta, G, order_n: int, label: str = "autoderived"):
    """Resum shifted maps into a :class:`~stiffscale.micromacro.Decomposition`."""
    from .micromacro import Decomposition

    maps = DissipativeMaps(shifted_phi, shifted_delta, G)
    return Decomposition(
        order_n=order_n,
        omega=maps.omega,
        macro_field=maps.macro_field,
        eta=maps.eta,
        shift_phi=maps.shift_phi,
        domega_dtau=maps.domega_dtau,
        domega_du=maps.domega_du,
        label=label,
        maps=maps,
    )


@dataclass
class Derivation:
    """Everything produced by :func:`derive` for one order."""

    n: int
    lam: tuple
    g: EpsModePolyMap
    phis: list
    G: EpsModePolyMap
    delta: EpsModePolyMap
    decomposition: object

    def to_json(self) -> str:
        payload = {
            "order": self.n,
            "lambda": list(self.lam),
            "Phi": self.phis[-1].to_records(),
            "G": self.G.to_records(),
            "delta": self.delta.to_records(),
            "Omega": self.decomposition.maps.shifted_phi.to_records(),
            "eta": self.decomposition.maps.shifted_delta.scale(1j).to_records(),
            "F": self.decomposition.maps.G.scale(1j).to_records(),
        }
        return json.dumps(payload, indent=1)


def derive(f: PolyVectorField, lam, n: int, g_order: int | None = None) -> Derivation:
    """Run the averaging recurrence to order ``n`` and resum it.

    ``g_order`` truncates ``G^[n]`` (default ``n``); the defect is always
    computed consistently with the retained ``G``.
    """
    if n < 0:
        raise ValueError("order must be nonnegative")
    g = lift_to_g(f, lam)
    phis = [identity_map(f.d, 0)]
    for k in range(n):
        phis.append(next_phi(phis[-1], g, k))
    G, delta = make_G_delta(phis[-1], g, n if g_order is None else g_order)
    dec = to_dissipative(shift_map(phis[-1], lam), shift_map(delta, lam), G, n,
                         label=f"autoderived-n{n}")
    return Derivation(n, tuple(lam), g, phis, G, delta, dec)
