import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stiffscale import autoderive as ad
from stiffscale.micromacro import defect_residual
from stiffscale.problems import conservation as cl
from stiffscale.problems import telegraph as tg
from stiffscale.problems import toy

G = ad.lift_to_g(toy.toy_poly_field(), toy.LAM)
ID3 = ad.identity_map(3)
PHI1 = ad.next_phi(ID3, G, 0)


def _pts(seed=0, n=100):
    rng = np.random.default_rng(seed)
    return (rng.uniform(-1, 1, (n, 3)) + 0j, rng.uniform(0, 1, n), rng.uniform(0, 2 * np.pi, n),
            rng.uniform(0, 5, n))


def _close(a, b, tol=1e-12):
    return np.max(np.abs(np.asarray(a) - np.asarray(b))) <= tol


# oracles written from the displayed formulas ---------------------------------

def g_display(theta, u):
    u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
    e = np.exp(1j * theta)
    return -1j * np.stack([-u2 + e * u2 * u3, u1 - e * u1 * u3, np.conj(e) * (u1 * u2) ** 2], axis=-1)


def phi1_display(eps, theta, u):
    u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
    e = np.exp(1j * theta)
    return np.stack([u1 - eps * e * u2 * u3, u2 + eps * e * u1 * u3,
                     u3 + eps * np.conj(e) * (u1 * u2) ** 2], axis=-1)


def G1_display(eps, u):
    u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
    s = 1 - eps * (u1 * u2) ** 2
    return -1j * np.stack([-s * u2, s * u1, 2 * eps * u1 * u2 * u3 * (u1**2 - u2**2)], axis=-1)


def T_phi1_display(eps, theta, u):
    u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
    e = np.exp(1j * theta)
    U0 = (u1**2 + eps**2 * e**2 * (u2 * u3) ** 2) * (u2**2 + eps**2 * e**2 * (u1 * u3) ** 2)
    U1 = -2 * u1 * u2 * (u1**2 - u2**2) * (1 - eps * (u1 * u2) ** 2 + eps * e**3 * u3**3)
    U2 = -(e**2) * (2 * u1 * u2 * u3) ** 2
    return -1j * np.stack([
        e * u3 * (u2 + eps * e * u1 * u3 + 2 * eps**2 * u1 * u2**2 * (u1**2 - u2**2)),
        -e * u3 * (u1 - eps * e * u2 * u3 - 2 * eps**2 * u1**2 * u2 * (u1**2 - u2**2)),
        np.conj(e) * (U0 + eps * U1 + eps**2 * U2)], axis=-1)


def omega2_display(eps, tau, u):
    x1, x2, z = u[..., 0], u[..., 1], u[..., 2]
    q = np.exp(-tau)
    return np.stack([x1 - eps * q * x2 * z - 0.5 * eps**2 * q**2 * z**2 * x1,
                     x2 + eps * q * x1 * z - 0.5 * eps**2 * q**2 * z**2 * x2,
                     q * z + eps * (x1 * x2) ** 2 - 2 * eps**2 * x1 * x2 * (x1**2 - x2**2)], axis=-1)


def F2_display(eps, u):
    x1, x2, z = u[..., 0], u[..., 1], u[..., 2]
    c = eps * (x1 * x2) ** 2 - 2 * eps**2 * x1 * x2 * (x1**2 - x2**2)
    return np.stack([x2 * (-1 + c), x1 * (1 - c), 2 * eps * z * x1 * x2 * (x1**2 - x2**2)], axis=-1)


# lift / average ------------------------------------------------------------

def test_lift_toy_matches_display():
    u, eps, theta, _ = _pts()
    assert _close(ad.evaluate(G, eps, theta, u), g_display(theta, u))


def test_lift_linear_slow_field_has_no_modes():
    f = ad.PolyVectorField(2, ({(0, 1): 2.0}, {(1, 0): -3.0}))
    g = ad.lift_to_g(f, (0, 0))
    assert g.modes() == {0}
    u = np.array([0.3, -0.4]) + 0j
    assert _close(ad.evaluate(g, 0.5, 1.1, u), -1j * f(u))


def test_lift_constant_fast_component():
    f = ad.PolyVectorField(2, ({}, {(0, 0): 1.0}))
    g = ad.lift_to_g(f, (0, 1))
    assert [(r, j) for r, j, *_ in g.terms()] == [(1, -1)]


def test_lift_rejects_negative_lambda():
    with pytest.raises(ValueError):
        ad.lift_to_g(toy.toy_poly_field(), (0, 0, -1))


def test_average():
    u, eps, theta, _ = _pts()
    avg = ad.average(G)
    x1, x2 = u[:, 0], u[:, 1]
    assert _close(ad.evaluate(avg, eps, theta, u), -1j * np.stack([-x2, x1, 0 * x1], axis=-1))
    only_modes = ad.EpsModePolyMap([{(1, 0, (1, 0, 0)): 1.0}, {}, {}], 0)
    assert ad.average(only_modes).nterms == 0
    assert ad.average(avg).comps == avg.comps


# compose / T -----------------------------------------------------------------

def test_compose_with_identity():
    assert ad.compose(G, ID3, 0).comps == G.comps


def test_compose_evaluation_consistency():
    u, eps, theta, _ = _pts(3)
    gphi = ad.compose(G, PHI1, 8)
    direct = ad.evaluate(G, eps, theta, ad.evaluate(PHI1, eps, theta, u))
    assert _close(ad.evaluate(gphi, eps, theta, u), direct)


def test_T_of_identity():
    T = ad.operator_T(ID3, G, 0)
    assert _close(ad.evaluate(T - (G - ad.average(G)), 0.3, 0.7, _pts()[0]), 0.0, 0.0)


def test_T_phi1_matches_display_to_first_order():
    u, _, theta, _ = _pts(5)
    T = ad.operator_T(PHI1, G, 8)
    for eps in (1e-3, 1e-4):
        diff = np.max(np.abs(ad.evaluate(T, eps, theta, u) - T_phi1_display(eps, theta, u)))
        assert diff <= 5 * eps**2


@pytest.mark.parametrize("n", [0, 1, 2])
def test_T_has_zero_average(n):
    d = toy.toy_derivation(2)
    assert ad.average(ad.operator_T(d.phis[n], G, n)).max_abs_coef() <= 1e-12


def test_T_requires_identity_average():
    bad = ad.EpsModePolyMap([{(0, 0, (1, 0, 0)): 2.0}, {(0, 0, (0, 1, 0)): 1.0}, {(0, 0, (0, 0, 1)): 1.0}], 0)
    with pytest.raises(ad.InvariantViolation):
        ad.operator_T(bad, G, 0)


# next_phi / G, delta -----------------------------------------------------------

def test_next_phi_from_identity():
    u, eps, theta, _ = _pts()
    assert _close(ad.evaluate(PHI1, eps, theta, u), phi1_display(eps, theta, u))


def test_averaged_field_gives_identity_changes():
    f = ad.PolyVectorField(2, ({(0, 1): -1.0}, {(1, 0): 1.0}))
    g = ad.lift_to_g(f, (0, 0))
    phi = ad.identity_map(2)
    for n in range(3):
        phi = ad.next_phi(phi, g, n)
        assert phi.comps == ad.identity_map(2).comps


def test_next_phi_rejects_secular_term(monkeypatch):
    bad = ad.EpsModePolyMap([{(0, 0, (1, 0, 0)): 1.0}, {(0, 0, (0, 1, 0)): 1.0}, {(0, 0, (0, 0, 1)): 1.0}], 0)
    monkeypatch.setattr(ad, "operator_T", lambda *a: bad)
    with pytest.raises(ad.InvariantViolation):
        ad.next_phi(ID3, G, 0)


def test_G1_matches_display():
    u, eps, *_ = _pts()
    G1, _ = ad.make_G_delta(PHI1, G, 1)
    assert _close(ad.evaluate(G1, eps, 0.0, u), G1_display(eps, u))


def test_delta0_is_average_minus_g():
    _, delta = ad.make_G_delta(ID3, G)
    u, eps, theta, _ = _pts()
    assert _close(ad.evaluate(delta, eps, theta, u), ad.evaluate(ad.average(G) - G, eps, theta, u))


@pytest.mark.parametrize("n", [0, 1, 2])
def test_delta_zero_average(n):
    phi = toy.toy_derivation(n).phis[-1]
    _, full = ad.make_G_delta(phi, G, g_order=50)
    assert ad.average(full).max_abs_coef() <= 1e-12
    _, trunc = ad.make_G_delta(phi, G, g_order=n)
    assert ad.average(trunc).truncate(n).max_abs_coef() <= 1e-12


def test_make_G_delta_rejects_unscaled_oscillation():
    bad = ad.EpsModePolyMap([{(0, 0, (1, 0, 0)): 1.0, (1, 0, (0, 1, 0)): 0.5},
                             {(0, 0, (0, 1, 0)): 1.0}, {(0, 0, (0, 0, 1)): 1.0}], 0)
    with pytest.raises(ad.InvariantViolation):
        ad.make_G_delta(bad, G)


# shift / resummation ---------------------------------------------------------

def test_shift_identity_modes():
    s = ad.shift_map(ID3, toy.LAM)
    assert sorted((r, j) for r, j, *_ in s.terms()) == [(0, 0), (1, 0), (2, 1)]


def test_shift_moves_z_term_to_mode_zero():
    s = ad.shift_map(PHI1, toy.LAM)
    assert s.comps[2][(0, 1, (2, 2, 0))] == pytest.approx(1.0)


def _telegraph_core(k=3.0, alpha=2.0, eps=0.1):
    kh2 = float(tg.khat2(k, alpha, eps))
    B = float(tg._b(k, alpha, eps))
    return ad.PolyVectorField(2, ({(1, 0): -kh2, (0, 1): -1j * k}, {(0, 1): kh2, (1, 0): -1j * k * B}))


def _conservation_core(N=4):
    law = cl.ConservationLaw(N=N)
    D, b = law.D, law.b

    def e(*pairs):
        a = [0] * (2 * N)
        for i, p in pairs:
            a[i] += p
        return tuple(a)

    comps = [dict() for _ in range(2 * N)]
    for i in range(N):
        for j in range(N):
            if D[i, j] == 0:
                continue
            for key, c in ((e((N + j, 1)), -D[i, j]), (e((j, 2)), -b * D[i, j])):
                comps[i][key] = comps[i].get(key, 0.0) + c
            for key, c in ((e((i, 1), (N + j, 1)), 2 * b * D[i, j]), (e((j, 1)), -D[i, j]),
                           (e((i, 1), (j, 2)), 2 * b * b * D[i, j])):
                comps[N + i][key] = comps[N + i].get(key, 0.0) + c
    return law, ad.PolyVectorField(2 * N, tuple(comps)), (0,) * N + (1,) * N


def test_conservation_core_matches_field():
    law, f, _ = _conservation_core()
    u = np.random.default_rng(0).normal(size=(10, 8)) + 0j
    assert _close(f(u), cl.conservation_problem(law).f(u), 1e-13)


@pytest.mark.parametrize("core", ["toy", "telegraph", "conservation"])
def test_no_negative_modes_after_shift(core):
    if core == "toy":
        f, lam = toy.toy_poly_field(), toy.LAM
    elif core == "telegraph":
        f, lam = _telegraph_core(), tg.LAM
    else:
        _, f, lam = _conservation_core()
    for n in range(3):
        d = ad.derive(f, lam, n)
        for m in (d.phis[-1], d.delta):
            assert ad.negative_modes(ad.shift_map(m, lam)) == []


def test_telegraph_order_zero_cross_check():
    k, alpha, eps = 3.0, 2.0, 0.1
    auto = ad.derive(_telegraph_core(k, alpha, eps), tg.LAM, 0).decomposition
    hand = tg.telegraph_decomposition(k, alpha, n=0)
    rng = np.random.default_rng(2)
    u = rng.normal(size=(50, 2)) + 1j * rng.normal(size=(50, 2))
    tau = rng.uniform(0, 5, 50)
    assert _close(auto.omega(tau, u, eps), hand.omega(tau, u, eps))
    assert _close(auto.macro_field(u, eps), hand.macro_field(u, eps))
    assert _close(auto.eta(tau, u, eps), hand.eta(tau, u, eps))


def test_omega2_and_F2_match_display():
    dec = toy.toy_derivation(2).decomposition
    u, eps, _, tau = _pts(9)
    assert _close(dec.omega(tau, u, eps), omega2_display(eps, tau, u))
    assert _close(dec.macro_field(u, eps), F2_display(eps, u))


def test_center_manifold_limit():
    dec = toy.toy_derivation(2).decomposition
    u, eps, *_ = _pts(4)
    z_inf = dec.omega(np.full(100, 800.0), u, eps)[:, 2]
    assert _close(z_inf, toy.center_manifold(u[:, :2], eps))


def test_dissipative_rejects_negative_modes():
    with pytest.raises(ad.InvariantViolation):
        ad.evaluate(G, 0.1, 1.0, np.ones(3), convention="dissipative")
    with pytest.raises(ad.InvariantViolation):
        ad.to_dissipative(G, G, G, 0)
    with pytest.raises(ValueError):
        ad.evaluate(ID3, 0.1, 0.0, np.ones(3), convention="other")


# evaluation ------------------------------------------------------------------

def test_eval_identity():
    u = _pts()[0]
    assert _close(ad.evaluate(ID3, 0.4, 1.3, u), u, 0.0)


def test_eval_phi1_spot_value():
    got = ad.evaluate(PHI1, 0.1, 0.0, np.array([0.1, 0.7, 0.05]))
    np.testing.assert_allclose(got, [0.0965, 0.7005, 0.05049], atol=1e-15)


def test_periodic_and_dissipative_agree_at_zero():
    s = ad.shift_map(toy.toy_derivation(2).phis[-1], toy.LAM)
    u, eps, *_ = _pts()
    assert _close(ad.evaluate(s, eps, 0.0, u), ad.evaluate(s, eps, 0.0, u, convention="dissipative"))


def test_term_cap_raises():
    with pytest.raises(ad.ExpansionTooLarge):
        ad.EpsModePolyMap([{(0, 0, (i, 0, 0)): 1.0 for i in range(10)}, {}, {}], 0, max_terms=5)
    with pytest.raises(ad.ExpansionTooLarge):
        ad.EpsModePolyMap([{(0, 0, (ad.MAX_DEGREE + 1, 0, 0)): 1.0}, {}, {}], 0)


@given(st.floats(0, 50), st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(0, 1))
def test_real_states_map_to_real(tau, vals, eps):
    u = np.array(vals) + 0j
    dec = toy.toy_derivation(2).decomposition
    for val in (dec.omega(tau, u, eps), dec.eta(tau, u, eps), dec.macro_field(u, eps)):
        assert np.max(np.abs(val.imag)) <= 1e-12


@pytest.mark.parametrize("n", [0, 1, 2])
def test_autoderived_defect_identity(n):
    dec = toy.toy_derivation(n).decomposition
    u, eps, _, tau = _pts(11)
    eps = 0.05 + 0.95 * eps
    assert defect_residual(dec, toy.toy_problem(), eps, tau, u).max() <= 1e-12


@pytest.mark.parametrize("n", [0, 1, 2])
def test_autoderived_matches_hand_coded(n):
    auto = toy.toy_derivation(n).decomposition
    hand = toy.toy_decomposition(n)
    u, eps, _, tau = _pts(13)
    assert _close(auto.omega(tau, u, eps), hand.omega(tau, u, eps))
    assert _close(auto.macro_field(u, eps), hand.macro_field(u, eps))
    assert _close(auto.eta(tau, u, eps), hand.eta(tau, u, eps), 1e-11)
    assert _close(auto.shift_phi(u, eps), hand.shift_phi(u, eps))


def test_derivation_json_and_pretty():
    d = toy.toy_derivation(1)
    assert '"order": 1' in d.to_json()
    text = d.decomposition.maps.shifted_phi.pretty(["x1", "x2", "z"], var="tau", dissipative=True)
    assert "e^(-1 tau)" in text or "e^(-tau)" in text
    with pytest.raises(ValueError):
        ad.derive(toy.toy_poly_field(), toy.LAM, -1)
