import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stiffscale.core import SemilinearProblem, modified_norm
from stiffscale.expkit import ERK2, ERK3, integrate
from stiffscale.harness.cases import make_case
from stiffscale.harness.reference import compute_reference
from stiffscale.micromacro import (Decomposition, defect_residual, defect_vector, e_diagnostic, init_conditions,
                                   micro_rhs, recompose, solve_micromacro)
from stiffscale.problems import telegraph as tg
from stiffscale.problems.toy import LAM, toy_decomposition, toy_initial, toy_problem

U0 = toy_initial()


def test_init_order_zero_is_identity():
    st0 = init_conditions(toy_decomposition(0), U0, 0.1)
    np.testing.assert_array_equal(st0.v, U0)
    np.testing.assert_array_equal(st0.w, 0)


@pytest.mark.parametrize("eps", [0.5, 0.1, 2.0**-10])
def test_init_order_one_values(eps):
    st1 = init_conditions(toy_decomposition(1), U0, eps)
    expect = [0.1 + 0.035 * eps, 0.7 - 0.005 * eps, 0.05 - 0.0049 * eps]
    np.testing.assert_allclose(st1.v, expect, atol=1e-15)
    # w = u0 - Omega_0(v)
    np.testing.assert_allclose(st1.w, U0 - toy_decomposition(1).omega(0.0, st1.v, eps), atol=1e-15)


def test_initial_micro_scaling():
    eps = np.array([2.0**-k for k in range(3, 16)])
    u0 = np.broadcast_to(U0, (eps.size, 3))
    for n in (1, 2):
        w0 = np.linalg.norm(init_conditions(toy_decomposition(n), u0, eps).w, axis=-1)
        slope = np.polyfit(np.log(eps), np.log(w0), 1)[0]
        assert abs(slope - (n + 1)) <= 0.2


def test_micro_rhs_with_zero_micro_is_minus_eta(rng):
    dec, p = toy_decomposition(2), toy_problem()
    v = rng.normal(size=(5, 3)) + 0j
    eps = np.full(5, 0.03)
    got = micro_rhs(dec, p, eps, 0.2, v, np.zeros_like(v))
    np.testing.assert_allclose(got, -dec.eta(0.2 / eps, v, eps), atol=1e-14)
    np.testing.assert_allclose(e_diagnostic(dec, p, eps, 0.2, v, np.zeros_like(v)),
                               -dec.eta(0.2 / eps, v, eps), atol=1e-14)


def _linear_setup():
    A = np.array([[0.0, 1.0], [-2.0, 0.5]])
    p = SemilinearProblem(1, 1, (0, 1), lambda u, eps=None: u @ A.T)
    zero = lambda *a: np.zeros_like(a[1] if len(a) == 3 else a[0])  # noqa: E731
    dec = Decomposition(0, lambda t, u, e: u, lambda u, e: u @ A.T, zero, zero)
    return p, dec, A


def test_linear_field_without_defect(rng):
    p, dec, A = _linear_setup()
    v, w = rng.normal(size=(2, 4, 2)) + 0j
    np.testing.assert_allclose(e_diagnostic(dec, p, 0.1, 0.3, v, w), w @ A.T, atol=1e-14)
    np.testing.assert_allclose(micro_rhs(dec, p, 0.1, 0.3, v, w),
                               -p.decay(0.1) * w + w @ A.T, atol=1e-14)


def test_micro_rhs_matches_trajectory_derivative():
    """Assembled micro RHS against d/dt [u - Omega(v)] along a fine reference."""
    eps, t0, d = 2.0**-8, 0.5, 1e-3
    p, dec = toy_problem(), toy_decomposition(2)
    st0 = init_conditions(dec, U0, eps)
    ts = np.array([0.0, t0 - 2 * d, t0 - d, t0, t0 + d, t0 + 2 * d])
    u = integrate(ERK3, p, eps, U0, ts, max_dt=2.0**-15)
    macro = SemilinearProblem(3, 1, (0, 0, 0, 1), lambda y, e=None: np.concatenate(
        [dec.macro_field(y[..., :3], eps), np.zeros_like(y[..., :1])], axis=-1))
    v = integrate(ERK3, macro, 1.0, np.append(st0.v, 0), ts, max_dt=2.0**-12)[:, :3]
    w = u - dec.omega(ts / eps, v, eps)
    dw = (8 * (w[4] - w[2]) - (w[5] - w[1])) / (12 * d)
    rhs = micro_rhs(dec, p, eps, t0, v[3], w[3])
    assert np.max(np.abs(dw - rhs)) <= 1e-6


def test_solution_at_zero_grid():
    p = tg.telegraph_mode_problem(3.0, 2.0)
    dec = tg.telegraph_decomposition(3.0, 2.0, n=1)
    u0 = np.array([1.0, 0.4j])
    sol = solve_micromacro(dec, p, ERK2, 0.1, u0, [0.0], exact_inverse=True)
    np.testing.assert_allclose(sol.u[0], u0, atol=1e-15)
    for n in (1, 2):
        eps = 2.0**-6
        sol = solve_micromacro(toy_decomposition(n), toy_problem(), ERK2, eps, U0, [0.0])
        assert np.linalg.norm(sol.u[0] - U0) <= 1e-14
        assert np.linalg.norm(sol.w[0]) <= 10 * eps ** (n + 1)


def test_telegraph_zero_mode_closed_form():
    eps = 0.01
    p = tg.telegraph_mode_problem(0.0, 2.0)
    u0 = np.array([0.7, 0.3 + 0.2j])
    t = np.linspace(0, 1, 9)
    for n in (0, 1):
        for exact_macro in (True, False):
            sol = solve_micromacro(tg.telegraph_decomposition(0.0, 2.0, n=n), p, ERK3, eps, u0, t,
                                   max_dt=2.0**-6, use_exact_macro=exact_macro)
            expect = np.stack([np.full(t.shape, u0[0]), u0[1] * np.exp(-t / eps)], axis=-1)
            np.testing.assert_allclose(sol.u, expect, atol=1e-12)


@pytest.mark.parametrize("n", [0, 1, 2])
def test_toy_defect_exact_partials(rng, n):
    dec, p = toy_decomposition(n), toy_problem()
    u = rng.normal(size=(100, 3)) + 1j * rng.normal(size=(100, 3))
    eps = np.exp(rng.uniform(np.log(2.0**-18), 0, 100))
    tau = rng.uniform(0, 5, 100)
    assert defect_residual(dec, p, eps, tau, u).max() <= (1e-12 if n == 0 else 1e-10)
    r_fd = defect_residual(dec, p, eps, tau, u, partials=dec.fd_partials(), relative=True)
    assert r_fd.max() <= 1e-5


def test_defect_saturates_for_large_tau(rng):
    dec, p = toy_decomposition(2), toy_problem()
    u = rng.normal(size=(20, 3)) + 0j
    eps = rng.uniform(0.01, 1, 20)
    a = defect_vector(dec, p, eps, np.full(20, 50.0), u)
    b = defect_vector(dec, p, eps, np.full(20, 800.0), u)
    assert np.max(np.abs(a - b)) <= 1e-12


def test_real_data_stays_real():
    eps = np.array([1.0, 2.0**-4, 2.0**-10])
    u0 = np.broadcast_to(U0, (3, 3))
    t = np.linspace(0, 1, 9)
    for n in (0, 1, 2):
        sol = solve_micromacro(toy_decomposition(n), toy_problem(), ERK3, eps, u0, t, max_dt=2.0**-6)
        for arr in (sol.v, sol.w, sol.u):
            assert np.max(np.abs(arr.imag)) <= 1e-11


def test_recomposition_matches_direct_reference():
    eps = 2.0**-6
    t = np.linspace(0, 1, 5)
    direct = integrate(ERK3, toy_problem(), eps, U0, t, max_dt=2.0**-13)
    for n in (1, 2):
        sol = solve_micromacro(toy_decomposition(n), toy_problem(), ERK3, eps, U0, t, max_dt=2.0**-13)
        assert np.max(np.abs(sol.u - direct)) <= 1e-9
        assert np.max(np.abs(recompose(toy_decomposition(n), eps, t[-1], sol.v[-1], sol.w[-1]) - sol.u[-1])) == 0


def test_vanishing_eps_stays_accurate():
    """Modified error at eps = 1e-12 stays below the envelope of a moderate-eps sweep."""
    dt = 2.0**-6
    sweep_eps = np.array([2.0**-k for k in range(3, 16)])
    eps = np.append(sweep_eps, 1e-12)
    case = make_case({"problem": "toy"})
    ref = compute_reference(case, eps, 16)
    b = case.batch(eps)
    sol = solve_micromacro(toy_decomposition(1), b.problem, ERK2, b.eps, b.u0, ref.t, max_dt=dt)
    assert np.all(np.isfinite(sol.u))
    err = np.max(modified_norm(eps, LAM, sol.u - ref.u), axis=0)
    C = np.max(err[:-1]) / dt**2
    assert err[-1] <= 2 * C * dt**2


@given(st.floats(0.0, 50.0), st.floats(2.0**-18, 1.0))
def test_decomposition_maps_real(tau, eps):
    rng = np.random.default_rng(int(tau * 1000) % 2**31)
    u = rng.normal(size=(4, 3)) + 0j
    for n in (0, 1, 2):
        dec = toy_decomposition(n)
        for val in (dec.omega(tau, u, eps), dec.eta(tau, u, eps), dec.macro_field(u, eps)):
            assert np.max(np.abs(val.imag)) <= 1e-12
