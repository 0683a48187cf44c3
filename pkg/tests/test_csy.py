import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pathbinomial.csy import (CSYParams, FilterSpec, IntensitySeries, accumulate,
                              bandpass_experiment, brownian_increments, centralize,
                              coarsen_increments, eta, eta_series, intensity, price_csy,
                              sde_coefficients, simulate_continuum, step_log_returns,
                              step_probability, stock_path, two_point_values)
from pathbinomial.lattice import (ArbitrageError, MarketParams, OptionSpec, build_time_grid,
                                  build_tree, price_backward_induction)

SPA = CSYParams.gaussian(0.0016, 0.002, 0.29, 8.8, 0.089, 1800.0)
XI_FIX = np.array([1, 1, -1, 1, -1, -1, 1, 1, 1, -1, 1, -1], dtype=float)


def _gauss(x, b):
    return math.exp(-0.5 * (x / b) ** 2) / (b * math.sqrt(2 * math.pi))


# -- centring and intensities ---------------------------------------------

def test_centralize_zero_at_mean():
    dt = 1 / 252
    z = centralize([(0.1 - 0.02) * dt], 0.1, 0.2, dt)
    assert z[0] == pytest.approx(0.0, abs=1e-15)


def test_centralize_affine_shift():
    dt, mu, s = 1 / 252, 0.1, 0.2
    r = np.array([0.01, -0.003, 0.0, 0.02, -0.015])
    c = (mu - s * s / 2) * dt
    np.testing.assert_allclose(centralize(r + c, mu, s, dt) - centralize(r, mu, s, dt),
                               c / (s * math.sqrt(dt)), rtol=1e-12)


def test_centralize_hand_values():
    r = np.array([0.01, -0.02, 0.005, 0.0, 0.03])
    dt, mu, s = 0.5, 0.04, 0.3
    oracle = [(x - (mu - 0.045) * dt) / (s * math.sqrt(dt)) for x in r]
    np.testing.assert_allclose(centralize(r, mu, s, dt), oracle, rtol=1e-14)


def test_centralize_rejects_zero_sigma():
    with pytest.raises(ValueError):
        centralize([0.0], 0.1, 0.0, 1.0)


def test_symmetric_intensity():
    ser = intensity([0.3, -1.0, 0.0, 2.0], p_upturn=0.5)
    np.testing.assert_array_equal(ser.xi, [1, -1, 1, 1])


def test_two_point_values_scalar():
    a, b = two_point_values(0.6)
    assert a == pytest.approx(0.816497, abs=5e-7) and b == pytest.approx(-1.224745, abs=5e-7)
    assert a == pytest.approx(math.sqrt(0.4 / 0.6), abs=1e-15)


def test_two_point_mean_037():
    a, b = two_point_values(0.37)
    assert abs(0.37 * a + 0.63 * b) < 1e-15


@pytest.mark.parametrize("p", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
def test_two_point_moments(p):
    a, b = two_point_values(p)
    assert abs(p * a + (1 - p) * b) <= 1e-14
    assert abs(p * a * a + (1 - p) * b * b - 1) <= 1e-14


def test_intensity_estimates_p():
    ser = intensity([1.0, 2.0, -1.0, 0.5])
    assert ser.p_upturn == 0.75
    a, b = two_point_values(0.75)
    np.testing.assert_array_equal(ser.xi, [a, a, b, a])


def test_intensity_degenerate():
    with pytest.raises(ValueError, match="one sign"):
        intensity([1.0, 2.0, 3.0])


def test_raw_sign_variant_keeps_observed_p():
    ser = intensity([1.0, -2.0, 3.0], raw_sign=True)
    np.testing.assert_array_equal(ser.xi, [1, -1, 1])
    assert ser.p_upturn == pytest.approx(2 / 3)


# -- accumulators ---------------------------------------------------------

def test_identity_filter_gives_y_equal_x():
    acc = accumulate(XI_FIX, FilterSpec.constant(1.0), FilterSpec.constant(0.0), 0.1)
    np.testing.assert_allclose(acc.Y, acc.X, rtol=1e-15)
    assert acc.X[0] == acc.Y[0] == acc.V[0] == 0.0


def test_accumulator_ledger_k3():
    xi = np.array([1.0, -1.0, 1.0])
    h, g = FilterSpec.gaussian(1.0), FilterSpec.gaussian(2.0)
    acc = accumulate(xi, h, g, 1.0)
    X, A, Y, V = [0.0], [0.0], [0.0], [0.0]
    for i, x in enumerate(xi):
        Y.append(Y[-1] + x * _gauss(X[-1], 1.0))
        V.append(V[-1] + x * _gauss(A[-1], 2.0))
        A.append(A[-1] + X[-1])
        X.append(X[-1] + x)
    np.testing.assert_allclose(acc.X, X, rtol=1e-15)
    np.testing.assert_allclose(acc.Y, Y, rtol=1e-15)
    np.testing.assert_allclose(acc.V, V, rtol=1e-15)
    np.testing.assert_allclose(acc.arg_g, A, rtol=1e-15)


def test_piecewise_filter_right_limit():
    f = FilterSpec.piecewise([0.0], [lambda x: np.zeros_like(x), lambda x: 1 + x])
    np.testing.assert_array_equal(f(np.array([-0.1, 0.0, 0.5])), [0.0, 1.0, 1.5])


# -- eta -------------------------------------------------------------------

def test_eta_filter_off():
    p = CSYParams(0.01, 0.3)
    np.testing.assert_array_equal(eta_series(p, XI_FIX, 1.0), 0.3)


def test_eta_ledger_spa():
    e = eta_series(SPA, XI_FIX, 1.0)
    X, A = 0.0, 0.0
    oracle = [0.002]
    for k, x in enumerate(XI_FIX):
        A += X
        X += x
        oracle.append(0.002 + 0.29 * _gauss(X, 8.8) + 0.089 * _gauss(A, 1800.0))
    np.testing.assert_allclose(e, oracle, rtol=1e-13)
    assert eta(SPA, XI_FIX, 4, 1.0) == e[4]


@given(st.lists(st.sampled_from([1.0, -1.0]), min_size=1, max_size=40))
def test_eta_at_least_sigma(signs):
    assert np.all(eta_series(SPA, np.array(signs), 1.0) >= SPA.sigma)


def test_eta_shifted_reads_one_ahead():
    e = eta_series(SPA, XI_FIX, 1.0, "shifted")
    X = np.cumsum(XI_FIX)
    assert e.size == XI_FIX.size
    A = np.concatenate(([0.0], np.cumsum(np.concatenate(([0.0], X))[:-1])))
    k = 3
    assert e[k] == pytest.approx(0.002 + 0.29 * _gauss(X[k] - X[0], 8.8)
                                 + 0.089 * _gauss(A[k], 1800.0), rel=1e-13)


def test_eta_non_positive_rejected():
    p = CSYParams(0.0, 0.01, -1.0, 0.0, FilterSpec.constant(1.0), FilterSpec.constant(0.0))
    with pytest.raises(ValueError, match="non-positive"):
        eta_series(p, XI_FIX, 1.0)


# -- stock paths ------------------------------------------------------------

def test_reduction_to_generalised_bm():
    p = CSYParams(0.05, 0.2)
    xi = intensity(np.random.default_rng(0).standard_normal(50), 0.5).xi
    S, _ = stock_path(p, xi, 10.0, 0.01)
    t = np.arange(51) * 0.01
    X = np.concatenate(([0], np.cumsum(0.1 * xi)))
    np.testing.assert_allclose(np.log(S / 10.0), 0.05 * t + 0.2 * X, atol=1e-14)


def test_constant_up_path_ledger():
    p = CSYParams.gaussian(0.01, 0.2, 0.5, 1.0, 0.3, 2.0)
    S, _ = stock_path(p, np.ones(2), 1.0, 1.0)
    # X = (0, 1, 2); A = (0, 0, 1); Y = h(0) + h(1); V = g(0) + g(0)
    oracle = 0.02 + 0.2 * 2 + 0.5 * (_gauss(0, 1) + _gauss(1, 1)) + 0.3 * 2 * _gauss(0, 2)
    assert math.log(S[2]) == pytest.approx(oracle, rel=1e-14)


def test_telescoping(rng):
    xi = intensity(rng.standard_normal(300)).xi
    S, diffs = stock_path(SPA, xi, 50.0, 1.0)
    inc = step_log_returns(SPA, xi, 1.0)
    assert abs(inc.sum() - math.log(S[-1] / 50.0)) < 1e-12
    np.testing.assert_allclose(inc, diffs, atol=1e-12)


def test_delta_zero_reduces_to_h_only(rng):
    xi = intensity(rng.standard_normal(40), 0.5).xi
    full = CSYParams.gaussian(0.01, 0.1, 0.3, 2.0, 0.0, 5.0)
    S, _ = stock_path(full, xi, 1.0, 0.5)
    acc = accumulate(xi, FilterSpec.gaussian(2.0), FilterSpec.constant(0.0), 0.5)
    t = np.arange(41) * 0.5
    np.testing.assert_allclose(np.log(S), 0.01 * t + 0.1 * acc.X + 0.3 * acc.Y, atol=1e-13)


# -- continuum --------------------------------------------------------------

@given(st.floats(-3, 3), st.floats(-5, 5), st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 1))
def test_ito_identity(B, intB, gamma, delta, sigma):
    p = CSYParams.gaussian(0.03, sigma, gamma, 1.5, delta, 4.0)
    c = sde_coefficients(p, B, intB, r=0.01)
    assert abs(c.drift - c.diffusion ** 2 / 2 - 0.03) <= 1e-12
    assert c.theta == pytest.approx((c.drift - 0.01) / c.diffusion)


def test_sde_reduction():
    c = sde_coefficients(CSYParams(0.05, 0.2), 0.7, -0.2)
    assert c.drift == pytest.approx(0.05 + 0.02, abs=1e-15) and c.diffusion == 0.2


def test_sde_seven_terms_spa():
    h, g = _gauss(0.4, 8.8), _gauss(-1.2, 1800.0)
    s, c, d = 0.002, 0.29, 0.089
    oracle = 0.0016 + s * s / 2 + c * c * h * h / 2 + d * d * g * g / 2 + s * c * h + s * d * g + c * d * h * g
    assert sde_coefficients(SPA, 0.4, -1.2).drift == pytest.approx(oracle, rel=1e-14)


def test_continuum_reduction_to_gbm():
    p = CSYParams(0.05, 0.2, 0.0, 0.0, FilterSpec.constant(0.0), FilterSpec.constant(0.0))
    sim = simulate_continuum(p, 1.0, 1e-2, seed=1, n_paths=3, S0=2.0)
    assert np.all(sim["C"] == 0) and np.all(sim["G"] == 0)
    np.testing.assert_allclose(sim["S"], 2.0 * np.exp(0.05 * sim["t"] + 0.2 * sim["B"]), rtol=1e-14)


def test_continuum_stochastic_integral_mean():
    p = CSYParams.gaussian(0.0, 0.2, 1.0, 1.0, 0.0, 1.0)
    sim = simulate_continuum(p, 1.0, 1e-2, seed=11, n_paths=10_000)
    CT = sim["C"][:, -1]
    assert abs(CT.mean()) < 4 * CT.std(ddof=1) / math.sqrt(CT.size)


def test_continuum_self_convergence():
    p = CSYParams.gaussian(0.0, 0.2, 1.0, 1.0, 0.0, 1.0)
    dB = brownian_increments(1.0, 1e-3, 200, seed=5)
    fine = simulate_continuum(p, 1.0, 1e-3, increments=dB)["C"][:, -1]
    coarse = simulate_continuum(p, 1.0, 2e-3, increments=coarsen_increments(dB))["C"][:, -1]
    # strong order 1/2 for the left-point rule: E|diff| <= C sqrt(dt)
    assert np.mean(np.abs(fine - coarse)) < 0.5 * math.sqrt(2e-3)


def test_continuum_deterministic_and_block_split():
    a = simulate_continuum(SPA, 0.1, 1e-2, seed=3, n_paths=1030)["B"]
    b = simulate_continuum(SPA, 0.1, 1e-2, seed=3, n_paths=1030)["B"]
    np.testing.assert_array_equal(a, b)
    c = simulate_continuum(SPA, 0.1, 1e-2, seed=3, n_paths=5)["B"]
    np.testing.assert_array_equal(a[:5], c)


def test_continuum_rejects_coarse_dt():
    with pytest.raises(ValueError):
        simulate_continuum(SPA, 1.0, 0.05)


# -- band-pass experiment ---------------------------------------------------

def test_bandpass_flat_limit(rng):
    xi = intensity(rng.standard_normal(252), 0.5).xi
    traces, _ = bandpass_experiment([1e9], xi, 1.0)
    X = np.concatenate(([0], np.cumsum(xi)))
    g0 = 1 / (1e9 * math.sqrt(2 * math.pi))
    np.testing.assert_allclose(traces[1e9], g0 * X, rtol=0, atol=1e-9 * g0)


def test_bandpass_traces_and_passband():
    rng = np.random.default_rng(2020)
    xi = intensity(rng.standard_normal(252), 0.5).xi
    widths = [1.0, 10.0, 1e2, 1e3]
    traces, peaks = bandpass_experiment(widths, xi, 1.0)
    assert len({tuple(np.round(v, 12)) for v in traces.values()}) == 4
    acc = accumulate(xi, FilterSpec.constant(0.0), FilterSpec.constant(0.0), 1.0)
    for sg in widths:
        g = np.exp(-0.5 * (acc.arg_g[:-1] / sg) ** 2) / (sg * math.sqrt(2 * math.pi))
        oracle = np.concatenate(([0.0], np.cumsum(xi * g)))
        np.testing.assert_allclose(traces[sg], oracle, rtol=1e-12, atol=1e-15)
        assert peaks[sg] == np.max(np.abs(oracle))
    # share of steps whose argument lies within two bandwidths widens with sg
    passed = [np.mean(np.abs(acc.arg_g[:-1]) <= 2 * sg) for sg in widths]
    assert np.all(np.diff(passed) > 0) and passed[0] < 0.2


def test_bandpass_empty():
    with pytest.raises(ValueError):
        bandpass_experiment([], XI_FIX)


# -- pricing ----------------------------------------------------------------

def _series(n, seed=4, p=0.5, dt=1.0):
    up = np.random.default_rng(seed).random(n) < p
    a, b = two_point_values(p)
    return IntensitySeries(np.where(up, a, b), p, dt)


def test_gamma_delta_zero_equals_lattice():
    nu, sigma, r, dt, n = 0.05, 0.2, 0.02, 0.02, 50
    ser = _series(n, dt=dt)
    opt = OptionSpec("call", 100.0, n * dt)
    f_csy = price_csy(CSYParams(nu, sigma), ser, opt, r, 100.0, n, q_rule="exact").f0
    lat = build_tree(build_time_grid(n=n, T=n * dt), MarketParams(nu + sigma ** 2 / 2, sigma, r), 0.5,
                     "risk_neutral", s0=100.0)
    f_lat = price_backward_induction(lat, opt).f0
    assert abs(f_csy - f_lat) <= 1e-12


def test_first_order_rule_close_to_exact():
    q = step_probability(0.1, 0.2, 0.02, 0.5, 1 / 252)
    assert q == pytest.approx(0.5 - 0.4 * math.sqrt(0.25 / 252), abs=1e-15)
    qe = step_probability(0.1, 0.2, 0.02, 0.5, 1 / 252, rule="exact")
    assert abs(q - qe) < 1e-2


def test_ladder_prices_follow_eta():
    ser = _series(60, seed=9)
    opt = OptionSpec("call", 100.0, 60.0)
    res = price_csy(SPA, ser, opt, 0.0203 / 252, 100.0, 60)
    np.testing.assert_allclose(res.extra["eta"], eta_series(SPA, ser.xi[:60], 1.0)[:60])
    assert res.extra["layout"] == "approx_recombining"
    assert 0 < res.f0 < 100


def test_path_mode_small_tree():
    ser = _series(10, seed=2)
    opt = OptionSpec("call", 100.0, 10.0)
    res = price_csy(SPA, ser, opt, 0.0203 / 252, 100.0, 10, eta_mode="path")
    assert res.extra["layout"] == "general" and 0 < res.f0 < 100
    p_lin = price_csy(SPA, ser, OptionSpec("custom", 1.0, 10.0, payoff=lambda s: s), 0.0, 100.0, 10,
                      eta_mode="path", q_rule="exact").f0
    assert p_lin == pytest.approx(100.0, rel=1e-12)


def test_infeasible_q_names_step():
    ser = _series(5)
    with pytest.raises(ArbitrageError, match="step"):
        price_csy(CSYParams(5.0, 0.01), ser, OptionSpec("call", 1.0, 5.0), 0.0, 1.0, 5)


def test_maturity_must_match_steps():
    with pytest.raises(ValueError):
        price_csy(SPA, _series(5), OptionSpec("call", 1.0, 4.5), 0.0, 1.0, 5)
