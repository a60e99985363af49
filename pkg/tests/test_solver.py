import numpy as np
import pytest
from scipy.integrate import quad

from bwn.assumption_checker import trace_series_dsa
from bwn.errors import ConfigurationError, DomainError, InvalidParameterError, InvalidTimeError, UsageError
from bwn.noise import NoiseBasis, NoiseDraw, draw_noise, kernel_integrals, white_noise_eval
from bwn.paths import SamplePath, TimeGrid, read_path_csv, write_path_csv
from bwn.solver import (
    convergence_study,
    covariance_exact,
    definition_residual,
    mc_estimate,
    ou_step_variance,
    parseval_tail,
    simulate_exact,
    simulate_xn,
    variance_band,
)
from bwn.spectral_model import CoordVector, SpectralModel, build_neumann_interval


def single_mode(mu, b=1.0):
    return SpectralModel("Custom", 1, [mu], [[b]], 2.0)


# --- X_N -------------------------------------------------------------------


def test_xn_zero_noise_is_orbit():
    m = build_neumann_interval(8)
    basis = NoiseBasis("Trigonometric", 1.0, 16)
    draw = NoiseDraw(basis, 2, 0, np.zeros((2, 16)))
    xi = CoordVector(np.linspace(1, 2, 8))
    grid = TimeGrid.uniform(1.0, 11)
    path = simulate_xn(m, draw, grid, xi)
    np.testing.assert_allclose(path.modes, np.exp(-np.outer(grid.times, m.eigenvalues)) * xi.modes, rtol=1e-15)
    assert path.tag == "TruncatedN(16)"


def test_xn_single_zero_mode_haar():
    m = single_mode(0.0, b=1.3)
    draw = draw_noise(NoiseBasis("Haar", 2.0, 1), 1, 9)
    grid = TimeGrid.uniform(2.0, 9)
    path = simulate_xn(m, draw, grid, CoordVector([0.4]))
    eta = draw.coefficients[0, 0]
    np.testing.assert_allclose(path.modes[:, 0], 0.4 + 1.3 * eta * grid.times / np.sqrt(2.0), rtol=1e-14)


def test_xn_matches_quadrature():
    m = build_neumann_interval(6)
    draw = draw_noise(NoiseBasis("Trigonometric", 1.0, 12), 2, 17)
    grid = TimeGrid(np.array([0.0, 0.3, 0.71, 1.0]))
    path = simulate_xn(m, draw, grid, CoordVector(np.zeros(6)))
    for i, t in enumerate(grid.times[1:], start=1):
        for k in range(6):
            def integrand(s):
                w = np.array([white_noise_eval(draw, c, [s])[0] for c in range(2)])
                return np.exp(-m.eigenvalues[k] * (t - s)) * (m.couplings[:, k] @ w)

            val, _ = quad(integrand, 0, t, limit=200, epsabs=1e-13, epsrel=1e-12)
            assert path.modes[i, k] == pytest.approx(val, abs=1e-8)


def test_xn_finite_lambda_approaches_limit():
    m = build_neumann_interval(16)
    draw = draw_noise(NoiseBasis("Trigonometric", 1.0, 16), 2, 1)
    grid = TimeGrid.uniform(1.0, 5)
    xi = CoordVector(np.zeros(16))
    limit = simulate_xn(m, draw, grid, xi).modes
    errs = [np.max(np.abs(simulate_xn(m, draw, grid, xi, lam=l).modes - limit)) for l in (1e2, 1e4, 1e6)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3 * errs[0]


def test_xn_errors():
    m = build_neumann_interval(4)
    grid = TimeGrid.uniform(1.0, 3)
    draw = draw_noise(NoiseBasis("Trigonometric", 1.0, 4), 1, 0)
    with pytest.raises(ConfigurationError):
        simulate_xn(m, draw, grid, CoordVector(np.zeros(4)))
    draw2 = draw_noise(NoiseBasis("Trigonometric", 1.0, 4), 2, 0)
    with pytest.raises(DomainError):
        simulate_xn(m, draw2, grid, CoordVector(np.zeros(4), np.array([1.0, 0.0])))
    with pytest.raises(ConfigurationError):
        simulate_xn(m, draw2, TimeGrid.uniform(2.0, 3), CoordVector(np.zeros(4)))


def test_nested_draws_share_realizations():
    m = build_neumann_interval(8)
    big = draw_noise(NoiseBasis("Trigonometric", 1.0, 64), 2, 4)
    grid = TimeGrid.uniform(1.0, 6)
    xi = CoordVector(np.zeros(8))
    a = simulate_xn(m, big.truncated(16), grid, xi).modes
    b = simulate_xn(m, draw_noise(NoiseBasis("Trigonometric", 1.0, 16), 2, 4), grid, xi).modes
    np.testing.assert_array_equal(a, b)
    full = simulate_xn(m, big, grid, xi).modes
    assert np.max(np.abs(simulate_xn(m, big.truncated(64), grid, xi).modes - full)) == 0.0


# --- exact sampling and covariance ----------------------------------------


def test_exact_zero_couplings_deterministic():
    m = build_neumann_interval(8).with_couplings(np.zeros((2, 8)))
    grid = TimeGrid.uniform(1.0, 11)
    xi = CoordVector(np.linspace(-1, 1, 8))
    a = simulate_exact(m, grid, xi, 1).modes
    b = simulate_exact(m, grid, xi, 2).modes
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a, np.exp(-np.outer(grid.times, m.eigenvalues)) * xi.modes, rtol=1e-13)


def test_exact_path_properties():
    m = build_neumann_interval(8)
    grid = TimeGrid(np.array([0.0, 0.1, 0.15, 0.6]))
    xi = CoordVector(np.ones(8))
    p = simulate_exact(m, grid, xi, 3)
    np.testing.assert_array_equal(p.modes[0], xi.modes)
    assert p.provenance == "ExactOU" and p.seed == 3
    np.testing.assert_array_equal(simulate_exact(m, grid, xi, 3).modes, p.modes)


def test_single_step_variance_matches_isometry_integral():
    for mu in (0.0, 1e-9, 0.7, 50.0):
        m = single_mode(mu, b=1.7)
        for dt in (1e-3, 0.4):
            val, _ = quad(lambda s: np.exp(-2 * mu * (dt - s)), 0, dt, epsabs=0, epsrel=1e-13)
            assert ou_step_variance(m, dt)[0] == pytest.approx(1.7**2 * val, rel=1e-12)


def test_ou_variance_flow():
    m = build_neumann_interval(32)
    mu = m.eigenvalues
    for t in (0.01, 0.3, 1.0):
        v = ou_step_variance(m, t)
        np.testing.assert_allclose(ou_step_variance(m, 2 * t), np.exp(-2 * mu * t) * v + v, rtol=1e-14)


def test_covariance_exact_cases():
    m = build_neumann_interval(16)
    xi = CoordVector(np.linspace(0, 1, 16))
    r0 = covariance_exact(m, 0.0, xi)
    assert not np.any(r0.var)
    np.testing.assert_array_equal(r0.mean[0], xi.modes)
    big = covariance_exact(m, 50.0, CoordVector(np.zeros(16)))
    np.testing.assert_allclose(big.var[0, 1:], m.weights[1:] / (2 * m.eigenvalues[1:]), rtol=1e-14)
    with pytest.raises(InvalidTimeError):
        covariance_exact(m, -1.0, xi)


def test_covariance_physical_vs_unit_weights():
    m = build_neumann_interval(100_000)
    xi = CoordVector(np.zeros(m.K))
    phys = covariance_exact(m, 1.0, xi).var[0, 1:].sum()
    unit = covariance_exact(m, 1.0, xi, unit_weights=True).var[0, 1:].sum()
    # sum_c b**2 = 4 for every positive mode
    assert phys == pytest.approx(4 * unit, rel=1e-14)
    assert unit == pytest.approx(1 / 12, rel=1e-5)
    assert phys == pytest.approx(1 / 3, rel=1e-5)
    total = covariance_exact(m, 1.0, xi, unit_weights=True).total_second_moment[0]
    assert total == pytest.approx(trace_series_dsa(m, 1.0, include_zero_mode=True).partial_sum, rel=1e-12)


# --- Monte Carlo -----------------------------------------------------------


def test_mc_exact_variance_within_band():
    m = build_neumann_interval(16)
    xi = CoordVector(np.zeros(16))
    rep = mc_estimate(m, TimeGrid(np.array([0.0, 0.5])), xi, 4000, 123)
    exact = covariance_exact(m, 0.5, xi)
    lo, hi = variance_band(exact.var[0], 4000)
    assert np.all((rep.var[-1] >= lo) & (rep.var[-1] <= hi))
    assert np.all(np.abs(rep.mean[-1]) <= rep.half_widths[-1])
    assert np.all(rep.var >= 0) and np.all(rep.half_widths[-1] > 0)


def test_mc_truncated_variance_matches_parseval():
    m = build_neumann_interval(8)
    grid = TimeGrid.uniform(1.0, 5)
    xi = CoordVector(np.zeros(8))
    N = 8
    rep = mc_estimate(m, grid, xi, 4000, 5, truncation=N, basis_kind="Haar")
    basis = NoiseBasis("Haar", 1.0, N)
    I = kernel_integrals(basis, m.eigenvalues, grid.times)
    var = m.weights * np.sum(I**2, axis=2)
    lo, hi = variance_band(var[-1], 4000)
    assert np.all((rep.var[-1] >= lo) & (rep.var[-1] <= hi))


def test_mc_half_widths_scale():
    m = build_neumann_interval(8)
    grid = TimeGrid(np.array([0.0, 0.5]))
    xi = CoordVector(np.zeros(8))
    a = mc_estimate(m, grid, xi, 2000, 1).half_widths[-1]
    b = mc_estimate(m, grid, xi, 4000, 1).half_widths[-1]
    ratio = (a / b) ** 2
    assert np.all((ratio > 1.6) & (ratio < 2.5))


def test_mc_independent_of_workers():
    m = build_neumann_interval(8)
    grid = TimeGrid.uniform(1.0, 4)
    xi = CoordVector(np.ones(8))
    a = mc_estimate(m, grid, xi, 1100, 7, workers=1)
    b = mc_estimate(m, grid, xi, 1100, 7, workers=4)
    for x, y in ((a.mean, b.mean), (a.var, b.var), (a.kurtosis, b.kurtosis)):
        np.testing.assert_array_equal(x, y)
    c = mc_estimate(m, grid, xi, 1100, 7, truncation=8, workers=1)
    d = mc_estimate(m, grid, xi, 1100, 7, truncation=8, workers=3)
    np.testing.assert_array_equal(c.var, d.var)


def test_mc_requires_two_samples():
    m = build_neumann_interval(4)
    with pytest.raises(InvalidParameterError):
        mc_estimate(m, TimeGrid.uniform(1.0, 2), CoordVector(np.zeros(4)), 1, 0)


# --- convergence study -----------------------------------------------------


def test_convergence_small_study():
    m = build_neumann_interval(16)
    grid = TimeGrid.uniform(1.0, 6)
    tab = convergence_study(m, grid, CoordVector(np.zeros(16)), [4, 8, 16], 3000, 2)
    assert tab.n_ref == 64
    assert np.all(np.diff(tab.eps_analytic) < 0)
    assert np.all(np.abs(tab.eps_mc - tab.eps_analytic) <= 4 * tab.eps_mc_stderr + 0.02 * tab.eps_analytic)
    assert tab.to_csv().splitlines()[0] == "N,eps_mc,eps_analytic,ratio"
    assert tab.order > 0


def test_parseval_tail_matches_direct_difference():
    # analytic tail against sum_{N < j <= 4096} I**2 computed directly
    m = build_neumann_interval(6)
    basis = NoiseBasis("Trigonometric", 1.0, 4096)
    t = np.array([0.5, 1.0])
    I = kernel_integrals(basis, m.eigenvalues, t)
    tail = parseval_tail(m, basis, t, [8])[0]
    direct = np.sum(m.weights * np.sum(I[:, :, 8:] ** 2, axis=2), axis=1)
    # what lies beyond j = 4096 is positive and, since each kernel jumps by
    # one at s = t, of size about 0.2 / 4096 per unit weight
    assert np.all(tail >= direct)
    assert np.all(tail - direct <= m.weights.sum() * 0.3 / 4096)


def test_convergence_rejects_bad_lists():
    m = build_neumann_interval(4)
    grid = TimeGrid.uniform(1.0, 3)
    for bad in ([8, 8], [16, 8], [], [0, 4]):
        with pytest.raises(ConfigurationError):
            convergence_study(m, grid, CoordVector(np.zeros(4)), bad, 10, 0)


# --- definition residual ---------------------------------------------------


def test_definition_residual_trivial_cases():
    m = build_neumann_interval(4)
    basis = NoiseBasis("Trigonometric", 1.0, 8)
    zero = NoiseDraw(basis, 2, 0, np.zeros((2, 8)))
    grid = TimeGrid.uniform(1.0, 51)
    path = simulate_xn(m, zero, grid, CoordVector(np.zeros(4)))
    assert definition_residual(path, m, zero) == 0.0
    m0 = single_mode(0.0, 2.0)
    d = draw_noise(NoiseBasis("Haar", 1.0, 1), 1, 3)
    p0 = simulate_xn(m0, d, grid, CoordVector([0.5]))
    assert definition_residual(p0, m0, d) < 1e-15


def test_definition_residual_second_order():
    m = build_neumann_interval(4)
    d = draw_noise(NoiseBasis("Trigonometric", 1.0, 8), 2, 21)
    xi = CoordVector(np.array([0.3, -0.2, 0.1, 0.05]))
    res = [definition_residual(simulate_xn(m, d, TimeGrid.uniform(1.0, n + 1), xi), m, d) for n in (200, 400, 800)]
    assert 3.5 <= res[0] / res[1] <= 4.5
    assert 3.5 <= res[1] / res[2] <= 4.5


def test_definition_residual_requires_truncated_path():
    m = build_neumann_interval(4)
    grid = TimeGrid.uniform(1.0, 5)
    d = draw_noise(NoiseBasis("Trigonometric", 1.0, 8), 2, 0)
    with pytest.raises(UsageError):
        definition_residual(simulate_exact(m, grid, CoordVector(np.zeros(4)), 0), m, d)


# --- serialization ---------------------------------------------------------


def test_path_csv_round_trip(tmp_path):
    m = build_neumann_interval(5)
    d = draw_noise(NoiseBasis("Haar", 1.0, 16), 2, 8)
    p = simulate_xn(m, d, TimeGrid.uniform(1.0, 7), CoordVector(np.ones(5)))
    write_path_csv(p, tmp_path / "p.csv")
    back = read_path_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(back.modes, p.modes)
    np.testing.assert_array_equal(back.grid.times, p.grid.times)
    assert back.tag == p.tag and back.seed == 8


def test_sample_path_rejects_nonfinite():
    grid = TimeGrid.uniform(1.0, 3)
    with pytest.raises(ConfigurationError):
        SamplePath(grid, np.array([[0.0], [np.nan], [1.0]]), "ExactOU")
