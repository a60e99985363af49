import json

import numpy as np
import pytest
from scipy.integrate import quad

from bwn.errors import ConfigurationError, InvalidParameterError, InvalidTimeError
from bwn.noise import (
    NoiseBasis,
    NoiseDraw,
    basis_primitive,
    basis_primitives,
    basis_values,
    draw_noise,
    kernel_integrals,
    normal_stream,
    white_noise_eval,
    wn_eval,
)

KINDS = ["Trigonometric", "Haar"]


def breakpoints(basis):
    """Discontinuities of the Haar functions (quad needs them spelled out)."""
    if basis.kind == "Trigonometric":
        return None
    levels = int(np.ceil(np.log2(basis.size))) + 1
    return list(np.linspace(0, basis.tau, 2**levels + 1)[1:-1])


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("tau", [1.0, 2.5])
def test_orthonormality(kind, tau):
    basis = NoiseBasis(kind, tau, 64)
    n = 16_384
    mid = (np.arange(n) + 0.5) * tau / n
    V = basis_values(basis, mid)
    gram = V.T @ V * (tau / n)
    np.testing.assert_allclose(gram, np.eye(64), atol=1e-12)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("kind", KINDS)
def test_primitives_match_quadrature(kind):
    basis = NoiseBasis(kind, 1.5, 20)
    t = np.array([0.0, 0.3, 0.77, 1.1, 1.5])
    P = basis_primitives(basis, t)
    pts = breakpoints(basis)
    for j in range(1, 21):
        for i, ti in enumerate(t):
            if ti == 0:
                assert P[i, j - 1] == 0.0
                continue
            inner = [p for p in pts if p < ti] if pts else None
            val, _ = quad(lambda s: basis_values(basis, [s])[0, j - 1], 0, ti, points=inner or None, limit=200, epsabs=1e-14)
            assert P[i, j - 1] == pytest.approx(val, abs=1e-12)


def test_primitive_examples():
    haar = NoiseBasis("Haar", 4.0, 8)
    assert basis_primitive(haar, 1, 1.0) == pytest.approx(1.0 / 2.0)
    trig = NoiseBasis("Trigonometric", 2.0, 8)
    for j in range(2, 9):
        assert basis_primitive(trig, j, 2.0) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(InvalidParameterError):
        basis_primitive(trig, 9, 1.0)
    with pytest.raises(InvalidTimeError):
        basis_primitives(trig, [2.5])


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("kind", KINDS)
def test_kernel_integrals_match_quadrature(kind):
    basis = NoiseBasis(kind, 1.0, 16)
    mu = np.array([0.0, np.pi**2, 400.0, 1e4])
    t = np.array([0.25, 0.6, 1.0])
    I = kernel_integrals(basis, mu, t)
    pts = breakpoints(basis)
    for a, ti in enumerate(t):
        for k, m in enumerate(mu):
            for j in range(16):
                inner = [p for p in pts if p < ti] if pts else None
                val, _ = quad(
                    lambda s: np.exp(-m * (ti - s)) * basis_values(basis, [s])[0, j],
                    0, ti, points=inner or None, limit=400, epsabs=1e-15, epsrel=1e-12,
                )
                assert I[a, k, j] == pytest.approx(val, abs=1e-11)


def test_kernel_integrals_at_zero_time():
    basis = NoiseBasis("Trigonometric", 1.0, 8)
    assert not np.any(kernel_integrals(basis, [0.0, 5.0], [0.0]))


@pytest.mark.parametrize("kind", KINDS)
def test_parseval_monotone(kind):
    basis = NoiseBasis(kind, 1.0, 1024)
    t = np.array([0.1, 0.37, 0.5, 0.9])
    P = basis_primitives(basis, t)
    cum = np.cumsum(P**2, axis=1)
    assert np.all(np.diff(cum, axis=1) >= -1e-16)
    assert np.all(cum[:, -1] <= t + 1e-12)
    # the remainder decays like 1/N for an indicator function
    np.testing.assert_allclose(cum[:, -1], t, atol=0.3 / basis.size)


# --- draws -----------------------------------------------------------------


def test_draw_determinism_and_nesting():
    basis = NoiseBasis("Trigonometric", 1.0, 16)
    a = draw_noise(basis, 2, 42)
    b = draw_noise(basis, 2, 42)
    np.testing.assert_array_equal(a.coefficients, b.coefficients)
    short = draw_noise(basis.resized(8), 2, 42)
    np.testing.assert_array_equal(short.coefficients, a.coefficients[:, :8])
    np.testing.assert_array_equal(a.truncated(8).coefficients, short.coefficients)
    assert not np.array_equal(draw_noise(basis, 2, 43).coefficients, a.coefficients)
    # channels are independent streams
    assert not np.array_equal(a.coefficients[0], a.coefficients[1])


def test_streams_are_separated_by_tag():
    assert not np.array_equal(normal_stream(1, 0, 10, tag=1), normal_stream(1, 0, 10, tag=2))


def test_draw_population_moments():
    x = np.array([normal_stream(s, 0, 1)[0] for s in range(100_000)])
    assert abs(x.mean()) <= 0.02
    assert 0.98 <= x.var(ddof=1) <= 1.02


def test_stream_population_moments():
    x = normal_stream(7, 3, 400_000)
    assert abs(x.mean()) < 4 / np.sqrt(x.size)
    assert abs(x.var() - 1) < 4 * np.sqrt(2 / x.size)
    kurt = np.mean((x - x.mean()) ** 4) / x.var() ** 2
    assert abs(kurt - 3) < 0.05


def test_draw_serialization():
    d = draw_noise(NoiseBasis("Haar", 2.0, 32), 3, 11)
    back = NoiseDraw.from_dict(json.loads(json.dumps(d.to_dict())))
    np.testing.assert_array_equal(back.coefficients, d.coefficients)
    assert back.basis == d.basis


def test_draw_shape_checks():
    basis = NoiseBasis("Haar", 1.0, 4)
    with pytest.raises(ConfigurationError):
        NoiseDraw(basis, 2, 0, np.zeros((2, 5)))
    with pytest.raises(ConfigurationError):
        NoiseBasis("Legendre", 1.0, 4)
    with pytest.raises(InvalidParameterError):
        draw_noise(basis, 0, 1)


# --- W_N -------------------------------------------------------------------


def test_wn_examples():
    d = draw_noise(NoiseBasis("Haar", 2.0, 1), 1, 3)
    assert wn_eval(d, 0, 0.0) == 0.0
    t = np.linspace(0, 2.0, 7)
    np.testing.assert_allclose(wn_eval(d, 0, t), d.coefficients[0, 0] * t / np.sqrt(2.0), rtol=1e-15)
    with pytest.raises(InvalidParameterError):
        wn_eval(d, 1, 0.5)


def test_white_noise_is_derivative_of_wn():
    d = draw_noise(NoiseBasis("Trigonometric", 1.0, 16), 2, 5)
    t, h = 0.41, 1e-5
    fd = (wn_eval(d, 1, t + h) - wn_eval(d, 1, t - h)) / (2 * h)
    assert white_noise_eval(d, 1, [t])[0] == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("kind", KINDS)
def test_wn_variance(kind):
    basis = NoiseBasis(kind, 1.0, 256)
    p = basis_primitives(basis, [0.5])[0]
    w = np.array([normal_stream(s, 0, 256) @ p for s in range(10_000)])
    assert w.var(ddof=1) == pytest.approx(0.5, rel=0.05)
