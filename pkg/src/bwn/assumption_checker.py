"""Numerical checks of the solvability hypotheses for a spectral model.

Three families of checks:

* resolvent decay ``||R(lam, A)|| ~ lam**(-1/p*)`` fitted on a geometric grid;
* Hilbert-Schmidt integrability of ``S_A`` and ``dS_A/dt`` as mode series,
  with closed-form truncation tails or, for divergent series, a regression on
  partial-sum growth;
* ``L^p`` integrability of ``||dS_A/dt (r)||`` near ``r = 0`` from the fitted
  blow-up exponent.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import stats
from scipy.integrate import simpson
from scipy.special import gamma as gamma_fn
from scipy.special import gammainc

from .errors import InvalidParameterError, TruncationError
from .semigroup import ForcingSignal, g
from .spectral_model import (
    SpectralModel,
    power_tail_sum,
    resolvent_norm,
    resolvent_tail_bound,
    top_eigenvalue_diag_lowrank,
)


class Verdict(str, enum.Enum):
    CONVERGED = "Converged"
    DIVERGED = "Diverged"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class SeriesResult:
    partial_sum: float
    terms_used: int
    verdict: Verdict
    tail_bound: Optional[float] = None
    fitted_growth: Optional[Tuple[float, float]] = None
    logarithmic: bool = False
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "partial_sum": self.partial_sum,
            "terms_used": self.terms_used,
            "tail_bound": self.tail_bound,
            "verdict": self.verdict.value,
            "fitted_growth": None,
        }
        if self.fitted_growth is not None:
            d["fitted_growth"] = {
                "exponent": self.fitted_growth[0],
                "r2": self.fitted_growth[1],
                "logarithmic": self.logarithmic,
            }
        d.update(self.notes)
        return d


@dataclass
class DecayFit:
    lambda_grid: np.ndarray
    norms: np.ndarray
    slope: float
    intercept: float
    r2: float
    pstar_estimate: float
    inconclusive: bool = False
    tail_ratio: float = 0.0

    @property
    def qstar_estimate(self) -> float:
        return conjugate_exponent(self.pstar_estimate)

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "pstar_estimate": self.pstar_estimate,
            "qstar_estimate": self.qstar_estimate,
            "inconclusive": self.inconclusive,
            "tail_ratio_at_lambda_max": self.tail_ratio,
            "lambda_grid": self.lambda_grid,
            "norms": self.norms,
        }


def conjugate_exponent(p: float) -> float:
    """``q`` with ``1/p + 1/q = 1``; ``inf`` for ``p = 1``."""
    if p < 1:
        raise InvalidParameterError(f"exponent must be >= 1, got {p}")
    return float("inf") if p == 1 else p / (p - 1.0)


def _linfit(x, y):
    res = stats.linregress(x, y)
    # a flat response is fitted exactly even though r is undefined
    if np.ptp(y) <= 1e-12 * max(1.0, np.max(np.abs(y))):
        return 0.0, float(np.mean(y)), 1.0
    return float(res.slope), float(res.intercept), float(res.rvalue**2)


def estimate_resolvent_decay(
    model: SpectralModel,
    lambda_min: float,
    lambda_max: float,
    points: int = 25,
    r2_min: float = 0.9,
    max_tail_ratio: float = 0.01,
) -> DecayFit:
    """Fit ``log ||R(lam)||`` against ``log lam``; ``p* = -1/slope``."""
    if not 0 < lambda_min < lambda_max:
        raise InvalidParameterError("need 0 < lambda_min < lambda_max")
    if points < 10:
        raise InvalidParameterError("need at least 10 grid points")
    if lambda_max / lambda_min < 1e3 * (1 - 1e-12):
        raise InvalidParameterError("lambda grid must span at least 3 decades")
    norm_max = resolvent_norm(model, lambda_max)
    ratio = resolvent_tail_bound(model, lambda_max) / norm_max
    if not ratio <= max_tail_ratio:
        need = None
        e = 2.0 * model.growth_exponent - model.coupling_exponent - 1.0
        if np.isfinite(ratio) and e > 0:
            need = int(np.ceil(model.K * (ratio / max_tail_ratio) ** (1.0 / e) * 1.1))
        raise TruncationError(
            f"truncation K={model.K} leaves a relative tail {ratio:.3g} at lambda={lambda_max:g}",
            required_K=need,
        )
    lam = np.geomspace(lambda_min, lambda_max, points)
    norms = np.array([resolvent_norm(model, l) for l in lam])
    slope, intercept, r2 = _linfit(np.log(lam), np.log(norms))
    pstar = -1.0 / slope if slope < 0 else float("inf")
    return DecayFit(lam, norms, slope, intercept, r2, pstar, r2 < r2_min, float(ratio))


def _mode_mask(model: SpectralModel, include_zero_mode: bool):
    if include_zero_mode:
        return np.ones(model.K, dtype=bool)
    return model.eigenvalues > 0


def _weights(model, unit_weights):
    return np.ones(model.K) if unit_weights else model.weights


def _growth_fit(partial: np.ndarray):
    """Regress partial sums on ``log n`` (log growth) and ``log S`` on ``log n``."""
    n_terms = partial.size
    lo = max(10, n_terms // 100)
    ns = np.unique(np.geomspace(lo, n_terms, 40).astype(int))
    S = partial[ns - 1]
    log_slope, _, log_r2 = _linfit(np.log(ns), S)
    if np.all(S > 0):
        pow_slope, _, pow_r2 = _linfit(np.log(ns), np.log(S))
    else:
        pow_slope, pow_r2 = 0.0, 0.0
    if log_r2 >= pow_r2:
        return log_slope, log_r2, True
    return pow_slope, pow_r2, False


def _series_verdict(terms, tail, rel_tol, r2_min) -> SeriesResult:
    partial = np.cumsum(terms)
    total = float(partial[-1]) if terms.size else 0.0
    if np.isfinite(tail):
        ok = abs(total) > 0 and tail / abs(total) < rel_tol
        return SeriesResult(total, terms.size, Verdict.CONVERGED if ok else Verdict.INCONCLUSIVE, float(tail))
    if terms.size < 20:
        return SeriesResult(total, terms.size, Verdict.INCONCLUSIVE)
    slope, r2, is_log = _growth_fit(partial)
    diverged = slope > 0 and r2 >= r2_min
    return SeriesResult(
        total,
        terms.size,
        Verdict.DIVERGED if diverged else Verdict.INCONCLUSIVE,
        None,
        (0.0 if is_log else slope, r2),
        is_log,
        {"growth_rate": slope},
    )


def trace_series_dsa(
    model: SpectralModel,
    tau: float,
    include_zero_mode: bool = False,
    unit_weights: bool = True,
    rel_tol: float = 1e-4,
    r2_min: float = 0.99,
) -> SeriesResult:
    """``sum_k c_k (1 - exp(-2 mu_k tau)) / (2 mu_k)``: the integral of the squared
    Hilbert-Schmidt norm of ``dS_A/dt`` over ``[0, tau]``."""
    if not tau > 0:
        raise InvalidParameterError("tau must be positive")
    mask = _mode_mask(model, include_zero_mode)
    terms = (_weights(model, unit_weights) * g(2.0 * model.eigenvalues, tau))[mask]
    tail = 0.5 * power_tail_sum(model, 1.0, unit_weights)
    return _series_verdict(terms, tail, rel_tol, r2_min)


def sa_mode_integral(mu, tau):
    """``int_0^tau ((1 - exp(-mu r)) / mu)**2 dr``; ``tau**3 / 3`` at ``mu = 0``."""
    mu = np.asarray(mu, dtype=float)
    x = mu * tau
    out = np.empty_like(x)
    small = x < 0.1
    xs = x[small]
    coef = (1 / 3, -1 / 4, 7 / 60, -1 / 24, 31 / 2520, -1 / 320, 127 / 181440, -17 / 120960, 73 / 2851200)
    out[small] = tau**3 * np.polynomial.polynomial.polyval(xs, coef)
    ml = mu[~small]
    out[~small] = (tau - 2.0 * (-np.expm1(-ml * tau)) / ml + (-np.expm1(-2.0 * ml * tau)) / (2.0 * ml)) / ml**2
    return out


def trace_series_sa(
    model: SpectralModel,
    tau: float,
    unit_weights: bool = True,
    rel_tol: float = 1e-4,
    r2_min: float = 0.99,
) -> SeriesResult:
    """``sum_k c_k int_0^tau g(mu_k, r)**2 dr``: integrated squared HS norm of ``S_A``."""
    if not tau > 0:
        raise InvalidParameterError("tau must be positive")
    terms = _weights(model, unit_weights) * sa_mode_integral(model.eigenvalues, tau)
    tail = tau * power_tail_sum(model, 2.0, unit_weights)
    return _series_verdict(terms, tail, rel_tol, r2_min)


def dsa_operator_norm(model: SpectralModel, r: float) -> float:
    """Operator norm on ``U x H`` of ``dS_A/dt (r)`` in the truncated model."""
    if not r > 0:
        raise InvalidParameterError("r must be positive")
    # rows with exp(-(mu - mu_0) r) < exp(-40) cannot move the top eigenvalue
    keep = (model.eigenvalues - model.eigenvalues[0]) * r < 40.0
    e = np.exp(-model.eigenvalues[keep] * r)
    return float(np.sqrt(top_eigenvalue_diag_lowrank(e * e, (model.couplings[:, keep] * e).T)))


def dsa_hilbert_schmidt_sq(model: SpectralModel, r: float) -> float:
    """Squared HS norm of ``dS_A/dt (r)``: ``sum_k exp(-2 mu_k r) (1 + sum_c b_ck**2)``."""
    return float(np.sum(np.exp(-2.0 * model.eigenvalues * r) * (1.0 + model.weights)))


def lp_norm_integral(
    model: SpectralModel,
    p: float,
    tau: float,
    r_min: float,
    points: int = 161,
    r2_min: float = 0.99,
    rel_tol: float = 0.25,
    band: float = 0.02,
) -> SeriesResult:
    """``int_0^tau ||dS_A/dt (r)||**p dr`` from quadrature on ``[r_min, tau]``.

    The blow-up exponent ``sigma`` of the norm is fitted over the lowest three
    decades of ``r``.  For ``p sigma < 1`` the unresolved piece on
    ``(0, r_min)`` is added in closed form from the fitted power law and
    reported as ``tail_bound``.
    """
    if p < 1:
        raise InvalidParameterError(f"p must be >= 1, got {p}")
    if not 0 < r_min < tau:
        raise InvalidParameterError("need 0 < r_min < tau")
    if model.eigenvalues[-1] * r_min < 50:
        raise TruncationError(
            f"mu_K * r_min = {model.eigenvalues[-1] * r_min:.3g} < 50; raise K or r_min",
            required_K=None,
        )
    r = np.geomspace(r_min, tau, points)
    norms = np.array([dsa_operator_norm(model, x) for x in r])
    fit = r <= min(1e3 * r_min, tau)
    if np.count_nonzero(fit) < 10:
        fit = slice(0, 10)
    slope, _, r2 = _linfit(np.log(r[fit]), np.log(norms[fit]))
    sigma = -slope
    ps = p * sigma
    # substitute r = e**x so the integrand stays smooth near r_min
    body = float(simpson(norms**p * r, x=np.log(r)))
    notes = {"sigma": sigma, "p_sigma": ps, "p": p, "r_min": r_min}
    if abs(ps - 1.0) < band or r2 < r2_min:
        return SeriesResult(body, points, Verdict.INCONCLUSIVE, None, (sigma, r2), notes=notes)
    if ps > 1.0:
        return SeriesResult(body, points, Verdict.DIVERGED, None, (sigma, r2), notes=notes)
    if ps <= 0:
        head = norms[0] ** p * r_min
    else:
        head = norms[0] ** p * r_min / (1.0 - ps)
    total = body + head
    verdict = Verdict.CONVERGED if head / total < rel_tol else Verdict.INCONCLUSIVE
    return SeriesResult(total, points, verdict, float(head), (sigma, r2), notes=notes)


def fractional_power_norm(model: SpectralModel, beta: float, lam: float = 1.0) -> float:
    """``||(lam - A)^(-beta)||`` on ``U x H`` for the truncated model."""
    s = (lam + model.eigenvalues) ** (-beta)
    return float(np.sqrt(top_eigenvalue_diag_lowrank(s * s, (model.couplings * s).T)))


def estimate_growth(model: SpectralModel, beta: float, tau: float, lam: float = 1.0):
    """Constants ``(M_beta, omega_A)`` with

        ||(lam - A0)^beta T0(r)|| <= M_beta r**(-beta) exp(omega_A r),  0 < r <= tau.

    ``omega_A = -mu_0`` (the growth bound of ``T0``); ``M_beta`` is the exact
    supremum over ``r`` of each mode's ratio, maximized over modes.
    """
    if not 0 < beta < 1:
        raise InvalidParameterError(f"beta must lie in (0, 1), got {beta}")
    if not tau > 0:
        raise InvalidParameterError("tau must be positive")
    mu = model.eigenvalues
    omega = -float(mu[0])
    a = mu - mu[0]
    with np.errstate(divide="ignore"):
        rstar = np.where(a > 0, np.minimum(beta / np.where(a > 0, a, 1.0), tau), tau)
    vals = (rstar * (lam + mu)) ** beta * np.exp(-a * rstar)
    return float(np.max(vals)), omega


def _kernel_cell(beta, omega, a, b):
    """``int_a^b u**(-beta) exp(omega u) du`` for ``0 <= a <= b``, ``omega <= 0``."""
    if omega == 0:
        return (b ** (1 - beta) - a ** (1 - beta)) / (1 - beta)
    nu = -omega
    s = 1.0 - beta
    return nu ** (-s) * gamma_fn(s) * (gammainc(s, nu * b) - gammainc(s, nu * a))


def diamond_bound(
    model: SpectralModel, f: ForcingSignal, t: float, beta: float, lam: float = 1.0, tau=None
) -> float:
    """Right-hand side of the smoothing estimate for ``||(S_A <> f)(t)||``.

    ``M_beta ||(lam - A)^-beta|| int_0^t (t-s)**-beta exp(omega (t-s)) ||f(s)|| ds``
    with ``||f(s)||`` bounded cellwise (exact for piecewise-constant forcing).
    """
    M, omega = estimate_growth(model, beta, tau or f.grid.tau, lam)
    times = f.grid.times
    nf = f.norms()
    if f.kind == "PiecewiseLinear":
        nf = np.maximum(nf[1:], nf[:-1])
    total = 0.0
    for i in range(times.size - 1):
        s0, s1 = times[i], min(times[i + 1], t)
        if s0 >= t:
            break
        total += nf[i] * _kernel_cell(beta, omega, t - s1, t - s0)
    return M * fractional_power_norm(model, beta, lam) * total
