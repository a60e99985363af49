"""Boundary-noise driven solutions: truncated-noise paths, exact OU sampling,
second-moment oracles, Monte Carlo estimators and the N -> infinity study.

In the eigenbasis mode ``k`` of the solution obeys

    X_k(t) = exp(-mu_k t) xi_k + sum_c b[c, k] int_0^t exp(-mu_k (t - s)) dW_c(s),

so every mode is an Ornstein-Uhlenbeck process driven by the boundary
channels.  Replacing ``W_c`` by its truncated expansion gives ``X_N``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, InvalidParameterError, InvalidTimeError, UsageError
from .noise import (
    TAG_EXACT,
    TAG_REMAINDER,
    NoiseBasis,
    NoiseDraw,
    basis_primitives,
    draw_noise,
    kernel_integrals,
    normal_stream,
)
from .paths import SamplePath, TimeGrid
from .semigroup import cumulative_trapezoid, g
from .spectral_model import CoordVector, SpectralModel, check_vector

CHUNK = 250


def worker_count(workers: Optional[int] = None) -> int:
    """Explicit ``workers``, else ``$BWN_THREADS``, else 1."""
    if workers is None:
        try:
            workers = int(os.environ.get("BWN_THREADS", "1"))
        except ValueError:
            workers = 1
    return max(1, workers)


def _check_xi(model: SpectralModel, xi: CoordVector):
    check_vector(model, xi)
    if not xi.is_interior:
        raise DomainError("initial condition must lie in H0 (zero boundary part)")


def _orbit(model, times, xi):
    return np.exp(-np.outer(times, model.eigenvalues)) * xi.modes


def _noise_operator(model: SpectralModel, I: np.ndarray) -> np.ndarray:
    """Matrix mapping stacked coefficients ``eta[c*N + j]`` to path entries ``[t*K + k]``."""
    T, K, N = I.shape
    B = model.couplings[:, None, :, None] * I[None]  # (C, T, K, N)
    return B.transpose(0, 3, 1, 2).reshape(model.channel_count * N, T * K)


def simulate_xn(
    model: SpectralModel,
    draw: NoiseDraw,
    grid: TimeGrid,
    xi: CoordVector,
    lam: Optional[float] = None,
) -> SamplePath:
    """Path of ``X_N`` from closed-form kernel integrals.

    ``lam`` evaluates the pre-limit ``T0(t-s) lam R(lam, A)`` integrand, which
    scales the noise response of mode k by ``lam / (lam + mu_k)``; ``None``
    takes the limit.
    """
    _check_xi(model, xi)
    if draw.channels != model.channel_count:
        raise ConfigurationError(
            f"draw has {draw.channels} channels, model has {model.channel_count}"
        )
    if grid.tau > draw.basis.tau * (1 + 1e-12):
        raise ConfigurationError("grid extends beyond the noise horizon")
    I = kernel_integrals(draw.basis, model.eigenvalues, grid.times)
    # sum_c b[c, k] sum_j eta[c, j] I[t, k, j]
    resp = np.einsum("ck,tkj,cj->tk", model.couplings, I, draw.coefficients)
    if lam is not None:
        if not lam > 0:
            raise InvalidParameterError("lam must be positive")
        resp = resp * (lam / (lam + model.eigenvalues))
    modes = _orbit(model, grid.times, xi) + resp
    return SamplePath(grid, modes, "TruncatedN", draw.seed, draw.N, model.name)


def ou_step_variance(model: SpectralModel, dt, unit_weights: bool = False) -> np.ndarray:
    """Per-mode variance ``c_k (1 - exp(-2 mu_k dt)) / (2 mu_k)`` gained over ``dt``."""
    c = np.ones(model.K) if unit_weights else model.weights
    return c * g(2.0 * model.eigenvalues, dt)


def _exact_paths(model, times, xi_modes, seeds):
    """Exact OU recursion for a batch of seeds; shape (len(seeds), T, K)."""
    T, K = times.size, model.K
    z = np.stack([normal_stream(s, 0, (T - 1) * K, TAG_EXACT).reshape(T - 1, K) for s in seeds])
    out = np.empty((len(seeds), T, K))
    out[:, 0] = xi_modes
    for i in range(T - 1):
        dt = times[i + 1] - times[i]
        sd = np.sqrt(ou_step_variance(model, dt))
        out[:, i + 1] = np.exp(-model.eigenvalues * dt) * out[:, i] + sd * z[:, i]
    return out


def simulate_exact(model: SpectralModel, grid: TimeGrid, xi: CoordVector, seed: int) -> SamplePath:
    """Exact-in-distribution sample of the limit solution on ``grid``."""
    _check_xi(model, xi)
    modes = _exact_paths(model, grid.times, xi.modes, [seed])[0]
    return SamplePath(grid, modes, "ExactOU", seed, None, model.name)


@dataclass
class MomentReport:
    """Per-mode first and second moments on a set of times.

    ``samples`` is ``None`` for analytic reports; Monte Carlo reports carry
    ``half_widths = 4 sqrt(var / M)`` and the sample kurtosis.
    """

    times: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    samples: Optional[int] = None
    half_widths: Optional[np.ndarray] = None
    kurtosis: Optional[np.ndarray] = None

    @property
    def total_second_moment(self) -> np.ndarray:
        return np.sum(self.mean**2 + self.var, axis=1)

    def to_dict(self) -> dict:
        d = {
            "times": self.times,
            "samples": self.samples,
            "mean": self.mean,
            "var": self.var,
            "total_second_moment": self.total_second_moment,
        }
        if self.half_widths is not None:
            d["half_widths"] = self.half_widths
        if self.kurtosis is not None:
            d["kurtosis"] = self.kurtosis
        return d


def covariance_exact(
    model: SpectralModel, t: float, xi: CoordVector, unit_weights: bool = False
) -> MomentReport:
    """Mean ``exp(-mu t) xi`` and variance ``c_k (1 - exp(-2 mu_k t)) / (2 mu_k)``.

    With ``unit_weights`` every mode receives weight 1 instead of
    ``sum_c b[c, k]**2``.
    """
    if not t >= 0:
        raise InvalidTimeError(f"time must be >= 0, got {t}")
    _check_xi(model, xi)
    mean = np.exp(-model.eigenvalues * t) * xi.modes
    var = ou_step_variance(model, t, unit_weights)
    return MomentReport(np.array([float(t)]), mean[None], var[None])


def _moments_from_sums(sums, M):
    s1, s2, s3, s4 = (x / M for x in sums)
    mean = s1
    m2 = s2 - s1**2
    m4 = s4 - 4 * s1 * s3 + 6 * s1**2 * s2 - 3 * s1**4
    var = m2 * M / (M - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        kurt = np.where(m2 > 0, m4 / np.where(m2 > 0, m2, 1.0) ** 2, np.nan)
    return mean, var, kurt


def _run_chunks(fn, M, workers):
    starts = list(range(0, M, CHUNK))
    bounds = [(s, min(s + CHUNK, M)) for s in starts]
    if worker_count(workers) == 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=worker_count(workers)) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))


def mc_estimate(
    model: SpectralModel,
    grid: TimeGrid,
    xi: CoordVector,
    M: int,
    seed: int,
    truncation: Optional[int] = None,
    basis_kind: str = "Trigonometric",
    workers: Optional[int] = None,
) -> MomentReport:
    """Monte Carlo moments from ``M`` replicas with seeds ``seed + i``.

    ``truncation=None`` samples the exact solution; an integer ``N`` samples
    ``X_N``.  Replicas are processed in fixed chunks and reduced in replica
    order, so the result does not depend on the worker count.
    """
    if M < 2:
        raise InvalidParameterError("need M >= 2 replicas")
    _check_xi(model, xi)
    times = grid.times
    orbit = _orbit(model, times, xi)
    if truncation is not None:
        basis = NoiseBasis(basis_kind, grid.tau, int(truncation))
        op = _noise_operator(model, kernel_integrals(basis, model.eigenvalues, times))

    def chunk(a, b):
        seeds = [seed + i for i in range(a, b)]
        if truncation is None:
            x = _exact_paths(model, times, xi.modes, seeds) - orbit
        else:
            eta = np.stack([draw_noise(basis, model.channel_count, s).coefficients.ravel() for s in seeds])
            x = (eta @ op).reshape(len(seeds), times.size, model.K)
        x2 = x * x  # explicit products; x**3 goes through the slow pow path
        return [np.sum(x, axis=0), np.sum(x2, axis=0), np.sum(x2 * x, axis=0), np.sum(x2 * x2, axis=0)]

    parts = _run_chunks(chunk, M, workers)
    sums = parts[0]
    for part in parts[1:]:
        sums = [s + q for s, q in zip(sums, part)]
    mean, var, kurt = _moments_from_sums(sums, M)
    return MomentReport(times.copy(), mean + orbit, var, M, 4.0 * np.sqrt(var / M), kurt)


def variance_band(var_exact: np.ndarray, M: int, nsigma: float = 4.0):
    """``nsigma`` band of the sample variance from the scaled chi-square law."""
    half = nsigma * np.sqrt(2.0 / (M - 1)) * var_exact
    return var_exact - half, var_exact + half


@dataclass
class ConvergenceTable:
    N: np.ndarray
    eps_mc: np.ndarray
    eps_analytic: np.ndarray
    eps_mc_stderr: np.ndarray
    n_ref: int
    order: float
    samples: int

    @property
    def ratio(self) -> np.ndarray:
        return self.eps_mc / self.eps_analytic

    def rows(self):
        return [
            (int(n), float(a), float(b), float(a / b))
            for n, a, b in zip(self.N, self.eps_mc, self.eps_analytic)
        ]

    def to_csv(self) -> str:
        lines = ["N,eps_mc,eps_analytic,ratio"]
        for n, a, b, r in self.rows():
            lines.append(f"{n},{a:.17g},{b:.17g},{r:.17g}")
        return "\n".join(lines) + "\n"


def parseval_tail(model: SpectralModel, basis: NoiseBasis, times, n_list) -> np.ndarray:
    """``sum_k c_k sum_{j > N} I_kj(t)**2`` for each ``N``; shape (len(n_list), T).

    The full kernel norm ``(1 - exp(-2 mu t)) / (2 mu)`` minus the first ``N``
    squared coefficients.
    """
    I = kernel_integrals(basis.resized(max(n_list)), model.eigenvalues, times)
    full = g(2.0 * model.eigenvalues[None, :], np.asarray(times)[:, None])
    csum = np.cumsum(I**2, axis=2)
    out = []
    for n in n_list:
        tail = np.maximum(full - csum[:, :, n - 1], 0.0)
        out.append(tail @ model.weights)
    return np.array(out)


def _remainder_factors(model, times, I_ref):
    """Square roots of the conditional covariance of the noise beyond ``N_ref``."""
    mu = model.eigenvalues
    facs = []
    for i, t in enumerate(times):
        G = g(mu[:, None] + mu[None, :], t)
        Q = G - I_ref[i] @ I_ref[i].T
        Q = 0.5 * (Q + Q.T)
        w, V = np.linalg.eigh(Q)
        facs.append(V * np.sqrt(np.clip(w, 0.0, None)))
    return np.array(facs)  # (T, K, K)


def convergence_study(
    model: SpectralModel,
    grid: TimeGrid,
    xi: CoordVector,
    n_list: Sequence[int],
    M: int,
    seed: int,
    basis_kind: str = "Trigonometric",
    workers: Optional[int] = None,
) -> ConvergenceTable:
    """Two estimates of ``eps(N) = sup_t E ||X(t) - X_N(t)||**2``.

    Monte Carlo: every replica draws ``N_ref = 4 max(N)`` coefficients per
    channel; ``X_N`` uses a prefix of them, and the limit ``X`` is
    ``X_{N_ref}`` plus an independent Gaussian remainder with the exact
    conditional covariance of the discarded coefficients.  Analytic: the
    Parseval remainder of the kernel expansion.
    """
    n_list = [int(n) for n in n_list]
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])) or n_list[0] < 1:
        raise ConfigurationError("N_list must be a strictly increasing list of positive integers")
    if M < 2:
        raise InvalidParameterError("need M >= 2 replicas")
    _check_xi(model, xi)
    n_ref = 4 * n_list[-1]
    basis = NoiseBasis(basis_kind, grid.tau, n_ref)
    times = grid.times
    T, K, C = times.size, model.K, model.channel_count
    I = kernel_integrals(basis, model.eigenvalues, times)
    edges = n_list + [n_ref]
    seg_ops = [
        _noise_operator(model, I[:, :, a:b]) for a, b in zip(edges[:-1], edges[1:])
    ]
    facs = _remainder_factors(model, times, I)
    analytic = parseval_tail(model, basis, times, n_list).max(axis=1)

    def chunk(a, b):
        seeds = [seed + i for i in range(a, b)]
        m = len(seeds)
        eta = np.stack([draw_noise(basis, C, s).coefficients for s in seeds])  # (m, C, n_ref)
        z = np.stack(
            [np.stack([normal_stream(s, c, T * K, TAG_REMAINDER).reshape(T, K) for c in range(C)]) for s in seeds]
        )  # (m, C, T, K)
        rho = np.einsum("tkl,mctl->mctk", facs, z)
        rem = np.einsum("ck,mctk->mtk", model.couplings, rho)
        diff = rem.copy()
        s1, s2 = [], []
        # suffix sums over segments give X - X_N for each N, finest segment first
        for idx in range(len(seg_ops) - 1, -1, -1):
            lo, hi = edges[idx], edges[idx + 1]
            e = eta[:, :, lo:hi].reshape(m, -1)
            diff = diff + (e @ seg_ops[idx]).reshape(m, T, K)
            sq = np.sum(diff**2, axis=2)  # (m, T)
            s1.append(sq.sum(axis=0))
            s2.append((sq**2).sum(axis=0))
        return np.array(s1[::-1]), np.array(s2[::-1])

    parts = _run_chunks(chunk, M, workers)
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s1 / M  # (len(n_list), T)
    var = (s2 / M - mean**2) * M / (M - 1)
    t_star = np.argmax(mean, axis=1)
    eps_mc = mean[np.arange(len(n_list)), t_star]
    stderr = np.sqrt(var[np.arange(len(n_list)), t_star] / M)
    order = -np.polyfit(np.log(n_list), np.log(analytic), 1)[0] if len(n_list) > 1 else float("nan")
    return ConvergenceTable(np.array(n_list), eps_mc, analytic, stderr, n_ref, float(order), M)


def definition_residual(path: SamplePath, model: SpectralModel, draw: NoiseDraw) -> float:
    """Max defect of ``X_N(t) = xi + A int_0^t X_N + W_N(t)`` mode by mode.

    The time integral uses the trapezoid rule on the path's grid, so the
    defect is second order in the spacing.
    """
    if path.provenance != "TruncatedN":
        raise UsageError(f"definition residual needs a TruncatedN path, got {path.tag}")
    if path.K != model.K or draw.channels != model.channel_count:
        raise ConfigurationError("path, model and draw are inconsistent")
    times = path.grid.times
    X = path.modes
    W = basis_primitives(draw.basis, times) @ draw.coefficients.T  # (T, C)
    integral = cumulative_trapezoid(X, times)
    r = X - X[0] + model.eigenvalues * integral - W @ model.couplings
    return float(np.max(np.abs(r)))
