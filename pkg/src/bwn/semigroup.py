"""Integrated semigroup, its derivative, and the deterministic diamond convolution.

Everything acts mode by mode.  With ``v = f + b^T w`` the effective interior
coefficients of ``z = (w, f)``:

* ``T0(t)`` multiplies interior modes by ``exp(-mu t)``;
* ``S_A(t) z`` has modes ``g(mu, t) v`` with ``g(mu, t) = (1 - exp(-mu t)) / mu``;
* ``dS_A/dt (t) z`` has modes ``exp(-mu t) v`` for ``t > 0``.

The diamond convolution ``(S_A <> f)(t) = d/dt int_0^t S_A(t-s) f(s) ds`` is
evaluated with exact per-cell exponential integrals, so identities such as the
extended variation-of-constants formula hold to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DomainError, InvalidParameterError, InvalidTimeError
from .paths import SamplePath, TimeGrid
from .spectral_model import CoordVector, SpectralModel, check_vector, effective_modes

FORCING_KINDS = ("PiecewiseConstant", "PiecewiseLinear")

_SMALL = 1e-2


def phi1(z):
    """``(exp(z) - 1) / z`` with value 1 at 0."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


def phi2(z):
    """``(exp(z) - 1 - z) / z**2`` with value 1/2 at 0."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < _SMALL
    zs = z[small]
    # sum_n z**n / (n + 2)!
    out[small] = 1 / 2 + zs * (1 / 6 + zs * (1 / 24 + zs * (1 / 120 + zs * (1 / 720 + zs * (1 / 5040 + zs / 40320)))))
    zl = z[~small]
    out[~small] = (np.expm1(zl) - zl) / (zl * zl)
    return out


def g(mu, t):
    """``(1 - exp(-mu t)) / mu`` with the limit ``t`` at ``mu = 0``."""
    mu = np.asarray(mu, dtype=float)
    return t * phi1(-mu * t)


def _check_time(t, strict=False):
    if strict and not t > 0:
        raise InvalidTimeError(f"time must be > 0, got {t}")
    if not t >= 0:
        raise InvalidTimeError(f"time must be >= 0, got {t}")


def _require_interior(x: CoordVector):
    if not x.is_interior:
        raise DomainError("vector has a nonzero boundary part; expected an element of H0")


def t0_apply(model: SpectralModel, t: float, x: CoordVector) -> CoordVector:
    _check_time(t)
    check_vector(model, x)
    _require_interior(x)
    return CoordVector(np.exp(-model.eigenvalues * t) * x.modes)


def sa_apply(model: SpectralModel, t: float, z: CoordVector) -> CoordVector:
    _check_time(t)
    return CoordVector(g(model.eigenvalues, t) * effective_modes(model, z))


def dsa_apply(
    model: SpectralModel, t: float, z: CoordVector, alpha: Optional[float] = None, lam: float = 1.0
) -> CoordVector:
    """Derivative of the integrated semigroup at ``t > 0``.

    With ``alpha`` given, evaluates the factorized form
    ``(lam - A0)^alpha T0(t) (lam - A)^(-alpha)`` instead; both agree up to
    rounding.
    """
    _check_time(t, strict=True)
    v = effective_modes(model, z)
    decay = np.exp(-model.eigenvalues * t)
    if alpha is None:
        return CoordVector(decay * v)
    s = lam + model.eigenvalues
    return CoordVector(s**alpha * (decay * (s ** (-alpha) * v)))


def boundary_block_norm(model: SpectralModel, t: float, weights=None) -> float:
    """``sqrt(sum_k c_k exp(-2 mu_k t))``: size of the boundary-to-interior block."""
    _check_time(t, strict=True)
    c = model.weights if weights is None else weights
    return float(np.sqrt(np.sum(c * np.exp(-2.0 * model.eigenvalues * t))))


@dataclass(frozen=True, eq=False)
class ForcingSignal:
    """Forcing on a time grid.

    ``modes`` has one row per grid time (PiecewiseLinear) or per cell
    (PiecewiseConstant); ``boundary`` likewise holds boundary-channel values.
    """

    grid: TimeGrid
    kind: str
    modes: np.ndarray
    boundary: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in FORCING_KINDS:
            raise ConfigurationError(f"unknown forcing kind {self.kind!r}")
        rows = len(self.grid) - (1 if self.kind == "PiecewiseConstant" else 0)
        m = np.array(self.modes, dtype=float)
        if m.ndim != 2 or m.shape[0] != rows:
            raise ConfigurationError(f"{self.kind} forcing needs {rows} rows, got {m.shape}")
        object.__setattr__(self, "modes", m)
        if self.boundary is not None:
            w = np.array(self.boundary, dtype=float)
            if w.ndim != 2 or w.shape[0] != rows:
                raise ConfigurationError("boundary forcing rows must match the modes")
            object.__setattr__(self, "boundary", w)

    def effective(self, model: SpectralModel) -> np.ndarray:
        if self.modes.shape[1] != model.K:
            raise ConfigurationError("forcing and model disagree on K")
        v = np.array(self.modes)
        if self.boundary is not None:
            if self.boundary.shape[1] != model.channel_count:
                raise ConfigurationError("forcing and model disagree on channels")
            v = v + self.boundary @ model.couplings
        return v

    def norms(self) -> np.ndarray:
        """Product-space norm of each row."""
        sq = np.sum(self.modes**2, axis=1)
        if self.boundary is not None:
            sq = sq + np.sum(self.boundary**2, axis=1)
        return np.sqrt(sq)


def _propagate(mu, times, values, kind, u0):
    """Exact solution of ``u' = -mu u + v`` on breakpoints ``times``.

    ``values`` are node values (linear) or cell values (constant).
    """
    out = np.empty((times.size, mu.size))
    out[0] = u0
    u = np.array(u0, dtype=float)
    for i in range(times.size - 1):
        dt = times[i + 1] - times[i]
        z = -mu * dt
        decay = np.exp(z)
        if kind == "PiecewiseConstant":
            u = decay * u + dt * phi1(z) * values[i]
        else:
            u = decay * u + dt * (phi1(z) * values[i] + phi2(z) * (values[i + 1] - values[i]))
        out[i + 1] = u
    return out


def _restrict(f_times, v, kind, a, b):
    """Breakpoints and values of the forcing restricted to ``[a, b]``."""
    inner = f_times[(f_times > a) & (f_times < b)]
    pts = np.concatenate([[a], inner, [b]]) if b > a else np.array([a])
    if kind == "PiecewiseLinear":
        vals = np.column_stack([np.interp(pts, f_times, v[:, k]) for k in range(v.shape[1])])
    else:
        cell = np.clip(np.searchsorted(f_times, pts[:-1], side="right") - 1, 0, v.shape[0] - 1)
        vals = v[cell]
    return pts, vals


def diamond_at(model: SpectralModel, f: ForcingSignal, t: float, start: float = 0.0) -> np.ndarray:
    """Modes of ``(S_A <> f(start + .))(t)`` at a single time."""
    tau = f.grid.tau
    if not (0 <= start and t >= 0 and start + t <= tau * (1 + 1e-14)):
        raise InvalidTimeError(f"[{start}, {start + t}] is outside the forcing interval [0, {tau}]")
    v = f.effective(model)
    pts, vals = _restrict(f.grid.times, v, f.kind, start, min(start + t, tau))
    if pts.size == 1:
        return np.zeros(model.K)
    return _propagate(model.eigenvalues, pts, vals, f.kind, np.zeros(model.K))[-1]


def convolve_diamond(model: SpectralModel, f: ForcingSignal, grid: TimeGrid) -> SamplePath:
    if not f.grid.same_as(grid):
        raise ConfigurationError("forcing grid and output grid differ")
    v = f.effective(model)
    modes = _propagate(model.eigenvalues, grid.times, v, f.kind, np.zeros(model.K))
    return SamplePath(grid, modes, "Deterministic", model_name=model.name)


def convolve_diamond_factorized(
    model: SpectralModel, f: ForcingSignal, grid: TimeGrid, beta: float, lam: float = 1.0
) -> SamplePath:
    """The same convolution evaluated as ``int (lam-A0)^beta T0(t-s) (lam-A)^-beta f(s) ds``."""
    if not 0 < beta < 1:
        raise InvalidParameterError("beta must lie in (0, 1)")
    if not f.grid.same_as(grid):
        raise ConfigurationError("forcing grid and output grid differ")
    s = lam + model.eigenvalues
    v = f.effective(model) * s ** (-beta)
    modes = _propagate(model.eigenvalues, grid.times, v, f.kind, np.zeros(model.K)) * s**beta
    return SamplePath(grid, modes, "Deterministic", model_name=model.name)


def voc_solve(model: SpectralModel, xi: CoordVector, f: ForcingSignal, grid: TimeGrid) -> SamplePath:
    """Integrated solution ``u(t) = T0(t) xi + (S_A <> f)(t)``."""
    check_vector(model, xi)
    _require_interior(xi)
    if not f.grid.same_as(grid):
        raise ConfigurationError("forcing grid and output grid differ")
    v = f.effective(model)
    modes = _propagate(model.eigenvalues, grid.times, v, f.kind, xi.modes)
    return SamplePath(grid, modes, "Deterministic", model_name=model.name)


def forcing_primitive(model: SpectralModel, f: ForcingSignal) -> np.ndarray:
    """Exact ``int_0^t v(s) ds`` at every grid time."""
    v = f.effective(model)
    dt = np.diff(f.grid.times)[:, None]
    if f.kind == "PiecewiseConstant":
        cells = dt * v
    else:
        cells = 0.5 * dt * (v[1:] + v[:-1])
    return np.vstack([np.zeros(model.K), np.cumsum(cells, axis=0)])


def cumulative_trapezoid(y: np.ndarray, times: np.ndarray) -> np.ndarray:
    dt = np.diff(times)[:, None]
    return np.vstack([np.zeros(y.shape[1]), np.cumsum(0.5 * dt * (y[1:] + y[:-1]), axis=0)])


def integrated_residual(
    model: SpectralModel, path: SamplePath, xi: CoordVector, f: ForcingSignal
) -> float:
    """Max-norm defect of ``u(t) = x + A int_0^t u + int_0^t f``.

    ``int u`` uses the trapezoid rule, so the defect is second order in the
    grid spacing.
    """
    U = path.modes
    I = cumulative_trapezoid(U, path.grid.times)
    F = forcing_primitive(model, f)
    r = U - xi.modes + model.eigenvalues * I - F
    return float(np.max(np.abs(r)))


def check_extended_voc(model: SpectralModel, f: ForcingSignal, s: float, t: float) -> float:
    """Norm of ``(S<>f)(t) - T0(t-s)(S<>f)(s) - (S<>f(s+.))(t-s)``."""
    if s > t:
        raise InvalidParameterError(f"need s <= t, got s={s}, t={t}")
    if s < 0 or t > f.grid.tau * (1 + 1e-14):
        raise InvalidTimeError("s and t must lie in [0, tau]")
    lhs = diamond_at(model, f, t)
    rhs = np.exp(-model.eigenvalues * (t - s)) * diamond_at(model, f, s)
    rhs = rhs + diamond_at(model, f, t - s, start=s)
    return float(np.linalg.norm(lhs - rhs))
