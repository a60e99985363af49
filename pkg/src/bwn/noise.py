"""Truncated white noise on ``[0, tau]``.

``dW_N/dt (t) = sum_{j<=N} eta_j phi_j(t)`` for an orthonormal basis
``{phi_j}`` of ``L2(0, tau)`` and independent standard normal ``eta_j``, one
sequence per boundary channel.

Random numbers come from the counter-based Philox generator keyed on
``(seed, stream)``; coefficient ``j`` of a stream is a fixed function of the
``j``-th 64-bit output, so any prefix of a draw is reproduced exactly by a
longer draw with the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError, InvalidParameterError, InvalidTimeError

BASIS_KINDS = ("Trigonometric", "Haar")

_MASK64 = (1 << 64) - 1

# stream tags keep the different consumers of one seed apart
TAG_NOISE = 1
TAG_EXACT = 2
TAG_REMAINDER = 3


def normal_stream(seed: int, stream: int, n: int, tag: int = TAG_NOISE) -> np.ndarray:
    """First ``n`` standard normals of the stream ``(seed, tag, stream)``.

    Each normal is the inverse Gaussian CDF of one 53-bit uniform taken from
    consecutive Philox outputs, so the values do not depend on ``n`` beyond
    truncation.
    """
    key = np.array([int(seed) & _MASK64, ((tag & 0xFFFF) << 48) | (int(stream) & ((1 << 48) - 1))], dtype=np.uint64)
    raw = np.random.Philox(key=key).random_raw(n) if n > 0 else np.zeros(0, dtype=np.uint64)
    u = ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True)
class NoiseBasis:
    kind: str
    tau: float
    size: int

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ConfigurationError(f"unknown basis kind {self.kind!r}")
        if not self.tau > 0:
            raise InvalidParameterError("tau must be positive")
        if self.size < 1:
            raise InvalidParameterError("basis size must be >= 1")

    def resized(self, size: int) -> "NoiseBasis":
        return NoiseBasis(self.kind, self.tau, size)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "tau": self.tau, "size": self.size}


def _trig_index(j):
    """Frequency ``m`` and type (0 const, 1 cos, 2 sin) of 1-based index ``j``."""
    j = np.asarray(j)
    m = j // 2
    kind = np.where(j == 1, 0, np.where(j % 2 == 0, 1, 2))
    return m, kind


def _haar_index(j, tau):
    """Support start, half-width and amplitude of Haar function ``j >= 2``."""
    j = np.asarray(j)
    level = np.floor(np.log2(np.maximum(j - 1, 1))).astype(int)
    pos = j - 1 - 2**level
    h = tau / 2.0**level
    amp = 2.0 ** (level / 2.0) / np.sqrt(tau)
    return pos * h, h / 2.0, amp


def _check_t(basis, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > basis.tau * (1 + 1e-12)):
        raise InvalidTimeError(f"times must lie in [0, {basis.tau}]")
    return np.minimum(t, basis.tau)


def basis_values(basis: NoiseBasis, t) -> np.ndarray:
    """``phi_j(t)`` for ``j = 1..N``; shape ``(len(t), N)``."""
    t = _check_t(basis, np.atleast_1d(t))[:, None]
    j = np.arange(1, basis.size + 1)[None, :]
    tau = basis.tau
    if basis.kind == "Trigonometric":
        m, kind = _trig_index(j)
        w = 2.0 * np.pi * m / tau
        c = np.sqrt(2.0 / tau)
        return np.where(kind == 0, 1.0 / np.sqrt(tau), np.where(kind == 1, c * np.cos(w * t), c * np.sin(w * t)))
    a, half, amp = _haar_index(j, tau)
    first = (t >= a) & (t < a + half)
    second = (t >= a + half) & (t < a + 2 * half)
    # right endpoint belongs to the last cell
    second |= (t == tau) & np.isclose(a + 2 * half, tau)
    haar = amp * (first.astype(float) - second.astype(float))
    return np.where(j == 1, 1.0 / np.sqrt(tau), haar)


def basis_primitives(basis: NoiseBasis, t) -> np.ndarray:
    """``int_0^t phi_j(s) ds`` for ``j = 1..N``; shape ``(len(t), N)``."""
    t = _check_t(basis, np.atleast_1d(t))[:, None]
    j = np.arange(1, basis.size + 1)[None, :]
    tau = basis.tau
    if basis.kind == "Trigonometric":
        m, kind = _trig_index(j)
        w = 2.0 * np.pi * np.maximum(m, 1) / tau
        c = np.sqrt(2.0 / tau)
        sin_p = c * 2.0 * np.sin(0.5 * w * t) ** 2 / w
        cos_p = c * np.sin(w * t) / w
        return np.where(kind == 0, t / np.sqrt(tau), np.where(kind == 1, cos_p, sin_p))
    a, half, amp = _haar_index(j, tau)
    up = np.clip(t - a, 0.0, half)
    down = np.clip(t - a - half, 0.0, half)
    return np.where(j == 1, t / np.sqrt(tau), amp * (up - down))


def basis_primitive(basis: NoiseBasis, j: int, t: float) -> float:
    if not 1 <= j <= basis.size:
        raise InvalidParameterError(f"basis index {j} outside 1..{basis.size}")
    return float(basis_primitives(basis.resized(j), [t])[0, j - 1])


def _exp_segment(mu, t, a, b):
    """``int_a^min(b,t) exp(-mu (t - s)) ds`` (zero when ``a >= t``)."""
    bb = np.minimum(b, t)
    length = np.maximum(bb - a, 0.0)
    z = -mu * length
    with np.errstate(over="ignore", invalid="ignore"):
        val = np.exp(-mu * (t - bb)) * length * np.where(z == 0, 1.0, np.expm1(z) / np.where(z == 0, 1.0, z))
    return np.where(length > 0, val, 0.0)


def kernel_integrals(basis: NoiseBasis, mu, t) -> np.ndarray:
    """``I[i, k, j] = int_0^{t_i} exp(-mu_k (t_i - s)) phi_j(s) ds`` in closed form.

    Shape ``(len(t), len(mu), N)``.
    """
    t = _check_t(basis, np.atleast_1d(t))[:, None, None]
    mu = np.asarray(mu, dtype=float)[None, :, None]
    j = np.arange(1, basis.size + 1)[None, None, :]
    tau = basis.tau
    if basis.kind == "Trigonometric":
        m, kind = _trig_index(j)
        w = 2.0 * np.pi * m / tau
        c = np.sqrt(2.0 / tau)
        decay = np.exp(-mu * t)
        # 1 - exp(-(mu + i w) t), split so that no term cancels
        one_minus_re = -np.expm1(-mu * t) + decay * 2.0 * np.sin(0.5 * w * t) ** 2
        one_minus_im = decay * np.sin(w * t)
        zr, zi = mu, w
        den = zr * zr + zi * zi
        safe = np.where(den == 0, 1.0, den)
        # (1 - e^{-zt}) / z
        qr = (one_minus_re * zr + one_minus_im * zi) / safe
        qi = (one_minus_im * zr - one_minus_re * zi) / safe
        # multiply by e^{i w t}
        cw, sw = np.cos(w * t), np.sin(w * t)
        jr = cw * qr - sw * qi
        ji = sw * qr + cw * qi
        const = t * np.where(mu * t == 0, 1.0, -np.expm1(-mu * t) / np.where(mu * t == 0, 1.0, mu * t))
        return np.where(kind == 0, const / np.sqrt(tau), np.where(kind == 1, c * jr, c * ji))
    a, half, amp = _haar_index(j, tau)
    haar = amp * (_exp_segment(mu, t, a, a + half) - _exp_segment(mu, t, a + half, a + 2 * half))
    const = _exp_segment(mu, t, 0.0, tau) / np.sqrt(tau)
    return np.where(j == 1, const, haar)


@dataclass(frozen=True, eq=False)
class NoiseDraw:
    """One realization of the truncated noise: ``coefficients[c, j-1] = eta_{c,j}``."""

    basis: NoiseBasis
    channels: int
    seed: int
    coefficients: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.channels < 1:
            raise InvalidParameterError("channels must be >= 1")
        if self.coefficients is None:
            coeffs = np.vstack(
                [normal_stream(self.seed, c, self.basis.size) for c in range(self.channels)]
            )
        else:
            coeffs = np.array(self.coefficients, dtype=float)
            if coeffs.shape != (self.channels, self.basis.size):
                raise ConfigurationError("coefficient matrix has the wrong shape")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def N(self) -> int:
        return self.basis.size

    def truncated(self, N: int) -> "NoiseDraw":
        if not 1 <= N <= self.N:
            raise InvalidParameterError(f"cannot truncate N={self.N} draw to {N}")
        return NoiseDraw(self.basis.resized(N), self.channels, self.seed, self.coefficients[:, :N])

    def to_dict(self) -> dict:
        return {"basis": self.basis.to_dict(), "channels": self.channels, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseDraw":
        b = d["basis"]
        return draw_noise(NoiseBasis(b["kind"], float(b["tau"]), int(b["size"])), int(d["channels"]), int(d["seed"]))


def draw_noise(basis: NoiseBasis, channels: int, seed: int) -> NoiseDraw:
    return NoiseDraw(basis, channels, seed)


def wn_eval(draw: NoiseDraw, channel: int, t) -> np.ndarray | float:
    """``W_N(t) = sum_j eta_j int_0^t phi_j`` on one channel."""
    if not 0 <= channel < draw.channels:
        raise InvalidParameterError(f"channel {channel} outside 0..{draw.channels - 1}")
    scalar = np.ndim(t) == 0
    vals = basis_primitives(draw.basis, np.atleast_1d(t)) @ draw.coefficients[channel]
    return float(vals[0]) if scalar else vals


def white_noise_eval(draw: NoiseDraw, channel: int, t) -> np.ndarray:
    """``dW_N/dt`` on one channel."""
    return basis_values(draw.basis, np.atleast_1d(t)) @ draw.coefficients[channel]
