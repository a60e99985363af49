"""Diagonal spectral models of boundary-coupled elliptic operators.

A model stores the truncated spectrum ``mu_0 <= ... <= mu_{K-1}`` of the
interior operator together with, for every boundary channel ``c``, the
coupling ``b[c, k]`` through which boundary data enters mode ``k``.  In these
coordinates an element of the product space ``U x H`` is a pair ``(w, f)`` of
boundary values and mode coefficients, and the resolvent acts as

    R(lam) (w, f) = (0, (f_k + sum_c b[c, k] w_c) / (lam + mu_k)).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    InvalidParameterError,
    InvalidSizeError,
    NumericalFailure,
    ResolventSetError,
)

MODEL_NAMES = ("NeumannInterval", "DirichletInterval", "NeumannSquare", "Custom")


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Truncated diagonal representation of the pair (A, A0).

    Attributes
    ----------
    name : str
        One of ``MODEL_NAMES``.
    spatial_dim : int
        Dimension of the spatial domain.
    eigenvalues : ndarray, shape (K,)
        Nondecreasing spectrum of ``-A0``.
    couplings : ndarray, shape (channels, K)
        Boundary weights of the normalized eigenfunctions.
    growth_exponent : float
        Exponent ``gamma`` in ``mu_k ~ c k**gamma``; drives the tail bounds.
    expected_pstar : float or None
        Reference resolvent decay exponent, if known.
    coupling_exponent : float
        Exponent ``delta`` in ``sum_c b[c, k]**2 ~ c k**delta`` (0 for Neumann
        traces, 2 for Dirichlet normal derivatives).
    """

    name: str
    spatial_dim: int
    eigenvalues: np.ndarray
    couplings: np.ndarray
    growth_exponent: float
    expected_pstar: Optional[float] = None
    coupling_exponent: float = 0.0

    def __post_init__(self):
        mu = _frozen(self.eigenvalues)
        b = _frozen(np.atleast_2d(self.couplings))
        object.__setattr__(self, "eigenvalues", mu)
        object.__setattr__(self, "couplings", b)
        if self.name not in MODEL_NAMES:
            raise ConfigurationError(f"unknown model name {self.name!r}")
        if self.spatial_dim < 1:
            raise ConfigurationError("spatial_dim must be >= 1")
        if mu.ndim != 1 or mu.size == 0:
            raise InvalidSizeError("eigenvalues must be a nonempty 1-d sequence")
        if np.any(mu < 0) or np.any(np.diff(mu) < 0):
            raise ConfigurationError("eigenvalues must be nonnegative and nondecreasing")
        if np.count_nonzero(mu == 0) > 1:
            raise ConfigurationError("at most one zero eigenvalue is allowed")
        if b.shape[1] != mu.size or b.shape[0] < 1:
            raise ConfigurationError(
                f"couplings must have shape (channels, {mu.size}), got {b.shape}"
            )
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(b))):
            raise ConfigurationError("model data must be finite")

    @property
    def K(self) -> int:
        return self.eigenvalues.size

    @property
    def channel_count(self) -> int:
        return self.couplings.shape[0]

    @property
    def weights(self) -> np.ndarray:
        """Per-mode coupling weight ``sum_c b[c, k]**2``."""
        return np.sum(self.couplings**2, axis=0)

    def with_couplings(self, couplings) -> "SpectralModel":
        return SpectralModel(
            "Custom",
            self.spatial_dim,
            self.eigenvalues,
            couplings,
            self.growth_exponent,
            self.expected_pstar,
            self.coupling_exponent,
        )

    def truncated(self, K: int) -> "SpectralModel":
        if not 1 <= K <= self.K:
            raise InvalidSizeError(f"cannot truncate K={self.K} model to {K}")
        return SpectralModel(
            self.name,
            self.spatial_dim,
            self.eigenvalues[:K],
            self.couplings[:, :K],
            self.growth_exponent,
            self.expected_pstar,
            self.coupling_exponent,
        )


@dataclass(frozen=True, eq=False)
class CoordVector:
    """Coordinates of an element ``(w, f)`` of ``U x H``.

    ``boundary`` is ``None`` for elements of the interior space ``{0} x H``.
    """

    modes: np.ndarray
    boundary: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "modes", _frozen(self.modes))
        if self.boundary is not None:
            object.__setattr__(self, "boundary", _frozen(self.boundary))

    @property
    def is_interior(self) -> bool:
        return self.boundary is None or not np.any(self.boundary)

    def norm(self) -> float:
        sq = float(np.dot(self.modes, self.modes))
        if self.boundary is not None:
            sq += float(np.dot(self.boundary, self.boundary))
        return float(np.sqrt(sq))

    @classmethod
    def interior(cls, modes) -> "CoordVector":
        return cls(np.asarray(modes, dtype=float))


def check_vector(model: SpectralModel, z: CoordVector) -> None:
    if z.modes.shape != (model.K,):
        raise ConfigurationError(f"vector has {z.modes.shape} modes, model has K={model.K}")
    if z.boundary is not None and z.boundary.shape != (model.channel_count,):
        raise ConfigurationError(
            f"boundary part has shape {z.boundary.shape}, model has "
            f"{model.channel_count} channels"
        )


def effective_modes(model: SpectralModel, z: CoordVector) -> np.ndarray:
    """Interior coefficients ``f_k + sum_c b[c, k] w_c`` seen by the dynamics."""
    check_vector(model, z)
    if z.boundary is None:
        return np.array(z.modes)
    return z.modes + z.boundary @ model.couplings


# --- built-in models -------------------------------------------------------


def build_neumann_interval(K: int) -> SpectralModel:
    """Neumann Laplacian on (0, 1) with boundary channels at x=0 and x=1.

    Eigenfunctions are ``1`` and ``sqrt(2) cos(k pi x)``; the channel couplings
    are their endpoint traces.
    """
    if K < 2:
        raise InvalidSizeError(f"NeumannInterval needs K >= 2, got {K}")
    k = np.arange(K)
    mu = (k * np.pi) ** 2
    b0 = np.full(K, np.sqrt(2.0))
    b0[0] = 1.0
    b1 = np.where(k % 2 == 0, 1.0, -1.0) * np.sqrt(2.0)
    b1[0] = 1.0
    return SpectralModel("NeumannInterval", 1, mu, np.vstack([b0, b1]), 2.0, 4.0 / 3.0, 0.0)


def build_dirichlet_interval(K: int) -> SpectralModel:
    """Dirichlet Laplacian on (0, 1); couplings are outward normal derivatives
    of ``sqrt(2) sin(k pi x)`` taken with the ``-d/dnu`` sign convention."""
    if K < 1:
        raise InvalidSizeError(f"DirichletInterval needs K >= 1, got {K}")
    k = np.arange(1, K + 1)
    mu = (k * np.pi) ** 2
    b0 = np.sqrt(2.0) * k * np.pi
    b1 = -np.where(k % 2 == 0, 1.0, -1.0) * np.sqrt(2.0) * k * np.pi
    return SpectralModel("DirichletInterval", 1, mu, np.vstack([b0, b1]), 2.0, 4.0, 2.0)


def square_eigenvalues(K: int) -> np.ndarray:
    """The K smallest values of ``pi**2 (i**2 + j**2)``, ``i, j >= 0``, sorted."""
    R = int(np.ceil(np.sqrt(4.0 * K / np.pi))) + 2
    while True:
        i = np.arange(R + 1)
        s = (i[:, None] ** 2 + i[None, :] ** 2).ravel()
        s = s[s <= R * R]
        if s.size >= K:
            break
        R *= 2
    s = np.sort(s)[:K]
    return np.pi**2 * s.astype(float)


def build_neumann_square(K: int) -> SpectralModel:
    """Neumann Laplacian on the unit square with unit coupling weights."""
    if K < 2:
        raise InvalidSizeError(f"NeumannSquare needs K >= 2, got {K}")
    mu = square_eigenvalues(K)
    return SpectralModel("NeumannSquare", 2, mu, np.ones((1, K)), 1.0, None, 0.0)


BUILDERS = {
    "NeumannInterval": build_neumann_interval,
    "DirichletInterval": build_dirichlet_interval,
    "NeumannSquare": build_neumann_square,
}


def build_model(name: str, K: int) -> SpectralModel:
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise ConfigurationError(f"unknown built-in model {name!r}") from None
    return builder(K)


# --- custom model files ----------------------------------------------------


def save_custom_model(model: SpectralModel, csv_path) -> None:
    """Write ``k,mu,b0,b1,...`` CSV plus a JSON metadata sidecar."""
    csv_path = Path(csv_path)
    header = ["k", "mu"] + [f"b{c}" for c in range(model.channel_count)]
    with open(csv_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(model.K):
            row = [str(k), format(model.eigenvalues[k], ".17g")]
            row += [format(x, ".17g") for x in model.couplings[:, k]]
            fh.write(",".join(row) + "\n")
    meta = {
        "name": model.name,
        "spatial_dim": model.spatial_dim,
        "growth_exponent": model.growth_exponent,
        "coupling_exponent": model.coupling_exponent,
    }
    if model.expected_pstar is not None:
        meta["expected_pstar"] = model.expected_pstar
    csv_path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_custom_model(csv_path) -> SpectralModel:
    csv_path = Path(csv_path)
    try:
        with open(csv_path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        meta = json.loads(csv_path.with_suffix(".json").read_text())
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read custom model {csv_path}: {exc}") from exc
    if header[:2] != ["k", "mu"] or len(header) < 3:
        raise ConfigurationError("custom model header must start with k,mu,b0")
    if "growth_exponent" not in meta:
        raise ConfigurationError("custom model sidecar needs 'growth_exponent'")
    return SpectralModel(
        "Custom",
        int(meta.get("spatial_dim", 1)),
        data[:, 1],
        data[:, 2:].T,
        float(meta["growth_exponent"]),
        meta.get("expected_pstar"),
        float(meta.get("coupling_exponent", 0.0)),
    )


# --- resolvent and fractional powers --------------------------------------


def _check_lambda(lam: float) -> None:
    if not lam > 0:
        raise ResolventSetError(f"lambda={lam} is not in the resolvent set (need lambda > 0)")


def resolvent_apply(model: SpectralModel, lam: float, z: CoordVector) -> CoordVector:
    _check_lambda(lam)
    v = effective_modes(model, z)
    return CoordVector(v / (lam + model.eigenvalues), np.zeros(model.channel_count))


def fractional_power_apply(
    model: SpectralModel, alpha: float, lam: float, x: CoordVector
) -> CoordVector:
    """Apply ``(lam I - A)^(-alpha)`` in coordinates.

    ``alpha = 0`` is accepted as the identity convention on interior vectors.
    A boundary part requires ``alpha > 1/q*`` for the operator to exist in the
    untruncated model; the truncated action is computed regardless.
    """
    if alpha < 0 or (alpha == 0 and not x.is_interior):
        raise InvalidParameterError(f"alpha must be > 0, got {alpha}")
    _check_lambda(lam)
    v = effective_modes(model, x)
    if alpha == 0:
        return CoordVector(v)
    return CoordVector(v * (lam + model.eigenvalues) ** (-alpha), np.zeros(model.channel_count))


def top_eigenvalue_diag_lowrank(d2, C, rtol=1e-13, maxiter=20000) -> float:
    """Largest eigenvalue of ``diag(d2) + C @ C.T`` by block power iteration.

    ``d2`` has shape (K,), ``C`` shape (K, r).  The block holds the coupling
    columns plus the two largest diagonal directions and is refined with a
    Rayleigh-Ritz step each sweep.  Iteration stops once the Ritz residual
    certifies relative accuracy ``rtol``.
    """
    d2 = np.asarray(d2, dtype=float)
    C = np.asarray(C, dtype=float).reshape(d2.size, -1)
    K = d2.size
    if K <= 8:
        return float(np.linalg.eigvalsh(np.diag(d2) + C @ C.T)[-1])
    cols = [C[:, i] for i in range(C.shape[1]) if np.any(C[:, i])]
    for idx in np.argsort(d2)[::-1][:2]:
        e = np.zeros(K)
        e[idx] = 1.0
        cols.append(e)
    Q, R = np.linalg.qr(np.column_stack(cols))
    rdiag = np.abs(np.diag(R))
    V = Q[:, rdiag > 1e-12 * rdiag.max()]

    def apply(X):
        return d2[:, None] * X + C @ (C.T @ X)

    theta = 0.0
    for _ in range(maxiter):
        W = apply(V)
        H = V.T @ W
        H = 0.5 * (H + H.T)
        evals, evecs = np.linalg.eigh(H)
        theta = evals[-1]
        if theta <= 0:
            return 0.0
        v = V @ evecs[:, -1]
        r = W @ evecs[:, -1] - theta * v
        rn = np.linalg.norm(r)
        gap = theta - evals[-2] if evals.size > 1 else theta
        err = rn if gap <= 0 else min(rn, rn * rn / gap)
        if err <= rtol * theta:
            return float(theta)
        V, _ = np.linalg.qr(W @ evecs[:, ::-1])
    raise NumericalFailure(f"block power iteration did not converge in {maxiter} sweeps")


def resolvent_norm(model: SpectralModel, lam: float) -> float:
    """Operator norm of the truncated coordinate matrix ``[D | C]`` of ``R(lam, A)``."""
    _check_lambda(lam)
    d = 1.0 / (lam + model.eigenvalues)
    top = top_eigenvalue_diag_lowrank(d * d, (model.couplings * d).T)
    return float(np.sqrt(top))


# --- truncation tails ------------------------------------------------------


def _tail_anchor(model: SpectralModel):
    """Last mode's position among the positive eigenvalues, its eigenvalue and weight."""
    x_last = int(np.count_nonzero(model.eigenvalues > 0))
    if x_last == 0:
        raise InvalidSizeError("model has no positive eigenvalue to extrapolate from")
    return x_last, float(model.eigenvalues[-1]), float(model.weights[-1])


def power_tail_sum(model: SpectralModel, mu_power: float, unit_weights=False) -> float:
    """Upper bound on ``sum_{k >= K} c_k / mu_k**mu_power`` beyond the truncation.

    Eigenvalues and weights are extrapolated as power laws from the last
    retained mode: ``mu(x) = mu_last (x/x_last)**gamma`` and likewise for the
    weights with ``delta``.  Returns ``inf`` when the extrapolated series
    diverges.
    """
    x_last, mu_last, w_last = _tail_anchor(model)
    gamma = model.growth_exponent
    delta = 0.0 if unit_weights else model.coupling_exponent
    w_last = 1.0 if unit_weights else w_last
    e = mu_power * gamma - delta
    if e <= 1:
        return float("inf")
    # terms decrease, so sum_{m > x_last} m**-e <= int_{x_last}^inf m**-e dm
    return w_last / mu_last**mu_power * x_last / (e - 1.0)


def resolvent_tail_bound(model: SpectralModel, lam: float) -> float:
    """Bound on ``||R_infinity(lam)|| - ||R_K(lam)||`` from the modes beyond K."""
    _check_lambda(lam)
    tail_sq = power_tail_sum(model, 2.0)
    tail_sq += 1.0 / (lam + model.eigenvalues[-1]) ** 2
    head = resolvent_norm(model, lam)
    return float(np.sqrt(head * head + tail_sq) - head)


def unit_vector(model: SpectralModel, k: int) -> CoordVector:
    e = np.zeros(model.K)
    e[k] = 1.0
    return CoordVector(e)


def random_vector(
    model: SpectralModel, rng: np.random.Generator, boundary=True
) -> CoordVector:
    modes = rng.standard_normal(model.K)
    w = rng.standard_normal(model.channel_count) if boundary else None
    return CoordVector(modes, w)


__all__: Sequence[str] = [
    "SpectralModel",
    "CoordVector",
    "build_neumann_interval",
    "build_dirichlet_interval",
    "build_neumann_square",
    "build_model",
    "resolvent_apply",
    "resolvent_norm",
    "fractional_power_apply",
    "top_eigenvalue_diag_lowrank",
    "resolvent_tail_bound",
    "power_tail_sum",
    "save_custom_model",
    "load_custom_model",
]
