"""Spectral simulation and verification of parabolic equations driven by
boundary white noise.

The boundary-perturbed generator is diagonal in the eigenbasis of the
underlying interior operator; every object here works on mode coordinates
``(mu_k, b[c, k])``.
"""

from .assumption_checker import (
    DecayFit,
    SeriesResult,
    Verdict,
    conjugate_exponent,
    diamond_bound,
    dsa_operator_norm,
    estimate_growth,
    estimate_resolvent_decay,
    fractional_power_norm,
    lp_norm_integral,
    trace_series_dsa,
    trace_series_sa,
)
from .errors import (
    BwnError,
    ConfigurationError,
    DomainError,
    InvalidParameterError,
    InvalidSizeError,
    InvalidTimeError,
    NumericalFailure,
    ResolventSetError,
    TruncationError,
    UsageError,
)
from .noise import NoiseBasis, NoiseDraw, draw_noise, kernel_integrals, normal_stream, wn_eval
from .paths import SamplePath, TimeGrid, read_path_csv, write_path_csv
from .semigroup import (
    ForcingSignal,
    check_extended_voc,
    convolve_diamond,
    convolve_diamond_factorized,
    dsa_apply,
    sa_apply,
    t0_apply,
    voc_solve,
)
from .solver import (
    ConvergenceTable,
    MomentReport,
    convergence_study,
    covariance_exact,
    definition_residual,
    mc_estimate,
    simulate_exact,
    simulate_xn,
)
from .spectral_model import (
    CoordVector,
    SpectralModel,
    build_dirichlet_interval,
    build_model,
    build_neumann_interval,
    build_neumann_square,
    fractional_power_apply,
    load_custom_model,
    resolvent_apply,
    resolvent_norm,
    save_custom_model,
)

__version__ = "0.1.0"
