"""Command-line front end: ``bwn check | solve | simulate | converge | covariance``.

Exit codes: 0 success, 2 a check diverged or a comparison failed,
3 inconclusive, 64 bad usage or configuration, 70 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import assumption_checker as ac
from .errors import BwnError, ConfigurationError, NumericalFailure, TruncationError, UsageError
from .jsonio import dump_json
from .noise import BASIS_KINDS, NoiseBasis, draw_noise
from .paths import TimeGrid, write_path_csv
from .semigroup import FORCING_KINDS, ForcingSignal, integrated_residual, voc_solve
from .solver import (
    convergence_study,
    covariance_exact,
    mc_estimate,
    simulate_exact,
    simulate_xn,
    variance_band,
)
from .spectral_model import BUILDERS, CoordVector, SpectralModel, build_model, load_custom_model

EXIT_OK = 0
EXIT_DIVERGED = 2
EXIT_INCONCLUSIVE = 3
EXIT_USAGE = 64
EXIT_SOFTWARE = 70


@dataclass
class RunConfig:
    """Settings shared by all subcommands.

    ``K`` is the simulation truncation; the assumption checks run on a
    separate, much larger ``check_K``.
    """

    model: str = "NeumannInterval"
    K: int = 64
    check_K: int = 100000
    tau: float = 1.0
    grid_points: int = 101
    basis: str = "Trigonometric"
    N: int = 64
    channels: int = 0  # 0 = take from the model
    M: int = 10000
    seed: int = 0
    beta: float = 0.3
    series_rel_tol: float = 1e-4
    fit_r2_min: float = 0.99
    lp_rel_tol: float = 0.25
    p_grid: List[float] = field(default_factory=lambda: [1.2, 1.5, 3.5, 4.5])
    lambda_min: float = 1e2
    lambda_max: float = 1e6
    r_min: float = 1e-8
    N_list: List[int] = field(default_factory=lambda: [8, 16, 32, 64, 128])
    converge_rel_tol: float = 0.05
    covariance_time: float = 0.5
    forcing_kind: str = "PiecewiseLinear"
    output_dir: str = "bwn_out"

    def __post_init__(self):
        self.validate()

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("seed", "channels"):
                if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                    raise ConfigurationError(f"{f.name} must be a non-negative integer")
            elif f.type in ("int", "float"):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigurationError(f"{f.name} must be numeric, got {v!r}")
                if f.type == "int" and not isinstance(v, int):
                    raise ConfigurationError(f"{f.name} must be an integer")
                if not v > 0:
                    raise ConfigurationError(f"{f.name} must be positive")
        if not 0 < self.beta < 1:
            raise ConfigurationError("beta must lie in (0, 1)")
        if self.basis not in BASIS_KINDS:
            raise ConfigurationError(f"basis must be one of {BASIS_KINDS}")
        if self.forcing_kind not in FORCING_KINDS:
            raise ConfigurationError(f"forcing_kind must be one of {FORCING_KINDS}")
        if self.grid_points < 2 or self.M < 2:
            raise ConfigurationError("grid_points and M must be at least 2")
        if not self.lambda_min < self.lambda_max:
            raise ConfigurationError("lambda_min must be below lambda_max")
        if not self.p_grid or any(p < 1 for p in self.p_grid):
            raise ConfigurationError("p_grid entries must be >= 1")
        nl = self.N_list
        if not nl or any(not isinstance(n, int) or n < 1 for n in nl) or any(b <= a for a, b in zip(nl, nl[1:])):
            raise ConfigurationError("N_list must be strictly increasing positive integers")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        d = dict(d)
        # TOML integers are fine where floats are expected
        for f in fields(cls):
            if f.type == "float" and isinstance(d.get(f.name), int) and not isinstance(d[f.name], bool):
                d[f.name] = float(d[f.name])
            if f.name == "p_grid" and f.name in d:
                d[f.name] = [float(p) for p in d[f.name]]
        return cls(**d)

    @classmethod
    def from_toml(cls, text: str) -> "RunConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"malformed TOML: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_toml(text)

    def to_toml(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_toml_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _toml_value(v) -> str:
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        s = repr(v)
        return s if any(c in s for c in ".en") else s + ".0"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


# --- helpers ---------------------------------------------------------------


def _model(cfg: RunConfig, K: int) -> SpectralModel:
    if cfg.model in BUILDERS:
        model = build_model(cfg.model, K)
    else:
        model = load_custom_model(cfg.model)
        if K < model.K:
            model = model.truncated(K)
    if cfg.channels and cfg.channels != model.channel_count:
        raise ConfigurationError(
            f"config asks for {cfg.channels} channels, model {model.name} has {model.channel_count}"
        )
    return model


def _initial(model: SpectralModel, path: Optional[str]) -> CoordVector:
    if path is None:
        return CoordVector(np.zeros(model.K))
    try:
        vals = np.loadtxt(path, delimiter=",", comments="#", ndmin=1, usecols=None)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read initial condition {path}: {exc}") from exc
    vals = np.ravel(vals)
    if vals.size != model.K:
        raise ConfigurationError(f"initial condition has {vals.size} entries, model has K={model.K}")
    return CoordVector(vals)


def _read_forcing(path: str, kind: str):
    """Forcing CSV with header ``t, mode_0.., [boundary_0..]``; one row per node."""
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read forcing {path}: {exc}") from exc
    if not header or header[0] != "t":
        raise ConfigurationError("forcing header must start with 't'")
    mode_cols = [i for i, h in enumerate(header) if h.startswith("mode_")]
    bnd_cols = [i for i, h in enumerate(header) if h.startswith("boundary_")]
    if not mode_cols or len(mode_cols) + len(bnd_cols) + 1 != len(header):
        raise ConfigurationError("forcing columns must be t, mode_*, boundary_*")
    grid = TimeGrid(data[:, 0])
    rows = slice(None) if kind == "PiecewiseLinear" else slice(0, -1)  # cells take left-node values
    modes = data[rows][:, mode_cols]
    boundary = data[rows][:, bnd_cols] if bnd_cols else None
    return ForcingSignal(grid, kind, modes, boundary)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# --- subcommands -----------------------------------------------------------


def cmd_check(cfg: RunConfig, out: Path) -> int:
    model = _model(cfg, cfg.check_K)
    report = {"model": model.name, "K": model.K, "tau": cfg.tau}
    verdicts = []
    try:
        fit = ac.estimate_resolvent_decay(model, cfg.lambda_min, cfg.lambda_max, r2_min=cfg.fit_r2_min)
        d = fit.to_dict()
        d["verdict"] = ac.Verdict.INCONCLUSIVE.value if fit.inconclusive else ac.Verdict.CONVERGED.value
        report["resolvent_decay"] = d
    except TruncationError as exc:
        d = {"verdict": ac.Verdict.INCONCLUSIVE.value, "error": str(exc), "required_K": exc.required_K}
        report["resolvent_decay"] = d
    verdicts.append(d["verdict"])

    sa = ac.trace_series_sa(model, cfg.tau, rel_tol=cfg.series_rel_tol, r2_min=cfg.fit_r2_min)
    report["trace_sa"] = sa.to_dict()
    verdicts.append(sa.verdict.value)
    dsa = ac.trace_series_dsa(model, cfg.tau, rel_tol=cfg.series_rel_tol, r2_min=cfg.fit_r2_min)
    report["trace_dsa"] = dsa.to_dict()
    verdicts.append(dsa.verdict.value)
    with_zero = ac.trace_series_dsa(
        model, cfg.tau, include_zero_mode=True, rel_tol=cfg.series_rel_tol, r2_min=cfg.fit_r2_min
    )
    report["trace_dsa_with_zero_mode"] = with_zero.to_dict()

    # L^p integrability is informative: it maps out the admissible p range
    lp = {}
    for p in cfg.p_grid:
        try:
            res = ac.lp_norm_integral(model, p, cfg.tau, cfg.r_min, r2_min=cfg.fit_r2_min, rel_tol=cfg.lp_rel_tol)
            lp[format(p, "g")] = res.to_dict()
        except TruncationError as exc:
            lp[format(p, "g")] = {"verdict": ac.Verdict.INCONCLUSIVE.value, "error": str(exc)}
    report["lp_norm_integral"] = lp

    if ac.Verdict.DIVERGED.value in verdicts:
        code = EXIT_DIVERGED
    elif ac.Verdict.INCONCLUSIVE.value in verdicts:
        code = EXIT_INCONCLUSIVE
    else:
        code = EXIT_OK
    report["exit_code"] = code
    _write(out / "check_report.json", dump_json(report))
    return code


def cmd_solve(cfg: RunConfig, out: Path, forcing: str, initial: Optional[str]) -> int:
    f = _read_forcing(forcing, cfg.forcing_kind)
    model = _model(cfg, f.modes.shape[1])
    xi = _initial(model, initial)
    path = voc_solve(model, xi, f, f.grid)
    out.mkdir(parents=True, exist_ok=True)
    write_path_csv(path, out / "solution.csv")
    report = {
        "model": model.name,
        "K": model.K,
        "forcing_kind": f.kind,
        "points": len(f.grid),
        "integrated_residual": integrated_residual(model, path, xi, f),
    }
    _write(out / "solve_report.json", dump_json(report))
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, out: Path, initial: Optional[str]) -> int:
    model = _model(cfg, cfg.K)
    xi = _initial(model, initial)
    grid = TimeGrid.uniform(cfg.tau, cfg.grid_points)
    out.mkdir(parents=True, exist_ok=True)
    write_path_csv(simulate_exact(model, grid, xi, cfg.seed), out / "exact_path.csv")
    draw = draw_noise(NoiseBasis(cfg.basis, cfg.tau, cfg.N), model.channel_count, cfg.seed)
    write_path_csv(simulate_xn(model, draw, grid, xi), out / "xn_path.csv")
    rep = mc_estimate(model, grid, xi, cfg.M, cfg.seed)
    d = {"model": model.name, "K": model.K, "seed": cfg.seed, "mode": "Exact"}
    d.update(rep.to_dict())
    _write(out / "moments.json", dump_json(d))
    return EXIT_OK


def cmd_converge(cfg: RunConfig, out: Path, initial: Optional[str]) -> int:
    model = _model(cfg, cfg.K)
    xi = _initial(model, initial)
    grid = TimeGrid.uniform(cfg.tau, cfg.grid_points)
    table = convergence_study(model, grid, xi, cfg.N_list, cfg.M, cfg.seed, cfg.basis)
    _write(out / "convergence.csv", table.to_csv())
    decreasing = bool(np.all(np.diff(table.eps_analytic) < 0) and np.all(np.diff(table.eps_mc) < 0))
    agree = bool(np.all(np.abs(table.ratio - 1.0) <= cfg.converge_rel_tol))
    summary = {
        "n_ref": table.n_ref,
        "fitted_order": table.order,
        "strictly_decreasing": decreasing,
        "agreement": agree,
        "eps_mc_stderr": table.eps_mc_stderr,
    }
    _write(out / "convergence.json", dump_json(summary))
    return EXIT_OK if decreasing and agree else EXIT_DIVERGED


def cmd_covariance(cfg: RunConfig, out: Path, initial: Optional[str]) -> int:
    model = _model(cfg, cfg.K)
    xi = _initial(model, initial)
    t = cfg.covariance_time
    exact = covariance_exact(model, t, xi)
    rep = mc_estimate(model, TimeGrid(np.array([0.0, t])), xi, cfg.M, cfg.seed)
    lo, hi = variance_band(exact.var[0], cfg.M)
    var_mc = rep.var[-1]
    var_ok = (var_mc >= lo) & (var_mc <= hi)
    mean_ok = np.abs(rep.mean[-1] - exact.mean[0]) <= np.maximum(rep.half_widths[-1], 1e-300)
    # a mode with zero exact variance must reproduce its mean exactly
    mean_ok |= (exact.var[0] == 0) & (rep.mean[-1] == exact.mean[0])
    ok = bool(np.all(var_ok) and np.all(mean_ok))
    d = {
        "model": model.name,
        "K": model.K,
        "t": t,
        "M": cfg.M,
        "seed": cfg.seed,
        "mean_exact": exact.mean[0],
        "mean_mc": rep.mean[-1],
        "var_exact": exact.var[0],
        "var_mc": var_mc,
        "var_band_low": lo,
        "var_band_high": hi,
        "kurtosis_mc": rep.kurtosis[-1],
        "within_bands": ok,
    }
    _write(out / "covariance.json", dump_json(d))
    return EXIT_OK if ok else EXIT_DIVERGED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bwn", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--output", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("check", parents=[common], help="verify the structural assumptions")
    p = sub.add_parser("solve", parents=[common], help="deterministic solution for a forcing file")
    p.add_argument("forcing", help="forcing CSV: t, mode_0.., boundary_0..")
    p.add_argument("--initial", help="initial condition, one value per mode")
    for name, text in (
        ("simulate", "exact and truncated-noise sample paths plus moments"),
        ("converge", "X_N -> X convergence table"),
        ("covariance", "Monte Carlo vs analytic covariance"),
    ):
        q = sub.add_parser(name, parents=[common], help=text)
        q.add_argument("--initial", help="initial condition, one value per mode")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise UsageError("seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        out = Path(args.output or cfg.output_dir)
        if args.command == "check":
            return cmd_check(cfg, out)
        if args.command == "solve":
            return cmd_solve(cfg, out, args.forcing, args.initial)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.initial)
        if args.command == "converge":
            return cmd_converge(cfg, out, args.initial)
        return cmd_covariance(cfg, out, args.initial)
    except NumericalFailure as exc:
        print(f"bwn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_SOFTWARE
    except BwnError as exc:
        print(f"bwn: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"bwn: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
