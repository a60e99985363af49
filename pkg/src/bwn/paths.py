"""Time grids, sample paths and their CSV/JSON serialization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .jsonio import dump_json

PROVENANCES = ("ExactOU", "TruncatedN", "Deterministic")


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing times ``0 = t_0 < ... < t_M = tau``."""

    times: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ConfigurationError("a time grid needs at least two points")
        if t[0] != 0.0:
            raise ConfigurationError("time grids start at 0")
        if np.any(np.diff(t) <= 0):
            raise ConfigurationError("time grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def tau(self) -> float:
        return float(self.times[-1])

    def __len__(self):
        return self.times.size

    @classmethod
    def uniform(cls, tau: float, points: int) -> "TimeGrid":
        if not tau > 0 or points < 2:
            raise ConfigurationError("uniform grid needs tau > 0 and points >= 2")
        return cls(np.linspace(0.0, tau, points))

    def same_as(self, other: "TimeGrid") -> bool:
        return self.times.shape == other.times.shape and np.array_equal(self.times, other.times)


@dataclass(frozen=True, eq=False)
class SamplePath:
    """Solution coordinates on a time grid; row ``i`` holds the modes at ``t_i``."""

    grid: TimeGrid
    modes: np.ndarray
    provenance: str
    seed: Optional[int] = None
    n_terms: Optional[int] = None
    model_name: str = ""

    def __post_init__(self):
        m = np.array(self.modes, dtype=float)
        if m.ndim != 2 or m.shape[0] != len(self.grid):
            raise ConfigurationError("path rows must match the grid length")
        if not np.all(np.isfinite(m)):
            raise ConfigurationError("sample path contains non-finite entries")
        if self.provenance not in PROVENANCES:
            raise ConfigurationError(f"unknown provenance {self.provenance!r}")
        m.setflags(write=False)
        object.__setattr__(self, "modes", m)

    @property
    def K(self) -> int:
        return self.modes.shape[1]

    @property
    def tag(self) -> str:
        if self.provenance == "TruncatedN":
            return f"TruncatedN({self.n_terms})"
        return self.provenance

    def metadata(self) -> dict:
        return {
            "model": self.model_name,
            "K": self.K,
            "provenance": self.tag,
            "seed": self.seed,
            "N": self.n_terms,
            "points": len(self.grid),
        }


def write_path_csv(path: SamplePath, csv_path) -> None:
    """CSV with columns ``t, mode_0, ...`` and a ``.json`` metadata sidecar."""
    csv_path = Path(csv_path)
    header = ["t"] + [f"mode_{k}" for k in range(path.K)]
    lines = [",".join(header)]
    for t, row in zip(path.grid.times, path.modes):
        lines.append(",".join(format(x, ".17g") for x in (t, *row)))
    csv_path.write_text("\n".join(lines) + "\n")
    csv_path.with_suffix(".json").write_text(dump_json(path.metadata()))


def read_path_csv(csv_path) -> SamplePath:
    import json

    csv_path = Path(csv_path)
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    meta = json.loads(csv_path.with_suffix(".json").read_text())
    tag = meta["provenance"]
    prov, n = (tag, None)
    if tag.startswith("TruncatedN"):
        prov, n = "TruncatedN", int(tag[tag.index("(") + 1 : -1])
    return SamplePath(TimeGrid(data[:, 0]), data[:, 1:], prov, meta.get("seed"), n, meta.get("model", ""))
