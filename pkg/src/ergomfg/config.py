"""Run configuration: TOML ingestion, validation and construction of the model objects.

Scalar fields (``V``, ``a``, ``g``, ``w``, the initial density and the
terminal cost) are finite Fourier sums written as lists of ``[A, k, phi]``
terms meaning ``A cos(2 pi k.x + phi)``; ``k = 0`` gives a constant.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import tomli

from .errors import ConfigError
from .ergodic import ErgodicConfig
from .hj import TimeGrid
from .measures import GridMeasure
from .mfg import MFGProblem
from .model import COUPLING_FAMILIES, CouplingSpec, HamiltonianSpec, fourier_field
from .torus import GridField, MollifierKernel, TorusGrid
from .transport import SCHEMES, TransportScheme

DEFAULTS: dict[str, dict[str, Any]] = {
    "grid": {"dim": 1, "n": 128},
    "time": {"T": 5.0, "T_list": [5.0, 10.0, 20.0, 40.0, 80.0], "dt": 0.01},
    "hamiltonian": {"V": [[1.0, 1, 0.0]], "a": [[1.0, 0, 0.0]], "C_bar": 1.0},
    "coupling": {
        "family": "linear",
        "c": 1.0,
        "kappa": 1.0,
        "sigma": 0.5,
        "kernel_radius": 0.15,
        "g": [],
        "w": [[1.0, 0, 0.0]],
    },
    "data": {"m0": [[1.0, 0, 0.0], [0.5, 1, -math.pi / 2]], "u_f": []},
    "solver": {
        "damping": "fictitious_play",
        "tol_fp": 1e-6,
        "max_iter": 500,
        "initial": "frozen",
        "transport": "upwind_fv",
        "tol_lambda": 1e-6,
        "tol_outer": 1e-4,
        "max_outer": 200,
        "dt_erg": 0.01,
        "T_avg": 20.0,
        "theta_erg": 0.5,
        "cesaro_window": 200,
    },
    "viscous": {"eps": [0.1, 0.05, 0.025, 0.0125]},
    "run": {"seed": 0, "output_dir": "out"},
}

_POSITIVE = {
    "time.T", "time.dt", "solver.tol_fp", "solver.tol_lambda", "solver.tol_outer",
    "solver.dt_erg", "solver.T_avg", "hamiltonian.C_bar",
}
_INTEGER = {"grid.dim", "grid.n", "solver.max_iter", "solver.max_outer", "solver.cesaro_window", "run.seed"}
_FIELDS = {"hamiltonian.V", "hamiltonian.a", "coupling.g", "coupling.w", "data.m0", "data.u_f"}


def _fail(key: str, msg: str):
    raise ConfigError(msg, key=key)


def _check_terms(key: str, terms, dim: int) -> list:
    if not isinstance(terms, list):
        _fail(key, "must be a list of [A, k, phi] terms")
    out = []
    for t in terms:
        if not (isinstance(t, list) and len(t) == 3):
            _fail(key, f"term {t!r} is not [A, k, phi]")
        amp, k, phi = t
        ks = k if isinstance(k, list) else [k]
        if len(ks) != dim or not all(isinstance(v, int) and not isinstance(v, bool) for v in ks):
            _fail(key, f"wavevector {k!r} must be {dim} integer(s)")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (amp, phi)):
            _fail(key, f"term {t!r} needs numeric amplitude and phase")
        out.append([float(amp), k, float(phi)])
    return out


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``raw`` keeps the merged dictionary."""

    raw: dict

    def section(self, name: str) -> dict:
        return self.raw[name]

    @property
    def grid(self) -> TorusGrid:
        g = self.raw["grid"]
        return TorusGrid(g["dim"], g["n"])

    @property
    def seed(self) -> int:
        return self.raw["run"]["seed"]

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["run"]["output_dir"])

    def hamiltonian(self) -> HamiltonianSpec:
        h = self.raw["hamiltonian"]
        g = self.grid
        return HamiltonianSpec(fourier_field(g, h["V"]), fourier_field(g, h["a"]), h["C_bar"])

    def coupling(self) -> CouplingSpec:
        c = self.raw["coupling"]
        g = self.grid
        return CouplingSpec(
            MollifierKernel(g, c["kernel_radius"]),
            c["family"],
            c=c["c"],
            kappa=c["kappa"],
            sigma=c["sigma"],
            g=fourier_field(g, c["g"]),
            w=fourier_field(g, c["w"]),
        )

    def scheme(self) -> TransportScheme:
        return TransportScheme(self.raw["solver"]["transport"])

    def problem(self, T: float | None = None) -> MFGProblem:
        g = self.grid
        d = self.raw["data"]
        T = self.raw["time"]["T"] if T is None else T
        m0 = GridMeasure.from_density(g, fourier_field(g, d["m0"]).values)
        u_f = fourier_field(g, d["u_f"]) if d["u_f"] else GridField.constant(g, 0.0)
        tg = TimeGrid.from_dt(T, self.raw["time"]["dt"])
        return MFGProblem(self.hamiltonian(), self.coupling(), m0, u_f, tg, self.scheme())

    def ergodic(self) -> ErgodicConfig:
        s = self.raw["solver"]
        return ErgodicConfig(
            dt_erg=s["dt_erg"],
            tol_lambda=s["tol_lambda"],
            cesaro_window=s["cesaro_window"],
            T_avg=s["T_avg"],
            theta_erg=s["theta_erg"],
            tol_outer=s["tol_outer"],
            max_outer=s["max_outer"],
        )

    @property
    def damping(self):
        return self.raw["solver"]["damping"]


def validate(data: dict) -> RunConfig:
    """Merge ``data`` over the defaults and check every key and range.

    Raises
    ------
    ConfigError
        Naming the offending key path and the violated constraint.
    """
    merged = copy.deepcopy(DEFAULTS)
    given = set()
    for sec, body in data.items():
        if sec not in DEFAULTS:
            _fail(sec, "unknown section")
        if not isinstance(body, dict):
            _fail(sec, "must be a table")
        for key, val in body.items():
            if key not in DEFAULTS[sec]:
                _fail(f"{sec}.{key}", "unknown key")
            merged[sec][key] = val
            given.add(f"{sec}.{key}")
    for sec, body in merged.items():
        for key, val in body.items():
            path = f"{sec}.{key}"
            if path in _INTEGER and (not isinstance(val, int) or isinstance(val, bool)):
                _fail(path, f"must be an integer, got {val!r}")
            if path in _POSITIVE and (not isinstance(val, (int, float)) or isinstance(val, bool) or not val > 0):
                _fail(path, f"must be a positive number, got {val!r}")
    dim = merged["grid"]["dim"]
    if dim not in (1, 2):
        _fail("grid.dim", "must be 1 or 2")
    if merged["grid"]["n"] < 8:
        _fail("grid.n", "must be >= 8")
    for path in _FIELDS:
        sec, key = path.split(".")
        if dim == 2 and path not in given:
            # 1D default profiles extend constantly along the second axis
            merged[sec][key] = [[a, [k, 0], phi] for a, k, phi in merged[sec][key]]
        merged[sec][key] = _check_terms(path, merged[sec][key], dim)
    T_list = merged["time"]["T_list"]
    if not isinstance(T_list, list) or not all(isinstance(t, (int, float)) and t > 0 for t in T_list):
        _fail("time.T_list", "must be a list of positive horizons")
    if any(b <= a for a, b in zip(T_list, T_list[1:])):
        _fail("time.T_list", "must be strictly increasing")
    c = merged["coupling"]
    if c["family"] not in COUPLING_FAMILIES:
        _fail("coupling.family", f"must be one of {COUPLING_FAMILIES}")
    r = c["kernel_radius"]
    if not isinstance(r, (int, float)) or not 0.0 < r < 0.5:
        _fail("coupling.kernel_radius", "radius must be in (0, 1/2)")
    if not isinstance(c["c"], (int, float)) or not 0.0 < c["c"] <= 1.0:
        _fail("coupling.c", "c must be in (0, 1]")
    s = merged["solver"]
    if s["transport"] not in SCHEMES:
        _fail("solver.transport", f"must be one of {SCHEMES}")
    if s["initial"] not in ("frozen", "uniform"):
        _fail("solver.initial", "must be 'frozen' or 'uniform'")
    d = s["damping"]
    if d != "fictitious_play" and not (isinstance(d, (int, float)) and 0.0 < d <= 1.0):
        _fail("solver.damping", "must be 'fictitious_play' or a number in (0, 1]")
    if not isinstance(s["theta_erg"], (int, float)) or not 0.0 < s["theta_erg"] <= 1.0:
        _fail("solver.theta_erg", "must be in (0, 1]")
    eps = merged["viscous"]["eps"]
    if not isinstance(eps, list) or not all(isinstance(e, (int, float)) and e > 0 for e in eps):
        _fail("viscous.eps", "must be a list of positive numbers")
    if not isinstance(merged["run"]["output_dir"], str):
        _fail("run.output_dir", "must be a string")
    cfg = RunConfig(merged)
    # model-level invariants (stiffness range, derivative bounds, kernel support)
    for what, build in (("hamiltonian", cfg.hamiltonian), ("coupling", cfg.coupling)):
        try:
            build()
        except ValueError as exc:
            _fail(what, str(exc))
    m0 = fourier_field(cfg.grid, merged["data"]["m0"]).values
    if np.any(m0 < 0.0) or m0.sum() <= 0.0:
        _fail("data.m0", "initial density must be nonnegative with positive mass")
    return cfg


def parse_config(path) -> RunConfig:
    """Read and validate a TOML run configuration.

    Raises
    ------
    ConfigError
        Missing file, TOML syntax error (with its line) or constraint violation.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}", key=None)
    try:
        data = tomli.loads(p.read_text(encoding="utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}", key=None) from exc
    return validate(data)
