"""Long-time-average experiment: a horizon sweep compared against the ergodic solution.

For a finite-horizon solution on ``[0, T]`` the rescaled pair is
``v(s) = u(sT)`` and ``nu(s) = m(sT)``.  With the sign convention of
:mod:`ergomfg.ergodic` (``lambda = -min(V + F)`` in the quadratic case) the
value grows like ``u(t) ~ -lambda (T - t)``, so the value error is
``e_u = max_s |v(s)/T + lambda (1 - s)|``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .ergodic import ErgodicSolution
from .errors import NonConvergenceError
from .hj import TimeGrid, lipschitz_report
from .measures import MeasurePath
from .mfg import MFGProblem, MFGSolution, energy_pairing, solve_mfg
from .model import CouplingSpec, coupling_values
from .torus import _same_grid

logger = logging.getLogger(__name__)

SLOPE_THRESHOLD = -0.4
RATE_CONSTANT_FACTOR = 2.0
ENERGY_MEDIAN_FACTOR = 2.0
ENERGY_FLOOR = -1e-8
LIPSCHITZ_SPREAD = 0.2
# errors below this are treated as identically zero (decoupled runs)
ZERO_ERROR = 1e-13


class Rescaled(NamedTuple):
    s: np.ndarray
    v: np.ndarray
    nu: MeasurePath


def rescale(sol: MFGSolution) -> Rescaled:
    """Change of time variable ``t = sT`` on the native nodes (no interpolation)."""
    T = float(sol.path.times[-1])
    s = sol.path.times / T
    return Rescaled(s, sol.u, MeasurePath(sol.path.grid, s, sol.path.densities))


class LongTimeErrors(NamedTuple):
    e_u: float
    e_F: float
    energy: float


def long_time_errors(sol: MFGSolution, erg: ErgodicSolution, coupling: CouplingSpec) -> LongTimeErrors:
    """``e_u`` (max over s-nodes), ``e_F`` (trapezoid in s) and the energy pairing."""
    _same_grid(sol.path.grid, erg.m_bar.grid)
    r = rescale(sol)
    T = float(sol.path.times[-1])
    axes = tuple(range(1, r.v.ndim))
    dv = r.v / T + erg.lam * (1.0 - r.s).reshape(-1, *([1] * (r.v.ndim - 1)))
    e_u = float(np.max(np.abs(dv)))
    F_bar = coupling_values(coupling, erg.m_bar.density)
    gaps = np.max(np.abs(sol.coupling_field - F_bar), axis=axes)
    e_F = float(np.trapezoid(gaps, r.s))
    energy = energy_pairing(sol, erg.m_bar, coupling)
    return LongTimeErrors(e_u, e_F, energy)


class SweepRow(NamedTuple):
    T: float
    e_u: float
    e_F: float
    energy: float
    lip_x: float
    lip_t: float
    iterations: int
    residual: float


def fit_slope(T: np.ndarray, e: np.ndarray) -> float:
    """Least-squares slope of ``log e`` against ``log T``; nan if any ``e`` vanishes."""
    e = np.asarray(e, dtype=float)
    if np.any(e <= ZERO_ERROR):
        return float("nan")
    return float(np.polyfit(np.log(T), np.log(e), 1)[0])


def _rate_verdicts(T: np.ndarray, e: np.ndarray, slope: float) -> tuple[bool, bool]:
    if np.all(np.asarray(e) <= ZERO_ERROR):
        return True, True
    scaled = np.asarray(e) * np.sqrt(T)
    bounded = bool(scaled.max() <= RATE_CONSTANT_FACTOR * scaled.min())
    return bool(np.isfinite(slope) and slope <= SLOPE_THRESHOLD), bounded


@dataclass
class RateReport:
    rows: list = field(default_factory=list)
    fitted_slope_u: float = float("nan")
    fitted_slope_F: float = float("nan")
    verdicts: dict = field(default_factory=dict)
    complete: bool = False

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def evaluate(self) -> "RateReport":
        """Fit the slopes and fill the verdicts from the current rows."""
        T = self.column("T")
        e_u, e_F = self.column("e_u"), self.column("e_F")
        self.fitted_slope_u = fit_slope(T, e_u)
        self.fitted_slope_F = fit_slope(T, e_F)
        slope_u, const_u = _rate_verdicts(T, e_u, self.fitted_slope_u)
        slope_F, const_F = _rate_verdicts(T, e_F, self.fitted_slope_F)
        energy = self.column("energy")
        lip = self.column("lip_x")
        spread = (lip.max() - lip.min()) / lip.max() if lip.max() > 0 else 0.0
        self.verdicts = {
            "slope_u": slope_u,
            "rate_constant_u": const_u,
            "slope_F": slope_F,
            "rate_constant_F": const_F,
            "energy_bounded": bool(energy.max() <= ENERGY_MEDIAN_FACTOR * np.median(energy) and energy.min() >= ENERGY_FLOOR),
            "lipschitz_uniform": bool(spread < LIPSCHITZ_SPREAD),
        }
        return self

    @property
    def all_pass(self) -> bool:
        return self.complete and bool(self.verdicts) and all(self.verdicts.values())


class SweepError(RuntimeError):
    """A per-horizon solve failed; ``report`` holds the rows finished so far."""

    def __init__(self, message: str, report: RateReport):
        super().__init__(message)
        self.report = report


def run_sweep(
    template: MFGProblem,
    T_list: Sequence[float],
    erg: ErgodicSolution,
    dt: float,
    damping="fictitious_play",
    tol_fp: float = 1e-6,
    max_iter: int = 500,
    initial="frozen",
) -> RateReport:
    """Solve the finite-horizon problem for each ``T`` at a fixed ``dt``.

    Raises
    ------
    ValueError
        With fewer than 3 horizons or horizons not strictly increasing.
    SweepError
        When a per-horizon solve fails; carries the partial report.
    """
    T_arr = np.asarray(T_list, dtype=float)
    if T_arr.size < 3:
        raise ValueError(f"slope fitting needs at least 3 horizons, got {T_arr.size}")
    if np.any(np.diff(T_arr) <= 0.0) or np.any(T_arr <= 0.0):
        raise ValueError(f"horizons must be positive and strictly increasing, got {list(T_arr)}")
    report = RateReport()
    for T in T_arr:
        problem = template.with_horizon(TimeGrid.from_dt(float(T), dt))
        try:
            sol = solve_mfg(problem, damping, tol_fp, max_iter, initial)
        except NonConvergenceError as exc:
            raise SweepError(f"horizon T={T:g} failed: {exc}", report) from exc
        err = long_time_errors(sol, erg, template.coupling)
        lip = lipschitz_report(sol.hj)
        row = SweepRow(float(T), err.e_u, err.e_F, err.energy, lip.lip_x, lip.lip_t, sol.iterations, sol.residual_history[-1])
        report.rows.append(row)
        logger.info("T=%g: e_u %.3e, e_F %.3e, energy %.3e, %d iterations", T, err.e_u, err.e_F, err.energy, sol.iterations)
    report.complete = True
    return report.evaluate()
