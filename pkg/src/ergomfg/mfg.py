"""Fixed-point solver for the finite-horizon first-order MFG system.

Each iteration freezes the measure path, solves the backward HJ equation with
source ``F(., m(t))``, transports ``m0`` forward with the resulting feedback,
and mixes the new path into the old one (fictitious play or fixed damping).
The residual is measured on the coupling, ``sup_t |F(m^{k+1}(t)) - F(m^k(t))|``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import partial
from typing import NamedTuple

import numpy as np

from .errors import NonConvergenceError
from .hj import HJSolution, TimeGrid, default_v_max, solve_backward
from .measures import GridMeasure, MeasurePath
from .model import CouplingSpec, HamiltonianSpec, coupling_sup_bound, coupling_values
from .torus import GridField, _same_grid
from .transport import TransportScheme, feedback_drift, solve_forward

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MFGProblem:
    hamiltonian: HamiltonianSpec
    coupling: CouplingSpec
    m0: GridMeasure
    u_f: GridField
    time_grid: TimeGrid
    scheme: TransportScheme = field(default_factory=TransportScheme)
    v_max: float | None = None
    dv: float | None = None

    def __post_init__(self):
        for other in (self.coupling.grid, self.m0.grid, self.u_f.grid):
            _same_grid(self.hamiltonian.grid, other)

    @property
    def grid(self):
        return self.hamiltonian.grid

    def with_horizon(self, time_grid: TimeGrid) -> "MFGProblem":
        return MFGProblem(
            self.hamiltonian, self.coupling, self.m0, self.u_f, time_grid, self.scheme, self.v_max, self.dv
        )

    def speed_bound(self) -> float:
        """Velocity box sized from the coupling's sup over all measures."""
        if self.v_max is not None:
            return self.v_max
        return default_v_max(self.hamiltonian, self.u_f.values, coupling_sup_bound(self.coupling))


@dataclass(frozen=True, eq=False)
class MFGSolution:
    hj: HJSolution
    path: MeasurePath
    coupling_field: np.ndarray
    residual_history: list
    iterations: int

    @property
    def u(self) -> np.ndarray:
        return self.hj.u


class BestResponse(NamedTuple):
    hj: HJSolution
    new_path: MeasurePath


def best_response(problem: MFGProblem, m_path: MeasurePath, source: np.ndarray | None = None) -> BestResponse:
    """Optimal play against a frozen population path.

    ``source`` may pass a precomputed ``F(., m_path(t))`` stack.
    """
    _same_grid(problem.grid, m_path.grid)
    if len(m_path) != problem.time_grid.steps + 1:
        raise ValueError(f"path has {len(m_path)} snapshots, expected {problem.time_grid.steps + 1}")
    F = coupling_values(problem.coupling, m_path.densities) if source is None else source
    hj = solve_backward(problem.u_f, F, problem.hamiltonian, problem.time_grid, problem.speed_bound(), problem.dv)
    drift = feedback_drift(hj, problem.hamiltonian, problem.scheme)
    return BestResponse(hj, solve_forward(problem.m0, drift, problem.time_grid, problem.scheme))


def initial_path(problem: MFGProblem, kind: str = "frozen") -> MeasurePath:
    """Starting guess: ``m0`` frozen in time, or uniform for ``t > 0``."""
    tg = problem.time_grid
    if kind == "frozen":
        return MeasurePath.constant(problem.m0, tg.times)
    if kind == "uniform":
        d = np.ones((tg.steps + 1, *problem.grid.shape))
        d[0] = problem.m0.density
        return MeasurePath(problem.grid, tg.times, d)
    raise ValueError(f"unknown initial guess {kind!r}")


def _theta(damping, k: int) -> float:
    if damping == "fictitious_play":
        return 1.0 / (k + 1)
    theta = float(damping)
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"damping must be in (0, 1], got {theta}")
    return theta


def solve_mfg(
    problem: MFGProblem,
    damping="fictitious_play",
    tol_fp: float = 1e-6,
    max_iter: int = 500,
    initial: str | MeasurePath = "frozen",
) -> MFGSolution:
    """Solve the coupled system by damped best-response iteration.

    ``m^{k+1} = (1 - theta_k) m^k + theta_k BR(m^k)`` with ``theta_k = 1/(k+1)``
    (fictitious play) or a fixed ``theta``.  Stops once the coupling residual
    drops below ``tol_fp``; the reported value function is one more backward
    solve against the converged path.

    Raises
    ------
    NonConvergenceError
        After ``max_iter`` iterations, carrying the residual history.
    """

    def backward(F):
        return solve_backward(problem.u_f, F, problem.hamiltonian, problem.time_grid, problem.speed_bound(), problem.dv)

    return coupling_fixed_point(problem, partial(best_response, problem), backward, damping, tol_fp, max_iter, initial)


def coupling_fixed_point(problem, respond, backward, damping, tol_fp, max_iter, initial) -> MFGSolution:
    """Mixing loop shared by the first-order and viscous solvers.

    ``respond(path, F)`` returns a :class:`BestResponse` and ``backward(F)``
    the final value function for a converged coupling stack ``F``.
    """
    if not tol_fp > 0.0:
        raise ValueError("tol_fp must be positive")
    path = initial if isinstance(initial, MeasurePath) else initial_path(problem, initial)
    _same_grid(problem.grid, path.grid)
    dens = np.array(path.densities)
    F = coupling_values(problem.coupling, dens)
    history: list[float] = []
    for k in range(max_iter):
        br = respond(MeasurePath(problem.grid, path.times, dens), F)
        theta = _theta(damping, k)
        dens = (1.0 - theta) * dens + theta * br.new_path.densities
        F_new = coupling_values(problem.coupling, dens)
        r = float(np.max(np.abs(F_new - F)))
        history.append(r)
        F = F_new
        logger.debug("mfg iteration %d: residual %.3e", k + 1, r)
        if r < tol_fp:
            final = MeasurePath(problem.grid, path.times, dens)
            return MFGSolution(backward(F), final, F, history, k + 1)
    raise NonConvergenceError(
        f"fixed point not reached in {max_iter} iterations (last residual {history[-1]:.3e})",
        history,
        partial=MeasurePath(problem.grid, path.times, dens),
    )


def energy_pairing(sol: MFGSolution, reference: GridMeasure, coupling: CouplingSpec) -> float:
    """Trapezoid-in-time integral of ``int (F(m(t)) - F(ref)) d(m(t) - ref)``."""
    _same_grid(sol.path.grid, reference.grid)
    F_ref = coupling_values(coupling, reference.density)
    axes = tuple(range(1, sol.path.densities.ndim))
    dm = sol.path.densities - reference.density
    integrand = np.sum((sol.coupling_field - F_ref) * dm, axis=axes) * reference.grid.cell_volume
    return float(np.trapezoid(integrand, sol.path.times))
