"""Ergodic MFG system: constant, corrector and invariant measure.

Sign convention: the reported constant is ``lambda = -lim u(0)/T`` for the
backward HJ problem with source ``F``.  For ``H = a|p|^2/2 - V`` with ``a = 1``
this gives ``lambda = -min(V + F)`` and the cell problem reads
``H(x, Du) = F(x) + lambda``.  Finite-horizon value functions therefore grow
like ``u(t)/T ~ -lambda (1 - t/T)``.

The constant comes from normalized Lax-Oleinik iteration with Cesaro
averaging, the measure from averaging the optimal flow over a long window,
and the pair is closed by a damped outer iteration on the coupling.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import NonConvergenceError
from .hj import HJSolution, TimeGrid, default_dv, default_v_max, lax_oleinik_step, solve_backward
from .measures import GridMeasure, time_average
from . import _kernels
from .model import COUPLING_FAMILIES, CouplingSpec, HamiltonianSpec, coupling_sup_bound, coupling_values
from .torus import GridField, TorusGrid, _same_grid, convolution_matrix
from .transport import TransportScheme, godunov_drift, solve_forward

logger = logging.getLogger(__name__)

DICTIONARY_MAX_FREQ = 4
SUPPORT_MASS_FACTOR = 1e-3
MASTER_GAP_TOL = 1e-9
MASTER_MAX_ITER = 50_000


@dataclass(frozen=True)
class ErgodicConfig:
    """Numerical parameters of the ergodic solver.

    Parameters
    ----------
    dt_erg
        Time step of the Lax-Oleinik iteration and of the averaging flow.
    tol_lambda
        Stop when two consecutive Cesaro blocks give constants closer than this.
    cesaro_window
        Iterations per Cesaro block.
    T_avg
        Flow horizon; the measure is the average over ``[T_avg/2, T_avg]``.
    theta_erg
        Outer damping.
    tol_outer
        Outer stopping tolerance on ``sup |F(m_new) - F(m_old)|``.
    max_outer
        Outer iteration cap.
    max_kam_iter
        Cap on Lax-Oleinik iterations per cell problem.
    """

    dt_erg: float = 0.01
    tol_lambda: float = 1e-6
    cesaro_window: int = 200
    T_avg: float = 20.0
    theta_erg: float = 0.5
    tol_outer: float = 1e-4
    max_outer: int = 200
    max_kam_iter: int = 200_000
    v_max: float | None = None
    dv: float | None = None

    def __post_init__(self):
        for name in ("dt_erg", "tol_lambda", "T_avg", "tol_outer"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("cesaro_window", "max_outer", "max_kam_iter"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if not 0.0 < self.theta_erg <= 1.0:
            raise ValueError(f"theta_erg must be in (0, 1], got {self.theta_erg}")
        if self.T_avg < 2 * self.dt_erg:
            raise ValueError("T_avg must cover at least two flow steps")


class CellSolution(NamedTuple):
    lam: float
    u_bar: GridField
    lambda_history: list
    iterations: int


@dataclass(frozen=True, eq=False)
class ErgodicSolution:
    lam: float
    u_bar: GridField
    m_bar: GridMeasure
    diagnostics: dict = field(default_factory=dict)

    @property
    def coupling_field(self) -> np.ndarray:
        return self.diagnostics["coupling_field"]


def _f_values(f, grid: TorusGrid) -> np.ndarray:
    if isinstance(f, GridField):
        _same_grid(grid, f.grid)
        return f.values
    arr = np.asarray(f, dtype=float)
    if arr.shape != grid.shape:
        raise ValueError(f"source shape {arr.shape} does not match grid {grid.shape}")
    return arr


def weak_kam_iterate(f, spec: HamiltonianSpec, cfg: ErgodicConfig | None = None, start: GridField | None = None) -> CellSolution:
    """Solve the cell problem ``H(x, Du) = f + lambda`` for a frozen field ``f``.

    Iterates ``w <- LaxOleinik(w)`` with source ``f``.  Each step shifts the
    mean by ``-lambda dt`` asymptotically; the constant is the average shift
    over a Cesaro block of ``cesaro_window`` steps and the corrector is the
    block average of the mean-zero iterates.

    Raises
    ------
    NonConvergenceError
        When two consecutive block averages never agree within ``tol_lambda``.
    """
    cfg = cfg or ErgodicConfig()
    grid = spec.grid
    fv = _f_values(f, grid)
    M, dt = int(cfg.cesaro_window), cfg.dt_erg
    v_max = cfg.v_max or default_v_max(spec, None, float(np.max(np.abs(fv))))
    block = TimeGrid(M * dt, M)
    w = np.zeros(grid.shape) if start is None else start.values - start.values.mean()
    history: list[float] = []
    axes = tuple(range(1, grid.dim + 1))
    n_blocks = max(2, cfg.max_kam_iter // M)
    for b in range(n_blocks):
        sol = solve_backward(GridField(grid, w), fv, spec, block, v_max, cfg.dv)
        v_max = sol.v_max
        # index M is the block start; index 0 is after M steps
        means = sol.u.mean(axis=axes)
        lam = float(-(means[0] - means[M]) / (M * dt))
        history.append(lam)
        w = sol.u[0] - means[0]
        if b >= 1 and abs(history[-1] - history[-2]) < cfg.tol_lambda:
            normalized = sol.u[:M] - means[:M].reshape(-1, *([1] * grid.dim))
            u_bar = normalized.mean(axis=0)
            u_bar -= u_bar.mean()
            return CellSolution(lam, GridField(grid, u_bar), history, (b + 1) * M)
    raise NonConvergenceError(
        f"cell problem constant not settled after {n_blocks * M} iterations (last {history[-1]:.6g})",
        history,
        partial=GridField(grid, w),
    )


def stationary_drift(u_bar: GridField, spec: HamiltonianSpec, dt: float, v_max: float | None = None, dv: float | None = None) -> np.ndarray:
    """Optimal drift ``-a D u_bar`` with upwind one-sided gradients.

    The side is picked by the semi-Lagrangian minimizer of one Lax-Oleinik
    step from ``u_bar``; nodes where staying put is optimal get zero drift.
    Shape ``(dim, *shape)``.
    """
    grid = spec.grid
    v_max = v_max or default_v_max(spec, u_bar.values)
    step = lax_oleinik_step(u_bar, GridField.constant(grid, 0.0), spec, dt, v_max, dv)
    sol = HJSolution(
        grid, TimeGrid(dt, 1), np.stack([step.u_now.values, u_bar.values]), step.feedback.values[None], v_max, dv or 0.0
    )
    return godunov_drift(sol, spec)[0]


def _dictionary(grid: TorusGrid):
    """Gradients of the Fourier test fields ``cos/sin(2 pi k.x)`` with ``|k_i| <= 4``."""
    x = grid.coords()
    ks = range(-DICTIONARY_MAX_FREQ, DICTIONARY_MAX_FREQ + 1)
    for k in itertools.product(ks, repeat=grid.dim):
        if all(ki == 0 for ki in k) or k < tuple(-ki for ki in k):
            continue
        phase = 2 * np.pi * (k[0] * x if grid.dim == 1 else k[0] * x[0] + k[1] * x[1])
        for trig in (np.cos, np.sin):
            # d/dx cos = -sin, d/dx sin = cos
            base = -np.sin(phase) if trig is np.cos else np.cos(phase)
            yield np.stack([2 * np.pi * ki * base for ki in k])


def stationarity_residual(m: GridMeasure, drift: np.ndarray) -> float:
    """``max_phi |int <b, D phi> dm|`` over the Fourier dictionary."""
    vol = m.grid.cell_volume
    return max(abs(float(np.sum(np.sum(drift * g, axis=0) * m.density) * vol)) for g in _dictionary(m.grid))


def ergodic_measure(
    u_bar: GridField,
    spec: HamiltonianSpec,
    cfg: ErgodicConfig | None = None,
    start: GridMeasure | None = None,
    scheme: TransportScheme | None = None,
) -> tuple[GridMeasure, float]:
    """Invariant measure of the optimal flow by time averaging.

    Transports ``start`` (uniform by default) along the stationary drift for
    ``T_avg`` and averages over the second half.  Returns the measure and its
    stationarity residual.
    """
    cfg = cfg or ErgodicConfig()
    grid = spec.grid
    drift = stationary_drift(u_bar, spec, cfg.dt_erg, cfg.v_max, cfg.dv)
    m0 = start or GridMeasure.uniform(grid)
    tg = TimeGrid.from_dt(cfg.T_avg, cfg.dt_erg)
    path = solve_forward(m0, drift, tg, scheme)
    m = time_average(path, (0.5 * tg.horizon, tg.horizon))
    return m, stationarity_residual(m, drift)


def hj_residual_on_support(lam: float, u_bar: GridField, f: np.ndarray, spec: HamiltonianSpec, m: GridMeasure) -> float:
    """``max |H(x, D u_bar) - f - lambda|`` over cells of mass ``>= h^d 1e-3``.

    ``D`` is the central difference.
    """
    grid = spec.grid
    du = np.stack([(np.roll(u_bar.values, -1, ax) - np.roll(u_bar.values, 1, ax)) / (2 * grid.h) for ax in range(grid.dim)])
    H = 0.5 * spec.a.values * np.sum(du**2, axis=0) - spec.V.values
    mask = m.masses >= grid.cell_volume * SUPPORT_MASS_FACTOR
    return float(np.max(np.abs(H - f - lam)[mask]))


def _project_simplex(y: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection of ``y`` onto ``{x >= 0, sum(x) = total}``."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - total
    k = np.nonzero(u * np.arange(1, u.size + 1) > css)[0][-1]
    return np.maximum(y - css[k] / (k + 1), 0.0)


class RestMinimizer(NamedTuple):
    density: np.ndarray
    gap: float
    iterations: int


def rest_potential_minimizer(
    hamiltonian: HamiltonianSpec,
    coupling: CouplingSpec,
    support: np.ndarray,
    start: np.ndarray | None = None,
    tol: float = MASTER_GAP_TOL,
    max_iter: int = MASTER_MAX_ITER,
) -> RestMinimizer:
    """Minimize ``int V dm + Psi(m)`` over probability densities on ``support``.

    ``Psi`` is the convex potential of the coupling, so the minimizer makes
    ``V + F(., m)`` constant on its support and no smaller on the rest of
    ``support``.  Accelerated projected gradient with adaptive restart; stops
    when the Frank-Wolfe gap ``int (V + F) dm - min_support (V + F)`` is below
    ``tol``.  ``support`` is a boolean mask over the grid.
    """
    grid = hamiltonian.grid
    vol = grid.cell_volume
    idx = np.flatnonzero(np.asarray(support, dtype=bool).ravel())
    if idx.size == 0:
        raise ValueError("empty support")
    family = COUPLING_FAMILIES.index(coupling.family)
    KS = np.ascontiguousarray(convolution_matrix(coupling.kernel)[:, idx])
    V = np.ascontiguousarray(hamiltonian.V.values.ravel()[idx])
    total = 1.0 / vol
    x = np.full(idx.size, total / idx.size)
    if start is not None:
        x = _project_simplex(np.asarray(start, dtype=float).ravel()[idx], total)
    step = 1.0 / max(coupling.derivative_bounds()[1], 1e-12)
    gap, it = _kernels.fista_simplex(
        KS, V, family, coupling.kappa, coupling.g.values.ravel(), coupling.sigma, coupling.w.values.ravel(),
        x, total, step, tol, vol, max_iter, 25,
    )
    out = np.zeros(grid.size)
    out[idx] = x
    return RestMinimizer(out.reshape(grid.shape), gap, it)


def solve_ergodic(
    hamiltonian: HamiltonianSpec,
    coupling: CouplingSpec,
    cfg: ErgodicConfig | None = None,
    initial: GridMeasure | None = None,
    scheme: TransportScheme | None = None,
) -> ErgodicSolution:
    """Damped outer iteration on the coupling for the ergodic system.

    Each outer step solves the cell problem for ``F(m^j)`` and averages the
    optimal flow from the uniform measure.  Nodes where the average keeps mass
    join a candidate set ``S``.  Every such invariant measure rests on the
    minimizers of ``V + F`` (``L(x, v) >= L(x, 0) = V(x)``), so the weights
    on ``S`` are fixed by minimizing the convex potential restricted to ``S``.
    The update is ``m^{j+1} = (1 - theta) m^j + theta m_S`` and the loop stops
    once ``sup |F(m^{j+1}) - F(m^j)| < tol_outer``.  One more cell solve on
    the converged field gives the reported constant and corrector.

    A plain damped average of flow averages does not settle: each flow average
    sits on the current argmin of ``V + F`` and the iterates cycle.  Nodes
    whose excess cost ``V + F + lambda`` is below ``dv^2 max(a) / 2`` are added
    to ``S`` as well, since the discrete flow cannot resolve the slower speeds
    that would carry mass there.

    Raises
    ------
    NonConvergenceError
        After ``max_outer`` iterations, carrying the residual history.
    """
    cfg = cfg or ErgodicConfig()
    grid = hamiltonian.grid
    _same_grid(grid, coupling.grid)
    m = initial or GridMeasure.uniform(grid)
    _same_grid(grid, m.grid)
    if cfg.v_max is None:
        # one box for every outer iterate keeps the discretization fixed
        f_sup = coupling_sup_bound(coupling)
        cfg = replace(cfg, v_max=default_v_max(hamiltonian, None, f_sup))
    F = coupling_values(coupling, m.density)
    dv = cfg.dv if cfg.dv is not None else default_dv(grid.h, cfg.dt_erg)
    rest_tol = 0.5 * dv**2 * float(hamiltonian.a.values.max())
    # F is blind to m without coupling, so damping would leave the start mixed in
    theta = 1.0 if coupling.family == "decoupled" else cfg.theta_erg
    history: list[float] = []
    support = np.zeros(grid.shape, dtype=bool)
    target = None
    u_prev = None
    for j in range(cfg.max_outer):
        cell = weak_kam_iterate(F, hamiltonian, cfg, u_prev)
        u_prev = cell.u_bar
        avg, _ = ergodic_measure(cell.u_bar, hamiltonian, cfg, None, scheme)
        found = avg.masses >= grid.cell_volume * SUPPORT_MASS_FACTOR
        # rest points of the discrete flow: excess cost below the velocity resolution
        found |= hamiltonian.V.values + F + cell.lam <= rest_tol
        if target is None or np.any(found & ~support):
            support |= found
            target = rest_potential_minimizer(hamiltonian, coupling, support, None if target is None else target.density)
        m = m.mix(GridMeasure.from_density(grid, target.density), theta)
        F_new = coupling_values(coupling, m.density)
        r = float(np.max(np.abs(F_new - F)))
        history.append(r)
        F = F_new
        logger.debug("ergodic outer %d: residual %.3e, lambda %.6f, |S| %d", j + 1, r, cell.lam, support.sum())
        if r < cfg.tol_outer:
            break
    else:
        raise NonConvergenceError(
            f"ergodic outer loop not converged in {cfg.max_outer} iterations (last residual {history[-1]:.3e})",
            history,
            partial=m,
        )
    cell = weak_kam_iterate(F, hamiltonian, cfg, u_prev)
    drift = stationary_drift(cell.u_bar, hamiltonian, cfg.dt_erg, cfg.v_max, cfg.dv)
    diagnostics = {
        "hj_residual_on_support": hj_residual_on_support(cell.lam, cell.u_bar, F, hamiltonian, m),
        "stationarity_residual": stationarity_residual(m, drift),
        "lambda_history": cell.lambda_history,
        "outer_residuals": history,
        "outer_iterations": len(history),
        "support_size": int(support.sum()),
        "potential_gap": target.gap,
        "coupling_field": F,
    }
    return ErgodicSolution(cell.lam, cell.u_bar, m, diagnostics)


class QuadraticOracle(NamedTuple):
    lam: float
    argmin_cells: np.ndarray


def lambda_quadratic_oracle(V: GridField, f) -> QuadraticOracle:
    """Closed form for ``a = 1``: ``lambda = -min(V + f)`` and its argmin nodes.

    ``argmin_cells`` is an ``(k, dim)`` array of node indices within ``1e-9``
    of the minimum.
    """
    total = V.values + _f_values(f, V.grid)
    lo = float(total.min())
    cells = np.argwhere(total <= lo + 1e-9)
    return QuadraticOracle(-lo, cells)
