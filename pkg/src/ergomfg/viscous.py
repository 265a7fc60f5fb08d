"""Second-order system with diffusion ``eps * Laplacian`` for vanishing-viscosity checks.

Both equations use an IMEX splitting on the first-order time grid: the
Hamiltonian (or drift) part is the explicit step of the first-order solvers and
the diffusion is an implicit Euler solve, diagonal in the discrete Fourier basis.
So no ``eps / h^2`` step restriction applies and every ``eps`` shares one grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import CFLViolation, MassError, VelocityBoxExhausted
from .hj import HJSolution, MAX_BOX_DOUBLINGS, TimeGrid, _as_values, _step_arrays, default_dv, default_v_max, source_array, velocity_grid
from .measures import GridMeasure, MeasurePath, wasserstein1
from .mfg import BestResponse, MFGProblem, MFGSolution, coupling_fixed_point
from .model import HamiltonianSpec
from .torus import GridField, TorusGrid
from .transport import STEP_MASS_TOL, TransportScheme, _step, drift_array, feedback_drift

logger = logging.getLogger(__name__)


def _laplacian_symbol(grid: TorusGrid) -> np.ndarray:
    """Eigenvalues of the periodic 3-point (5-point in 2D) Laplacian, ``rfftn`` layout."""
    n = grid.n
    full = (2.0 * np.cos(2.0 * np.pi * np.arange(n) / n) - 2.0) / grid.h**2
    half = full[: n // 2 + 1]
    if grid.dim == 1:
        return half
    return full[:, None] + half[None, :]


class ImplicitDiffusion:
    """Solver for ``(I - dt * eps * Lap_h) w = r`` on the torus."""

    def __init__(self, grid: TorusGrid, dt: float, epsilon: float):
        self.grid = grid
        self._axes = tuple(range(grid.dim))
        self._inv = 1.0 / (1.0 - dt * epsilon * _laplacian_symbol(grid))

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(np.fft.rfftn(r, axes=self._axes) * self._inv, s=self.grid.shape, axes=self._axes)


def _check_eps(epsilon: float) -> None:
    if not epsilon > 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")


def solve_viscous_hj(
    u_f: GridField,
    source,
    spec: HamiltonianSpec,
    time_grid: TimeGrid,
    epsilon: float,
    v_max: float | None = None,
    dv: float | None = None,
    frozen_p: bool = False,
) -> HJSolution:
    """Backward solve of ``-du/dt - eps Lap u + H(x, Du) = f``.

    Each step applies the semi-Lagrangian Lax-Oleinik step to ``u(t_{k+1})``
    and then the implicit diffusion solve.  The stored feedback is the
    semi-Lagrangian argmin of each step.  An exhausted velocity box doubles
    ``v_max`` and restarts the sweep.

    ``frozen_p`` is a test hook: the explicit part becomes ``H(x, 0) = -V``,
    leaving a pure heat equation when ``V`` and ``f`` vanish.
    """
    _check_eps(epsilon)
    grid = spec.grid
    N, dt = time_grid.steps, time_grid.dt
    src = source_array(source, grid, N)
    uf = _as_values(u_f, grid)
    if v_max is None:
        v_max = default_v_max(spec, uf, float(np.max(np.abs(src))))
    dv = default_dv(grid.h, dt) if dv is None else dv
    diffuse = ImplicitDiffusion(grid, dt, epsilon)
    if frozen_p:
        u = np.empty((N + 1, *grid.shape))
        u[N] = uf
        for k in range(N - 1, -1, -1):
            u[k] = diffuse(u[k + 1] + dt * (spec.V.values + src[k]))
        return HJSolution(grid, time_grid, u, np.zeros((N, grid.dim, *grid.shape)), 0.0, dv)
    for attempt in range(MAX_BOX_DOUBLINGS + 1):
        vg = velocity_grid(v_max, dv, dt, grid.h)
        u = np.empty((N + 1, *grid.shape))
        fb = np.empty((N, grid.dim, *grid.shape))
        u[N] = uf
        hit_at = -1
        for k in range(N - 1, -1, -1):
            star, fb[k], hit = _step_arrays(u[k + 1], src[k], spec, dt, vg)
            if hit >= 0:
                hit_at = k
                break
            u[k] = diffuse(star)
        if hit_at < 0:
            return HJSolution(grid, time_grid, u, fb, vg.v_max, vg.dv)
        if attempt == MAX_BOX_DOUBLINGS:
            raise VelocityBoxExhausted(
                f"velocity box exhausted at time index {hit_at} (v_max={vg.v_max})", time_index=hit_at, v_max=vg.v_max
            )
        v_max *= 2.0
    raise AssertionError("unreachable")


def solve_viscous_fp(
    m0: GridMeasure,
    drift,
    time_grid: TimeGrid,
    epsilon: float,
    scheme: TransportScheme | None = None,
) -> MeasurePath:
    """Forward solve of ``dm/dt - eps Lap m + div(m b) = 0``.

    Explicit conservative transport step followed by implicit diffusion.  The
    implicit operator is an M-matrix, so its inverse keeps densities
    nonnegative; round-off negatives are clipped and the mass restored.

    Raises
    ------
    CFLViolation
        From the explicit transport part when sub-stepping is disabled.
    MassError
        If a step changes the mass by more than ``1e-12``.
    """
    _check_eps(epsilon)
    scheme = scheme or TransportScheme()
    grid = m0.grid
    N, dt = time_grid.steps, time_grid.dt
    b = drift_array(drift, grid, N)
    diffuse = ImplicitDiffusion(grid, dt, epsilon)
    vol = grid.cell_volume
    out = np.empty((N + 1, *grid.shape))
    out[0] = m0.density
    for k in range(N):
        before = out[k].sum() * vol
        try:
            moved, _ = _step(out[k], b[k], dt, grid, scheme, k)
        except CFLViolation as exc:
            raise CFLViolation(f"time index {k}: {exc}", exc.admissible_dt) from exc
        nxt = np.maximum(diffuse(moved), 0.0)
        nxt *= before / (nxt.sum() * vol)
        if abs(nxt.sum() * vol - before) > STEP_MASS_TOL:
            raise MassError(f"viscous step {k} changed the mass by {nxt.sum() * vol - before:.3e}")
        out[k + 1] = nxt
    return MeasurePath(grid, time_grid.times, out)


def sup_density_rate(path: MeasurePath) -> float:
    """Smallest ``C >= 0`` with ``sup m(t) <= sup m(0) * exp(C t)`` on the path."""
    axes = tuple(range(1, path.densities.ndim))
    sup = path.densities.max(axis=axes)
    t = path.times - path.times[0]
    ratio = np.log(sup[1:] / sup[0]) / t[1:]
    return float(max(0.0, ratio.max())) if ratio.size else 0.0


def sup_density_respected(path: MeasurePath, C: float, rtol: float = 1e-12) -> bool:
    axes = tuple(range(1, path.densities.ndim))
    sup = path.densities.max(axis=axes)
    bound = sup[0] * np.exp(C * (path.times - path.times[0]))
    return bool(np.all(sup <= bound * (1.0 + rtol)))


def holder_constant(path: MeasurePath, max_pairs: int = 4000) -> float:
    """Largest ``d1(m(t1), m(t2)) / |t2 - t1|^(1/2)`` over snapshot pairs (1D)."""
    K = len(path)
    idx = np.unique(np.linspace(0, K - 1, min(K, int(np.sqrt(2 * max_pairs)))).astype(int))
    t = path.times
    best = 0.0
    for a, i in enumerate(idx):
        for j in idx[a + 1 :]:
            best = max(best, wasserstein1(path[i], path[j]) / np.sqrt(t[j] - t[i]))
    return best


@dataclass(frozen=True, eq=False)
class ViscousProblem:
    base: MFGProblem
    epsilon: float

    def __post_init__(self):
        _check_eps(self.epsilon)


def viscous_best_response(problem: ViscousProblem, m_path: MeasurePath, source: np.ndarray) -> BestResponse:
    p = problem.base
    hj = solve_viscous_hj(p.u_f, source, p.hamiltonian, p.time_grid, problem.epsilon, p.speed_bound(), p.dv)
    drift = feedback_drift(hj, p.hamiltonian, p.scheme)
    return BestResponse(hj, solve_viscous_fp(p.m0, drift, p.time_grid, problem.epsilon, p.scheme))


def solve_viscous_mfg(
    problem: ViscousProblem,
    damping="fictitious_play",
    tol_fp: float = 1e-6,
    max_iter: int = 500,
    initial: str | MeasurePath = "frozen",
) -> MFGSolution:
    """Same mixing loop as :func:`ergomfg.mfg.solve_mfg` with the viscous solvers."""
    p = problem.base

    def respond(path, F):
        return viscous_best_response(problem, path, F)

    def backward(F):
        return solve_viscous_hj(p.u_f, F, p.hamiltonian, p.time_grid, problem.epsilon, p.speed_bound(), p.dv)

    return coupling_fixed_point(p, respond, backward, damping, tol_fp, max_iter, initial)


class ViscousRow(NamedTuple):
    epsilon: float
    sup_gap_u: float
    d1_gap_m_at_T: float
    iterations: int
    max_second_difference: float


def viscous_mfg_sweep(
    problem: MFGProblem,
    eps_list: Sequence[float],
    reference: MFGSolution,
    damping="fictitious_play",
    tol_fp: float = 1e-6,
    max_iter: int = 500,
) -> list[ViscousRow]:
    """Solve the viscous system for each ``eps`` and compare with ``reference``.

    ``sup_gap_u`` is ``sup_x |u^eps(0) - u(0)|`` and ``d1_gap_m_at_T`` the
    distance between the terminal measures.  ``max_second_difference`` is the
    largest positive second difference of ``u^eps(0)`` over ``h^2``, reported
    as a semiconcavity diagnostic.
    """
    eps = [float(e) for e in eps_list]
    if any(e <= 0.0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError(f"eps_list must be positive and strictly decreasing, got {eps}")
    g = problem.grid
    rows = []
    for e in eps:
        sol = solve_viscous_mfg(ViscousProblem(problem, e), damping, tol_fp, max_iter)
        u0 = sol.u[0]
        gap_u = float(np.max(np.abs(u0 - reference.u[0])))
        gap_m = wasserstein1(sol.path[-1], reference.path[-1]) if g.dim == 1 else float("nan")
        semi = 0.0
        for ax in range(g.dim):
            d2 = np.roll(u0, -1, ax) - 2.0 * u0 + np.roll(u0, 1, ax)
            semi = max(semi, float(d2.max()) / g.h**2)
        rows.append(ViscousRow(e, gap_u, gap_m, sol.iterations, semi))
        logger.info("eps %.4g: sup gap u %.3e, d1 gap m %.3e", e, gap_u, gap_m)
    return rows
