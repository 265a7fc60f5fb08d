"""Backward Hamilton-Jacobi solver by a semi-Lagrangian (discrete Lax-Oleinik) scheme.

Solves ``-du/dt + H(x, Du) = f(t, x)``, ``u(T) = u_f`` with
``H(x, p) = a|p|^2/2 - V`` through the dynamic programming step

    u(t_k, x) = min_v  dt * (L(x, v) + f(t_k, x)) + I[u(t_{k+1})](x + dt * v)

over an exhaustive velocity grid, ``I`` being periodic multilinear
interpolation.  The minimizing velocity is kept as the feedback.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import DimensionError, VelocityBoxExhausted
from .model import HamiltonianSpec
from .torus import GridField, TorusGrid, VectorField, lipschitz_constant, second_differences

logger = logging.getLogger(__name__)

DV_CAP = 0.05
MAX_BOX_DOUBLINGS = 6


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be an integer >= 1, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))

    @classmethod
    def from_dt(cls, horizon: float, dt: float) -> "TimeGrid":
        return cls(horizon, max(1, int(round(horizon / dt))))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


class VelocityGrid(NamedTuple):
    """Symmetric velocity set ``j * dv`` for ``|j| <= J``, with foot-point offsets."""

    vel: np.ndarray
    offset: np.ndarray
    frac: np.ndarray
    edge: np.ndarray
    v_max: float
    dv: float


def velocity_grid(v_max: float, dv: float, dt: float, h: float) -> VelocityGrid:
    if not (v_max > 0.0 and dv > 0.0):
        raise ValueError(f"v_max and dv must be positive, got {v_max}, {dv}")
    J = int(math.ceil(v_max / dv - 1e-9))
    vel = np.arange(-J, J + 1) * dv
    s = dt * vel / h
    offset = np.floor(s).astype(np.int64)
    frac = s - offset
    edge = np.zeros(vel.size, dtype=np.bool_)
    edge[0] = edge[-1] = True
    return VelocityGrid(vel, offset, frac, edge, J * dv, dv)


def default_dv(h: float, dt: float) -> float:
    return min(h / (2.0 * dt), DV_CAP)


def default_v_max(spec: HamiltonianSpec, u_f: np.ndarray | None = None, f_sup: float = 0.0) -> float:
    """A-priori speed bound ``C(|Du_f| + 2 sqrt(C |F| + osc V) + 1)``."""
    C = spec.C_bar
    grid = spec.grid
    du = 0.0 if u_f is None else lipschitz_constant(np.asarray(u_f), grid.h, grid.dim)
    osc = float(spec.V.values.max() - spec.V.values.min())
    return C * (du + 2.0 * math.sqrt(f_sup * C + osc) + 1.0)


class StepResult(NamedTuple):
    u_now: GridField
    feedback: VectorField


def _as_values(f, grid: TorusGrid) -> np.ndarray:
    v = f.values if isinstance(f, GridField) else np.asarray(f, dtype=float)
    if v.shape != grid.shape:
        raise DimensionError(f"field shape {v.shape} does not match grid {grid.shape}")
    return v


def _step_arrays(u_next, f_now, spec: HamiltonianSpec, dt: float, vg: VelocityGrid):
    grid = spec.grid
    run_cost = dt * (spec.V.values + f_now)
    inv2a = 0.5 / spec.a.values
    u_now = np.empty(grid.shape)
    if grid.dim == 1:
        vidx = np.empty(grid.shape, dtype=np.int64)
        hit = _kernels.sl_step_1d(u_next, run_cost, inv2a, dt, vg.vel, vg.offset, vg.frac, vg.edge, u_now, vidx)
        fb = vg.vel[vidx][None]
    else:
        vidx = np.empty((2, *grid.shape), dtype=np.int64)
        hit = _kernels.sl_step_2d(u_next, run_cost, inv2a, dt, vg.vel, vg.offset, vg.frac, vg.edge, u_now, vidx)
        fb = vg.vel[vidx]
    return u_now, fb, hit


def lax_oleinik_step(
    u_next: GridField,
    f_now: GridField,
    spec: HamiltonianSpec,
    dt: float,
    v_max: float,
    dv: float | None = None,
) -> StepResult:
    """One backward step of the semi-Lagrangian scheme.

    Raises
    ------
    VelocityBoxExhausted
        If the minimizing velocity lies on the edge of ``[-v_max, v_max]^d``
        at some node.
    """
    grid = spec.grid
    dv = default_dv(grid.h, dt) if dv is None else dv
    vg = velocity_grid(v_max, dv, dt, grid.h)
    u_now, fb, hit = _step_arrays(_as_values(u_next, grid), _as_values(f_now, grid), spec, dt, vg)
    if hit >= 0:
        raise VelocityBoxExhausted(f"velocity box exhausted at node {hit} (v_max={vg.v_max})", v_max=vg.v_max)
    return StepResult(GridField(grid, u_now), VectorField(grid, fb))


@dataclass(frozen=True, eq=False)
class HJSolution:
    """Value function at every time node and the feedback on every step.

    ``u`` has shape ``(N+1, *grid.shape)``; ``feedback[k]`` (shape
    ``(N, dim, *grid.shape)``) is the minimizing velocity of the step that
    produced ``u[k]``, i.e. the control used on ``[t_k, t_{k+1}]``.
    """

    grid: TorusGrid
    time_grid: TimeGrid
    u: np.ndarray
    feedback: np.ndarray
    v_max: float
    dv: float

    def u_at(self, k: int) -> GridField:
        return GridField(self.grid, self.u[k])

    def feedback_at(self, k: int) -> VectorField:
        return VectorField(self.grid, self.feedback[k])


def source_array(source, grid: TorusGrid, steps: int) -> np.ndarray:
    """Normalize a time-indexed source into a ``(N+1, *shape)`` array.

    Accepts a single field (constant in time), a sequence of fields, or an array.
    """
    if isinstance(source, GridField):
        return np.broadcast_to(source.values, (steps + 1, *grid.shape))
    if isinstance(source, (list, tuple)):
        source = np.stack([_as_values(s, grid) for s in source])
    arr = np.asarray(source, dtype=float)
    if arr.shape == grid.shape:
        return np.broadcast_to(arr, (steps + 1, *grid.shape))
    if arr.shape != (steps + 1, *grid.shape):
        raise DimensionError(f"source shape {arr.shape} does not match {(steps + 1, *grid.shape)}")
    return arr


def solve_backward(
    u_f: GridField,
    source,
    spec: HamiltonianSpec,
    time_grid: TimeGrid,
    v_max: float | None = None,
    dv: float | None = None,
    adapt: bool = True,
) -> HJSolution:
    """March the value function from ``t = T`` down to ``t = 0``.

    The source is sampled at the earlier node of each step.  When the velocity
    box is exhausted and ``adapt`` is set, ``v_max`` is doubled and the sweep
    restarted; otherwise the error propagates with its time index.
    """
    grid = spec.grid
    N, dt = time_grid.steps, time_grid.dt
    src = source_array(source, grid, N)
    if not np.all(np.isfinite(src)):
        raise ValueError("source contains non-finite values")
    uf = _as_values(u_f, grid)
    if v_max is None:
        v_max = default_v_max(spec, uf, float(np.max(np.abs(src))))
    dv = default_dv(grid.h, dt) if dv is None else dv
    run_cost = dt * (spec.V.values + src)
    inv2a = 0.5 / spec.a.values
    kernel = _kernels.hj_backward_1d if grid.dim == 1 else _kernels.hj_backward_2d
    for attempt in range(MAX_BOX_DOUBLINGS + 1):
        vg = velocity_grid(v_max, dv, dt, grid.h)
        u = np.empty((N + 1, *grid.shape))
        vidx = np.empty((N, *grid.shape) if grid.dim == 1 else (N, 2, *grid.shape), dtype=np.int64)
        t_hit, node = kernel(uf, run_cost, inv2a, dt, vg.vel, vg.offset, vg.frac, vg.edge, u, vidx)
        if t_hit < 0:
            fb = vg.vel[vidx][:, None] if grid.dim == 1 else vg.vel[vidx]
            return HJSolution(grid, time_grid, u, fb, vg.v_max, vg.dv)
        if not adapt or attempt == MAX_BOX_DOUBLINGS:
            raise VelocityBoxExhausted(
                f"velocity box exhausted at time index {t_hit}, node {node} (v_max={vg.v_max})",
                time_index=int(t_hit),
                v_max=vg.v_max,
            )
        logger.info("velocity box exhausted at t index %d; doubling v_max to %g", t_hit, 2 * v_max)
        v_max *= 2.0
    raise AssertionError("unreachable")


class LipschitzReport(NamedTuple):
    lip_x: float
    lip_t: float
    max_second_difference: float


def lipschitz_report(sol: HJSolution) -> LipschitzReport:
    """Space and time Lipschitz constants of the discrete value function.

    Also reports the largest positive second difference over ``h^2``, a
    semiconcavity diagnostic (no bound is enforced).
    """
    g = sol.grid
    lip_x = lipschitz_constant(sol.u, g.h, g.dim)
    lip_t = float(np.max(np.abs(np.diff(sol.u, axis=0)))) / sol.time_grid.dt if sol.u.shape[0] > 1 else 0.0
    semi = float(max(np.max(second_differences(sol.u, g.dim)), 0.0)) / g.h**2
    return LipschitzReport(lip_x, lip_t, semi)
