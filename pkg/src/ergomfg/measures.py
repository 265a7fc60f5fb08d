"""Probability densities on a torus grid and the Monge-Wasserstein distance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import DimensionError, MassError, OracleSizeError
from .torus import GridField, TorusGrid, _frozen, _same_grid

MASS_TOL = 1e-10
LP_MAX_NODES = 4096
LP_MAX_VARIABLES = 4_000_000


def check_density(grid: TorusGrid, density: np.ndarray, tol: float = MASS_TOL) -> None:
    if density.shape[density.ndim - grid.dim :] != grid.shape:
        raise DimensionError(f"density shape {density.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(density)):
        raise MassError("density contains non-finite values")
    if np.any(density < 0.0):
        raise MassError(f"negative density (min {density.min():.3e})")
    axes = tuple(range(density.ndim - grid.dim, density.ndim))
    mass = np.sum(density, axis=axes) * grid.cell_volume
    err = np.max(np.abs(mass - 1.0))
    if err > tol:
        raise MassError(f"mass deviates from 1 by {err:.3e}")


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """Probability measure with a density: node mass is ``density * h**dim``."""

    grid: TorusGrid
    density: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.density, dtype=float)
        check_density(self.grid, d)
        if d.shape != self.grid.shape:
            raise DimensionError(f"density shape {d.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "density", _frozen(d))

    @classmethod
    def uniform(cls, grid: TorusGrid) -> "GridMeasure":
        return cls(grid, np.ones(grid.shape))

    @classmethod
    def from_density(cls, grid: TorusGrid, density) -> "GridMeasure":
        """Ingest an arbitrary nonnegative profile, renormalizing it to unit mass."""
        d = np.asarray(density, dtype=float)
        if np.any(d < 0.0):
            raise MassError("density must be nonnegative")
        total = d.sum() * grid.cell_volume
        if total <= 0.0:
            raise MassError("density has zero mass")
        return cls(grid, d / total)

    @classmethod
    def point_mass(cls, grid: TorusGrid, x) -> "GridMeasure":
        """All mass on the node nearest to ``x``."""
        d = np.zeros(grid.shape)
        d[grid.nearest_node(x)] = 1.0 / grid.cell_volume
        return cls(grid, d)

    @property
    def masses(self) -> np.ndarray:
        return self.density * self.grid.cell_volume

    def sup_density(self) -> float:
        return float(self.density.max())

    def mix(self, other: "GridMeasure", theta: float) -> "GridMeasure":
        """Convex combination ``(1 - theta) * self + theta * other``."""
        _same_grid(self.grid, other.grid)
        return GridMeasure(self.grid, (1.0 - theta) * self.density + theta * other.density)


@dataclass(frozen=True, eq=False)
class MeasurePath:
    """Time-indexed densities on a common grid, stored as one ``(K, *shape)`` array."""

    grid: TorusGrid
    times: np.ndarray
    densities: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        d = np.asarray(self.densities, dtype=float)
        if t.ndim != 1 or d.shape != (t.size, *self.grid.shape):
            raise DimensionError(f"path shapes times={t.shape} densities={d.shape} are inconsistent")
        if t.size > 1 and np.any(np.diff(t) <= 0.0):
            raise ValueError("path times must be strictly increasing")
        check_density(self.grid, d)
        object.__setattr__(self, "times", _frozen(t))
        object.__setattr__(self, "densities", _frozen(d))

    @classmethod
    def constant(cls, mu: GridMeasure, times) -> "MeasurePath":
        times = np.asarray(times, dtype=float)
        return cls(mu.grid, times, np.broadcast_to(mu.density, (times.size, *mu.grid.shape)))

    def __len__(self) -> int:
        return self.times.size

    def __getitem__(self, k: int) -> GridMeasure:
        return GridMeasure(self.grid, self.densities[k])

    def __iter__(self) -> Iterator[GridMeasure]:
        return (self[k] for k in range(len(self)))

    @property
    def measures(self) -> list[GridMeasure]:
        return list(self)


def pairing(f: GridField, mu: GridMeasure) -> float:
    """``sum f * density * h^d``, the integral of ``f`` against ``mu``."""
    _same_grid(f.grid, mu.grid)
    return float(np.sum(f.values * mu.density) * mu.grid.cell_volume)


def _w1_circle(a: np.ndarray, b: np.ndarray, h: float) -> float:
    # edge k -> k+1 carries net flow D_k - s; the optimal s is a median of D
    cum = np.cumsum(a - b)
    s = np.median(cum)
    return float(np.sum(np.abs(cum - s)) * h)


def wasserstein1(mu: GridMeasure, nu: GridMeasure) -> float:
    """Monge-Wasserstein distance with the torus geodesic cost.

    In 1D this is the exact circular formula built from cumulative masses; in 2D
    it falls back to :func:`wasserstein1_lp`.
    """
    _same_grid(mu.grid, nu.grid)
    g = mu.grid
    if g.dim == 1:
        return _w1_circle(mu.masses, nu.masses, g.h)
    if g.size > LP_MAX_NODES:
        raise OracleSizeError(f"2D distance needs the LP oracle, which is limited to {LP_MAX_NODES} nodes")
    return wasserstein1_lp(mu, nu)


def torus_cost_matrix(grid: TorusGrid, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Geodesic distances between flat node indices ``rows`` and ``cols``."""
    ri = np.array(np.unravel_index(rows, grid.shape)).T * grid.h
    ci = np.array(np.unravel_index(cols, grid.shape)).T * grid.h
    d = np.abs(ri[:, None, :] - ci[None, :, :])
    d = np.minimum(d, 1.0 - d)
    return np.sqrt(np.sum(d**2, axis=-1))


def wasserstein1_lp(mu: GridMeasure, nu: GridMeasure) -> float:
    """Optimal transport cost by the primal linear program (oracle).

    The plan is restricted to ``supp(mu) x supp(nu)``, which loses nothing.
    """
    _same_grid(mu.grid, nu.grid)
    g = mu.grid
    if g.size > LP_MAX_NODES:
        raise OracleSizeError(f"oracle only: {g.size} nodes exceeds the LP limit of {LP_MAX_NODES}")
    a_full, b_full = mu.masses.ravel(), nu.masses.ravel()
    rows, cols = np.flatnonzero(a_full > 0), np.flatnonzero(b_full > 0)
    if rows.size * cols.size > LP_MAX_VARIABLES:
        raise OracleSizeError(f"oracle only: {rows.size * cols.size} plan variables exceed {LP_MAX_VARIABLES}")
    a, b = a_full[rows], b_full[cols]
    a, b = a / a.sum(), b / b.sum()
    cost = torus_cost_matrix(g, rows, cols)
    p, q = rows.size, cols.size
    row_sum = sparse.kron(sparse.eye(p), np.ones((1, q)))
    col_sum = sparse.kron(np.ones((1, p)), sparse.eye(q))
    res = linprog(
        cost.ravel(),
        A_eq=sparse.vstack([row_sum, col_sum]).tocsr(),
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def time_average(path: MeasurePath, window: tuple[float, float]) -> GridMeasure:
    """Time average of the densities over ``window``.

    Densities are treated as piecewise linear in time, so the average is exact
    for paths that are linear in time.  The result is renormalized.
    """
    ta, tb = float(window[0]), float(window[1])
    t = path.times
    if not tb > ta:
        raise ValueError(f"empty averaging window [{ta}, {tb}]")
    if ta < t[0] - 1e-12 or tb > t[-1] + 1e-12:
        raise ValueError(f"window [{ta}, {tb}] leaves the path range [{t[0]}, {t[-1]}]")
    inner = (t > ta) & (t < tb)
    knots = np.concatenate([[ta], t[inner], [tb]])
    flat = path.densities.reshape(len(t), -1)

    def at(s: float) -> np.ndarray:
        k = int(np.clip(np.searchsorted(t, s, side="right") - 1, 0, len(t) - 2))
        w = (s - t[k]) / (t[k + 1] - t[k])
        return (1.0 - w) * flat[k] + w * flat[k + 1]

    stack = np.concatenate([at(ta)[None], flat[inner], at(tb)[None]])
    dt = np.diff(knots)
    integral = np.sum(0.5 * (stack[1:] + stack[:-1]) * dt[:, None], axis=0)
    return GridMeasure.from_density(path.grid, (integral / (tb - ta)).reshape(path.grid.shape))


def random_measure(grid: TorusGrid, rng: np.random.Generator) -> GridMeasure:
    """Draw a test measure: smooth, heavy-tailed or a few atoms, chosen at random."""
    kind = rng.integers(3)
    if kind == 0:
        x = grid.coords()
        phase = x if grid.dim == 1 else x[0] + rng.integers(-2, 3) * x[1]
        k = rng.integers(1, 5)
        d = 1.0 + rng.uniform(0.0, 1.0) * np.cos(2 * np.pi * k * phase + rng.uniform(0, 2 * np.pi))
    elif kind == 1:
        d = rng.exponential(size=grid.shape) ** 3
    else:
        d = np.zeros(grid.size)
        atoms = rng.choice(grid.size, size=rng.integers(1, 6), replace=False)
        d[atoms] = rng.uniform(0.1, 1.0, size=atoms.size)
        d = d.reshape(grid.shape)
    return GridMeasure.from_density(grid, d)
