"""Periodic grids on the flat torus and the discrete calculus used by the solvers.

Fields are stored node-wise on a uniform grid with ``n`` nodes per axis, node
``i`` sitting at coordinate ``i * h`` with ``h = 1/n``.  Integrals are node sums
times ``h**dim`` (the trapezoid and midpoint rules coincide on the torus).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionError

DIRECT_CONVOLUTION_MAX_N = 256


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=float, copy=True)
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on ``[0, 1)^dim``."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DimensionError(f"dim must be 1 or 2, got {self.dim}")
        if int(self.n) != self.n or self.n < 8:
            raise DimensionError(f"n must be an integer >= 8, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def axis(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``shape`` in 1D and ``(2, n, n)`` in 2D."""
        x = self.axis()
        if self.dim == 1:
            return x
        return np.stack(np.meshgrid(x, x, indexing="ij"))

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values) * self.cell_volume)

    def nearest_node(self, point) -> tuple[int, ...]:
        p = np.atleast_1d(np.asarray(point, dtype=float)) % 1.0
        return tuple(int(round(c * self.n)) % self.n for c in p)

    def torus_distance(self, a, b) -> float:
        """Geodesic distance between two points of the torus."""
        d = np.abs(np.atleast_1d(a) - np.atleast_1d(b)) % 1.0
        d = np.minimum(d, 1.0 - d)
        return float(np.sqrt(np.sum(d**2)))


def _check_values(grid: TorusGrid, values: np.ndarray, shape: tuple[int, ...], what: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != shape:
        raise DimensionError(f"{what} has shape {values.shape}, expected {shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite values")
    return _frozen(values)


@dataclass(frozen=True, eq=False)
class GridField:
    """Scalar field sampled at the nodes of a :class:`TorusGrid`."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, self.grid.shape, "field"))

    @classmethod
    def constant(cls, grid: TorusGrid, c: float) -> "GridField":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "GridField":
        """Sample ``fn`` at the nodes; ``fn`` takes ``x`` (1D) or ``(x, y)`` (2D)."""
        c = grid.coords()
        return cls(grid, fn(c) if grid.dim == 1 else fn(c[0], c[1]))

    def __add__(self, other):
        if isinstance(other, GridField):
            _same_grid(self.grid, other.grid)
            return GridField(self.grid, self.values + other.values)
        return GridField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridField):
            _same_grid(self.grid, other.grid)
            return GridField(self.grid, self.values - other.values)
        return GridField(self.grid, self.values - other)

    def __mul__(self, scalar: float):
        return GridField(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return GridField(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    """``dim`` components per node, stored with shape ``(dim, *grid.shape)``."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        shape = (self.grid.dim, *self.grid.shape)
        object.__setattr__(self, "values", _check_values(self.grid, self.values, shape, "vector field"))

    def sup_norm(self) -> float:
        return float(np.max(np.sqrt(np.sum(self.values**2, axis=0))))


def _same_grid(a: TorusGrid, b: TorusGrid) -> None:
    if a != b:
        raise DimensionError(f"grid mismatch: {a} vs {b}")


def bump(r: np.ndarray) -> np.ndarray:
    """``exp(-1/(1-r^2))`` for ``|r| < 1`` and 0 outside."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def _offsets(n: int) -> np.ndarray:
    """Signed minimal-image offsets ``0, 1, ..., -1`` in circular storage order."""
    k = np.arange(n)
    return np.where(k <= n // 2, k, k - n)


@dataclass(frozen=True, eq=False)
class MollifierKernel:
    """Even bump kernel of a given radius, discretized on a grid.

    The profile is sampled at the minimal-image offsets and renormalized so the
    discrete integral is exactly one.  ``weights`` is stored in circular order
    (offset zero at index zero).
    """

    grid: TorusGrid
    radius: float
    weights: np.ndarray = field(init=False, repr=False)
    l2_norm_sq: float = field(init=False)
    support: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.radius < 0.5:
            raise ValueError(f"radius must be in (0, 1/2), got {self.radius}")
        g = self.grid
        off = _offsets(g.n) * g.h
        if g.dim == 1:
            dist = np.abs(off)
        else:
            dist = np.sqrt(off[:, None] ** 2 + off[None, :] ** 2)
        w = bump(dist / self.radius)
        total = w.sum() * g.cell_volume
        if total <= 0.0:
            raise ValueError(f"radius {self.radius} is below the grid resolution h={g.h}")
        w = w / total
        idx = np.argwhere(w > 0.0)
        signed = np.where(idx <= g.n // 2, idx, idx - g.n)
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "l2_norm_sq", float(np.sum(w**2) * g.cell_volume))
        object.__setattr__(
            self, "support", tuple((tuple(int(s) for s in sg), float(w[tuple(ix)])) for sg, ix in zip(signed, idx))
        )

    def recentered(self, node: Sequence[int] | int) -> np.ndarray:
        """Kernel weights translated so that offset zero sits on ``node``."""
        node = (node,) if np.isscalar(node) else tuple(node)
        return np.roll(self.weights, node, axis=tuple(range(self.grid.dim)))


def convolve_values(values: np.ndarray, kernel: MollifierKernel) -> np.ndarray:
    """Periodic convolution over the trailing ``dim`` axes of ``values``.

    Leading axes are treated as a batch (e.g. a stack of time snapshots).
    """
    g = kernel.grid
    values = np.asarray(values, dtype=float)
    if values.shape[values.ndim - g.dim :] != g.shape:
        raise DimensionError(f"array shape {values.shape} does not end with grid shape {g.shape}")
    axes = tuple(range(values.ndim - g.dim, values.ndim))
    if g.n > DIRECT_CONVOLUTION_MAX_N:
        fk = np.fft.rfftn(kernel.weights)
        fv = np.fft.rfftn(values, axes=axes)
        return np.fft.irfftn(fv * fk, s=g.shape, axes=axes) * g.cell_volume
    out = np.zeros_like(values)
    for shift, w in kernel.support:
        out += w * np.roll(values, shift, axis=axes)
    return out * g.cell_volume


def convolution_matrix(kernel: MollifierKernel) -> np.ndarray:
    """Dense matrix of ``m -> xi * m`` on flattened grid values."""
    g = kernel.grid
    eye = np.eye(g.size).reshape(g.size, *g.shape)
    return convolve_values(eye, kernel).reshape(g.size, g.size).T.copy()


def convolve(f, kernel: MollifierKernel) -> GridField:
    """Periodic convolution ``(f * kernel)(x_i) = sum_j f_j k(x_i - x_j) h^d``.

    Accepts a :class:`GridField` or anything carrying ``grid`` and ``density``
    (a measure); the result is always a field.
    """
    values = f.values if isinstance(f, GridField) else f.density
    _same_grid(f.grid, kernel.grid)
    return GridField(f.grid, convolve_values(values, kernel))


def gradient_values(values: np.ndarray, h: float, dim: int, mode: str = "central") -> np.ndarray:
    """Periodic finite differences; returns shape ``(dim, *values.shape)``."""
    comps = []
    for ax in range(values.ndim - dim, values.ndim):
        if mode == "central":
            d = (np.roll(values, -1, axis=ax) - np.roll(values, 1, axis=ax)) / (2.0 * h)
        elif mode == "forward":
            d = (np.roll(values, -1, axis=ax) - values) / h
        elif mode == "backward":
            d = (values - np.roll(values, 1, axis=ax)) / h
        else:
            raise ValueError(f"unknown difference mode {mode!r}")
        comps.append(d)
    return np.stack(comps)


def gradient(f: GridField, mode: str = "central") -> VectorField:
    return VectorField(f.grid, gradient_values(f.values, f.grid.h, f.grid.dim, mode))


def interpolate_values(values: np.ndarray, grid: TorusGrid, points: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation at ``points`` of shape ``(m, dim)``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    s = (points % 1.0) * grid.n
    base = np.floor(s).astype(int)
    frac = s - base
    n = grid.n
    if grid.dim == 1:
        i0 = base[:, 0] % n
        t = frac[:, 0]
        return (1.0 - t) * values[i0] + t * values[(i0 + 1) % n]
    i0, j0 = base[:, 0] % n, base[:, 1] % n
    tx, ty = frac[:, 0], frac[:, 1]
    i1, j1 = (i0 + 1) % n, (j0 + 1) % n
    return (
        (1 - tx) * (1 - ty) * values[i0, j0]
        + tx * (1 - ty) * values[i1, j0]
        + (1 - tx) * ty * values[i0, j1]
        + tx * ty * values[i1, j1]
    )


def interpolate(f: GridField, x) -> float:
    """Value of the periodic multilinear interpolant of ``f`` at ``x``."""
    p = np.atleast_1d(np.asarray(x, dtype=float))
    if p.shape != (f.grid.dim,):
        raise DimensionError(f"point {x!r} is not a {f.grid.dim}-vector")
    return float(interpolate_values(f.values, f.grid, p[None, :])[0])


class FieldNorms(NamedTuple):
    sup_norm: float
    mean: float
    c2_norm: float


def second_differences(values: np.ndarray, dim: int) -> np.ndarray:
    """Max-abs-ready stack of pure and mixed second differences (not divided by h^2)."""
    axes = range(values.ndim - dim, values.ndim)
    diffs = [np.roll(values, -1, ax) - 2 * values + np.roll(values, 1, ax) for ax in axes]
    if dim == 2:
        a0, a1 = values.ndim - 2, values.ndim - 1
        fwd = lambda v, ax: np.roll(v, -1, ax) - v  # noqa: E731
        diffs.append(fwd(fwd(values, a0), a1))
    return np.stack(diffs)


def norms_and_means(f: GridField) -> FieldNorms:
    g = f.grid
    v = f.values
    grad = gradient_values(v, g.h, g.dim, "central")
    grad_sup = float(np.max(np.sqrt(np.sum(grad**2, axis=0))))
    second = float(np.max(np.abs(second_differences(v, g.dim)))) / g.h**2
    sup = float(np.max(np.abs(v)))
    return FieldNorms(sup, g.integrate(v), sup + grad_sup + second)


def lipschitz_constant(values: np.ndarray, h: float, dim: int) -> float:
    """Largest one-sided difference quotient over the trailing ``dim`` axes."""
    axes = range(values.ndim - dim, values.ndim)
    return float(max(np.max(np.abs(np.roll(values, -1, ax) - values)) for ax in axes) / h)
