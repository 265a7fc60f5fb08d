"""Hamiltonian, Lagrangian and the nonlocal convolution coupling.

The Hamiltonian family is ``H(x, p) = a(x)|p|^2 / 2 - V(x)`` with Legendre dual
``L(x, v) = |v|^2 / (2 a(x)) + V(x)``.  The coupling is
``F(x, m) = (Fbar(., xi * m) * xi)(x)`` for an even bump kernel ``xi`` and an
inner map ``Fbar`` whose ``z``-derivative lies in ``[c, 1/c]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import BoxTooSmallError, DimensionError
from .measures import GridMeasure
from .torus import GridField, MollifierKernel, TorusGrid, _same_grid, convolve_values

COUPLING_FAMILIES = ("linear", "smooth", "decoupled")


def fourier_field(grid: TorusGrid, terms: Sequence[Sequence]) -> GridField:
    """Finite sum ``sum_k A_k cos(2 pi k.x + phi_k)``.

    Each term is ``(A, k, phi)`` with ``k`` an integer (1D) or a pair (2D).
    """
    x = grid.coords()
    values = np.zeros(grid.shape)
    for amp, k, phi in terms:
        k = np.atleast_1d(np.asarray(k, dtype=float))
        if k.size != grid.dim:
            raise DimensionError(f"wavevector {k} does not match dim={grid.dim}")
        phase = k[0] * x if grid.dim == 1 else k[0] * x[0] + k[1] * x[1]
        values += amp * np.cos(2 * np.pi * phase + phi)
    return GridField(grid, values)


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """``H(x, p) = a(x)|p|^2/2 - V(x)`` with ``1/C_bar <= a <= C_bar``."""

    V: GridField
    a: GridField | None = None
    C_bar: float = 1.0

    def __post_init__(self):
        a = self.a if self.a is not None else GridField.constant(self.V.grid, 1.0)
        _same_grid(self.V.grid, a.grid)
        if self.C_bar < 1.0:
            raise ValueError(f"C_bar must be >= 1, got {self.C_bar}")
        lo, hi = a.values.min(), a.values.max()
        if lo < 1.0 / self.C_bar - 1e-12 or hi > self.C_bar + 1e-12:
            raise ValueError(f"stiffness a ranges over [{lo}, {hi}], outside [1/C_bar, C_bar]")
        object.__setattr__(self, "a", a)

    @property
    def grid(self) -> TorusGrid:
        return self.V.grid

    @property
    def is_quadratic(self) -> bool:
        return bool(np.all(self.a.values == 1.0))


def _node_params(spec: HamiltonianSpec, x) -> tuple[float, float]:
    idx = (x,) if np.isscalar(x) else tuple(x)
    return float(spec.a.values[idx]), float(spec.V.values[idx])


def hamiltonian_eval(spec: HamiltonianSpec, x, p) -> float:
    """``H`` at node index ``x`` and momentum ``p``."""
    a, V = _node_params(spec, x)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    return 0.5 * a * float(p @ p) - V


def d_p_hamiltonian(spec: HamiltonianSpec, x, p) -> np.ndarray:
    a, _ = _node_params(spec, x)
    return a * np.atleast_1d(np.asarray(p, dtype=float))


def lagrangian_eval(spec: HamiltonianSpec, x, v) -> float:
    a, V = _node_params(spec, x)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return float(v @ v) / (2.0 * a) + V


def legendre_oracle(spec: HamiltonianSpec, x, v, p_grid: np.ndarray) -> float:
    """Brute-force ``sup_p <p, v> - H(x, p)`` over the rows of ``p_grid``.

    ``p_grid`` has shape ``(m, dim)``.  A maximizer on the edge of the sampled
    box means the box does not contain the true maximizer.
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    p_grid = np.asarray(p_grid, dtype=float).reshape(-1, v.size)
    a, V = _node_params(spec, x)
    vals = p_grid @ v - (0.5 * a * np.sum(p_grid**2, axis=1) - V)
    k = int(np.argmax(vals))
    lo, hi = p_grid.min(axis=0), p_grid.max(axis=0)
    if np.any(p_grid[k] <= lo) or np.any(p_grid[k] >= hi):
        raise BoxTooSmallError(f"maximizer {p_grid[k]} sits on the momentum box boundary; box too small")
    return float(vals[k])


@dataclass(frozen=True, eq=False)
class CouplingSpec:
    """Nonlocal coupling ``F(x, m) = xi * Fbar(., xi * m)``.

    Families of ``Fbar(x, z)``:

    ``linear``
        ``kappa * z + g(x)`` with ``kappa`` in ``[c, 1/c]``.
    ``smooth``
        ``z + sigma/2 * sin(z) * w(x)`` with ``|sigma| <= 1/2`` and
        ``|sigma| * max|w| <= 1`` so ``dFbar/dz`` lies in ``[1/2, 3/2]``.
    ``decoupled``
        ``Fbar = 0``.  Test hook only: it is monotone but not coercive.
    """

    kernel: MollifierKernel
    family: str = "linear"
    c: float = 1.0
    kappa: float = 1.0
    sigma: float = 0.5
    g: GridField | None = None
    w: GridField | None = None
    coercivity_constant: float = field(init=False)

    def __post_init__(self):
        grid = self.kernel.grid
        if self.family not in COUPLING_FAMILIES:
            raise ValueError(f"unknown coupling family {self.family!r}; expected one of {COUPLING_FAMILIES}")
        if not 0.0 < self.c <= 1.0:
            raise ValueError(f"c must be in (0, 1], got {self.c}")
        g = self.g if self.g is not None else GridField.constant(grid, 0.0)
        w = self.w if self.w is not None else GridField.constant(grid, 1.0)
        _same_grid(grid, g.grid)
        _same_grid(grid, w.grid)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "w", w)
        lo, hi = self.derivative_bounds()
        if self.family != "decoupled" and (lo < self.c - 1e-12 or hi > 1.0 / self.c + 1e-12):
            raise ValueError(f"dFbar/dz ranges over [{lo}, {hi}], outside [c, 1/c] = [{self.c}, {1 / self.c}]")
        if self.family == "smooth" and abs(self.sigma) > 0.5:
            raise ValueError(f"|sigma| must be <= 1/2, got {self.sigma}")
        cbar = 0.0 if self.family == "decoupled" else self.c**3 / self.kernel.l2_norm_sq
        object.__setattr__(self, "coercivity_constant", cbar)

    @property
    def grid(self) -> TorusGrid:
        return self.kernel.grid

    def derivative_bounds(self) -> tuple[float, float]:
        """Range of ``dFbar/dz`` over all ``(x, z)``."""
        if self.family == "linear":
            return self.kappa, self.kappa
        if self.family == "smooth":
            amp = 0.5 * abs(self.sigma) * float(np.max(np.abs(self.w.values)))
            return 1.0 - amp, 1.0 + amp
        return 0.0, 0.0

    def inner(self, z: np.ndarray) -> np.ndarray:
        """``Fbar(x, z)`` applied node-wise (leading batch axes allowed)."""
        if self.family == "linear":
            return self.kappa * z + self.g.values
        if self.family == "smooth":
            return z + 0.5 * self.sigma * np.sin(z) * self.w.values
        return np.zeros_like(z)


def coupling_values(spec: CouplingSpec, densities: np.ndarray) -> np.ndarray:
    """Array version of :func:`coupling_eval`; leading axes are a batch."""
    if spec.family == "decoupled":
        return np.zeros_like(np.asarray(densities, dtype=float))
    z = convolve_values(densities, spec.kernel)
    return convolve_values(spec.inner(z), spec.kernel)


def coupling_eval(spec: CouplingSpec, m: GridMeasure) -> GridField:
    _same_grid(spec.grid, m.grid)
    return GridField(m.grid, coupling_values(spec, m.density))


def inner_primitive(spec: CouplingSpec, z: np.ndarray) -> np.ndarray:
    """``G(x, z) = int_0^z Fbar(x, s) ds`` node-wise."""
    if spec.family == "linear":
        return 0.5 * spec.kappa * z**2 + spec.g.values * z
    if spec.family == "smooth":
        return 0.5 * z**2 + 0.5 * spec.sigma * (1.0 - np.cos(z)) * spec.w.values
    return np.zeros_like(z)


def coupling_potential(spec: CouplingSpec, densities: np.ndarray) -> np.ndarray:
    """Convex potential ``Psi(m) = int G(x, xi * m) dx`` whose gradient is ``F(., m)``.

    Leading axes of ``densities`` are a batch.
    """
    g = spec.grid
    z = convolve_values(densities, spec.kernel)
    axes = tuple(range(z.ndim - g.dim, z.ndim))
    return np.sum(inner_primitive(spec, z), axis=axes) * g.cell_volume


class CoercivityCheck(NamedTuple):
    lhs: float
    rhs_l2sq: float
    ratio: float
    passes: bool


def coercivity_check(spec: CouplingSpec, m1: GridMeasure, m2: GridMeasure, tol: float = 1e-10) -> CoercivityCheck:
    """Weak-coercivity audit ``int dF d(m1 - m2) >= cbar * int dF^2``."""
    _same_grid(m1.grid, m2.grid)
    vol = m1.grid.cell_volume
    dF = coupling_values(spec, m1.density) - coupling_values(spec, m2.density)
    lhs = float(np.sum(dF * (m1.density - m2.density)) * vol)
    rhs = float(np.sum(dF**2) * vol)
    ratio = lhs / rhs if rhs > 1e-12 else float("inf")
    passes = lhs >= spec.coercivity_constant * rhs - tol and lhs >= -tol
    return CoercivityCheck(lhs, rhs, ratio, bool(passes))


def coupling_sup_bound(spec: CouplingSpec) -> float:
    """``sup |Fbar|`` over the reachable range ``0 <= xi * m <= max xi``.

    Also bounds ``sup |F(., m)|`` over all probability measures.
    """
    if spec.family == "decoupled":
        return 0.0
    g = spec.grid
    z = np.linspace(0.0, float(spec.kernel.weights.max()), 257)
    z = np.broadcast_to(z.reshape(-1, *([1] * g.dim)), (z.size, *g.shape)).copy()
    return float(np.max(np.abs(spec.inner(z))))


def coupling_c2_bound(spec: CouplingSpec) -> float:
    """Upper bound on the discrete C2 norm of ``F(., m)`` over all measures.

    Uses ``|xi * m| <= max xi`` and that every derivative of ``F`` is a
    difference quotient of the kernel convolved with a function bounded by
    ``sup |Fbar|`` on the reachable range of ``z``.
    """
    g = spec.grid
    w = spec.kernel.weights
    fbar_sup = coupling_sup_bound(spec)
    vol = g.cell_volume
    first, second = 0.0, 0.0
    for ax in range(g.dim):
        d1 = np.abs(np.roll(w, -1, ax) - np.roll(w, 1, ax)).sum() * vol / (2 * g.h)
        d2 = np.abs(np.roll(w, -1, ax) - 2 * w + np.roll(w, 1, ax)).sum() * vol / g.h**2
        first += d1
        second = max(second, d2)
    if g.dim == 2:
        mixed = np.abs(np.roll(np.roll(w, -1, 0), -1, 1) - np.roll(w, -1, 0) - np.roll(w, -1, 1) + w)
        second = max(second, mixed.sum() * vol / g.h**2)
    return fbar_sup * (1.0 + first + second)


class CoercivityAudit(NamedTuple):
    samples: int
    min_ratio: float
    min_lhs: float
    cbar: float
    passes: bool


def coercivity_audit(spec: CouplingSpec, samples: int, rng: np.random.Generator, tol: float = 1e-10) -> CoercivityAudit:
    """Weak-coercivity check on ``samples`` random measure pairs.

    Passes when every ratio is at least ``cbar - tol`` and every left-hand
    side at least ``-tol``.  Pairs with identical couplings have ratio ``inf``.
    """
    from .measures import random_measure

    ratios, lhs = [], []
    for _ in range(samples):
        chk = coercivity_check(spec, random_measure(spec.grid, rng), random_measure(spec.grid, rng), tol)
        ratios.append(chk.ratio)
        lhs.append(chk.lhs)
    min_ratio, min_lhs = float(min(ratios)), float(min(lhs))
    ok = min_ratio >= spec.coercivity_constant - tol and min_lhs >= -tol
    return CoercivityAudit(samples, min_ratio, min_lhs, spec.coercivity_constant, bool(ok))
