import numpy as np
import pytest

from ergomfg.errors import BoxTooSmallError
from ergomfg.measures import GridMeasure, random_measure
from ergomfg.model import (
    CouplingSpec,
    HamiltonianSpec,
    coercivity_audit,
    coercivity_check,
    coupling_c2_bound,
    coupling_eval,
    coupling_potential,
    coupling_sup_bound,
    coupling_values,
    d_p_hamiltonian,
    fourier_field,
    hamiltonian_eval,
    lagrangian_eval,
    legendre_oracle,
)
from ergomfg.torus import GridField, MollifierKernel, TorusGrid, norms_and_means


def nested_coupling(spec, m):
    """``F(x_i) = sum_j xi(x_i - x_j) Fbar(x_j, sum_l xi(x_j - x_l) m_l h) h`` by explicit loops."""
    g = spec.grid
    n = g.n
    w = spec.kernel.weights
    z = np.array([sum(w[(j - l) % n] * m[l] for l in range(n)) * g.h for j in range(n)])
    inner = spec.inner(z)
    return np.array([sum(w[(i - j) % n] * inner[j] for j in range(n)) * g.h for i in range(n)])


@pytest.mark.parametrize("family,c", [("linear", 1.0), ("smooth", 0.5)])
def test_coupling_matches_nested_oracle(family, c, rng):
    g = TorusGrid(1, 32)
    w = fourier_field(g, [(1.0, 0, 0.0), (0.5, 2, 0.3)])
    spec = CouplingSpec(MollifierKernel(g, 0.15), family, c=c, g=fourier_field(g, [(0.3, 1, 0.0)]), w=w, sigma=0.5)
    for _ in range(5):
        m = random_measure(g, rng)
        assert np.max(np.abs(coupling_eval(spec, m).values - nested_coupling(spec, m.density))) <= 1e-10


def test_legendre_closed_form_matches_brute_force(rng):
    g = TorusGrid(1, 16)
    a = GridField(g, 1.0 + 0.5 * np.cos(2 * np.pi * g.axis()))
    spec = HamiltonianSpec(fourier_field(g, [(1.0, 1, 0.0)]), a, C_bar=2.0)
    p_grid = np.linspace(-12.0, 12.0, 480001)[:, None]
    for _ in range(10):
        x = int(rng.integers(16))
        v = rng.uniform(-3, 3)
        assert abs(legendre_oracle(spec, x, v, p_grid) - lagrangian_eval(spec, x, v)) <= 1e-5


def test_legendre_oracle_detects_small_box():
    g = TorusGrid(1, 16)
    spec = HamiltonianSpec(fourier_field(g, [(1.0, 1, 0.0)]))
    with pytest.raises(BoxTooSmallError, match="box too small"):
        legendre_oracle(spec, 0, 5.0, np.linspace(-1, 1, 101))


def test_hamiltonian_and_gradient():
    g = TorusGrid(2, 8)
    spec = HamiltonianSpec(GridField.constant(g, 0.5))
    assert hamiltonian_eval(spec, (1, 2), [3.0, 4.0]) == pytest.approx(12.0)
    assert np.allclose(d_p_hamiltonian(spec, (1, 2), [3.0, 4.0]), [3.0, 4.0])


def test_stiffness_outside_bounds_rejected():
    g = TorusGrid(1, 16)
    with pytest.raises(ValueError, match="stiffness"):
        HamiltonianSpec(GridField.constant(g, 0.0), GridField.constant(g, 3.0), C_bar=2.0)


def test_coupling_parameter_validation():
    g = TorusGrid(1, 32)
    k = MollifierKernel(g, 0.1)
    with pytest.raises(ValueError, match="c must be"):
        CouplingSpec(k, c=0.0)
    with pytest.raises(ValueError):
        CouplingSpec(k, "linear", c=0.5, kappa=3.0)
    with pytest.raises(ValueError, match="unknown coupling family"):
        CouplingSpec(k, "cubic")
    with pytest.raises(ValueError):
        CouplingSpec(k, "smooth", c=1.0)


def test_potential_gradient_is_the_coupling(rng):
    g = TorusGrid(1, 32)
    for family, c in (("linear", 1.0), ("smooth", 0.5)):
        spec = CouplingSpec(MollifierKernel(g, 0.2), family, c=c)
        m = random_measure(g, rng).density
        d = rng.normal(size=32)
        eps = 1e-6
        fd = (coupling_potential(spec, m + eps * d) - coupling_potential(spec, m - eps * d)) / (2 * eps)
        assert fd == pytest.approx(np.sum(coupling_values(spec, m) * d) * g.h, rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("radius", [0.1, 0.2])
@pytest.mark.parametrize("family,c", [("linear", 1.0), ("smooth", 0.5)])
def test_coercivity_audit_passes(radius, family, c):
    g = TorusGrid(1, 64)
    spec = CouplingSpec(MollifierKernel(g, radius), family, c=c)
    audit = coercivity_audit(spec, 50, np.random.default_rng(7))
    assert audit.passes and audit.min_lhs >= -1e-10
    assert audit.cbar == pytest.approx(c**3 / spec.kernel.l2_norm_sq)


def test_decoupled_coupling_is_zero(rng):
    g = TorusGrid(1, 32)
    spec = CouplingSpec(MollifierKernel(g, 0.1), "decoupled")
    assert np.all(coupling_eval(spec, random_measure(g, rng)).values == 0.0)
    assert spec.coercivity_constant == 0.0 and coupling_sup_bound(spec) == 0.0
    chk = coercivity_check(spec, GridMeasure.uniform(g), GridMeasure.point_mass(g, 0.3))
    assert chk.lhs == 0.0 and chk.passes


def test_sup_and_c2_bounds_hold_on_random_measures(rng):
    g = TorusGrid(1, 64)
    spec = CouplingSpec(MollifierKernel(g, 0.15), "smooth", c=0.5, g=fourier_field(g, [(0.2, 1, 0.0)]))
    sup, c2 = coupling_sup_bound(spec), coupling_c2_bound(spec)
    for _ in range(30):
        F = coupling_eval(spec, random_measure(g, rng))
        assert np.max(np.abs(F.values)) <= sup + 1e-12
        assert norms_and_means(F).c2_norm <= c2 + 1e-9
