"""Acceptance criteria at their stated tolerances; one summary line per criterion."""

import numpy as np
import pytest

from conftest import baseline_problem, cosine_potential, record
from ergomfg.ergodic import ErgodicConfig, lambda_quadratic_oracle, solve_ergodic
from ergomfg.experiments import run_sweep
from ergomfg.hj import TimeGrid, default_v_max, lax_oleinik_step
from ergomfg.measures import GridMeasure, random_measure, wasserstein1, wasserstein1_lp
from ergomfg.mfg import solve_mfg
from ergomfg.model import CouplingSpec, HamiltonianSpec, coercivity_audit, coupling_eval, fourier_field, lagrangian_eval, legendre_oracle
from ergomfg.torus import GridField, MollifierKernel, TorusGrid, lipschitz_constant
from ergomfg.transport import TransportScheme, solve_forward, wasserstein_lipschitz_check
from ergomfg.viscous import ViscousProblem, solve_viscous_mfg, sup_density_respected
from test_hj import brute_force_step, random_field
from test_model import nested_coupling

pytestmark = pytest.mark.slow

T_LIST = [5.0, 10.0, 20.0, 40.0, 80.0]
SWEEP_DT = 0.01
SWEEP_TOL_FP = 5e-3
SWEEP_MAX_ITER = 1500
BASELINE_TOL_FP = 1e-6
BASELINE_MAX_ITER = 6000
EPS_LIST = [0.1, 0.05, 0.025, 0.0125]
# fitted once on the converged viscous baseline paths and frozen
VISCOUS_C = {
    0.1: 0.4617382902077059,
    0.05: 0.8750920978057254,
    0.025: 1.004865607076853,
    0.0125: 1.0349892783876957,
}


def coupled_baseline(n=128, radius=0.15):
    g = TorusGrid(1, n)
    return HamiltonianSpec(cosine_potential(g)), CouplingSpec(MollifierKernel(g, radius), "linear", kappa=1.0)


@pytest.fixture(scope="module")
def ergodic128():
    ham, cp = coupled_baseline()
    return ham, cp, solve_ergodic(ham, cp)


def test_criterion_01_quadratic_oracle(ergodic128):
    ham, cp, sol = ergodic128
    oracle = lambda_quadratic_oracle(ham.V, sol.coupling_field)
    tol = max(1e-2, 2 * ham.grid.h)
    gap = abs(sol.lam - oracle.lam)
    unc = solve_ergodic(ham, CouplingSpec(cp.kernel, "decoupled"))
    ok = record(1, gap <= tol and abs(unc.lam - 1.0) <= 1e-2,
                f"|lambda - oracle| = {gap:.2e} (tol {tol:.0e}), uncoupled |lambda - 1| = {abs(unc.lam - 1):.2e}")
    assert ok


def test_criterion_02_ergodic_uniqueness(ergodic128):
    ham, cp, base = ergodic128
    g = ham.grid
    runs = [base]
    runs.append(solve_ergodic(ham, cp, ErgodicConfig(theta_erg=0.8)))
    runs.append(solve_ergodic(ham, cp, initial=GridMeasure.point_mass(g, 0.0)))
    runs.append(solve_ergodic(ham, cp, ErgodicConfig(theta_erg=0.8), initial=GridMeasure.point_mass(g, 0.0)))
    lams = [r.lam for r in runs]
    dF = max(np.max(np.abs(r.coupling_field - base.coupling_field)) for r in runs)
    tol_outer = ErgodicConfig().tol_outer
    ok = record(2, max(lams) - min(lams) <= 5e-3 and dF <= 2 * tol_outer,
                f"lambda spread {max(lams) - min(lams):.2e} (tol 5e-3), F spread {dF:.2e} (tol {2 * tol_outer:.0e})")
    assert ok


@pytest.fixture(scope="module")
def sweep(ergodic128):
    ham, cp, erg = ergodic128
    g = ham.grid
    x = g.axis()
    m0 = GridMeasure.from_density(g, 1.0 + 0.5 * np.sin(2 * np.pi * x))
    from ergomfg.mfg import MFGProblem

    template = MFGProblem(ham, cp, m0, GridField.constant(g, 0.0), TimeGrid(T_LIST[0], 1))
    return run_sweep(template, T_LIST, erg, SWEEP_DT, "fictitious_play", SWEEP_TOL_FP, SWEEP_MAX_ITER)


def test_criterion_03_rates(sweep):
    v = sweep.verdicts
    eu, eF = sweep.column("e_u"), sweep.column("e_F")
    sq = np.sqrt(sweep.column("T"))
    ok = record(3, v["slope_u"] and v["rate_constant_u"] and v["slope_F"] and v["rate_constant_F"],
                f"slope_u {sweep.fitted_slope_u:.3f}, e_u sqrt(T) max/min {np.max(eu * sq) / np.min(eu * sq):.2f}, "
                f"slope_F {sweep.fitted_slope_F:.3f}, e_F sqrt(T) max/min {np.max(eF * sq) / np.min(eF * sq):.2f} (band 2)")
    assert ok


def test_criterion_04_energy(sweep):
    e = sweep.column("energy")
    ok = record(4, sweep.verdicts["energy_bounded"], f"energy max {e.max():.3e}, median {np.median(e):.3e}, min {e.min():.3e}")
    assert ok


def test_criterion_05_uniform_lipschitz(sweep):
    lip = sweep.column("lip_x")
    spread = (lip.max() - lip.min()) / lip.max()
    ok = record(5, sweep.verdicts["lipschitz_uniform"], f"lip_x relative spread {spread:.3f} (tol 0.2)")
    assert ok


def test_criterion_06_coercivity():
    rng = np.random.default_rng(6)
    g = TorusGrid(1, 64)
    audits = []
    for radius in (0.1, 0.2):
        for family, c in (("linear", 1.0), ("smooth", 0.5)):
            spec = CouplingSpec(MollifierKernel(g, radius), family, c=c, w=fourier_field(g, [(1.0, 0, 0.0)]))
            audits.append(coercivity_audit(spec, 200, rng))
    worst = min(a.min_ratio - a.cbar for a in audits)
    ok = record(6, all(a.passes for a in audits),
                f"min ratio - cbar {worst:.3e}, min lhs {min(a.min_lhs for a in audits):.3e} over 4 x 200 pairs")
    assert ok


def test_criterion_07_transport_invariants():
    rng = np.random.default_rng(7)
    g = TorusGrid(1, 64)
    worst_mass, worst_min, lip_ok, worst_ratio = 0.0, np.inf, True, 0.0
    for i in range(100):
        b = (rng.normal() * 2 * np.cos(2 * np.pi * (g.axis() + rng.uniform())) + rng.normal())[None, :]
        scheme = TransportScheme("upwind_fv" if i % 2 == 0 else "sl_pushforward")
        path = solve_forward(random_measure(g, rng), b, TimeGrid(1.0, 50), scheme)
        mass = path.densities.sum(axis=1) * g.h
        worst_mass = max(worst_mass, float(np.max(np.abs(mass - 1.0))))
        worst_min = min(worst_min, float(path.densities.min()))
        chk = wasserstein_lipschitz_check(path, float(np.abs(b).max()))
        lip_ok &= chk.passes
        worst_ratio = max(worst_ratio, chk.max_ratio / chk.bound)
    ok = record(7, worst_mass <= 1e-12 and worst_min >= 0.0 and lip_ok,
                f"max mass error {worst_mass:.1e}, min density {worst_min:.2e}, max d1 ratio / bound {worst_ratio:.3f}")
    assert ok


def test_criterion_08_w1_oracle():
    rng = np.random.default_rng(8)
    g = TorusGrid(1, 32)
    gap = 0.0
    for _ in range(50):
        mu, nu = random_measure(g, rng), random_measure(g, rng)
        gap = max(gap, abs(wasserstein1(mu, nu) - wasserstein1_lp(mu, nu)))
    ok = record(8, gap <= 1e-8, f"max |CDF - LP| {gap:.2e} on 50 pairs (tol 1e-8)")
    assert ok


@pytest.fixture(scope="module")
def baseline_reference():
    return solve_mfg(baseline_problem(), "fictitious_play", BASELINE_TOL_FP, BASELINE_MAX_ITER, "frozen")


def test_criterion_09_finite_horizon_uniqueness(baseline_reference):
    other = solve_mfg(baseline_problem(), "fictitious_play", BASELINE_TOL_FP, BASELINE_MAX_ITER, "uniform")
    gap = float(np.max(np.abs(baseline_reference.coupling_field - other.coupling_field)))
    ok = record(9, gap <= 10 * BASELINE_TOL_FP,
                f"sup_t |F_frozen - F_uniform| {gap:.2e} (tol {10 * BASELINE_TOL_FP:.0e}), "
                f"iterations {baseline_reference.iterations} / {other.iterations}")
    assert ok


def test_criterion_10_vanishing_viscosity(baseline_reference):
    p = baseline_problem()
    gaps, sup_ok = [], True
    for eps in EPS_LIST:
        sol = solve_viscous_mfg(ViscousProblem(p, eps), "fictitious_play", BASELINE_TOL_FP, BASELINE_MAX_ITER)
        gaps.append(float(np.max(np.abs(sol.u[0] - baseline_reference.u[0]))))
        sup_ok &= sup_density_respected(sol.path, VISCOUS_C[eps])
    monotone = all(b <= 1.1 * a for a, b in zip(gaps, gaps[1:]))
    ok = record(10, monotone and sup_ok, f"sup gaps {', '.join(f'{x:.3e}' for x in gaps)}; sup-density bound {'held' if sup_ok else 'broken'}")
    assert ok


def test_criterion_11_scheme_oracles():
    rng = np.random.default_rng(11)
    g = TorusGrid(1, 32)
    dt, dv = 0.02, 0.05
    lo_ok = True
    for _ in range(20):
        a = GridField(g, 1.0 + 0.4 * np.cos(2 * np.pi * (g.axis() + rng.uniform())))
        spec = HamiltonianSpec(random_field(g, rng), a, C_bar=1.7)
        u, f = random_field(g, rng), random_field(g, rng).values
        # coarse box rounded up to whole dv steps, fine grid refines it tenfold
        v_max = np.ceil(default_v_max(spec, u.values, float(np.abs(f).max())) / dv) * dv
        step = lax_oleinik_step(u, f, spec, dt, v_max, dv).u_now.values
        fine = brute_force_step(u.values, f, spec, dt, np.linspace(-v_max, v_max, 20 * int(round(v_max / dv)) + 1))
        bound = dt * dv / 2 * (v_max / a.values.min() + dv / (4 * a.values.min()) + lipschitz_constant(u.values, g.h, 1))
        lo_ok &= bool((step - fine).min() >= -1e-12 and (step - fine).max() <= bound)
    cgap = 0.0
    for family, c in (("linear", 1.0), ("smooth", 0.5)):
        spec = CouplingSpec(MollifierKernel(g, 0.15), family, c=c)
        for _ in range(5):
            m = random_measure(g, rng)
            cgap = max(cgap, float(np.max(np.abs(coupling_eval(spec, m).values - nested_coupling(spec, m.density)))))
    ham = HamiltonianSpec(cosine_potential(TorusGrid(1, 16)), GridField(TorusGrid(1, 16), 1.0 + 0.5 * np.cos(2 * np.pi * TorusGrid(1, 16).axis())), C_bar=2.0)
    p_grid = np.linspace(-12.0, 12.0, 480001)[:, None]
    lgap = max(abs(legendre_oracle(ham, int(i), v, p_grid) - lagrangian_eval(ham, int(i), v))
               for i, v in zip(rng.integers(16, size=10), rng.uniform(-3, 3, 10)))
    ok = record(11, lo_ok and cgap <= 1e-10 and lgap <= 1e-5,
                f"Lax-Oleinik within bound on 20 fields: {lo_ok}; coupling gap {cgap:.1e}; Legendre gap {lgap:.1e}")
    assert ok
