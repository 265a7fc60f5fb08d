import numpy as np
import pytest

from conftest import baseline_problem
from ergomfg.ergodic import ErgodicSolution, solve_ergodic
from ergomfg.hj import HJSolution
from ergomfg.measures import GridMeasure, MeasurePath
from ergomfg.mfg import MFGSolution
from ergomfg.experiments import RateReport, SweepRow, fit_slope, long_time_errors, rescale, run_sweep
from ergomfg.model import coupling_values
from ergomfg.torus import GridField


def manufactured(p, lam, phi):
    """Exact profile ``u(t, x) = -lam (T - t) + phi(x)`` on a path frozen at ``m0``."""
    tg = p.time_grid
    g = p.grid
    u = -lam * (tg.horizon - tg.times)[:, None] + phi[None, :]
    hj = HJSolution(g, tg, u, np.zeros((tg.steps, 1, g.n)), 1.0, 0.1)
    path = MeasurePath.constant(p.m0, tg.times)
    F = coupling_values(p.coupling, path.densities)
    return MFGSolution(hj, path, F, [0.0], 1)


def test_long_time_errors_on_manufactured_solution():
    p = baseline_problem(n=32, T=8.0, steps=80)
    g = p.grid
    phi = 0.3 * np.cos(2 * np.pi * g.axis())
    sol = manufactured(p, -0.7, phi)
    erg = ErgodicSolution(-0.7, GridField(g, phi), p.m0, {"coupling_field": sol.coupling_field[0]})
    err = long_time_errors(sol, erg, p.coupling)
    assert err.e_u == pytest.approx(0.3 / 8.0, abs=1e-14)
    assert err.e_F == 0.0 and err.energy == 0.0
    # a different reference measure gives the trapezoid of the sup gap
    ref = GridMeasure.uniform(g)
    erg2 = ErgodicSolution(-0.7, GridField(g, phi), ref, {})
    gap = np.max(np.abs(sol.coupling_field[0] - coupling_values(p.coupling, ref.density)))
    assert long_time_errors(sol, erg2, p.coupling).e_F == pytest.approx(gap, rel=1e-12)


def test_rescale_uses_native_nodes():
    p = baseline_problem(n=16, T=4.0, steps=40)
    r = rescale(manufactured(p, 1.0, np.zeros(16)))
    assert r.s[0] == 0.0 and r.s[-1] == 1.0 and len(r.s) == 41
    assert np.allclose(np.diff(r.s), 1 / 40)


def test_fit_slope_recovers_power_law():
    T = np.array([5.0, 10, 20, 40])
    assert fit_slope(T, 3 * T**-0.5) == pytest.approx(-0.5)
    assert np.isnan(fit_slope(T, np.array([1.0, 0.5, 0.0, 0.1])))


def rows_for(e_u, e_F, energy, lip):
    T = [5.0, 10.0, 20.0, 40.0]
    return [SweepRow(t, a, b, c, d, 1.0, 1, 0.0) for t, a, b, c, d in zip(T, e_u, e_F, energy, lip)]


def test_verdicts_on_synthetic_rows():
    T = np.array([5.0, 10, 20, 40])
    rep = RateReport(rows_for(T**-0.5, 2 * T**-0.5, [1, 1.2, 1.1, 1.3], [2, 2.1, 2.05, 2.2]), complete=True).evaluate()
    assert rep.all_pass
    rep = RateReport(rows_for(1 / T, T**-0.2, [1, 1, 1, 5], [1, 2, 2, 2]), complete=True).evaluate()
    assert rep.verdicts == {
        "slope_u": True,
        "rate_constant_u": False,
        "slope_F": False,
        "rate_constant_F": True,
        "energy_bounded": False,
        "lipschitz_uniform": False,
    }
    rep = RateReport(rows_for(T**-0.5, T**-0.5, [0, -1e-6, 0, 0], [2, 2, 2, 2]), complete=False).evaluate()
    assert not rep.verdicts["energy_bounded"] and not rep.all_pass


def test_sweep_argument_checks():
    p = baseline_problem(n=16, steps=10)
    with pytest.raises(ValueError):
        run_sweep(p, [5, 10], None, 0.05)
    with pytest.raises(ValueError):
        run_sweep(p, [5, 20, 10], None, 0.05)


def test_decoupled_sweep():
    p = baseline_problem(family="decoupled")
    erg = solve_ergodic(p.hamiltonian, p.coupling)
    rep = run_sweep(p, [5.0, 10.0, 20.0, 40.0], erg, 0.05)
    assert rep.complete
    assert np.all(rep.column("e_F") == 0.0) and np.all(rep.column("energy") == 0.0)
    assert np.all(rep.column("iterations") == 1)
    # the corrector is bounded, so the value error decays like 1/T
    assert rep.fitted_slope_u == pytest.approx(-1.0, abs=0.05)
    v = rep.verdicts
    assert v["slope_u"] and v["energy_bounded"] and v["lipschitz_uniform"] and v["slope_F"] and v["rate_constant_F"]
    # e_u sqrt(T) shrinks by sqrt(8) over the sweep, beyond the factor-2 band
    assert not v["rate_constant_u"]
