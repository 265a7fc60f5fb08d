"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 non-convergence,
3 a verdict or audit failed.  Errors are also written to stderr as one JSON
object.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import RunConfig, parse_config
from .ergodic import lambda_quadratic_oracle, solve_ergodic
from .errors import ConfigError, NonConvergenceError
from .experiments import SweepError, run_sweep
from .hj import lipschitz_report
from .io import config_hash, write_columns, write_csv, write_json
from .model import coercivity_audit
from .mfg import solve_mfg
from .viscous import viscous_mfg_sweep

logger = logging.getLogger("ergomfg")

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED, EXIT_VERDICT = 0, 1, 2, 3
VISCOUS_SLACK = 1.1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("UsageError", message)
        sys.exit(EXIT_USAGE)


def _emit_error(kind: str, message: str, **extra) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True) + "\n")


def _apply_thread_cap() -> None:
    cap = os.environ.get("ERGOMFG_THREADS")
    if not cap:
        return
    try:
        import numba

        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))
    except ValueError:
        raise ConfigError(f"ERGOMFG_THREADS must be a positive integer, got {cap!r}", key="ERGOMFG_THREADS")


def _cmd_solve_mfg(cfg: RunConfig, digest: str, args) -> int:
    s = cfg.section("solver")
    problem = cfg.problem()
    out = cfg.output_dir
    try:
        sol = solve_mfg(problem, cfg.damping, s["tol_fp"], s["max_iter"], s["initial"])
    except NonConvergenceError as exc:
        write_csv(out / "residuals.csv", ["iteration", "residual"], enumerate(exc.history, 1), digest)
        raise
    lip = lipschitz_report(sol.hj)
    write_json(
        out / "solution.json",
        {
            "iterations": sol.iterations,
            "residual": sol.residual_history[-1],
            "times": problem.time_grid.times,
            "u_0": sol.u[0],
            "u_T": sol.u[-1],
            "m_0": sol.path.densities[0],
            "m_T": sol.path.densities[-1],
            "lip_x": lip.lip_x,
            "lip_t": lip.lip_t,
            "v_max": sol.hj.v_max,
        },
        digest,
    )
    write_csv(out / "residuals.csv", ["iteration", "residual"], enumerate(sol.residual_history, 1), digest)
    print(f"converged in {sol.iterations} iterations, residual {sol.residual_history[-1]:.3e}")
    return EXIT_OK


def _cmd_solve_ergodic(cfg: RunConfig, digest: str, args) -> int:
    ham = cfg.hamiltonian()
    sol = solve_ergodic(ham, cfg.coupling(), cfg.ergodic(), scheme=cfg.scheme())
    F = sol.coupling_field
    payload = {
        "lambda": sol.lam,
        "u_bar": sol.u_bar.values,
        "m_bar": sol.m_bar.density,
        "coupling_field": F,
        "hj_residual_on_support": sol.diagnostics["hj_residual_on_support"],
        "stationarity_residual": sol.diagnostics["stationarity_residual"],
        "outer_residuals": sol.diagnostics["outer_residuals"],
    }
    line = f"lambda = {sol.lam:.8f}"
    if ham.is_quadratic:
        oracle = lambda_quadratic_oracle(ham.V, F)
        tol = max(1e-2, 2 * ham.grid.h)
        gap = abs(sol.lam - oracle.lam)
        payload.update(oracle_lambda=oracle.lam, oracle_gap=gap, oracle_tolerance=tol)
        line += f"  oracle = {oracle.lam:.8f}  gap = {gap:.3e} (tolerance {tol:.3e})"
    write_json(cfg.output_dir / "ergodic.json", payload, digest)
    print(line)
    return EXIT_OK


_REPORT_FIELDS = ["T", "e_u", "e_F", "energy", "lip_x", "lip_t", "iterations", "residual"]


def _write_report(cfg: RunConfig, report, digest: str) -> None:
    out = cfg.output_dir
    write_csv(out / "rate_report.csv", _REPORT_FIELDS, report.rows, digest)
    write_json(
        out / "rate_report.json",
        {
            "rows": [r._asdict() for r in report.rows],
            "fitted_slope_u": report.fitted_slope_u,
            "fitted_slope_F": report.fitted_slope_F,
            "verdicts": report.verdicts,
            "complete": report.complete,
        },
        digest,
    )
    if report.rows:
        T = report.column("T")
        for name in ("e_u", "e_F"):
            e = report.column(name)
            keep = e > 0
            write_columns(out / f"{name}.dat", np.log(T[keep]), np.log(e[keep]), digest, ("log_T", f"log_{name}"))


def _cmd_long_time(cfg: RunConfig, digest: str, args) -> int:
    s = cfg.section("solver")
    erg = solve_ergodic(cfg.hamiltonian(), cfg.coupling(), cfg.ergodic(), scheme=cfg.scheme())
    try:
        report = run_sweep(
            cfg.problem(), cfg.section("time")["T_list"], erg, cfg.section("time")["dt"],
            cfg.damping, s["tol_fp"], s["max_iter"], s["initial"],
        )
    except SweepError as exc:
        _write_report(cfg, exc.report, digest)
        raise NonConvergenceError(str(exc)) from exc
    _write_report(cfg, report, digest)
    for k, v in report.verdicts.items():
        print(f"{k}: {'pass' if v else 'FAIL'}")
    return EXIT_OK if report.all_pass else EXIT_VERDICT


def _cmd_check_coercivity(cfg: RunConfig, digest: str, args) -> int:
    if args.samples < 1:
        raise ConfigError("--samples must be >= 1", key="samples")
    rng = np.random.default_rng(cfg.seed)
    audit = coercivity_audit(cfg.coupling(), args.samples, rng)
    write_json(cfg.output_dir / "coercivity.json", audit._asdict(), digest)
    print(f"min ratio {audit.min_ratio:.6g} vs cbar {audit.cbar:.6g}, min lhs {audit.min_lhs:.3e}: {'pass' if audit.passes else 'FAIL'}")
    return EXIT_OK if audit.passes else EXIT_VERDICT


def _cmd_viscous_compare(cfg: RunConfig, digest: str, args) -> int:
    s = cfg.section("solver")
    eps = args.eps if args.eps is not None else cfg.section("viscous")["eps"]
    problem = cfg.problem()
    reference = solve_mfg(problem, cfg.damping, s["tol_fp"], s["max_iter"], s["initial"])
    rows = viscous_mfg_sweep(problem, eps, reference, cfg.damping, s["tol_fp"], s["max_iter"])
    write_csv(
        cfg.output_dir / "viscous.csv",
        ["epsilon", "sup_gap_u", "d1_gap_m_at_T", "iterations", "max_second_difference"],
        rows,
        digest,
    )
    gaps = [r.sup_gap_u for r in rows]
    monotone = all(b <= a * VISCOUS_SLACK for a, b in zip(gaps, gaps[1:]))
    for r in rows:
        print(f"eps {r.epsilon:g}: sup gap u {r.sup_gap_u:.4e}, d1 gap m(T) {r.d1_gap_m_at_T:.4e}")
    return EXIT_OK if monotone else EXIT_VERDICT


def _eps_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ergomfg", description="Solvers for first-order mean field games on the torus.")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn, help_ in (
        ("solve-mfg", _cmd_solve_mfg, "finite-horizon fixed-point solve"),
        ("solve-ergodic", _cmd_solve_ergodic, "ergodic system and oracle comparison"),
        ("long-time", _cmd_long_time, "horizon sweep with rate verdicts"),
        ("check-coercivity", _cmd_check_coercivity, "randomized weak-coercivity audit"),
        ("viscous-compare", _cmd_viscous_compare, "vanishing-viscosity sweep"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="TOML run configuration")
        sp.set_defaults(func=fn)
        if name == "check-coercivity":
            sp.add_argument("--samples", type=int, default=200)
        if name == "viscous-compare":
            sp.add_argument("--eps", type=_eps_list, default=None, help="comma-separated, decreasing")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        _apply_thread_cap()
        cfg = parse_config(args.config)
        digest = config_hash(cfg.raw)
        logger.info("config %s: %s", digest[:12], json.dumps(cfg.raw, sort_keys=True))
        return args.func(cfg, digest, args)
    except ConfigError as exc:
        _emit_error("ConfigError", str(exc), key=exc.key)
        return EXIT_USAGE
    except NonConvergenceError as exc:
        last = exc.history[-1] if exc.history else None
        _emit_error("NonConvergenceError", str(exc), last_residual=last)
        return EXIT_NONCONVERGED
    except ValueError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
