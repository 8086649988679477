"""Command-line entry point: ``glevy <command> --config FILE [options]``.

Every run writes ``report.json`` (deterministic for a given config and seed),
``summary.txt`` and ``metadata.json`` (timestamp and invocation) into the
output directory, plus command-specific CSV tables.

Exit codes: 0 all checks pass, 2 validation failure, 3 numerical blow-up,
4 threshold failure, 64 usage or configuration error.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import numpy as np

from . import presets
from .config import ConfigError, ExperimentConfig, expr_env, load_config
from .expectation import simulate_batch, sublinear_expectation
from .functional import (FunctionalSpec, classical_functional, evaluate_functional,
                         path_independence_residual)
from .paths import simulate_driver, simulate_sde, validate_coefficients, write_path_csv
from .pide import (DecompositionSpec, PideGrid, PideWitness, decomposition_check,
                   manufacture_from_V, solve_viscosity_pide)
from .report import BlowUpError, StructureError
from .scenario import enumerate_scenarios
from .uncertainty import validate_uncertainty_set

EXIT_OK, EXIT_VALIDATION, EXIT_BLOWUP, EXIT_THRESHOLD, EXIT_USAGE = 0, 2, 3, 4, 64
THREADS_ENV = "GLEVY_THREADS"
COMMANDS = ("validate", "simulate", "expect", "check-pi", "pide-solve", "decomp-check", "reduce-classical")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="glevy", description="Robust simulation and path-independence checks for G-Levy SDEs.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="experiment configuration file")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--seed", type=int, help="master seed (overrides [numerics] seed)")
    p.add_argument("--paths", type=int, help="paths per scenario (overrides [numerics] n_paths)")
    p.add_argument("--dt", type=float, help="time step (overrides [numerics] dt)")
    p.add_argument("--threads", type=int, help=f"worker threads (default from ${THREADS_ENV} or 1)")
    return p


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _numerics(cfg):
    g = lambda k: cfg.get("numerics", k)
    return float(g("T")), float(g("dt")), int(g("n_paths")), int(g("seed")), float(g("y0"))


def _witness_from_expr(expr, d):
    return PideWitness(lambda t, x: np.broadcast_to(expr(**expr_env(np.asarray(t, float), x)), x.shape[:1]), dim=d)


def _functional_preset(cfg: ExperimentConfig) -> str:
    preset = cfg.get("functional", "preset")
    if preset != "none":
        return preset
    return {"manufactured-1d": "manufactured", "special-case-1d": "special-case"}.get(
        cfg.coefficient_preset(), "expressions")


def build_problem(cfg: ExperimentConfig):
    """``(U, coefficients, spec, V)``; ``V`` may be None when no witness is configured."""
    U = cfg.build_uncertainty()
    d = cfg.dim
    alpha, beta, gamma = cfg.functional_constants()
    kind = _functional_preset(cfg)
    V = _witness_from_expr(cfg.get("functional", "V"), d) if cfg.has("functional", "V") else None
    if kind == "special-case":
        V, spec, coeffs, U = presets.special_case_1d(U=U)
    elif kind == "manufactured":
        if cfg.coefficient_preset() == "manufactured-1d" and V is None:
            V, spec, coeffs, U = presets.manufactured_1d(alpha, beta, gamma, U)
        else:
            if V is None:
                raise ConfigError("the manufactured functional needs [functional] V or the manufactured-1d preset")
            spec, coeffs = manufacture_from_V(V, cfg.build_coefficients(), U, alpha, beta, gamma)
    else:
        coeffs = cfg.build_coefficients()
        spec = _expression_functional(cfg, d, alpha, beta, gamma)
    bumps = {k: cfg.get("functional", f"bump_{k}") for k in ("g1", "g2", "g3")}
    if any(bumps.values()):
        spec = spec.bumped(**bumps)
    return U, coeffs, spec, V


def _expression_functional(cfg, d, alpha, beta, gamma):
    def stack(exprs):
        return lambda t, x: np.stack([np.broadcast_to(e(**expr_env(t, x)), x.shape[:1]) for e in exprs], 1)

    g1 = None
    if cfg.has("functional", "g1"):
        exprs = cfg.get("functional", "g1")
        pairs = [(i, j) for i in range(d) for j in range(i, d)]
        if len(exprs) != len(pairs):
            raise ConfigError(f"g1 needs {len(pairs)} expressions (upper triangle, row by row)",
                              cfg.lines.get(("functional", "g1")))
        g1 = {pair: (lambda e: lambda t, x: np.broadcast_to(e(**expr_env(t, x)), x.shape[:1]))(e)
              for pair, e in zip(pairs, exprs)}
    g2 = None
    if cfg.has("functional", "g2"):
        exprs = cfg.get("functional", "g2")
        if len(exprs) != d:
            raise ConfigError(f"g2 needs {d} expressions", cfg.lines.get(("functional", "g2")))
        g2 = stack(exprs)
    g3 = None
    if cfg.has("functional", "g3"):
        exprs = cfg.get("functional", "g3")
        if len(exprs) != 1:
            raise ConfigError("g3 is a single expression", cfg.lines.get(("functional", "g3")))
        e = exprs[0]
        g3 = lambda t, x, u: np.broadcast_to(e(**expr_env(t, x, u)), x.shape[:1])
    return FunctionalSpec(alpha, beta, gamma, g1, g2, g3, dim=d)


def _payoff(cfg):
    if not cfg.has("payoff", "expr"):
        raise ConfigError("this command needs [payoff] expr")
    expr = cfg.get("payoff", "expr")

    def terminal(batch):
        return np.broadcast_to(expr(**expr_env(batch.times[-1], batch.Y[:, -1])), (batch.n_paths,))

    return expr, terminal


def cmd_validate(cfg, out, threads):
    U = cfg.build_uncertainty()
    rep_u = validate_uncertainty_set(U, q=cfg.get("uncertainty", "q"))
    T = cfg.get("numerics", "T")
    coeffs = cfg.build_coefficients()
    rep_c = validate_coefficients(coeffs, U, T=T, seed=cfg.get("numerics", "seed"))
    family = cfg.build_family()
    size = family.size(U)
    fam_ok = size <= family.cap or family.allow_truncation
    report = {"uncertainty": rep_u.as_dict(), "coefficients": rep_c.as_dict(),
              "scenarios": {"mode": family.mode, "size": size, "cap": family.cap, "passed": fam_ok}}
    summary = ["uncertainty set:", rep_u.summary(), "coefficients:", rep_c.summary(),
               f"scenario family: {family.mode}, {size} scenarios (cap {family.cap})"]
    ok = rep_u.passed and rep_c.passed and fam_ok
    return report, summary, EXIT_OK if ok else EXIT_VALIDATION


def _scenarios(cfg, U, T):
    return enumerate_scenarios(cfg.build_family(), U, T)


def cmd_simulate(cfg, out, threads):
    U = cfg.build_uncertainty()
    T, dt, n, seed, y0 = _numerics(cfg)
    fam = _scenarios(cfg, U, T)
    batch = simulate_batch(fam[0], U, T, dt, n, seed, 0, cfg.build_coefficients(), y0)
    k = min(int(cfg.get("output", "write_paths")), n)
    files = []
    for p in range(k):
        files += [os.path.basename(f) for f in write_path_csv(batch, p, os.path.join(out, "paths"))]
    YT = batch.Y[:, -1]
    report = {
        "n_paths": n, "n_steps": batch.n_steps, "scenario": 0,
        "terminal_mean": YT.mean(axis=0).tolist(), "terminal_std": YT.std(axis=0, ddof=1).tolist(),
        "mean_jump_count": float(batch.jump_counts.mean()), "path_files": files,
    }
    summary = [f"simulated {n} paths x {batch.n_steps} steps under scenario 0",
               f"terminal mean {report['terminal_mean']}, std {report['terminal_std']}",
               f"mean jump count {report['mean_jump_count']:.6g}; wrote {k} path tables"]
    return report, summary, EXIT_OK


def cmd_expect(cfg, out, threads):
    U = cfg.build_uncertainty()
    T, dt, n, seed, y0 = _numerics(cfg)
    expr, payoff = _payoff(cfg)
    coeffs = cfg.build_coefficients()
    if cfg.coefficient_preset() == "pure-driver":
        coeffs = None
    fam = _scenarios(cfg, U, T)
    est = sublinear_expectation(payoff, fam, U, T, dt, n, seed=seed, coefficients=coeffs, y0=y0, workers=threads)
    with open(os.path.join(out, "scenarios.csv"), "w") as fh:
        fh.write("scenario,mean,std_error,n_paths\n")
        for i, (m, s, k) in enumerate(est.per_scenario):
            fh.write(f"{i},{m!r},{s!r},{k}\n")
    report = est.as_dict()
    report.pop("per_scenario")
    report.update(payoff=expr.text, n_scenarios=len(fam))
    summary = [f"sublinear expectation of {expr.text}: {est.value:.6g} +/- {est.std_error:.2g}",
               f"attained by scenario {est.argmax_scenario} of {len(fam)}"
               + (" (family truncated)" if est.truncated else "")]
    return report, summary, EXIT_OK


def cmd_check_pi(cfg, out, threads):
    U, coeffs, spec, V = build_problem(cfg)
    if V is None:
        raise ConfigError("check-pi needs a witness: [functional] V or a manufactured preset")
    T, dt, n, seed, y0 = _numerics(cfg)
    fam = _scenarios(cfg, U, T)
    worst, per = 0.0, []
    rows = []
    for idx, scn in enumerate(fam):
        drv = simulate_driver(scn, U, T, dt, seed=seed, n_paths=n, scenario_index=idx)
        res = path_independence_residual(spec, V, simulate_sde(coeffs, drv, y0), U)
        worst = max(worst, res.max_residual)
        per.append(res.max_residual)
        rows += [(trip, F, dV, r) for trip, F, dV, r in zip(res.seed_triples, res.F, res.dV, res.residuals)]
    with open(os.path.join(out, "residuals.csv"), "w") as fh:
        fh.write("seed,scenario,path_id,F,dV,residual\n")
        for trip, F, dV, r in rows:
            fh.write(f"{trip[0]},{trip[1]},{trip[2]},{float(F)!r},{float(dV)!r},{float(r)!r}\n")
    thr = float(cfg.get("functional", "threshold"))
    report = {"max_residual": worst, "per_scenario_max": per, "threshold": thr, "dt": dt, "n_paths": n,
              "passed": worst <= thr}
    summary = [f"path-independence residual max {worst:.4g} over {len(fam)} scenario(s) x {n} paths "
               f"at dt={dt:g} (threshold {thr:g}): {'PASS' if worst <= thr else 'FAIL'}"]
    return report, summary, EXIT_OK if worst <= thr else EXIT_THRESHOLD


def cmd_pide_solve(cfg, out, threads):
    U = cfg.build_uncertainty()
    expr, _ = _payoff(cfg)
    g = lambda k: cfg.get("grid", k)
    grid = PideGrid(g("x_min"), g("x_max"), int(g("nodes")), cfg.get("numerics", "T"), g("steps"))
    surface = solve_viscosity_pide(lambda x: expr(t=0.0, x1=x), U, grid)
    surface.write_csv(os.path.join(out, "surface.csv"))
    y0 = cfg.get("numerics", "y0")
    v = float(surface.at(surface.t[-1], y0))
    report = {"payoff": expr.text, "value_at_y0": v, "y0": y0, "T": float(surface.t[-1]), "steps": surface.steps,
              "dt": surface.dt, "dx": grid.dx, "nodes": grid.nodes}
    summary = [f"v(T, {y0:g}) = {v:.6g} on {grid.nodes} nodes with {surface.steps} steps"]
    return report, summary, EXIT_OK


def cmd_decomp_check(cfg, out, threads):
    U = cfg.build_uncertainty()
    d = cfg.dim
    T, dt, n, seed, _ = _numerics(cfg)
    get = lambda k: cfg.get("decomposition", k)
    gamma = get("gamma")
    phi = {}
    if cfg.has("decomposition", "phi"):
        pairs = [(i, j) for i in range(d) for j in range(i, d)]
        if len(get("phi")) != len(pairs):
            raise ConfigError(f"phi needs {len(pairs)} expressions", cfg.lines.get(("decomposition", "phi")))
        phi = {p: (lambda e: lambda t, x: np.broadcast_to(e(**expr_env(t, x)), x.shape[:1]))(e)
               for p, e in zip(pairs, get("phi"))}
    psi = None
    if cfg.has("decomposition", "psi"):
        exprs = get("psi")
        if len(exprs) != d:
            raise ConfigError(f"psi needs {d} expressions", cfg.lines.get(("decomposition", "psi")))
        psi = lambda t, x: np.stack([np.broadcast_to(e(**expr_env(t, x)), x.shape[:1]) for e in exprs], 1)
    k_expr = get("k")
    spec = DecompositionSpec(
        gamma=None if gamma is None else (lambda t, x: np.broadcast_to(gamma(**expr_env(t, x)), x.shape[:1])),
        phi=phi, psi=psi,
        k=None if k_expr is None else (lambda t, u: k_expr(**expr_env(t, np.zeros_like(u), u))),
    )
    rep = decomposition_check(spec, U, _scenarios(cfg, U, T), T, dt, n, seed)
    expect = get("expect")
    ok = rep.bound_holds and (expect == "any" or expect == rep.verdict)
    report = rep.as_dict()
    report.update(expected=expect, passed=ok)
    summary = [f"verdict {rep.verdict} (max |Z| = {rep.max_abs:.3g}); expected {expect}",
               f"quadratic-form floor bound holds: {rep.bound_holds}",
               f"nonzero-path fraction {rep.nonzero_fraction:.4f} +/- {rep.nonzero_std_error:.4f}"]
    return report, summary, EXIT_OK if ok else EXIT_THRESHOLD


def cmd_reduce_classical(cfg, out, threads):
    U, coeffs, spec, _ = build_problem(cfg)
    if len(U.jump_family) != 1 or not all(np.allclose(c, np.eye(U.dim), rtol=0, atol=0) for c in U.covariances):
        report = {"passed": False, "reason": "needs a single jump measure and Q = I"}
        return report, ["reduce-classical needs a single jump measure and Q = I"], EXIT_VALIDATION
    T, dt, n, seed, y0 = _numerics(cfg)
    fam = _scenarios(cfg, U, T)
    batch = simulate_batch(fam[0], U, T, dt, n, seed, 0, coeffs, y0)
    g_form = evaluate_functional(spec, batch, U)
    classical = classical_functional(spec, batch, U.jump_family[0])
    gap = np.abs(g_form - classical)
    with open(os.path.join(out, "forms.csv"), "w") as fh:
        fh.write("path_id,G_form,classical,discrepancy\n")
        for p, (a, b, c) in enumerate(zip(g_form, classical, gap)):
            fh.write(f"{p},{float(a)!r},{float(b)!r},{float(c)!r}\n")
    thr = 1e-12
    worst = float(gap.max())
    report = {"max_discrepancy": worst, "threshold": thr, "n_paths": n, "passed": worst <= thr}
    summary = [f"max pathwise discrepancy between the two forms: {worst:.3g} (threshold {thr:g})"]
    return report, summary, EXIT_OK if worst <= thr else EXIT_THRESHOLD


HANDLERS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "expect": cmd_expect,
    "check-pi": cmd_check_pi,
    "pide-solve": cmd_pide_solve,
    "decomp-check": cmd_decomp_check,
    "reduce-classical": cmd_reduce_classical,
}


def run_command(cfg: ExperimentConfig, command: str, out: str, threads: int = 1) -> int:
    """Run ``command``, write the report files into ``out`` and return the exit status."""
    os.makedirs(out, exist_ok=True)
    try:
        report, summary, status = HANDLERS[command](cfg, out, threads)
    except BlowUpError as exc:
        report = {"error": "blow-up", "message": str(exc), "time": exc.time,
                  "seed_triple": None if exc.seed_triple is None else list(exc.seed_triple)}
        summary, status = [f"numerical blow-up: {exc}"], EXIT_BLOWUP
    except FloatingPointError as exc:
        report, summary, status = {"error": "blow-up", "message": str(exc)}, [f"numerical blow-up: {exc}"], EXIT_BLOWUP
    except ConfigError:
        raise
    except (StructureError, ValueError) as exc:
        report, summary, status = {"error": "validation", "message": str(exc)}, [f"validation failure: {exc}"], \
            EXIT_VALIDATION
    report = {"command": command, "exit_status": status, "result": report}
    _write_json(os.path.join(out, "report.json"), report)
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write("\n".join(summary) + "\n")
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.set("numerics", "seed", args.seed)
        if args.paths is not None:
            cfg.set("numerics", "n_paths", args.paths)
        if args.dt is not None:
            cfg.set("numerics", "dt", args.dt)
        threads = args.threads or int(os.environ.get(THREADS_ENV, cfg.get("numerics", "threads")))
        out = args.out or cfg.get("output", "dir")
        os.makedirs(out, exist_ok=True)
        _write_json(os.path.join(out, "metadata.json"), {
            "command": args.command, "config": os.path.abspath(args.config), "argv": list(sys.argv[1:]),
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        })
        status = run_command(cfg, args.command, out, threads)
    except (ConfigError, OSError) as exc:
        print(f"glevy: {exc}", file=sys.stderr)
        return EXIT_USAGE
    with open(os.path.join(out, "summary.txt")) as fh:
        print(fh.read(), end="")
    return status


if __name__ == "__main__":
    sys.exit(main())
