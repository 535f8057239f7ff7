"""Command-line front end: experiment orchestration and result persistence.

Exit codes: 0 success (all asserted properties pass), 1 property violation,
2 config validation failure, 3 solver nonconvergence.  Every output file
embeds the generating config; rerunning a command with the same config and
seeds reproduces the payload bit for bit.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, canonical_json, make_record, preset, preset_names
from .environments import sample_env
from .effective import (check_effective_properties, density_curve,
                        density_estimate, effective_F, flatness_check)
from .lattice import interior_window
from .obstacle import NonconvergenceError, contact_measure, solve_obstacle
from .operators import check_ellipticity, subtract_constant
from .validate import (convergence_study, periodic_corrector,
                       tabulate_effective)

COMMANDS = ("solve-obstacle", "density-curve", "effective", "flatness",
            "validate", "check-properties", "check-ellipticity", "presets")


def map_ordered(fn, items, threads):
    """Bounded worker pool with deterministic, input-ordered collection."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _write(out_dir, name, text):
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    return str(path)


def emit_plot_data(record, out_dir):
    """Plain-text column files for standard plotting tools."""
    written = []
    outputs = record["outputs"]
    header = "# config: " + canonical_json(record["config"]) + "\n"
    if "curve" in outputs:
        lines = [header, "# alpha  mean_density  std_error\n"]
        for row in outputs["curve"]:
            lines.append(f"{row['alpha']:.10g} {row['mean']:.10g} {row['std_error']:.10g}\n")
        written.append(_write(out_dir, "density_curve.dat", "".join(lines)))
    if "flatness" in outputs:
        lines = [header, "# r  sup_w_scaled  sup_grad_scaled\n"]
        fl = outputs["flatness"]
        for r, a, b in zip(fl["r_list"], fl["sup_w_scaled"], fl["sup_grad_scaled"]):
            lines.append(f"{r:.10g} {a:.10g} {b:.10g}\n")
        written.append(_write(out_dir, "flatness.dat", "".join(lines)))
    if "convergence" in outputs:
        lines = [header, "# eps  sup_error\n"]
        cv = outputs["convergence"]
        for e, err in zip(cv["eps_list"], cv["sup_errors"]):
            lines.append(f"{e:.10g} {err:.10g}\n")
        written.append(_write(out_dir, "convergence.dat", "".join(lines)))
    return written


def _field_csv(sol, out_dir, config):
    dom = sol.w.domain
    grids = dom.index_grids()
    nodes = np.argwhere(dom.interior)
    lines = ["# config: " + canonical_json(config) + "\n",
             ",".join([f"i{k}" for k in range(dom.dim)]
                      + [f"y{k}" for k in range(dom.dim)]
                      + ["w", "contact"]) + "\n"]
    for nd in nodes:
        t = tuple(nd)
        idx = [int(g[t]) for g in grids]
        pos = [dom.h * v for v in idx]
        lines.append(",".join([str(v) for v in idx]
                              + [f"{x:.10g}" for x in pos]
                              + [f"{sol.w.values[t]:.12g}",
                                 str(int(sol.contact[t]))]) + "\n")
    return _write(out_dir, "obstacle_field.csv", "".join(lines))


def _cmd_solve_obstacle(cfg, out_dir, threads):
    from .operators import shift_operator
    F = cfgmod.build_operator(cfg)
    domain = cfgmod.build_domain(cfg)
    M, p = cfgmod.estimate_args(cfg)
    est = cfg["estimate"]
    alpha = float(est.get("alpha", 0.0))
    seed = est.get("base_seed")
    if seed is None:
        raise ConfigError("estimate.base_seed is required")
    env = sample_env(F.env_model.with_spacing(domain.h), int(seed))
    G = subtract_constant(shift_operator(F, M, p), alpha)
    solver = cfg.get("solver", {})
    sol = solve_obstacle(G, domain, env, tol_res=solver.get("tol_res"),
                         tol_contact=solver.get("tol_contact"),
                         max_iter=int(solver.get("max_iter", 2_000_000)),
                         init=solver.get("init", "auto"))
    win = interior_window(domain, float(est.get("window_t", 0.5)))
    cm = contact_measure(sol, win)
    outputs = {"alpha": alpha, "k": sol.k, "residual": sol.residual,
               "iterations": sol.iterations, "converged": sol.converged,
               "contact_count": cm.count, "contact_measure": cm.measure,
               "window_fraction": cm.fraction,
               "sup_w": float(sol.w.values[domain.interior].max())}
    files = {"field_csv": _field_csv(sol, out_dir, cfg)}
    return outputs, files, True


def _cmd_density_curve(cfg, out_dir, threads):
    F = cfgmod.build_operator(cfg)
    M, p = cfgmod.estimate_args(cfg)
    params = cfgmod.build_effective_params(cfg)
    est = cfg["estimate"]
    grid = est.get("alpha_grid")
    if not grid:
        raise ConfigError("estimate.alpha_grid is required for density-curve")
    alphas = sorted(float(a) for a in grid)

    def one(alpha):
        return density_estimate(F, M, p, alpha, params.r, params.window_t,
                                params.n_samples, params.base_seed,
                                h=params.h, shape=params.shape,
                                tol_res=params.tol_res,
                                tol_contact=params.tol_contact,
                                max_iter=params.max_iter)

    ests = map_ordered(one, alphas, threads)
    violations = []
    for e1, e2 in zip(ests, ests[1:]):
        slack = 2.0 * (e1.std_error + e2.std_error)
        if e2.mean_fraction > e1.mean_fraction + slack:
            violations.append([e1.alpha, e2.alpha,
                               e2.mean_fraction - e1.mean_fraction])
    outputs = {
        "curve": [{"alpha": e.alpha, "mean": e.mean_fraction,
                   "std_error": e.std_error, "per_seed": list(e.per_seed),
                   "censored": list(e.censored)} for e in ests],
        "violations": violations, "monotone_ok": not violations}
    lines = ["# config: " + canonical_json(cfg) + "\n", "alpha,mean,stderr\n"]
    for e in ests:
        lines.append(f"{e.alpha:.10g},{e.mean_fraction:.10g},{e.std_error:.10g}\n")
    files = {"curve_csv": _write(out_dir, "density_curve.csv", "".join(lines))}
    return outputs, files, not violations


def _cmd_effective(cfg, out_dir, threads):
    F = cfgmod.build_operator(cfg)
    M, p = cfgmod.estimate_args(cfg)
    params = cfgmod.build_effective_params(cfg)
    sample = effective_F(F, M, p, params)
    outputs = {"M": np.asarray(M).tolist(), "p": np.asarray(p).tolist(),
               "estimate": sample.estimate, "alpha_lo": sample.alpha_lo,
               "alpha_hi": sample.alpha_hi, "alpha_tol": sample.alpha_tol,
               "uncertainty": sample.uncertainty,
               "diagnostics": _clean(sample.diagnostics)}
    files = {"effective_json": _write(out_dir, "effective.json",
                                      json.dumps(outputs, indent=2))}
    return outputs, files, True


def _cmd_flatness(cfg, out_dir, threads):
    F = cfgmod.build_operator(cfg)
    M, p = cfgmod.estimate_args(cfg)
    fl = cfg.get("flatness")
    if not fl:
        raise ConfigError("flatness block is required")
    params = cfgmod.build_effective_params(cfg)
    alpha_below = fl.get("alpha_below")
    if alpha_below is None:
        sample = effective_F(F, M, p, params)
        alpha_below = sample.estimate - 3.0 * sample.alpha_tol
    delta = fl.get("delta")
    if delta is None:
        delta = F.constants.lam / (4.0 * F.constants.Lam)
    rep = flatness_check(F, M, p, float(alpha_below),
                         [float(r) for r in fl["r_list"]], float(delta),
                         h=params.h, seed=params.base_seed,
                         shape=params.shape, max_iter=params.max_iter)
    outputs = {"flatness": {
        "r_list": list(rep.r_list), "sup_w_scaled": list(rep.sup_w_scaled),
        "sup_grad_scaled": list(rep.sup_grad_scaled),
        "per_step_ok": rep.per_step_ok, "net_decrease_ok": rep.net_decrease_ok,
        "gradient_bound_ok": rep.gradient_bound_ok,
        "alpha_below": float(alpha_below), "delta": float(delta)}}
    return outputs, {}, rep.passed


def _cmd_validate(cfg, out_dir, threads):
    from .lattice import make_domain
    F = cfgmod.build_operator(cfg)
    va = cfg.get("validate")
    if not va:
        raise ConfigError("validate block is required")
    vdom_cfg = va.get("domain", cfg["domain"])
    vdom = make_domain(int(vdom_cfg["dim"]), vdom_cfg.get("shape", "ball"),
                       float(vdom_cfg["r"]), float(vdom_cfg["h"]))
    forcing = float(va.get("forcing", 0.0))
    Fs = subtract_constant(F, forcing)
    seed = va.get("seed", cfg.get("estimate", {}).get("base_seed"))
    if seed is None:
        raise ConfigError("validate.seed is required")
    oracle_rows = []
    if va.get("effective") == "tabulated":
        params = cfgmod.build_effective_params(cfg)
        probes = [(np.asarray(Mq, float), np.asarray(pq, float))
                  for Mq, pq in va["probes"]]
        tab = tabulate_effective(F, probes, params)
        effective = tab
        if F.env_model.model == "periodic":
            for (Mq, pq), rec in zip(probes, tab.probes):
                orc = periodic_corrector(F.env_model, Mq)
                oracle_rows.append({"M": Mq.tolist(), "estimate": rec[2],
                                    "oracle": orc.value,
                                    "harmonic_mean": orc.harmonic_mean})
        eff_desc = {"kind": "tabulated",
                    "Abar": tab.Abar.tolist(), "bbar": tab.bbar.tolist(),
                    "kbar": tab.kbar, "fit_residual": tab.fit_residual}
        effective_solver_input = subtract_constant(
            tab.as_operator(vdom.h), forcing)
    else:
        orc = va.get("oracle")
        if orc is None:
            raise ConfigError("validate.oracle is required for the oracle path")
        oracle_op = cfgmod.constant_linear_operator(
            orc["A"], orc.get("b"), orc.get("c", 0.0), F.constants,
            spacing=vdom.h)
        eff_desc = {"kind": "oracle", "A": orc["A"], "b": orc.get("b"),
                    "c": orc.get("c", 0.0)}
        effective_solver_input = subtract_constant(oracle_op, forcing)
    study = convergence_study(Fs, [float(e) for e in va["eps_list"]], vdom,
                              va.get("g", {"const": 0.0}), int(seed),
                              effective_solver_input)
    threshold = va.get("threshold")
    ok = study.trend_ok
    if va.get("require_strict", False):
        ok = ok and study.strictly_decreasing
    if threshold is not None:
        ok = ok and study.final_relative < float(threshold)
    outputs = {"convergence": {
        "eps_list": list(study.eps_list), "sup_errors": list(study.sup_errors),
        "strictly_decreasing": study.strictly_decreasing,
        "trend_ok": study.trend_ok, "final_relative": study.final_relative,
        "effective_sup": study.effective_sup, "effective": eff_desc,
        "runtimes": list(study.runtimes), "threshold": threshold,
        "oracle_crosscheck": oracle_rows}}
    lines = ["# config: " + canonical_json(cfg) + "\n", "eps,sup_error\n"]
    for e, er in zip(study.eps_list, study.sup_errors):
        lines.append(f"{e:.10g},{er:.10g}\n")
    files = {"error_table_csv": _write(out_dir, "convergence.csv", "".join(lines))}
    files["convergence_json"] = _write(out_dir, "convergence.json",
                                       json.dumps(outputs, indent=2))
    return outputs, files, ok


def _cmd_check_properties(cfg, out_dir, threads):
    F = cfgmod.build_operator(cfg)
    pr = cfg.get("properties")
    if not pr or not pr.get("pairs"):
        raise ConfigError("properties.pairs is required")
    params = cfgmod.build_effective_params(cfg)
    pairs = []
    for (Mq, pq), (Nq, qq) in pr["pairs"]:
        pairs.append(((np.asarray(Mq, float), np.asarray(pq, float)),
                      (np.asarray(Nq, float), np.asarray(qq, float))))
    rep = check_effective_properties(
        F, pairs, params, homogeneity_ts=tuple(pr.get("homogeneity_ts", ())))
    outputs = {"checks": [{"name": c.name, "passed": c.passed,
                           "margin": c.margin, "detail": _clean(c.detail)}
                          for c in rep.checks],
               "passed": rep.passed}
    files = {"properties_json": _write(out_dir, "properties.json",
                                       json.dumps(outputs, indent=2))}
    return outputs, files, rep.passed


def _cmd_check_ellipticity(cfg, out_dir, threads):
    F = cfgmod.build_operator(cfg)
    est = cfg.get("estimate", {})
    seed = est.get("base_seed")
    if seed is None:
        raise ConfigError("estimate.base_seed is required")
    n = int(est.get("n_samples", 200))
    rep = check_ellipticity(F, n, int(seed))
    outputs = {"passed": rep.passed, "n_samples": rep.n_samples,
               "worst_violation": rep.worst_violation,
               "tolerance": rep.tolerance}
    files = {"ellipticity_json": _write(out_dir, "ellipticity.json",
                                        json.dumps(outputs, indent=2))}
    return outputs, files, rep.passed


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


_DISPATCH = {
    "solve-obstacle": _cmd_solve_obstacle,
    "density-curve": _cmd_density_curve,
    "effective": _cmd_effective,
    "flatness": _cmd_flatness,
    "validate": _cmd_validate,
    "check-properties": _cmd_check_properties,
    "check-ellipticity": _cmd_check_ellipticity,
}


def run(command, cfg, out_dir, threads=1):
    """Execute one command; returns (exit_code, record)."""
    out_dir = Path(out_dir)
    t0 = time.time()
    try:
        outputs, files, passed = _DISPATCH[command](cfg, out_dir, threads)
    except ConfigError as e:
        record = {"error": {"kind": "config", "message": str(e)}}
        _write(out_dir, "error.json", json.dumps(record, indent=2))
        return 2, record
    except NonconvergenceError as e:
        record = {"error": {"kind": "nonconvergence", "message": str(e),
                            "residuals": e.residuals, "seeds": e.seeds}}
        _write(out_dir, "error.json", json.dumps(record, indent=2))
        return 3, record
    outputs = _clean(outputs)
    record = make_record(command, cfg, outputs, time.time() - t0)
    record["files"] = files
    _write(out_dir, "result.json", json.dumps(record, indent=2,
                                              default=cfgmod._jsonable))
    emit_plot_data(record, out_dir)
    return (0 if passed else 1), record


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="homoglab",
        description="Numerical laboratory for effective operators of "
                    "fully nonlinear elliptic equations in random media.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=str, help="path to a JSON config")
    parser.add_argument("--preset", type=str,
                        help=f"built-in scenario: {', '.join(preset_names())}")
    parser.add_argument("--out", type=str, default="homoglab_out",
                        help="output directory (default: homoglab_out)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override estimate.base_seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="bounded worker pool size for independent solves")
    args = parser.parse_args(argv)

    if args.command == "presets":
        for name in preset_names():
            print(name)
        return 0

    try:
        if args.config and args.preset:
            raise ConfigError("pass either --config or --preset, not both")
        if args.config:
            cfg = json.loads(Path(args.config).read_text())
        elif args.preset:
            cfg = preset(args.preset)
        else:
            raise ConfigError("one of --config or --preset is required")
        if args.seed is not None:
            cfg.setdefault("estimate", {})["base_seed"] = args.seed
    except (ConfigError, OSError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    code, record = run(args.command, cfg, args.out, threads=args.threads)
    if "error" in record:
        print(json.dumps(record["error"]), file=sys.stderr)
    else:
        print(json.dumps({"command": args.command, "exit": code,
                          "content_hash": record["content_hash"]}))
    return code


if __name__ == "__main__":
    sys.exit(main())
