"""Command-line front end: ``sfde simulate|converge|bounds|gronwall-check|validate``.

Exit codes: 0 success, 2 configuration error, 3 non-finite iterates or too
many aborted trajectories, 4 a failed check (violated bound or assumption).
Every command that is given ``--out`` writes its data files plus one
``manifest.json``; files are written to a temporary name and renamed.
"""

from __future__ import annotations

import argparse
import sys
import time
from importlib import metadata

import numpy as np

from . import bounds, montecarlo
from .config import RunConfig, load_config
from .errors import ConfigError, NonFinite, SFDEError, TooManyAborts
from .io import atomic_write_text, dumps_json
from .problem import random_paths, validate_growth, validate_monotonicity
from .solver import euler_step_run, generate_brownian, simulate_coupled

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FAIL = 0, 2, 3, 4


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _write_manifest(out, cfg: RunConfig, seed, problem, files, started):
    manifest = {
        "version": _version(),
        "config": cfg.to_dict(),
        "config_ini": cfg.to_ini(),
        "seed": seed,
        "problem_hash": problem.problem_hash if problem is not None else None,
        "files": sorted(files),
        "duration_s": time.perf_counter() - started,
    }
    atomic_write_text(out, "manifest.json", dumps_json(manifest))


def _overrides(args):
    sets = list(args.set or [])
    # Flags are sugar for --set on the matching section.
    for attr, key in getattr(args, "_flag_keys", ()):
        value = getattr(args, attr, None)
        if value is not None:
            sets.append(f"{key}={value}")
    return sets


def _config(args) -> RunConfig:
    return load_config(args.config, _overrides(args))


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    cfg = _config(args)
    sim = cfg["simulate"]
    problem = cfg.problem()
    n = sim["n"]
    if n < 1:
        raise ConfigError(f"simulate.n must be >= 1, got {n}")
    coarse = [int(s) for s in sim["coarse_ns"].split(",") if s.strip()]
    if coarse:
        run = simulate_coupled(problem, n, coarse, sim["seed"], sim["stream"])
        files = run.export(args.out, problem)
    else:
        skel = generate_brownian(problem.dim_noise, n, problem.horizon, sim["seed"], sim["stream"])
        traj = euler_step_run(problem, skel.grid, skel.increments)
        atomic_write_text(args.out, "trajectory.csv", traj.to_csv())
        files = ["trajectory.csv"]
    _write_manifest(args.out, cfg, sim["seed"], problem, files, started)
    print(f"wrote {', '.join(files)} to {args.out}")
    return EXIT_OK


_PLOT_SCRIPT = '''"""Plot a convergence study: q-norm error against step count on log-log axes."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "study.csv"
with open(path) as fh:
    rows = list(csv.DictReader(fh))
n = [float(r["n"]) for r in rows]
err = [float(r["q_norm"]) for r in rows]
lo = [float(r["ci_lo"]) for r in rows]
hi = [float(r["ci_hi"]) for r in rows]
fig, ax = plt.subplots()
ax.loglog(n, err, "o-", base=2, label="q-norm error")
ax.fill_between(n, lo, hi, alpha=0.3, label="bootstrap CI")
ref = [err[0] * (n[0] / x) ** 0.5 for x in n]
ax.loglog(n, ref, "--", base=2, label="slope -1/2")
ax.set_xlabel("steps n")
ax.set_ylabel("error")
ax.legend()
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
'''


def cmd_converge(args) -> int:
    started = time.perf_counter()
    cfg = _config(args)
    st = cfg["study"]
    problem = cfg.problem()
    study_cfg = montecarlo.ErrorStudyConfig(
        problem=problem, coarse_ns=tuple(st["coarse_ns"]), n_fine=st["n_fine"],
        num_paths=st["num_paths"], q=st["q"], seed=st["seed"],
        bootstrap_resamples=st["bootstrap_resamples"], reference=st["reference"],
        chunk_size=st["chunk_size"])
    result = montecarlo.strong_error_study(study_cfg, threads=args.threads)
    atomic_write_text(args.out, "study.json", result.to_json())
    atomic_write_text(args.out, "study.csv", result.to_csv())
    files = ["study.json", "study.csv"]
    if args.emit_plot_script:
        atomic_write_text(args.out, "plot_study.py", _PLOT_SCRIPT)
        files.append("plot_study.py")
    _write_manifest(args.out, cfg, st["seed"], problem, files, started)

    print(f"{'n':>6} {'q_norm':>14} {'ci_lo':>14} {'ci_hi':>14} {'aborted':>7} {'log_bound':>12}")
    for r in result.rows:
        lb = "n/a" if r.log_bound is None else f"{r.log_bound:.6g}"
        print(f"{r.n:>6} {r.q_norm:>14.6e} {r.ci_lo:>14.6e} {r.ci_hi:>14.6e} {r.aborted:>7} {lb:>12}")
    if result.fit is None:
        print("rate: not fitted (degenerate errors)" if result.degenerate else "rate: not fitted")
    else:
        f = result.fit
        print(f"rate {f.rate:.6f} +- {f.slope_stderr:.6f}  R^2 {f.r_squared:.6f}")
    return EXIT_OK


def _bound_entry(name, params, fn):
    try:
        log_value = fn()
    except SFDEError as exc:
        return {"bound_name": name, "params": params, "log_value": None,
                "value_if_representable": None, "error": str(exc)}
    return {"bound_name": name, "params": params, "log_value": log_value,
            "value_if_representable": bounds.exp_if_representable(log_value)}


def evaluate_bounds(cfg: RunConfig) -> list:
    b = cfg["bounds"]
    problem = cfg.problem()
    T = problem.horizon
    n = b["n"]
    if n < 1:
        raise ConfigError(f"bounds.n must be >= 1, got {n}")
    tp = bounds.BoundParams.for_problem(problem, b["q"], mesh=T / n)
    tp_dict = tp.to_dict()
    out = [
        _bound_entry("ms_gronwall", {"p": b["ms_p"], "alpha_integral": b["alpha_integral"],
                                     "log_expectation": b["log_expectation"]},
                     lambda: bounds.ms_gronwall_log_bound(b["ms_p"], b["alpha_integral"],
                                                          b["log_expectation"])),
    ]
    try:
        g = montecarlo.gronwall_g2_inputs(problem, b["q"])
        out.append(_bound_entry("gronwall", dict(g.__dict__), lambda: bounds.gronwall_log_bound(g)))
    except SFDEError as exc:
        out.append({"bound_name": "gronwall", "params": {"q": b["q"]}, "log_value": None,
                    "value_if_representable": None, "error": str(exc)})
    out.append(_bound_entry("moment", tp_dict, lambda: bounds.moment_log_bound(tp)))
    out.append(_bound_entry("increment", {**tp_dict, "du": b["du"]},
                            lambda: bounds.increment_log_bound(tp, b["du"])))
    out.append(_bound_entry("strong_error", tp_dict, lambda: bounds.strong_error_log_bound(tp)))
    return out


def cmd_bounds(args) -> int:
    started = time.perf_counter()
    cfg = _config(args)
    text = dumps_json(evaluate_bounds(cfg))
    sys.stdout.write(text)
    if args.out:
        atomic_write_text(args.out, "bounds.json", text)
        _write_manifest(args.out, cfg, None, cfg.problem(), ["bounds.json"], started)
    return EXIT_OK


def cmd_gronwall_check(args) -> int:
    started = time.perf_counter()
    cfg = _config(args)
    g = cfg["gronwall"]
    scenario = g["scenario"].upper()
    if scenario == "G1":
        report = montecarlo.gronwall_empirical_check(
            "G1", alpha=g["alpha"], H=g["H"], p=g["p"], T=g["T"])
    else:
        report = montecarlo.gronwall_empirical_check(
            scenario, M=g["num_paths"], seed=g["seed"], problem=cfg.problem(), q=g["q"],
            n=g["n"], threads=args.threads)
    text = dumps_json(report.to_dict())
    sys.stdout.write(text)
    if args.out:
        atomic_write_text(args.out, "gronwall.json", text)
        problem = cfg.problem() if scenario != "G1" else None
        _write_manifest(args.out, cfg, g["seed"], problem, ["gronwall.json"], started)
    return EXIT_OK if report.holds else EXIT_FAIL


def cmd_validate(args) -> int:
    started = time.perf_counter()
    cfg = _config(args)
    v = cfg["validate"]
    problem = cfg.problem()
    if v["num_samples"] < 1 or v["num_times"] < 1:
        raise ConfigError("validate.num_samples and validate.num_times must be >= 1")
    times = np.linspace(0.0, problem.horizon, v["num_times"])
    paths = random_paths(problem, 2 * v["num_samples"], v["seed"])
    growth = validate_growth(problem, paths[: v["num_samples"]], times)
    pairs = list(zip(paths[::2], paths[1::2]))
    mono = validate_monotonicity(problem, pairs, times)
    result = {"problem": problem.describe(), "problem_hash": problem.problem_hash,
              "growth": growth.to_dict(), "monotonicity": mono.to_dict(),
              "ok": growth.ok and mono.ok}
    text = dumps_json(result)
    sys.stdout.write(text)
    if args.out:
        atomic_write_text(args.out, "validate.json", text)
        _write_manifest(args.out, cfg, v["seed"], problem, ["validate.json"], started)
    return EXIT_OK if result["ok"] else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one configuration value (repeatable)")
        p.add_argument("--problem", help="builtin problem name")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads (output is unaffected)")

    p = sub.add_parser("simulate", help="run one trajectory (or a coupled family) and write CSV")
    common(p, out_required=True)
    p.add_argument("--n", help="number of steps")
    p.add_argument("--seed")
    p.add_argument("--stream")
    p.add_argument("--coarse-ns", help="comma-separated coarse step counts for a coupled run")
    p.set_defaults(func=cmd_simulate, _flag_keys=[
        ("problem", "problem.name"), ("n", "simulate.n"), ("seed", "simulate.seed"),
        ("stream", "simulate.stream"), ("coarse_ns", "simulate.coarse_ns")])

    p = sub.add_parser("converge", help="strong-error study with rate fit")
    common(p, out_required=True)
    p.add_argument("--num-paths")
    p.add_argument("--seed")
    p.add_argument("--emit-plot-script", action="store_true",
                   help="also write plot_study.py that renders study.csv")
    p.set_defaults(func=cmd_converge, _flag_keys=[
        ("problem", "problem.name"), ("num_paths", "study.num_paths"), ("seed", "study.seed")])

    p = sub.add_parser("bounds", help="print the bound evaluators' log values as JSON")
    common(p)
    p.add_argument("--q")
    p.add_argument("--n", help="mesh is T/n")
    p.set_defaults(func=cmd_bounds, _flag_keys=[
        ("problem", "problem.name"), ("q", "bounds.q"), ("n", "bounds.n")])

    p = sub.add_parser("gronwall-check", help="compare a Gronwall bound with its left-hand side")
    common(p)
    p.add_argument("--scenario", choices=["G1", "G2", "g1", "g2"])
    p.add_argument("--seed")
    p.set_defaults(func=cmd_gronwall_check, _flag_keys=[
        ("problem", "problem.name"), ("scenario", "gronwall.scenario"), ("seed", "gronwall.seed")])

    p = sub.add_parser("validate", help="sampled check of the growth and monotonicity conditions")
    common(p)
    p.add_argument("--num-samples")
    p.add_argument("--seed")
    p.set_defaults(func=cmd_validate, _flag_keys=[
        ("problem", "problem.name"), ("num_samples", "validate.num_samples"),
        ("seed", "validate.seed")])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (NonFinite, TooManyAborts) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SFDEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
