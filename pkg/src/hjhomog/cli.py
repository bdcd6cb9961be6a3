"""Config-driven experiment runner.

Subcommands:

* ``hjhomog run --config cfg.json --out DIR [--seed N] [--jobs N] [--strict]``
* ``hjhomog diff DIR_A DIR_B [--strict]``

A run writes machine-readable artifacts (curves.csv, sweep.csv,
levelsets.csv, tree.json, convergence.csv, report.json, as applicable to
the task) plus manifest.json, which embeds the fully resolved
configuration; re-running from the manifest reproduces every CSV
bit-identically.  Exit codes: 0 success, 1 assertion failure (reports are
still written), 2 configuration error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import warnings

import numpy as np

from . import __version__, cell_solver as cs, gluing as gl, homog_pde as hp
from . import large_osc as lo
from .curve import EffectiveCurve
from .env import EnvironmentSpec, sample, split_seed
from .errors import ConfigError, HJHomogError, NotApplicable
from .structure import detect_branches, normalize

CONFIG_SCHEMA = "run/1"
MANIFEST_SCHEMA = "manifest/1"

DEFAULT_TOLERANCES = {
    "dual_route": 0.1,
    "level_set_convexity": 1e-7,
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _fmt(x):
    return "%.17g" % float(x)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, (int, float, np.floating))
                              and not isinstance(v, bool) else str(v)
                              for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_grid(spec, default):
    if spec is None:
        return np.asarray(default, dtype=np.float64)
    if isinstance(spec, dict):
        return np.linspace(spec["start"], spec["stop"], int(spec["n"]))
    return np.asarray(spec, dtype=np.float64)


def resolve_config(raw, seed_override=None):
    """Validate and fill defaults; every tolerance is echoed explicitly."""
    if raw.get("schema") == MANIFEST_SCHEMA:
        raw = raw["config"]
    if raw.get("schema") != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema {raw.get('schema')!r}")
    task = raw.get("task")
    if task not in ("effective", "glue", "largeosc", "converge", "validate"):
        raise ConfigError(f"unknown task {task!r}")
    if "env" not in raw:
        raise ConfigError("config needs an 'env' section")
    env_spec = EnvironmentSpec.from_dict(raw["env"])
    seeds_cfg = raw.get("seeds", [0])
    if isinstance(seeds_cfg, dict):
        master = seeds_cfg.get("master", 0)
        if seed_override is not None:
            master = seed_override
        count = int(seeds_cfg.get("count", 1))
        seeds = [split_seed(master, k) for k in range(count)]
    else:
        seeds = [int(s) for s in seeds_cfg]
        if seed_override is not None:
            seeds = [split_seed(seed_override, k) for k in range(len(seeds))]
    solver = dict({"dx": None, "R": 2.0, "periodize_cells": None,
                   "estimator": "auto"}, **raw.get("solver", {}))
    tolerances = dict(DEFAULT_TOLERANCES, **raw.get("tolerances", {}))
    resolved = {
        "schema": CONFIG_SCHEMA,
        "task": task,
        "env": env_spec.to_dict(),
        "p_grid": [float(p) for p in _parse_grid(
            raw.get("p_grid"), np.linspace(-2, 2, 9))],
        "mu_points": int(raw.get("mu_points", 15)),
        "lambda_schedule": [float(x) for x in raw.get(
            "lambda_schedule", cs.LAMBDA_SCHEDULE)],
        "epsilons": [float(e) for e in raw.get("epsilons", (0.4, 0.2, 0.1))],
        "seeds": seeds,
        "solver": solver,
        "window_cells": int(raw.get("window_cells", 100)),
        "ivp": dict({"T": 1.0, "X_core": 1.0, "datum_height": 5.0},
                    **raw.get("ivp", {})),
        "tolerances": tolerances,
    }
    return resolved


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------

def _estimate_sweep(cfg, jobs=1):
    spec = EnvironmentSpec.from_dict(cfg["env"])
    sol = cfg["solver"]

    def one(p):
        return cs.estimate_hbar(
            spec if spec.kind != "periodic" else sample(spec, cfg["seeds"][0]),
            float(p), lam_schedule=tuple(cfg["lambda_schedule"]),
            seeds=tuple(cfg["seeds"]), dx=sol["dx"], R=sol["R"],
            estimator=sol["estimator"],
            periodize_cells=sol["periodize_cells"])

    ps = cfg["p_grid"]
    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as ex:
            ests = list(ex.map(one, ps))
    else:
        ests = [one(p) for p in ps]
    return ests


def task_effective(cfg, out, jobs=1):
    ests = _estimate_sweep(cfg, jobs)
    write_csv(os.path.join(out, "curves.csv"),
              ["p", "Hbar", "error_budget", "route"],
              [(e.p, e.value, e.dispersion, "solver") for e in ests])
    rows = [r for e in ests for r in e.rows]
    write_csv(os.path.join(out, "sweep.csv"),
              ["p", "lambda", "seed", "minus_lambda_v0", "residual",
               "grad_min", "grad_max"], rows)
    return {"status": "ok", "n_points": len(ests)}


def _glue_curve(cfg):
    spec = EnvironmentSpec.from_dict(cfg["env"])
    field = sample(spec, cfg["seeds"][0])
    tree = gl.build_reduction_tree(field)
    opts = gl.LeafOptions(lam_schedule=tuple(cfg["lambda_schedule"]),
                          dx=cfg["solver"]["dx"], seeds=tuple(cfg["seeds"]),
                          R=cfg["solver"]["R"], mu_points=cfg["mu_points"],
                          window_cells=cfg["window_cells"])
    curve = gl.evaluate_tree(tree, np.asarray(cfg["p_grid"]), opts)
    return tree, curve


def task_glue(cfg, out, jobs=1):
    tree, curve = _glue_curve(cfg)
    with open(os.path.join(out, "tree.json"), "w") as fh:
        json.dump(tree.to_dict(), fh, indent=1, sort_keys=True,
                  default=lambda o: repr(type(o).__name__))
    write_csv(os.path.join(out, "curves.csv"),
              ["p", "Hbar", "error_budget", "route"],
              [(p, v, b, "glue") for p, v, b, _ in curve.rows()])
    return {"status": "ok", "depth": tree.depth(),
            "leaves": [l.leaf_kind for l in tree.leaves()]}


def _largeosc_curve(cfg):
    spec = EnvironmentSpec.from_dict(cfg["env"])
    field = sample(spec, cfg["seeds"][0])
    s, _ = detect_branches(field)
    fn, sn, p_shift, mu_shift = normalize(field, s)
    ps = np.asarray(cfg["p_grid"])
    curve_n = lo.assemble_effective_curve(
        fn, sn, mu_points=cfg["mu_points"],
        window_cells=cfg["window_cells"],
        p_lo=float(ps.min()) - p_shift - 0.25,
        p_hi=float(ps.max()) - p_shift + 0.25)
    return curve_n.transformed(p_shift, mu_shift)


def task_largeosc(cfg, out, jobs=1):
    curve = _largeosc_curve(cfg)
    write_csv(os.path.join(out, "levelsets.csv"),
              ["mu", "p_lo", "p_hi", "ci"],
              [(r["mu"], r["p_lo"], r["p_hi"], r["ci"])
               for r in curve.level_intervals])
    write_csv(os.path.join(out, "curves.csv"),
              ["p", "Hbar", "error_budget", "route"],
              [(p, v, b, src) for p, v, b, src in curve.rows()])
    return {"status": "ok", "flat": list(curve.flat) if curve.flat else None,
            "level_set_convex": bool(curve.is_level_set_convex())}


def _reference_curve(cfg):
    spec = EnvironmentSpec.from_dict(cfg["env"])
    field = sample(spec, cfg["seeds"][0])
    try:
        return gl.convex_oracle(field if spec.kind == "periodic" else spec,
                                seeds=tuple(cfg["seeds"]),
                                p_lo=-3.5, p_hi=3.5), "oracle"
    except NotApplicable:
        pass
    try:
        return _largeosc_curve(cfg), "largeosc"
    except HJHomogError:
        ests = _estimate_sweep(cfg)
        return EffectiveCurve([e.p for e in ests], [e.value for e in ests],
                              [e.dispersion for e in ests]), "solver"


def task_converge(cfg, out, jobs=1):
    spec = EnvironmentSpec.from_dict(cfg["env"])
    field = sample(spec, cfg["seeds"][0])
    curve, route = _reference_curve(cfg)
    theta = hp.default_theta(field)
    ivp = cfg["ivp"]
    setup = hp.IVPSetup(g=hp.wedge_datum(ivp["datum_height"]), T=ivp["T"],
                        X_core=ivp["X_core"], theta=theta)
    res = hp.convergence_experiment(
        spec if spec.kind != "periodic" else field, curve, setup,
        eps_list=tuple(cfg["epsilons"]), seeds=tuple(cfg["seeds"]),
        hbar_dx=1 / 128)
    write_csv(os.path.join(out, "convergence.csv"),
              ["epsilon", "seed", "err_sup_core", "dx", "dt"], res.rows)
    return {"status": "ok", "curve_route": route,
            "monotone": {str(k): bool(v) for k, v in res.monotone.items()}}


def task_validate(cfg, out, jobs=1):
    tol = cfg["tolerances"]
    ests = _estimate_sweep(cfg, jobs)
    solver_curve = EffectiveCurve([e.p for e in ests],
                                  [e.value for e in ests],
                                  [e.dispersion for e in ests])
    curve, route = _reference_curve(cfg)
    ps = np.asarray(cfg["p_grid"])
    diffs = np.abs(solver_curve.evaluate(ps) - curve.evaluate(ps))
    budgets = solver_curve.budget_at(ps) + curve.budget_at(ps) \
        + tol["dual_route"]
    checks = {
        "dual_route": {
            "passed": bool(np.all(diffs <= budgets)),
            "max_diff": float(diffs.max()),
            "allowed": float(budgets.min()),
            "route": route,
        },
        "level_set_convexity": {
            "passed": bool(curve.is_level_set_convex(
                tol=tol["level_set_convexity"])),
        },
    }
    write_csv(os.path.join(out, "curves.csv"),
              ["p", "Hbar_solver", "Hbar_reference", "diff", "allowed"],
              [(p, sv, rv, d, a) for p, sv, rv, d, a in zip(
                  ps, solver_curve.evaluate(ps), curve.evaluate(ps),
                  diffs, budgets)])
    ok = all(c["passed"] for c in checks.values())
    return {"status": "ok" if ok else "failed", "checks": checks}


TASKS = {"effective": task_effective, "glue": task_glue,
         "largeosc": task_largeosc, "converge": task_converge,
         "validate": task_validate}


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def run(config, out_dir, jobs=1, strict=False, seed_override=None):
    """Execute one configured task; returns the process exit code."""
    try:
        cfg = resolve_config(config, seed_override=seed_override)
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    os.makedirs(out_dir, exist_ok=True)
    captured = []
    with warnings.catch_warnings(record=True) as wlist:
        warnings.simplefilter("always")
        try:
            report = TASKS[cfg["task"]](cfg, out_dir, jobs=jobs)
        except HJHomogError as exc:
            report = {"status": "failed", "error": str(exc)}
        captured = [f"{w.category.__name__}: {w.message}" for w in wlist]
    report["warnings"] = captured
    manifest = {"schema": MANIFEST_SCHEMA, "config": cfg,
                "versions": {"hjhomog": __version__,
                             "numpy": np.__version__},
                "report": report}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    if report.get("status") != "ok":
        return 1
    if strict and captured:
        print("strict mode: warnings raised", file=sys.stderr)
        return 1
    return 0


def diff_runs(dir_a, dir_b, extra_tol=0.0):
    """Compare two runs' curves; grids must match exactly."""
    with open(os.path.join(dir_a, "manifest.json")) as fh:
        man_a = json.load(fh)
    with open(os.path.join(dir_b, "manifest.json")) as fh:
        man_b = json.load(fh)
    if man_a["config"]["task"] != man_b["config"]["task"]:
        raise ConfigError("manifests describe different tasks")

    def load_curve(d):
        with open(os.path.join(d, "curves.csv")) as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        ip = header.index("p")
        iv = header.index("Hbar") if "Hbar" in header \
            else header.index("Hbar_solver")
        ib = header.index("error_budget") if "error_budget" in header else None
        p = np.asarray([float(r[ip]) for r in rows])
        v = np.asarray([float(r[iv]) for r in rows])
        b = np.asarray([float(r[ib]) for r in rows]) if ib is not None \
            else np.zeros_like(p)
        return p, v, b

    pa, va, ba = load_curve(dir_a)
    pb, vb, bb = load_curve(dir_b)
    if len(pa) != len(pb) or not np.array_equal(pa, pb):
        raise ConfigError("incompatible p grids")
    diffs = np.abs(va - vb)
    allowed = ba + bb + extra_tol
    worst = int(np.argmax(diffs - allowed))
    return {"max_diff": float(diffs.max()),
            "within_budgets": bool(np.all(diffs <= allowed + 1e-15)),
            "worst_p": float(pa[worst]),
            "identical": bool(np.array_equal(va, vb)),
            "n_points": int(len(pa))}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="hjhomog",
        description="Effective Hamiltonians of 1D Hamilton-Jacobi equations "
                    "in periodic and random media")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a configured task")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None,
                       help="master seed override (beats HJHOMOG_SEED)")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--strict", action="store_true",
                       help="treat warnings as failures")
    p_diff = sub.add_parser("diff", help="compare two run directories")
    p_diff.add_argument("dir_a")
    p_diff.add_argument("dir_b")
    p_diff.add_argument("--tol", type=float, default=0.0)
    p_diff.add_argument("--strict", action="store_true")
    args = parser.parse_args(argv)

    if args.command == "run":
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        seed = args.seed
        if seed is None and os.environ.get("HJHOMOG_SEED"):
            seed = int(os.environ["HJHOMOG_SEED"])
        return run(config, args.out, jobs=args.jobs, strict=args.strict,
                   seed_override=seed)
    try:
        report = diff_runs(args.dir_a, args.dir_b, extra_tol=args.tol)
    except (ConfigError, OSError) as exc:
        print(f"diff error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(report, indent=1, sort_keys=True))
    if args.strict and not report["within_budgets"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
