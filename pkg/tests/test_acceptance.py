"""Acceptance suite: every criterion at its stated tolerance, one printed
pass/fail line per criterion (run with pytest -s to see them)."""

import json
import time

import numpy as np
import pytest

from hjhomog import cli, env, structure as st, gluing as gl
from hjhomog import cell_solver as cs, large_osc as lo, homog_pde as hp
from hjhomog.curve import EffectiveCurve

SCHEDULE = (0.04, 0.02, 0.01, 0.005)


def _report(num, name, passed, detail):
    line = f"ACCEPTANCE {num:02d} {name}: {'PASS' if passed else 'FAIL'} ({detail})"
    print(line)
    assert passed, line


# -- shared fixtures -----------------------------------------------------------

@pytest.fixture(scope="module")
def abs_sin():
    return env.sample(env.make_periodic("abs_plus_sin", 1.0))


@pytest.fixture(scope="module")
def quartic01():
    f0 = env.sample(env.make_periodic("quartic_plus_sin", 1.0,
                                      {"amplitude": 0.1}))
    s, _ = st.detect_branches(f0)
    return st.normalize(f0, s)


@pytest.fixture(scope="module")
def quartic2():
    return env.sample(env.make_periodic("quartic_plus_sin", 1.0,
                                        {"amplitude": 2.0}))


@pytest.fixture(scope="module")
def quartic2_normalized(quartic2):
    s, _ = st.detect_branches(quartic2)
    return st.normalize(quartic2, s)


@pytest.fixture(scope="module")
def quartic2_curve(quartic2_normalized):
    fn, sn, p_shift, mu_shift = quartic2_normalized
    curve_n = lo.assemble_effective_curve(fn, sn, mu_points=15,
                                          window_cells=100,
                                          p_lo=-2.2 - p_shift,
                                          p_hi=3.4 - p_shift)
    return curve_n.transformed(p_shift, mu_shift)


@pytest.fixture(scope="module")
def pwl_large():
    params = {"nodes": [0.0, 0.5, 1.0, 1.5, 2.0],
              "values": [0.0, 0.8, 0.4, 0.9, 0.6],
              "cone_slope": 2.0, "amplitude": 0.6}
    f = env.sample(env.make_periodic("pwl_wells_plus_dip", 1.0, params))
    s, _ = st.detect_branches(f)
    s.normalized = True
    stats = st.classify_oscillation(f, s)
    return f, s, stats


def _steep_field(values, cone):
    params = {"nodes": [0.0, 0.5, 1.0, 1.5, 2.0], "values": values,
              "cone_slope": cone, "amplitude": 0.1}
    f = env.sample(env.make_periodic("pwl_wells_plus_dip", 1.0, params))
    s, _ = st.detect_branches(f)
    s.normalized = True
    stats = st.classify_oscillation(f, s)
    return f, s, stats


# -- criteria --------------------------------------------------------------------

def test_criterion_01_convex_oracle_equivalence(abs_sin):
    t0 = time.time()
    errs = []
    for p in (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0):
        est = cs.estimate_hbar(abs_sin, p, lam_schedule=SCHEDULE, dx=1 / 128)
        errs.append(abs(est.value - max(abs(p), 1.0)))
    elapsed = time.time() - t0
    ok = max(errs) <= 0.05 and elapsed < 120.0
    _report(1, "convex-oracle-equivalence", ok,
            f"max err {max(errs):.4f} <= 0.05, runtime {elapsed:.1f}s < 120s")


def test_criterion_02_flat_piece(abs_sin):
    vals = [cs.estimate_hbar(abs_sin, p, lam_schedule=SCHEDULE,
                             dx=1 / 128).value
            for p in np.linspace(-1.0, 1.0, 11)]
    spread = max(vals) - min(vals)
    _report(2, "flat-piece-detection", spread <= 0.05,
            f"spread {spread:.4f} <= 0.05 on 11 points of [-1, 1]")


def test_criterion_03_split_lemma(quartic01):
    fn, sn, _, _ = quartic01
    (plus, _), _ = gl.split_min(fn, sn)
    worst = (0.0, 0.0)
    for p in np.arange(0.0, 1.5 + 1e-9, 0.25):
        a = cs.estimate_hbar(fn, float(p), lam_schedule=SCHEDULE, dx=1 / 2048)
        b = cs.estimate_hbar(plus, float(p), lam_schedule=SCHEDULE, dx=1 / 2048)
        diff = abs(a.value - b.value)
        allowed = 2.0 * max(a.dispersion, b.dispersion)
        if diff > worst[0]:
            worst = (diff, allowed)
        assert diff <= allowed, f"split mismatch at p={p}: {diff} > {allowed}"
    _report(3, "split-at-minimum", True,
            f"worst |Hbar - Hbar+| {worst[0]:.5f} <= 2 dispersion {worst[1]:.5f}")


def test_criterion_04_left_steep_min_formula():
    f, s, stats = _steep_field([0.0, 0.8, 0.2, 1.3, 0.5], 2.5)
    fam = gl.steep_side_family(f, s, stats)
    assert fam.case == "left"
    ps = np.linspace(-0.5, 2.5, 21)
    H = np.array([cs.estimate_hbar(f, float(p), lam_schedule=SCHEDULE,
                                   dx=1 / 512).value for p in ps])
    H1 = np.array([cs.estimate_hbar(fam.H1, float(p), lam_schedule=SCHEDULE,
                                    dx=1 / 512).value for p in ps])
    H3 = np.array([cs.estimate_hbar(fam.H3, float(p), lam_schedule=SCHEDULE,
                                    dx=1 / 512).value for p in ps])
    resid = float(np.max(np.abs(H - np.minimum(H1, H3))))
    _report(4, "left-steep-min-formula", resid <= 0.05,
            f"max |Hbar - min(H1bar, H3bar)| {resid:.4f} <= 0.05 on 21 points")


def test_criterion_05_right_steep_piecewise():
    f, s, stats = _steep_field([0.0, 1.3, 0.5, 0.8, 0.2], 3.0)
    fam = gl.steep_side_family(f, s, stats)
    assert fam.case == "right"
    ps = np.linspace(-0.5, 2.5, 21)
    H = np.array([cs.estimate_hbar(f, float(p), lam_schedule=SCHEDULE,
                                   dx=1 / 512).value for p in ps])
    H1 = np.array([cs.estimate_hbar(fam.H1, float(p), lam_schedule=SCHEDULE,
                                    dx=1 / 512).value for p in ps])
    H3 = np.array([cs.estimate_hbar(fam.H3, float(p), lam_schedule=SCHEDULE,
                                    dx=1 / 512).value for p in ps])
    lo_m = ps <= 0.0
    hi_m = ps >= fam.P
    mid_m = ~(lo_m | hi_m)
    r1 = float(np.max(np.abs(H[lo_m] - H1[lo_m])))
    r2 = float(np.max(np.abs(
        H[mid_m] - np.minimum(np.minimum(H1, H3), stats.M_lo)[mid_m])))
    r3 = float(np.max(np.abs(H[hi_m] - H3[hi_m])))
    worst = max(r1, r2, r3)
    _report(5, "right-steep-piecewise-formula", worst <= 0.07,
            f"per-regime residuals ({r1:.4f}, {r2:.4f}, {r3:.4f}) <= 0.07")


def test_criterion_06_constructor_bound():
    f = env.sample(env.make_periodic("quartic_plus_sin", 1.0,
                                     {"amplitude": 1.0}))
    rho = f.modulus(-2.0, 2.0)
    ps = np.linspace(-2.0, 2.0, 801)
    xs = np.linspace(0.0, 1.0, 65)
    base = f.evaluate(ps[:, None], xs[None, :])
    errs = {}
    for n in (4, 8, 16):
        approx, _ = st.build_constrained_approx(f, n)
        errs[n] = float(np.max(np.abs(
            approx.evaluate(ps[:, None], xs[None, :]) - base)))
        assert errs[n] <= rho(1.0 / n) + 1.0 / n + 1e-12, \
            f"n={n}: err {errs[n]} > bound {rho(1.0 / n) + 1.0 / n}"
    ok = errs[16] < errs[4]
    _report(6, "constructor-bound", ok,
            f"err(4)={errs[4]:.4f}, err(8)={errs[8]:.4f}, "
            f"err(16)={errs[16]:.4f}; all <= rho(1/n)+1/n and decreasing")


def test_criterion_07_stability(abs_sin, quartic2):
    suite = [("abs_plus_sin", abs_sin, (0.0, 1.5), 1 / 128),
             ("quartic_plus_2sin", quartic2, (0.0, 1.0), 1 / 1024)]
    worst = (0.0, 1.0)
    for name, f, ps, dx in suite:
        bumped = env.sample(env.make_periodic(
            lambda p, x, base=f: base.evaluate(p, x)
            + 0.1 * np.cos(2 * np.pi * np.asarray(x)), 1.0))
        for p in ps:
            a = cs.estimate_hbar(f, p, lam_schedule=SCHEDULE, dx=dx)
            b = cs.estimate_hbar(bumped, p, lam_schedule=SCHEDULE, dx=dx)
            diff = abs(a.value - b.value)
            allowed = 0.1 + 2.0 * max(a.dispersion, b.dispersion)
            assert diff <= allowed, f"{name} p={p}: {diff} > {allowed}"
            if diff / allowed > worst[0] / worst[1]:
                worst = (diff, allowed)
    _report(7, "stability-under-sup-norm-bump", True,
            f"worst |delta Hbar| {worst[0]:.4f} <= 0.1 + 2 disp = {worst[1]:.4f}")


def test_criterion_08_gradient_control(quartic2):
    p0, P = 0.2, 2.2     # essinf H(P, .) = (P^2-1)^2 - 2 = 12.7 > Hbar(p0) = 2
    est = cs.estimate_hbar(quartic2, p0, lam_schedule=SCHEDULE, dx=1 / 1024)
    lam = SCHEDULE[-1]
    grid = cs.default_grid_policy(quartic2, p0, lam, dx=1 / 1024)
    sol = cs.solve_discounted(quartic2, p0, lam, grid)
    out = cs.gradient_control_check(quartic2, sol, p0, P, est.value, case=1)
    ok = out.status == "passed" and out.detail["violations"] == 0
    _report(8, "gradient-control-case1", ok,
            f"{out.detail.get('total', 0)} gradients, "
            f"{out.detail.get('violations', '?')} violations, "
            f"max p0+Dw = {out.detail.get('extreme', float('nan')):.4f} <= {P}")


def test_criterion_09_large_osc_dual_route(quartic2, quartic2_curve):
    ps = np.linspace(-1.8, 3.2, 11)   # spans negative side, flat piece, levels
    direct = np.array([cs.estimate_hbar(quartic2, float(p),
                                        lam_schedule=SCHEDULE,
                                        dx=1 / 2048).value for p in ps])
    diffs = np.abs(quartic2_curve.evaluate(ps) - direct)
    convex = quartic2_curve.is_level_set_convex()
    ok = bool(np.max(diffs) <= 0.1 and convex)
    _report(9, "large-oscillation-dual-route", ok,
            f"max |assemble - estimate| {np.max(diffs):.4f} <= 0.1 at 11 p, "
            f"level-set convex: {convex}")


def test_criterion_10_admissible_machinery(pwl_large):
    f, s, stats = pwl_large
    window = (0.0, 100.0)
    x_probe = np.linspace(0, 100, 1601)
    proc = st.ExtremaProcesses(f, s)
    M_bar = float(proc.M(x_probe).max())
    rho = f.modulus(-1.0, 4.0)

    mu_grid = lo.default_mu_grid(M_bar, 15)
    recs = lo.level_sets(f, s, mu_grid[mu_grid > 0], window_cells=60,
                         n_dominance=20)
    ordered = all(c["p_lo"] >= p["p_hi"] - 1e-9
                  for p, c in zip(recs, recs[1:]))

    resid_ok, dom_ok = True, True
    for mu in (0.9 * M_bar, 0.5 * stats.m_hi):
        dec = lo.admissible_decomposition(f, s, mu, window)
        f_lo_ = lo.extremal_admissible(f, s, mu, window, "inf",
                                       decomposition=dec, n_dominance=200)
        f_hi_ = lo.extremal_admissible(f, s, mu, window, "sup",
                                       decomposition=dec, n_dominance=200)
        dom_ok &= bool(np.all(f_hi_.slopes >= f_lo_.slopes - 1e-9))
        tol = st.TOL_INV + rho(float(np.max(f_hi_.widths)))
        resid_ok &= lo.viscosity_residual(f, f_lo_) <= tol
        resid_ok &= lo.viscosity_residual(f, f_hi_) <= tol

    # branch forcing: Lemma-8.5 side at 0.9 M_bar, Lemma-8.6 side at m_hi/2
    mu_hi = 0.9 * M_bar
    f_hi_ = lo.extremal_admissible(f, s, mu_hi, window, "sup", n_dominance=20)
    sel = np.asarray([f_hi_.branches[i] for i in f_hi_.interval_of])
    forced_hi = proc.M(f_hi_.x_mid) < mu_hi
    force1 = bool(np.all(sel[forced_hi] == 1))
    frac1 = np.sum(f_hi_.widths[sel == 1]) / np.sum(f_hi_.widths)
    frac1_forced = np.sum(f_hi_.widths[forced_hi]) / np.sum(f_hi_.widths)

    mu_lo_ = 0.5 * stats.m_hi
    nb = 2 * s.index[1] + 1
    f_lo2 = lo.extremal_admissible(f, s, mu_lo_, window, "inf",
                                   n_dominance=20)
    sel2 = np.asarray([f_lo2.branches[i] for i in f_lo2.interval_of])
    forced_lo = proc.m(f_lo2.x_mid) > mu_lo_
    force2 = bool(np.all(sel2[forced_lo] == nb))
    fracN = np.sum(f_lo2.widths[sel2 == nb]) / np.sum(f_lo2.widths)
    fracN_forced = np.sum(f_lo2.widths[forced_lo]) / np.sum(f_lo2.widths)

    ok = (dom_ok and resid_ok and ordered and force1 and force2
          and frac1 >= frac1_forced - 1e-9 and fracN >= fracN_forced - 1e-9)
    _report(10, "admissible-machinery", ok,
            f"sup>=inf: {dom_ok}, residuals ok: {resid_ok}, I_mu ordered: "
            f"{ordered}, forcing fractions {frac1:.2f}>={frac1_forced:.2f} "
            f"and {fracN:.2f}>={fracN_forced:.2f}")


def test_criterion_11_homotopy_endpoints(quartic2_normalized):
    fn, sn, _, _ = quartic2_normalized
    window = (0.0, 100.0)
    dec = lo.admissible_decomposition(fn, sn, 0.0, window)
    f_lo_ = lo.extremal_admissible(fn, sn, 0.0, window, "inf",
                                   decomposition=dec, n_dominance=20)
    f_hi_ = lo.extremal_admissible(fn, sn, 0.0, window, "sup",
                                   decomposition=dec, n_dominance=20)
    runs = lo._unequal_runs(f_hi_, f_lo_, dec)
    rng = np.random.default_rng(11)
    rho = fn.modulus(-1.0, 4.0)
    tol = st.TOL_INV + rho(float(np.max(f_hi_.widths)))
    worst_end, worst_mid = 0.0, 0.0
    for ridx in rng.choice(len(runs), 5, replace=False):
        a, b, i0, i1 = runs[ridx]
        sel = (f_hi_.x_mid >= a - 1e-12) & (f_hi_.x_mid <= b + 1e-12)
        d_hi = float(np.sum(f_hi_.slopes[sel] * f_hi_.widths[sel]))
        d_lo = float(np.sum(f_lo_.slopes[sel] * f_lo_.widths[sel]))
        inc = f_hi_.branches[i0 - 1] if i0 > 0 else None
        w1 = lo.homotopy_interpolant(fn, sn, 0.0, f_hi_, f_lo_, (a, b), d_hi,
                                     incoming_branch=inc)
        w2 = lo.homotopy_interpolant(fn, sn, 0.0, f_hi_, f_lo_, (a, b), d_lo,
                                     incoming_branch=inc)
        worst_end = max(worst_end,
                        float(np.max(np.abs(w1.slopes - f_hi_.slopes[sel]))),
                        float(np.max(np.abs(w2.slopes - f_lo_.slopes[sel]))))
        wm = lo.homotopy_interpolant(fn, sn, 0.0, f_hi_, f_lo_, (a, b),
                                     0.5 * (d_hi + d_lo), incoming_branch=inc)
        worst_mid = max(worst_mid, lo.generic_viscosity_residual(
            fn, wm.x_mid, wm.slopes, 0.0, wm.widths, structure=sn,
            cell_branch=wm.cell_branch))
    ok = worst_end <= 1e-9 and worst_mid <= tol
    _report(11, "homotopy-endpoints", ok,
            f"endpoint slope dev {worst_end:.2e} <= 1e-9, midpoint residual "
            f"{worst_mid:.2e} <= {tol:.2e}, 5 random intervals")


def test_criterion_12_convergence(abs_sin):
    # convergence suite: the convex benchmark and the non-convex double
    # well with small oscillation.  The large-oscillation field is out of
    # reach for this experiment at eps >= 0.1: its corrector is O(1) and
    # the LF viscosity theta*dx/2 ~ 0.4 eps suppresses it; the dual-route
    # criterion covers that field instead.
    q01 = env.sample(env.make_periodic("quartic_plus_sin", 1.0,
                                       {"amplitude": 0.1}))
    tree = gl.build_reduction_tree(q01)
    glue_curve = gl.evaluate_tree(tree, np.linspace(-1.8, 1.8, 25),
                                  gl.LeafOptions(dx=1 / 512))
    envs = [
        ("abs_plus_sin", abs_sin,
         gl.convex_oracle(abs_sin, p_lo=-4.5, p_hi=4.5)),
        ("quartic_plus_0.1sin", q01, glue_curve),
    ]
    all_monotone = True
    stagnation = np.inf
    for name, f, curve in envs:
        theta = hp.default_theta(f)
        setup = hp.IVPSetup(g=hp.wedge_datum(), T=1.0, X_core=1.0,
                            theta=theta)
        res = hp.convergence_experiment(f, curve, setup,
                                        eps_list=(0.4, 0.2, 0.1),
                                        seeds=(0, 1), hbar_dx=1 / 512)
        all_monotone &= all(res.monotone.values())
        bad = EffectiveCurve(curve.p, curve.values + 0.3, curve.budget)
        res_bad = hp.convergence_experiment(f, bad, setup,
                                            eps_list=(0.4, 0.2, 0.1),
                                            seeds=(0,), hbar_dx=1 / 512)
        # the control's stagnation level is its smallest-eps error
        stagnation = min(stagnation, res_bad.rows[-1][2])
    ok = all_monotone and stagnation >= 0.2
    _report(12, "homogenization-convergence", ok,
            f"errors strictly decreasing for both environments and 2 seeds; "
            f"wrong-Hbar control stagnates at {stagnation:.3f} >= 0.2")


def test_criterion_13_self_averaging():
    spec = env.make_separable("abs", (-1.0, 0.0), 1.0)
    worst = 0.0
    for p in (-2.0, -1.0, 0.0, 1.0, 2.0):
        vals = [cs.estimate_hbar(spec, p, lam_schedule=(0.04, 0.02, 0.01),
                                 seeds=(s,), dx=1 / 64,
                                 periodize_cells=400).value
                for s in (101, 202)]
        worst = max(worst, abs(vals[0] - vals[1]))
    _report(13, "self-averaging", worst <= 0.1,
            f"max cross-seed gap {worst:.4f} <= 0.1 over 5 tilts")


def test_criterion_14_reproducibility(tmp_path):
    cfg = {"schema": "run/1", "task": "effective",
           "env": {"schema": "env/1", "kind": "checkerboard",
                   "profile": "base_plus_v", "params": {"base": "abs"},
                   "cell_length": 1.0, "value_range": [-1.0, 0.0]},
           "p_grid": [0.0, 1.0, 2.0],
           "lambda_schedule": [0.04, 0.02],
           "solver": {"dx": 1 / 64, "periodize_cells": 200},
           "seeds": {"master": 7, "count": 2}}
    cfg["lambda_schedule"] = [0.08, 0.04, 0.02]
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out1)]) == 0
    assert cli.main(["run", "--config", str(out1 / "manifest.json"),
                     "--out", str(out2)]) == 0
    same = all((out1 / n).read_bytes() == (out2 / n).read_bytes()
               for n in ("curves.csv", "sweep.csv"))
    _report(14, "manifest-reproducibility", same,
            "rerunning the manifest reproduced curves.csv and sweep.csv "
            "bit-identically")
