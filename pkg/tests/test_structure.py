import math

import numpy as np
import pytest

from hjhomog import env, structure as st
from hjhomog.errors import NotConstrained, OutOfBranchRange, ProfileError


@pytest.fixture
def quartic_01():
    return env.sample(env.make_periodic("quartic_plus_sin", 1.0, {"amplitude": 0.1}))


@pytest.fixture
def quartic_2():
    return env.sample(env.make_periodic("quartic_plus_sin", 1.0, {"amplitude": 2.0}))


@pytest.fixture
def abs_sin():
    return env.sample(env.make_periodic("abs_plus_sin", 1.0))


# -- constrained PL constructor ------------------------------------------------


def test_approx_midpoint_formula():
    f = env.sample(env.make_periodic("xfree", 1.0, {"base": "quadratic"}))
    approx, _ = st.build_constrained_approx(f, 2)
    # nodes H(0)=0, H(0.5)=0.25; midpoint at 0.25 = max(0, 0.25) + 1/2
    assert approx.evaluate(0.0, 0.3) == pytest.approx(0.0, abs=1e-14)
    assert approx.evaluate(0.5, 0.3) == pytest.approx(0.25, abs=1e-14)
    assert approx.evaluate(0.25, 0.3) == pytest.approx(0.75, abs=1e-14)


def test_approx_constant_field():
    c = 1.7
    f = env.sample(env.make_periodic(lambda p, x: c + 0.0 * np.asarray(p) * x, 1.0))
    approx, _ = st.build_constrained_approx(f, 4)
    assert approx.evaluate(1.0, 0.1) == pytest.approx(c, abs=1e-14)       # node
    assert approx.evaluate(1.125, 0.1) == pytest.approx(c + 0.25, abs=1e-14)  # midpoint


def test_approx_sup_error_bound(abs_sin):
    n = 8
    approx, _ = st.build_constrained_approx(abs_sin, n)
    rho = abs_sin.modulus(-2.0, 2.0)
    ps = np.linspace(-2, 2, 801)
    xs = np.linspace(0, 1, 65)
    err = np.max(np.abs(approx.evaluate(ps[:, None], xs[None, :])
                        - abs_sin.evaluate(ps[:, None], xs[None, :])))
    assert err <= rho(1.0 / n) + 1.0 / n + 1e-12


def test_approx_midpoint_dominance(quartic_01):
    n = 4
    approx, _ = st.build_constrained_approx(quartic_01, n)
    x = 0.37
    nodes = -n + np.arange(2 * n * n + 1) / n
    vn = approx.evaluate(nodes, x)
    mids = nodes[:-1] + 0.5 / n
    vm = approx.evaluate(mids, x)
    assert np.all(vm - np.maximum(vn[:-1], vn[1:]) == pytest.approx(1.0 / n, abs=1e-12))


def test_approx_wells_count(quartic_01):
    n = 2
    approx, known = st.build_constrained_approx(quartic_01, n)
    assert known.wells == 2 * n * n + 1
    detected, _ = st.detect_branches(approx, p_box=n + 0.5)
    assert detected.wells == 2 * n * n + 1
    assert np.allclose(detected.breakpoints, known.breakpoints, atol=1e-6)


def test_approx_rejects_non_power_of_two(quartic_01):
    with pytest.raises(ProfileError):
        st.build_constrained_approx(quartic_01, 3)


# -- declutter -----------------------------------------------------------------


def test_declutter_noop_on_clean_field(abs_sin):
    out = st.declutter(abs_sin, 4)
    ps = np.linspace(-2, 2, 41)
    xs = np.linspace(0, 1, 33)
    assert np.array_equal(out.evaluate(ps[:, None], xs[None, :]),
                          abs_sin.evaluate(ps[:, None], xs[None, :]))


def test_declutter_bump_formula():
    # slice at p=0 identically zero, all other slices equal sin(2 pi x)
    f = env.sample(env.make_periodic(
        lambda p, x: np.minimum(np.abs(8.0 * np.asarray(p)), 1.0) * np.sin(2 * np.pi * x),
        1.0))
    out = st.declutter(f, 8)
    xs = np.linspace(0, 1, 257)
    expected = np.sin(2 * np.pi * xs) / (1.0 + 1.0) / 8.0
    got = out.evaluate(0.0, xs) - f.evaluate(0.0, xs)
    assert np.allclose(got, expected, atol=1e-9)


def test_declutter_sup_distance(quartic_2):
    n = 8
    out = st.declutter(quartic_2, n)
    ps = np.linspace(-3, 3, 121)
    xs = np.linspace(0, 1, 65)
    d = np.max(np.abs(out.evaluate(ps[:, None], xs[None, :])
                      - quartic_2.evaluate(ps[:, None], xs[None, :])))
    assert d <= 1.0 / n + 1e-12


# -- branch detection ----------------------------------------------------------


def test_detect_quartic_breakpoints(quartic_01):
    s, proc = st.detect_branches(quartic_01)
    assert np.allclose(s.breakpoints, [-1.0, 0.0, 1.0], atol=1e-6)
    # tie-break picks the smaller-p well; one well remains on the right
    assert s.central == pytest.approx(-1.0, abs=1e-6)
    assert s.index == (0, 1)
    xs = np.linspace(0, 1, 50)
    assert np.all(proc.m(xs) <= proc.M(xs))


def test_detect_abs_plus_v(abs_sin):
    s, _ = st.detect_branches(abs_sin)
    assert len(s.breakpoints) == 1
    assert s.breakpoints[0] == pytest.approx(0.0, abs=1e-8)
    assert s.index == (0, 0)


def test_detect_drifting_breakpoint_rejected():
    f = env.sample(env.make_periodic(
        lambda p, x: (np.asarray(p) - 0.3 * np.sin(2 * np.pi * x)) ** 2, 1.0))
    with pytest.raises(NotConstrained):
        st.detect_branches(f, p_box=3.0)


# -- branch inversion ----------------------------------------------------------


def test_branch_inverse_quartic_closed_form():
    f = env.sample(env.make_periodic("xfree", 1.0, {"base": "double_well"}))
    s, _ = st.detect_branches(f)
    p = st.branch_inverse(f, s, 1, 0.3, 1.0, side="+")
    assert p == pytest.approx(math.sqrt(1.0 + 1.0), abs=1e-9)


def test_branch_inverse_abs(abs_sin):
    s, _ = st.detect_branches(abs_sin)
    p = st.branch_inverse(abs_sin, s, 1, 0.0, 2.0, side="+")
    assert p == pytest.approx(2.0, abs=1e-9)


def test_branch_inverse_out_of_range(quartic_01):
    s, _ = st.detect_branches(quartic_01)
    # level below the right well bottom at x = 0.75 (well value 0.1 sin = -0.1)
    with pytest.raises(OutOfBranchRange):
        st.branch_inverse(quartic_01, s, 1, 0.75, -0.5, side="+")


def test_branch_inverse_consistency(quartic_2):
    s, _ = st.detect_branches(quartic_2)
    rng = np.random.default_rng(3)
    for _ in range(30):
        x = rng.uniform(0, 1)
        j = rng.integers(1, 4)  # positive branches 1..3 (index (0,1) after central -1)
        lo, hi = s.branch_interval(j, "+")
        hi = min(hi, 3.0)
        vals = sorted([quartic_2.evaluate(lo, x), quartic_2.evaluate(hi, x)])
        mu = rng.uniform(vals[0] + 1e-3, vals[1] - 1e-3)
        p = st.branch_inverse(quartic_2, s, int(j), x, mu, side="+")
        assert abs(quartic_2.evaluate(p, x) - mu) <= 1e-10


def test_branch_inverse_grid_matches_scalar(quartic_2):
    s, _ = st.detect_branches(quartic_2)
    xs = np.linspace(0, 1, 40)
    mu = 2.5  # above esssup of the well value 2 sin, so branch 1 always crosses
    grid, feas = st.branch_inverse_grid(quartic_2, s, 1, xs, mu, side="+")
    assert feas.all()
    for i in [0, 7, 23]:
        scalar = st.branch_inverse(quartic_2, s, 1, float(xs[i]), mu, side="+")
        assert grid[i] == pytest.approx(scalar, abs=1e-9)
    # below the branch bottom somewhere: infeasible points are flagged, not wrong
    grid2, feas2 = st.branch_inverse_grid(quartic_2, s, 1, xs, 1.5, side="+")
    assert not feas2.all() and np.isnan(grid2[~feas2]).all()
    ok = feas2.nonzero()[0]
    assert abs(quartic_2.evaluate(grid2[ok[0]], xs[ok[0]]) - 1.5) < 1e-9


# -- oscillation classification -------------------------------------------------


def _normalized(field, central=None):
    s, _ = st.detect_branches(field)
    return st.normalize(field, s, central=central)


def test_oscillation_small(quartic_01):
    f, s, _, _ = _normalized(quartic_01)
    stats = st.classify_oscillation(f, s)
    assert stats.small
    assert stats.m_hi == pytest.approx(0.0, abs=1e-6)   # after mu-shift by 0.1
    assert stats.M_lo == pytest.approx(0.8, abs=1e-6)   # 0.9 - 0.1
    assert stats.dispersion == pytest.approx(0.0, abs=1e-12)


def test_oscillation_large(quartic_2):
    s, _ = st.detect_branches(quartic_2)
    stats = st.classify_oscillation(quartic_2, s)
    assert not stats.small
    assert stats.m_hi == pytest.approx(2.0, abs=1e-4)
    assert stats.M_lo == pytest.approx(-1.0, abs=1e-4)


def test_oscillation_degenerate_deterministic():
    f = env.sample(env.make_periodic("quartic_plus_sin", 1.0, {"amplitude": 0.0}))
    s, _ = st.detect_branches(f)
    stats = st.classify_oscillation(f, s)
    assert stats.small
    assert stats.M_lo == stats.M_hi
    assert stats.m_hi == stats.m_lo


# -- normalization ---------------------------------------------------------------


def test_normalize_chosen_central():
    f = env.sample(env.make_periodic("quartic_plus_sin", 1.0, {"amplitude": 1.0}))
    s, _ = st.detect_branches(f)
    fn, sn, p_shift, mu_shift = st.normalize(f, s, central=1.0)
    assert p_shift == pytest.approx(1.0, abs=1e-6)
    assert mu_shift == pytest.approx(1.0, abs=1e-6)   # esssup sin at the well
    assert sn.central == pytest.approx(0.0, abs=1e-9)
    assert st.esssup_probe(fn, 0.0) == pytest.approx(0.0, abs=1e-12)
    # curve transform bookkeeping
    assert sn.p_shift == pytest.approx(1.0, abs=1e-6)
    assert sn.mu_shift == pytest.approx(1.0, abs=1e-6)


def test_normalize_idempotent(quartic_01):
    fn, sn, _, _ = _normalized(quartic_01)
    fn2, sn2, ps2, ms2 = st.normalize(fn, sn)
    assert ps2 == pytest.approx(0.0, abs=1e-9)
    assert ms2 == pytest.approx(0.0, abs=1e-12)


def test_normalize_tie_break(quartic_01):
    _, sn, p_shift, _ = _normalized(quartic_01)
    assert p_shift == pytest.approx(-1.0, abs=1e-6)
    assert sn.index == (0, 1)


def test_declutter_separates_extrema():
    # the coincident p = 0 slice (identically zero) gains the reference
    # bump; its local extrema values then differ by more than tol/2
    f = env.sample(env.make_periodic(
        lambda p, x: np.minimum(np.abs(8.0 * np.asarray(p)), 1.0)
        * np.sin(2 * np.pi * x), 1.0))
    out = st.declutter(f, 8)
    xs = np.linspace(0, 1, 513)
    s = out.evaluate(0.0, xs)
    ext = s[1:-1][((s[1:-1] - s[:-2]) * (s[2:] - s[1:-1])) < 0]
    assert len(ext) >= 2
    assert np.min(np.abs(np.diff(np.sort(ext)))) > out.tol_cluster / 2
