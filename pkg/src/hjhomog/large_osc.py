"""Effective Hamiltonians of large-oscillation index (0, L) fields via
admissible functions.

At a level mu >= 0 the line decomposes at the points where mu meets a
local-extremum process (crossings and tangential touches).  On each piece
an admissible function rides one branch inverse at level mu; junctions
obey the one-dimensional viscosity corner rules: an upward gradient jump
needs H >= mu across the gap, a downward jump needs H <= mu.  Dynamic
programming over the junction chain yields the extremal selections, whose
window averages bound the flat level set I_mu of the effective
Hamiltonian.  A Perron-style homotopy interpolates between the extremal
selections to realize any mean inside I_mu, and the negative side comes
from the inverse of the single decreasing branch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .curve import EffectiveCurve
from .env import HamiltonianField
from .errors import (ClusterSuspected, LevelSetConflict, NonErgodicWarning,
                     NormalizationViolated, NotApplicable,
                     NotPointwiseExtremal)
from .structure import TOL_INV, branch_inverse_grid

BUFFER_CELLS = 5


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------

@dataclass
class AdmissibleDecomposition:
    mu: float
    window: tuple
    junctions: np.ndarray          # sorted, interior to the window
    intervals: list                # [(a, b)] covering the window
    feasible: list                 # set of branch ids per interval
    trivial_branch: int | None = None


_INVPHI = 0.6180339887498949


def _scan_roots(gfun, g, xs, mu, tol_touch):
    """Crossings (bisection-refined against the process callable) and
    tangential touches (golden-refined local extrema within tol of the
    level).  High-accuracy locations matter: the corner rule at a
    junction holds only up to the process slope times the location error.
    """
    d = g - mu
    s = np.sign(d)
    roots = []
    flips = np.nonzero(s[:-1] * s[1:] < 0)[0]
    for i in flips:
        lo, hi = xs[i], xs[i + 1]
        dlo = d[i]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            dm = gfun(mid) - mu
            if dm == 0.0:
                lo = hi = mid
                break
            if (dm > 0) == (dlo > 0):
                lo = mid
            else:
                hi = mid
        roots.append(0.5 * (lo + hi))
    interior = np.arange(1, len(xs) - 1)
    is_ext = ((d[interior] - d[interior - 1]) * (d[interior + 1] - d[interior])
              <= 0.0)
    near = np.abs(d[interior]) <= tol_touch
    no_cross = (s[interior - 1] * s[interior] >= 0) & \
               (s[interior] * s[interior + 1] >= 0)
    for i in interior[is_ext & near & no_cross]:
        sign = 1.0 if d[i] >= d[i - 1] or d[i] >= d[i + 1] else -1.0
        a, b = xs[i - 1], xs[i + 1]
        cc = b - _INVPHI * (b - a)
        dd_ = a + _INVPHI * (b - a)
        fc, fd = -sign * gfun(cc), -sign * gfun(dd_)
        for _ in range(80):
            if fc < fd:
                b, dd_, fd = dd_, cc, fc
                cc = b - _INVPHI * (b - a)
                fc = -sign * gfun(cc)
            else:
                a, cc, fc = cc, dd_, fd
                dd_ = a + _INVPHI * (b - a)
                fd = -sign * gfun(dd_)
        x_star = 0.5 * (a + b)
        if abs(gfun(x_star) - mu) <= tol_touch:
            roots.append(float(x_star))
    return roots


def admissible_decomposition(field, structure, mu, window, dx_root=None,
                             sep_min=None, tol_touch=None):
    """Junctions and per-interval feasible branch sets at level mu.

    Outside the intermediate band the decomposition is trivial: a single
    interval riding branch 1 (mu above the esssup of the max process) or
    branch 2L+1 (mu below the essinf of the min process when that is
    nonnegative).
    """
    if structure.index[0] != 0:
        raise NotApplicable("admissible machinery assumes index (0, L)")
    Lt, L = structure.index
    x_lo, x_hi = window
    if L == 0:
        return AdmissibleDecomposition(mu, window, np.empty(0),
                                       [(x_lo, x_hi)], [{1}],
                                       trivial_branch=1)
    cell = field.period if field.period is not None else (field.cell_length or 1.0)
    if dx_root is None:
        dx_root = cell / 64.0
    W = x_hi - x_lo
    if sep_min is None:
        sep_min = 1e-4 * W
    xs = np.arange(x_lo, x_hi + dx_root * 0.5, dx_root)
    pos_min = structure.positive_minima()
    pos_max = structure.positive_maxima()
    m_vals = field.evaluate(pos_min[:, None], xs[None, :])
    M_vals = field.evaluate(pos_max[:, None], xs[None, :])
    M_bar = float(M_vals.max())
    m_low = float(m_vals.min())
    nb = 2 * L + 1
    if mu >= M_bar:
        return AdmissibleDecomposition(mu, window, np.empty(0),
                                       [(x_lo, x_hi)], [{1}], trivial_branch=1)
    if m_low >= 0.0 and mu <= m_low:
        return AdmissibleDecomposition(mu, window, np.empty(0),
                                       [(x_lo, x_hi)], [{nb}],
                                       trivial_branch=nb)
    if tol_touch is None:
        span = float(max(M_vals.max() - m_vals.min(), 1.0))
        tol_touch = 1e-6 * span + _max_step(m_vals, M_vals)
    roots = []
    for k, p_ext in enumerate(np.concatenate([pos_min, pos_max])):
        g = m_vals[k] if k < len(pos_min) else M_vals[k - len(pos_min)]
        gfun = (lambda pe: lambda x: float(field.evaluate(pe, x)))(float(p_ext))
        roots.extend(_scan_roots(gfun, g, xs, mu, tol_touch))
    roots = np.sort(np.asarray(roots))
    roots = roots[(roots > x_lo + 1e-9 * W) & (roots < x_hi - 1e-9 * W)]
    if len(roots) >= 2:
        gaps = np.diff(roots)
        if np.min(gaps) < sep_min:
            k = int(np.argmin(gaps))
            raise ClusterSuspected(
                f"junctions at x={roots[k]:.6g} and x={roots[k + 1]:.6g} "
                f"are closer than sep_min={sep_min:.3g} at level mu={mu:.6g}")
    edges = np.concatenate([[x_lo], roots, [x_hi]])
    intervals = [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])
                 if b - a > 1e-12]
    feasible = []
    for a, b in intervals:
        probes = np.linspace(a, b, 9)[1:-1]
        ok = set()
        for j in range(1, nb + 1):
            _, feas = branch_inverse_grid(field, structure, j, probes, mu)
            if feas.all():
                ok.add(j)
        if not ok:
            raise ClusterSuspected(
                f"no branch feasible throughout ({a:.6g}, {b:.6g}) at "
                f"mu={mu:.6g}: a junction was likely missed")
        feasible.append(ok)
    return AdmissibleDecomposition(mu, window, roots, intervals, feasible)


def _max_step(m_vals, M_vals):
    steps = [np.max(np.abs(np.diff(g))) for g in list(m_vals) + list(M_vals)]
    return 0.75 * float(max(steps))


# ---------------------------------------------------------------------------
# junction calculus
# ---------------------------------------------------------------------------

def junction_compatible(field, structure, mu, a, k_left, k_right, tol=None,
                        n_gap=33):
    """Viscosity corner rule at x = a for the jump from branch k_left to
    k_right: upward jumps need H >= mu - tol on the gap, downward jumps
    H <= mu + tol, equal values are free."""
    if tol is None:
        tol = 1e-6 * (1.0 + abs(mu)) + 10.0 * TOL_INV
    qm, fm = branch_inverse_grid(field, structure, k_left, np.array([a]), mu)
    qp, fp = branch_inverse_grid(field, structure, k_right, np.array([a]), mu)
    if not (fm[0] and fp[0]):
        return False
    q_minus, q_plus = float(qm[0]), float(qp[0])
    if abs(q_plus - q_minus) <= 1e-10:
        return True
    gap = np.linspace(min(q_minus, q_plus), max(q_minus, q_plus), n_gap)
    vals = field.evaluate(gap, a)
    if q_plus > q_minus:
        return bool(np.min(vals) >= mu - tol)
    return bool(np.max(vals) <= mu + tol)


# ---------------------------------------------------------------------------
# admissible functions and the extremal DP
# ---------------------------------------------------------------------------

@dataclass
class AdmissibleFunction:
    """Branch selection per decomposition interval with sampled slopes."""

    mu: float
    decomposition: AdmissibleDecomposition
    branches: list                 # branch id per interval
    x_mid: np.ndarray              # cell midpoints across the window
    widths: np.ndarray             # cell widths (junction-snapped grid)
    slopes: np.ndarray             # psi_{branch}(mu) at the midpoints
    core: np.ndarray               # midpoints outside the edge buffers
    interval_of: np.ndarray        # interval index per midpoint
    structure: object = None

    def mean(self):
        c = self.core
        return float(np.sum(self.slopes[c] * self.widths[c])
                     / np.sum(self.widths[c]))

    def integral(self):
        return float(np.sum(self.slopes * self.widths))


def _window_grid(field, window, junctions=(), samples_per_cell=16):
    """Cell midpoints and widths over the window, with every junction
    snapped to a cell edge so branch integrals never straddle a switch."""
    cell = field.period if field.period is not None else (field.cell_length or 1.0)
    x_lo, x_hi = window
    n = max(int(round((x_hi - x_lo) / cell)) * samples_per_cell, 64)
    edges = np.linspace(x_lo, x_hi, n + 1)
    if len(junctions):
        edges = np.unique(np.concatenate([edges, np.asarray(junctions)]))
        edges = edges[(edges >= x_lo) & (edges <= x_hi)]
    keep = np.concatenate([[True], np.diff(edges) > 1e-12])
    edges = edges[keep]
    mid = 0.5 * (edges[:-1] + edges[1:])
    widths = np.diff(edges)
    buf = BUFFER_CELLS * cell
    core = (mid >= x_lo + buf) & (mid <= x_hi - buf)
    return mid, widths, core


def _branch_tables(field, structure, mu, x_mid):
    _, L = structure.index
    nb = 2 * L + 1
    psi = np.full((nb + 1, len(x_mid)), np.nan)
    feas = np.zeros((nb + 1, len(x_mid)), dtype=bool)
    for j in range(1, nb + 1):
        psi[j], feas[j] = branch_inverse_grid(field, structure, j, x_mid, mu)
    return psi, feas


def _legal_matrix(field, structure, mu, decomp):
    """legal[i][(j, j2)]: admissible jump j -> j2 at junction i."""
    if len(decomp.junctions) == 0:
        return []
    branches = sorted(set().union(*decomp.feasible))
    nodes = np.asarray(decomp.junctions, dtype=np.float64)
    tables = _pair_legality(field, structure, mu, nodes, branches)
    out = []
    for i in range(len(nodes)):
        table = {}
        for j in decomp.feasible[i]:
            for j2 in decomp.feasible[i + 1]:
                table[(j, j2)] = (j == j2) or bool(tables[(j, j2)][i])
        out.append(table)
    return out


def extremal_admissible(field, structure, mu, window, sense="sup",
                        decomposition=None, n_dominance=200, rng=None):
    """The extremal admissible selection at level mu by DP over the
    junction chain, maximizing (sense="sup") or minimizing ("inf") the
    integral; the result is asserted pointwise-dominant against random
    feasible alternatives, surfacing NotPointwiseExtremal on violation."""
    decomp = decomposition or admissible_decomposition(field, structure, mu,
                                                       window)
    x_mid, widths, core = _window_grid(field, window, decomp.junctions)
    psi, feas = _branch_tables(field, structure, mu, x_mid)
    iv = np.searchsorted(
        [b for _, b in decomp.intervals[:-1]], x_mid, side="right")
    n_int = len(decomp.intervals)
    weights = np.zeros((n_int, psi.shape[0]))
    okleaf = np.zeros((n_int, psi.shape[0]), dtype=bool)
    for i in range(n_int):
        mask = iv == i
        for j in decomp.feasible[i]:
            ok = feas[j, mask].all() and mask.any()
            okleaf[i, j] = ok or not mask.any()
            if mask.any() and ok:
                weights[i, j] = float(np.sum(psi[j, mask] * widths[mask]))
    legal = _legal_matrix(field, structure, mu, decomp)
    sign = 1.0 if sense == "sup" else -1.0
    NEG = -1e30
    score = {j: (sign * weights[0, j] if okleaf[0, j] else NEG)
             for j in decomp.feasible[0]}
    back = []
    for i in range(1, n_int):
        nxt, arg = {}, {}
        for j2 in decomp.feasible[i]:
            best, bj = NEG, None
            for j, s in score.items():
                if s <= NEG / 2 or not legal[i - 1].get((j, j2), False):
                    continue
                if s > best:
                    best, bj = s, j
            if not okleaf[i, j2]:
                best = NEG
            nxt[j2] = (best + sign * weights[i, j2]) if bj is not None else NEG
            arg[j2] = bj
        back.append(arg)
        score = nxt
    if all(v <= NEG / 2 for v in score.values()):
        raise NotApplicable(f"no admissible chain at mu={mu:.6g}")
    jend = max(score, key=score.get)
    branches = [jend]
    for arg in reversed(back):
        branches.append(arg[branches[-1]])
    branches.reverse()
    slopes = np.empty(len(x_mid))
    for i, j in enumerate(branches):
        mask = iv == i
        slopes[mask] = psi[j, mask]
    out = AdmissibleFunction(mu=mu, decomposition=decomp, branches=branches,
                            x_mid=x_mid, widths=widths, slopes=slopes,
                            core=core, interval_of=iv, structure=structure)
    _assert_pointwise_extremal(out, psi, legal, decomp, sense,
                               n_dominance, rng)
    return out


def _assert_pointwise_extremal(fn, psi, legal, decomp, sense, n_alt, rng):
    rng = rng or np.random.default_rng(0)
    n_int = len(decomp.intervals)
    sign = 1.0 if sense == "sup" else -1.0
    tol = 1e-9 * (1.0 + np.nanmax(np.abs(psi)))
    tried = 0
    for _ in range(4 * n_alt):
        if tried >= n_alt:
            break
        path = [int(rng.choice(sorted(decomp.feasible[0])))]
        dead = False
        for i in range(1, n_int):
            opts = [j2 for j2 in decomp.feasible[i]
                    if legal[i - 1].get((path[-1], j2), False)]
            if not opts:
                dead = True
                break
            path.append(int(rng.choice(opts)))
        if dead:
            continue
        tried += 1
        for i, j in enumerate(path):
            mask = fn.interval_of == i
            if not mask.any():
                continue
            if np.any(sign * (psi[j, mask] - fn.slopes[mask]) > tol):
                raise NotPointwiseExtremal(
                    f"alternative branch {j} beats the {sense}-extremal "
                    f"selection on interval {i} at mu={fn.mu:.6g}")


# ---------------------------------------------------------------------------
# viscosity residual
# ---------------------------------------------------------------------------

def viscosity_residual(field, fn, mu=None, n_gap=33):
    """Interior residual max |H(f(x), x) - mu| plus quantified corner
    violations at the junctions."""
    mu = fn.mu if mu is None else mu
    interior = float(np.max(np.abs(
        field.evaluate(fn.slopes, fn.x_mid) - mu)))
    corner = 0.0
    decomp = fn.decomposition
    for i, a in enumerate(decomp.junctions):
        j_l, j_r = fn.branches[i], fn.branches[i + 1]
        if j_l == j_r:
            continue
        qm, _ = branch_inverse_grid(field, fn.structure, j_l,
                                    np.array([a]), mu)
        qp, _ = branch_inverse_grid(field, fn.structure, j_r,
                                    np.array([a]), mu)
        q_minus, q_plus = float(qm[0]), float(qp[0])
        if abs(q_plus - q_minus) <= 1e-10:
            continue
        gap = np.linspace(min(q_minus, q_plus), max(q_minus, q_plus), n_gap)
        vals = field.evaluate(gap, float(a))
        if q_plus > q_minus:
            corner = max(corner, float(mu - np.min(vals)))
        else:
            corner = max(corner, float(np.max(vals) - mu))
    return interior + max(corner, 0.0)


# ---------------------------------------------------------------------------
# ergodic averaging
# ---------------------------------------------------------------------------

def ergodic_mean(builder, windows=(100, 200, 400), seeds=(0,)):
    """Spatial averages of builder(seed, window_cells) across growing
    windows and seeds: (mean, ci, trend); warns when the spread does not
    shrink with the window."""
    per_window = {}
    for w in windows:
        vals = [builder(s, w) for s in seeds]
        per_window[w] = vals
    all_vals = [v for vals in per_window.values() for v in vals]
    mean = float(np.mean(all_vals))
    ci = float(max(abs(v - mean) for v in all_vals))
    spreads = [float(np.ptp(per_window[w])) if len(per_window[w]) > 1 else 0.0
               for w in sorted(per_window)]
    if len(spreads) >= 2 and len(seeds) > 1 and \
            spreads[-1] > max(spreads[0], 1e-12) * 1.5:
        warnings.warn("window averages are not tightening as the window "
                      "grows", NonErgodicWarning)
    return mean, ci, spreads


# ---------------------------------------------------------------------------
# homotopy between admissible functions
# ---------------------------------------------------------------------------

@dataclass
class SlopeFunction:
    """A sampled gradient selection (not necessarily single-branch)."""

    mu: float
    x_mid: np.ndarray
    widths: np.ndarray
    slopes: np.ndarray
    core: np.ndarray
    cell_branch: np.ndarray = None   # branch id per cell when known

    def mean(self):
        c = self.core
        return float(np.sum(self.slopes[c] * self.widths[c])
                     / np.sum(self.widths[c]))


def generic_viscosity_residual(field, x_mid, slopes, mu, widths=None,
                               n_gap=17, structure=None, cell_branch=None):
    """Residual of an arbitrary sampled slope selection: interior
    |H(f, x) - mu| plus corner-rule violations at slope discontinuities.

    Corners sit at cell edges (junction locations on junction-snapped
    grids).  When the per-cell branch ids are known, the gap endpoints are
    the exact branch inverses at the edge; otherwise the adjacent cell
    slopes stand in, which is only accurate to the process modulus over
    half a cell."""
    interior = float(np.max(np.abs(field.evaluate(slopes, x_mid) - mu)))
    if widths is None:
        edges = 0.5 * (x_mid[:-1] + x_mid[1:])
    else:
        edges = x_mid + 0.5 * np.asarray(widths)
    jumps = np.nonzero(np.abs(np.diff(slopes)) > 1e-7)[0]
    corner = 0.0
    for k in jumps:
        xj = float(edges[k])
        q_minus, q_plus = float(slopes[k]), float(slopes[k + 1])
        if structure is not None and cell_branch is not None and                 cell_branch[k] > 0 and cell_branch[k + 1] > 0:
            if cell_branch[k] == cell_branch[k + 1]:
                continue
            qm, fm = branch_inverse_grid(field, structure,
                                         int(cell_branch[k]),
                                         np.array([xj]), mu)
            qp, fp = branch_inverse_grid(field, structure,
                                         int(cell_branch[k + 1]),
                                         np.array([xj]), mu)
            if fm[0] and fp[0]:
                q_minus, q_plus = float(qm[0]), float(qp[0])
        if abs(q_plus - q_minus) <= 1e-10:
            continue
        gap = np.linspace(min(q_minus, q_plus), max(q_minus, q_plus), n_gap)
        vals = field.evaluate(gap, xj)
        if q_plus > q_minus:
            corner = max(corner, float(mu - np.min(vals)))
        else:
            corner = max(corner, float(np.max(vals) - mu))
    return interior + max(corner, 0.0)


def _pair_legality(field, structure, mu, nodes, branches, tol=None,
                   n_gap=17, rule="solution"):
    """legal[(j, j2)][k]: the (j -> j2) jump at nodes[k] obeys the corner
    rule; vectorized over the nodes.

    rule "solution": upward jumps need H >= mu on the gap, downward jumps
    H <= mu.  rule "sub": viscosity subsolutions admit any upward jump
    (no test function touches a convex kink from above), downward jumps
    still need H <= mu.
    """
    if tol is None:
        tol = 1e-6 * (1.0 + abs(mu)) + 10.0 * TOL_INV
    inv = {}
    for j in branches:
        inv[j] = branch_inverse_grid(field, structure, j, nodes, mu)
    legal = {}
    ts = np.linspace(0.0, 1.0, n_gap)
    for j in branches:
        qj, fj = inv[j]
        for j2 in branches:
            q2, f2 = inv[j2]
            ok = fj & f2
            same = ok & (np.abs(q2 - qj) <= 1e-10)
            gap = qj[None, :] + ts[:, None] * (q2 - qj)[None, :]
            vals = field.evaluate(gap, nodes[None, :])
            if rule == "sub":
                up = ok & (q2 > qj)
            else:
                up = ok & (q2 > qj) & (vals.min(axis=0) >= mu - tol)
            down = ok & (q2 < qj) & (vals.max(axis=0) <= mu + tol)
            legal[(j, j2)] = same | up | down
    return legal


def homotopy_interpolant(field, structure, mu, f1, f2, interval, c,
                         incoming_branch=None):
    """Perron interpolant between admissible selections on one interval.

    Given f1 >= f2 on I = (a, b) with primitives u1, u2 (u_i(a) = 0) and a
    target c in [u2(b), u1(b)], the maximal subsolution pinched between
    the barriers max(u2, u1 - u1(b) + c) and min(u1, u2 - u2(b) + c) is
    built by dynamic programming over branch rides with corner-legal
    switches; its endpoint values are exact and its slopes satisfy the
    level equation up to the corner tolerances.
    """
    a, b = interval
    sel = (f1.x_mid >= a - 1e-12) & (f1.x_mid <= b + 1e-12)
    if not sel.any():
        raise ValueError("interval contains no grid cells")
    x_mid = f1.x_mid[sel]
    wid = f1.widths[sel]
    s1, s2 = f1.slopes[sel], f2.slopes[sel]
    if np.any(s1 < s2 - 1e-9):
        raise ValueError("barriers crossed: f1 < f2 inside the interval")
    u1 = np.concatenate([[0.0], np.cumsum(s1 * wid)])
    u2 = np.concatenate([[0.0], np.cumsum(s2 * wid)])
    if not (u2[-1] - 1e-9 <= c <= u1[-1] + 1e-9):
        raise ValueError(f"target c={c:.6g} outside [{u2[-1]:.6g}, {u1[-1]:.6g}]")
    c = float(np.clip(c, u2[-1], u1[-1]))
    scale = 1.0 + abs(u1[-1]) + abs(u2[-1])
    iv1_all = f1.interval_of[sel]
    if abs(c - u1[-1]) <= 1e-12 * scale or abs(c - u2[-1]) <= 1e-12 * scale:
        src_fn = f1 if abs(c - u1[-1]) <= 1e-12 * scale else f2
        cb = np.asarray([src_fn.branches[i] for i in iv1_all], dtype=np.int64)
        return SlopeFunction(mu=mu, x_mid=x_mid, widths=wid,
                             slopes=src_fn.slopes[sel].copy(),
                             core=np.ones(len(x_mid), dtype=bool),
                             cell_branch=cb)
    u_star = np.minimum(u1, u2 - u2[-1] + c)
    u_low = np.maximum(u2, u1 - u1[-1] + c)
    nodes = np.concatenate([[a], x_mid[:-1] + 0.5 * wid[:-1], [b]])

    iv1 = f1.interval_of[sel]
    b1 = np.asarray([f1.branches[i] for i in iv1])
    # rides may pass through branches neither endpoint selection uses
    branch_ids = list(range(1, 2 * structure.index[1] + 2))
    psi = {}
    feas = {}
    for j in branch_ids:
        psi[j], feas[j] = branch_inverse_grid(field, structure, j, x_mid, mu)
    legal = _pair_legality(field, structure, mu, nodes, branch_ids,
                           rule="sub")
    if incoming_branch is None:
        incoming_branch = int(b1[0])
    out_branch = int(b1[-1])

    # Two-pass DP over subsolution rides between the barriers.
    # A_j(k): largest value at node k reachable from the left on branch j
    # while staying below u*; D_j(k): largest value at node k from which a
    # branch-j continuation can reach b without crossing u*.  The Perron
    # envelope is max(u_low, max_j min(A_j, D_j)).
    NEG = -1e30
    n = len(x_mid)
    A = {j: np.full(n + 1, NEG) for j in branch_ids}
    for j in branch_ids:
        if legal[(incoming_branch, j)][0]:
            A[j][0] = 0.0
    for k in range(n):
        for j2 in branch_ids:
            best = NEG
            for j in branch_ids:
                if A[j][k] <= NEG / 2 or not feas[j][k]:
                    continue
                ridden = A[j][k] + psi[j][k] * wid[k]
                if j == j2 or legal[(j, j2)][k + 1]:
                    best = max(best, ridden)
            A[j2][k + 1] = min(best, u_star[k + 1])
    D = {j: np.full(n + 1, NEG) for j in branch_ids}
    for j in branch_ids:
        if j == out_branch or legal[(j, out_branch)][n]:
            D[j][n] = u_star[n]
    for k in range(n - 1, -1, -1):
        for j in branch_ids:
            if not feas[j][k]:
                continue
            best = NEG
            for j2 in branch_ids:
                if D[j2][k + 1] <= NEG / 2:
                    continue
                if j == j2 or legal[(j, j2)][k + 1]:
                    best = max(best, D[j2][k + 1])
            if best > NEG / 2:
                D[j][k] = min(u_star[k], best - psi[j][k] * wid[k])
    w = u_low.copy()
    for j in branch_ids:
        w = np.maximum(w, np.minimum(A[j], D[j]))
    w = np.minimum(w, u_star)
    slopes = np.diff(w) / wid
    cell_branch = np.full(len(x_mid), -1, dtype=np.int64)
    for j in branch_ids:
        hit = np.abs(slopes - psi[j]) <= 1e-7 * (1.0 + np.abs(psi[j]))
        cell_branch[hit & (cell_branch < 0)] = j
    # a regime switch falling inside a cell leaves one blended slope:
    # split that cell at the integral-preserving crossing so both pieces
    # ride actual branches and the corner is sharp
    xs_out, wd_out, sl_out, cb_out = [], [], [], []
    for k in range(len(x_mid)):
        blended = cell_branch[k] < 0 and 0 < k < len(x_mid) - 1 and \
            cell_branch[k - 1] > 0 and cell_branch[k + 1] > 0 and \
            cell_branch[k - 1] != cell_branch[k + 1]
        if blended:
            jl, jr = int(cell_branch[k - 1]), int(cell_branch[k + 1])
            sl, sr = psi[jl][k], psi[jr][k]
            if abs(sl - sr) > 1e-12:
                x_edge_l = x_mid[k] - 0.5 * wid[k]
                v1v, v2v, w1 = float(sl), float(sr), None
                ok = False
                for _ in range(3):
                    denom = v1v - v2v
                    if abs(denom) < 1e-12:
                        break
                    frac = np.clip((slopes[k] - v2v) / denom, 0.0, 1.0)
                    w1 = float(frac * wid[k])
                    if not (1e-12 < w1 < wid[k] - 1e-12):
                        break
                    m1 = x_edge_l + 0.5 * w1
                    m2 = x_edge_l + w1 + 0.5 * (wid[k] - w1)
                    a1, ok1 = branch_inverse_grid(field, structure, jl,
                                                  np.array([m1]), mu)
                    a2, ok2 = branch_inverse_grid(field, structure, jr,
                                                  np.array([m2]), mu)
                    if not (ok1[0] and ok2[0]):
                        break
                    v1v, v2v = float(a1[0]), float(a2[0])
                    ok = True
                if ok and w1 is not None and abs(v1v - v2v) > 1e-12:
                    # final split preserves the cell integral exactly
                    frac = np.clip((slopes[k] - v2v) / (v1v - v2v), 0.0, 1.0)
                    w1 = float(frac * wid[k])
                    if 1e-12 < w1 < wid[k] - 1e-12:
                        m1 = x_edge_l + 0.5 * w1
                        m2 = x_edge_l + w1 + 0.5 * (wid[k] - w1)
                        xs_out.extend([m1, m2])
                        wd_out.extend([w1, wid[k] - w1])
                        sl_out.extend([v1v, v2v])
                        cb_out.extend([jl, jr])
                        continue
        if wid[k] <= 1e-12:
            continue
        xs_out.append(x_mid[k])
        wd_out.append(wid[k])
        sl_out.append(slopes[k])
        cb_out.append(cell_branch[k])
    return SlopeFunction(mu=mu, x_mid=np.asarray(xs_out),
                         widths=np.asarray(wd_out),
                         slopes=np.asarray(sl_out),
                         core=np.ones(len(xs_out), dtype=bool),
                         cell_branch=np.asarray(cb_out, dtype=np.int64))


# ---------------------------------------------------------------------------
# level sets and level pieces
# ---------------------------------------------------------------------------

def level_sets(fields, structure, mu_grid, window_cells=100,
               n_dominance=60, isotonic_tol=None):
    """I_mu = [mean(f_inf), mean(f_sup)] per level, with cross-seed CI and
    an isotonic cleanup inside the CI; overlaps beyond it raise
    LevelSetConflict."""
    if isinstance(fields, HamiltonianField):
        fields = [fields]
    cell = fields[0].period if fields[0].period is not None \
        else (fields[0].cell_length or 1.0)
    window = (0.0, window_cells * cell)
    out = []
    for mu in mu_grid:
        lows, highs = [], []
        for f in fields:
            decomp = admissible_decomposition(f, structure, mu, window)
            f_lo = extremal_admissible(f, structure, mu, window, "inf",
                                       decomposition=decomp,
                                       n_dominance=n_dominance)
            f_hi = extremal_admissible(f, structure, mu, window, "sup",
                                       decomposition=decomp,
                                       n_dominance=n_dominance)
            if np.any(f_hi.slopes < f_lo.slopes - 1e-9):
                raise NotPointwiseExtremal(
                    f"sup-extremal below inf-extremal at mu={mu:.6g}")
            lows.append(f_lo.mean())
            highs.append(f_hi.mean())
        ci = max(np.ptp(lows) if len(lows) > 1 else 0.0,
                 np.ptp(highs) if len(highs) > 1 else 0.0)
        out.append({"mu": float(mu), "p_lo": float(np.mean(lows)),
                    "p_hi": float(np.mean(highs)), "ci": float(ci)})
    out.sort(key=lambda r: r["mu"])
    # enforce ordering within the confidence intervals
    for prev, cur in zip(out, out[1:]):
        tol = isotonic_tol if isotonic_tol is not None \
            else prev["ci"] + cur["ci"] + 1e-9
        if cur["p_lo"] < prev["p_hi"] - tol:
            raise LevelSetConflict(
                f"I_mu at mu={cur['mu']:.6g} overlaps mu={prev['mu']:.6g} "
                f"beyond the confidence interval")
        if cur["p_lo"] < prev["p_hi"]:
            mid = 0.5 * (cur["p_lo"] + prev["p_hi"])
            prev["p_hi"] = min(prev["p_hi"], mid)
            cur["p_lo"] = max(cur["p_lo"], mid)
    return out


def level_piece_function(field, structure, mu, p, window_cells=100,
                         tol_mean=1e-4, max_bisect=50):
    """A stationary selection with prescribed core mean p inside I_mu,
    built by bisecting the homotopy parameter across the intervals where
    the two extremal selections differ."""
    cell = field.period if field.period is not None else (field.cell_length or 1.0)
    window = (0.0, window_cells * cell)
    decomp = admissible_decomposition(field, structure, mu, window)
    f_lo = extremal_admissible(field, structure, mu, window, "inf",
                               decomposition=decomp, n_dominance=40)
    f_hi = extremal_admissible(field, structure, mu, window, "sup",
                               decomposition=decomp, n_dominance=40)
    if not (f_lo.mean() - tol_mean <= p <= f_hi.mean() + tol_mean):
        raise ValueError(f"p={p:.6g} outside I_mu=[{f_lo.mean():.6g}, "
                         f"{f_hi.mean():.6g}]")
    for fn, t_end in ((f_hi, 1.0), (f_lo, 0.0)):
        if abs(p - fn.mean()) <= tol_mean:
            cb = np.asarray([fn.branches[i] for i in fn.interval_of],
                            dtype=np.int64)
            out = SlopeFunction(mu=mu, x_mid=fn.x_mid, widths=fn.widths,
                                slopes=fn.slopes.copy(), core=fn.core,
                                cell_branch=cb)
            return out, t_end
    runs = _unequal_runs(f_hi, f_lo, decomp)

    cell = field.period if field.period is not None else (field.cell_length or 1.0)
    buf = BUFFER_CELLS * cell
    x_hi_w = window_cells * cell

    hi_branch = np.asarray([f_hi.branches[i] for i in f_hi.interval_of],
                           dtype=np.int64)

    def assemble(t):
        # stitch homotopy pieces (whose refinement may add cells) between
        # the unchanged segments
        segs = []
        cursor = 0.0
        for (a, b, i0, i1) in runs:
            keep = (f_hi.x_mid > cursor) & (f_hi.x_mid < a)
            segs.append((f_hi.x_mid[keep], f_hi.widths[keep],
                         f_hi.slopes[keep], hi_branch[keep]))
            sel = (f_hi.x_mid >= a - 1e-12) & (f_hi.x_mid <= b + 1e-12)
            d_hi = float(np.sum(f_hi.slopes[sel] * f_hi.widths[sel]))
            d_lo = float(np.sum(f_lo.slopes[sel] * f_lo.widths[sel]))
            c = t * d_hi + (1.0 - t) * d_lo
            inc = f_hi.branches[i0 - 1] if i0 > 0 else None
            w = homotopy_interpolant(field, structure, mu, f_hi, f_lo,
                                     (a, b), c, incoming_branch=inc)
            segs.append((w.x_mid, w.widths, w.slopes, w.cell_branch))
            cursor = b
        keep = f_hi.x_mid > cursor
        segs.append((f_hi.x_mid[keep], f_hi.widths[keep], f_hi.slopes[keep],
                     hi_branch[keep]))
        xs = np.concatenate([s[0] for s in segs])
        wd = np.concatenate([s[1] for s in segs])
        sl = np.concatenate([s[2] for s in segs])
        cb = np.concatenate([s[3] for s in segs])
        core = (xs >= buf) & (xs <= x_hi_w - buf)
        return SlopeFunction(mu=mu, x_mid=xs, widths=wd, slopes=sl,
                             core=core, cell_branch=cb)

    lo_t, hi_t = 0.0, 1.0
    for _ in range(max_bisect):
        t = 0.5 * (lo_t + hi_t)
        cand = assemble(t)
        m = cand.mean()
        if abs(m - p) <= tol_mean:
            return cand, t
        if m < p:
            lo_t = t
        else:
            hi_t = t
    cand = assemble(0.5 * (lo_t + hi_t))
    if abs(cand.mean() - p) > 10 * tol_mean:
        raise ValueError("homotopy bisection failed to match the target mean")
    return cand, 0.5 * (lo_t + hi_t)


def _unequal_runs(f_hi, f_lo, decomp):
    """Maximal runs of decomposition intervals where the selections differ."""
    runs = []
    start = None
    for i, (bh, bl) in enumerate(zip(f_hi.branches, f_lo.branches)):
        if bh != bl and start is None:
            start = i
        if bh == bl and start is not None:
            runs.append((decomp.intervals[start][0],
                         decomp.intervals[i - 1][1], start, i - 1))
            start = None
    if start is not None:
        runs.append((decomp.intervals[start][0], decomp.intervals[-1][1],
                     start, len(f_hi.branches) - 1))
    return runs


# ---------------------------------------------------------------------------
# extreme level and the assembled curve
# ---------------------------------------------------------------------------

def extreme_level(field, structure, window_cells=100, mu_neg=None,
                  tol_norm=1e-6):
    """Flat minimum piece [E z_l, E f_inf_0] and negative-side samples
    p_mu = E[Psi(mu)] with Psi the decreasing-branch inverse."""
    cell = field.period if field.period is not None else (field.cell_length or 1.0)
    window = (0.0, window_cells * cell)
    x_mid, widths, core = _window_grid(field, window)
    h0 = field.evaluate(0.0, x_mid)
    if np.max(h0) > tol_norm:
        raise NormalizationViolated(
            f"esssup H(0, x) = {np.max(h0):.3g} > 0 on probes")
    z_l, feas = branch_inverse_grid(field, structure, 1, x_mid, 0.0, side="-")
    if not feas.all():
        raise NormalizationViolated("negative branch does not reach level 0")
    wc = widths[core] / np.sum(widths[core])
    e_zl = float(np.sum(z_l[core] * wc))
    f_lo = extremal_admissible(field, structure, 0.0, window, "inf",
                               n_dominance=40)
    q0 = f_lo.mean()
    neg = []
    if mu_neg is not None:
        for mu in mu_neg:
            psi, ok = branch_inverse_grid(field, structure, 1, x_mid, mu,
                                          side="-")
            if ok.all():
                neg.append((float(np.sum(psi[core] * wc)), float(mu)))
    return {"e_zl": e_zl, "q0": q0, "negative": neg, "f_inf_0": f_lo}


def default_mu_grid(M_bar, n=15):
    """Level 0 plus log-spaced levels in [0.05, 0.95] * M_bar, avoiding the
    extremes where junctions cluster."""
    if M_bar <= 0:
        return np.array([0.0])
    levels = 0.05 * M_bar * (19.0 ** np.linspace(0.0, 1.0, n - 1))
    return np.concatenate([[0.0], levels])


def assemble_effective_curve(field, structure, mu_points=15, window_cells=100,
                             p_lo=-4.0, p_hi=4.0, seeds_fields=None,
                             n_dominance=60):
    """Merge negative-side samples, the flat minimum piece, the level sets
    and the high-level branch-1 tail into one sampled curve.

    Gap regions between level intervals interpolate monotonically and are
    tagged "interp"; the result is checked for level-set convexity.
    """
    fields = seeds_fields or [field]
    cell = field.period if field.period is not None else (field.cell_length or 1.0)
    window = (0.0, window_cells * cell)
    x_probe, _, _ = _window_grid(field, window)
    pos_max = structure.positive_maxima()
    M_bar = float(field.evaluate(pos_max[:, None], x_probe[None, :]).max())
    mu_grid = default_mu_grid(M_bar, mu_points)
    levels = level_sets(fields, structure, mu_grid[mu_grid > 0],
                        window_cells=window_cells, n_dominance=n_dominance)

    mu_hi_cap = float(np.min(field.evaluate(p_hi, x_probe)))
    mu_lo_cap = float(np.min(field.evaluate(p_lo, x_probe)))

    x_mid, widths, core = _window_grid(field, window, samples_per_cell=8)
    wc = widths[core] / np.sum(widths[core])

    def mean_branch1(mu, side):
        psi, ok = branch_inverse_grid(field, structure, 1, x_mid, float(mu),
                                      side=side)
        return float(np.sum(psi[core] * wc)) if ok.all() else None

    # dense geometric level ladders keep the steep tails well sampled in p
    neg_mus = []
    if mu_lo_cap > 0.02 * M_bar:
        neg_mus = np.geomspace(0.01 * max(M_bar, 1e-3), mu_lo_cap + 1.0, 100)
    ext = extreme_level(field, structure, window_cells=window_cells,
                        mu_neg=neg_mus)
    ps, vs, buds, srcs = [], [], [], []
    intervals = []
    for p_mu, mu in sorted(ext["negative"]):
        ps.append(p_mu)
        vs.append(mu)
        buds.append(0.0)
        srcs.append("negative")
    for p in (ext["e_zl"], ext["q0"]):
        ps.append(p)
        vs.append(0.0)
        buds.append(0.0)
        srcs.append("flat")
    for rec in levels:
        for key in ("p_lo", "p_hi"):
            ps.append(rec[key])
            vs.append(rec["mu"])
            buds.append(rec["ci"])
            srcs.append("level")
        intervals.append(rec)
    if mu_hi_cap > M_bar:
        for mu in np.geomspace(M_bar * 1.01, mu_hi_cap + 1.0, 100):
            pm = mean_branch1(mu, "+")
            if pm is not None:
                ps.append(pm)
                vs.append(float(mu))
                buds.append(0.0)
                srcs.append("level")
    curve = EffectiveCurve(np.asarray(ps), np.asarray(vs), np.asarray(buds),
                           srcs, level_intervals=intervals,
                           flat=(ext["e_zl"], ext["q0"], 0.0))
    if not curve.is_level_set_convex(tol=1e-7 + 2 * max(buds, default=0.0)):
        raise LevelSetConflict("assembled curve is not level-set convex")
    return curve
