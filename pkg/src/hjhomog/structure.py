"""Constrained-Hamiltonian structure: branch detection, the piecewise-linear
constrained constructor, coincidence decluttering, branch inversion,
oscillation classification and normalization.

A constrained field has finitely many x-independent breakpoints on the
p-axis, alternating local minima and maxima, with the outermost intervals
monotone.  Breakpoints are stored ascending; minima sit at even positions,
maxima at odd ones.  After normalization the chosen central minimum is at
p = 0 and the probed esssup of H(0, x) is 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import brentq

from .env import HamiltonianField
from .errors import (NotApplicable, NotConstrained, OutOfBranchRange,
                     ProfileError, UnstableStatistics)

TOL_INV = 1e-10


# ---------------------------------------------------------------------------
# structure record
# ---------------------------------------------------------------------------

@dataclass
class ConstrainedStructure:
    """Breakpoints and branch bookkeeping of a constrained Hamiltonian."""

    breakpoints: np.ndarray
    central_pos: int
    lipschitz: float
    p_box: float
    p_shift: float = 0.0
    mu_shift: float = 0.0
    normalized: bool = False

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=np.float64)
        if self.central_pos % 2 != 0:
            raise NotConstrained("central breakpoint must be a local minimum")

    @property
    def minima(self):
        return self.breakpoints[0::2]

    @property
    def maxima(self):
        return self.breakpoints[1::2]

    @property
    def central(self):
        return float(self.breakpoints[self.central_pos])

    @property
    def index(self):
        """(L_tilde, L): well counts strictly left / right of the central one."""
        left = self.central_pos // 2
        right = len(self.minima) - 1 - left
        return (left, right)

    @property
    def wells(self):
        return len(self.minima)

    def positive_minima(self):
        """Positive well locations p_j, outermost first (descending)."""
        pos = self.breakpoints[self.central_pos + 2:: 2]
        return pos[::-1]

    def positive_maxima(self):
        """Positive hill locations q_j, outermost first."""
        pos = self.breakpoints[self.central_pos + 1:: 2]
        return pos[::-1]

    def negative_minima(self):
        """Negative well locations, outermost first (most negative)."""
        return self.breakpoints[: self.central_pos: 2]

    def negative_maxima(self):
        return self.breakpoints[1: self.central_pos: 2]

    def branch_interval(self, j, side="+"):
        """p-interval of monotone branch j (outermost-first, 1-based).

        Positive side: branch 1 is [p_1, inf) increasing, branch 2L+1 is
        [central, q_L] increasing.  Negative side mirrored, branch 1 is
        (-inf, p~_1] decreasing.
        """
        _, L = self.index
        Lt = self.index[0]
        if side == "+":
            pos = self.breakpoints[self.central_pos:]
            n = 2 * L + 1
            if not 1 <= j <= n:
                raise OutOfBranchRange(f"no positive branch {j}")
            if j == 1:
                return float(pos[-1]), np.inf
            return float(pos[n - j]), float(pos[n - j + 1])
        pos = self.breakpoints[: self.central_pos + 1]
        n = 2 * Lt + 1
        if not 1 <= j <= n:
            raise OutOfBranchRange(f"no negative branch {j}")
        if j == 1:
            return -np.inf, float(pos[0])
        return float(pos[j - 2]), float(pos[j - 1])

    def branch_increasing(self, j, side="+"):
        """Odd positive branches increase; odd negative branches decrease."""
        return j % 2 == 1 if side == "+" else j % 2 == 0

    def shifted(self, p_shift, mu_shift):
        return ConstrainedStructure(
            self.breakpoints - p_shift, self.central_pos, self.lipschitz,
            self.p_box, self.p_shift + p_shift, self.mu_shift + mu_shift,
            normalized=True)

    def to_dict(self):
        return {"breakpoints": [float(b) for b in self.breakpoints],
                "central_pos": int(self.central_pos),
                "index": list(self.index),
                "lipschitz": float(self.lipschitz),
                "p_shift": float(self.p_shift),
                "mu_shift": float(self.mu_shift),
                "normalized": bool(self.normalized)}


class ExtremaProcesses:
    """Local extreme value processes m_j(x) = H(p_j, x), M_j(x) = H(q_j, x)
    and the pointwise envelopes m(x) (min over non-central minima) and
    M(x) (max over maxima)."""

    def __init__(self, field, structure):
        self.field = field
        self.structure = structure
        c = structure.central_pos
        bps = structure.breakpoints
        self._noncentral_minima = np.concatenate([bps[:c:2], bps[c + 2:: 2]])
        self._maxima = bps[1::2]

    def minima_values(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return self.field.evaluate(self._noncentral_minima[:, None], x[None, :])

    def maxima_values(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return self.field.evaluate(self._maxima[:, None], x[None, :])

    def m(self, x):
        if len(self._noncentral_minima) == 0:
            raise NotApplicable("no non-central wells: m(x) undefined")
        return self.minima_values(x).min(axis=0)

    def M(self, x):
        if len(self._maxima) == 0:
            raise NotApplicable("no interior maxima: M(x) undefined")
        return self.maxima_values(x).max(axis=0)

    def m_positive(self, j, x):
        """m_j(x) on the positive side, outermost-first numbering."""
        pj = self.structure.positive_minima()[j - 1]
        return self.field.evaluate(pj, np.asarray(x, dtype=np.float64))

    def M_positive(self, j, x):
        qj = self.structure.positive_maxima()[j - 1]
        return self.field.evaluate(qj, np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# field wrappers
# ---------------------------------------------------------------------------

class TransformedField(HamiltonianField):
    """H'(p, x) = H(p + p_shift, x) - mu_shift."""

    def __init__(self, base, p_shift, mu_shift):
        super().__init__()
        self.base = base
        self.p_shift = float(p_shift)
        self.mu_shift = float(mu_shift)
        self.period = base.period
        self.cell_length = base.cell_length
        self.deterministic = base.deterministic

    def _eval(self, p, x):
        return np.asarray(self.base.evaluate(np.asarray(p) + self.p_shift, x)) \
            - self.mu_shift


class PLConstrainedField(HamiltonianField):
    """Piecewise-linear-in-p constrained approximation of a base field.

    Nodes at -n + k/n carry the base values; each midpoint value is the max
    of its two neighbor nodes plus 1/n, which makes every node a strict
    local minimum (2 n^2 + 1 wells).  Outside [-n, n] the field continues
    with the cones |p -+ n| + H(+-n, x).
    """

    def __init__(self, base, n):
        super().__init__()
        if n < 1 or (n & (n - 1)) != 0:
            raise ProfileError("n must be a power of two")
        self.base = base
        self.n = int(n)
        self.period = base.period
        self.cell_length = base.cell_length
        self.deterministic = base.deterministic

    def _half_value(self, j, x):
        # value at half-grid point index j (0 .. 4n^2), even = node
        n = self.n
        h = 0.5 / n
        pj = -n + j * h
        even = (j % 2) == 0
        out = np.empty(np.broadcast(pj, x).shape, dtype=np.float64)
        if np.any(even):
            out[even] = self.base.evaluate(pj[even] if np.ndim(pj) else pj,
                                           x[even] if np.ndim(x) else x)
        odd = ~even
        if np.any(odd):
            pl = (pj - h)[odd] if np.ndim(pj) else pj - h
            pr = (pj + h)[odd] if np.ndim(pj) else pj + h
            xo = x[odd] if np.ndim(x) else x
            out[odd] = np.maximum(self.base.evaluate(pl, xo),
                                  self.base.evaluate(pr, xo)) + 1.0 / n
        return out

    def _eval(self, p, x):
        shape = np.broadcast(p, x).shape
        p, x = np.broadcast_arrays(np.asarray(p, float), np.asarray(x, float))
        p, x = np.atleast_1d(p).ravel(), np.atleast_1d(x).ravel()
        n = self.n
        h = 0.5 / n
        out = np.empty(p.shape, dtype=np.float64)
        lo, hi = p < -n, p > n
        if np.any(lo):
            out[lo] = np.abs(p[lo] + n) + self.base.evaluate(-n, x[lo])
        if np.any(hi):
            out[hi] = np.abs(p[hi] - n) + self.base.evaluate(n, x[hi])
        mid = ~(lo | hi)
        if np.any(mid):
            u = (p[mid] + n) / h
            k = np.clip(np.floor(u).astype(np.int64), 0, 4 * n * n - 1)
            t = u - k
            v0 = self._half_value(k, x[mid])
            v1 = self._half_value(k + 1, x[mid])
            out[mid] = (1.0 - t) * v0 + t * v1
        return out.reshape(shape)


class DeclutteredField(HamiltonianField):
    """Base field plus the interpolated separation bump on coincident slices.

    For each slice p = i/n on [-n, n], local extrema of x -> H(i/n, x) over
    the probe window are collected; a slice is coincident when its range is
    below tol_cluster or two distinct extrema agree within tol_cluster.
    Coincident slices receive (1/n) * ref(x) / (max|ref| + 1), with ref the
    clean slice of smallest |i|; the bump interpolates linearly between
    slices and is constant outside [-n, n], so the sup distance to the base
    is below 1/n.
    """

    def __init__(self, base, n, tol_cluster=None):
        super().__init__()
        self.base = base
        self.n = int(n)
        self.period = base.period
        self.cell_length = base.cell_length
        self.deterministic = base.deterministic
        xs = base.probe_xs(1024)
        idx = np.arange(-n * n, n * n + 1)
        slices = base.evaluate((idx / n)[:, None], xs[None, :])
        rng_all = slices.max() - slices.min()
        self.tol_cluster = (1e-8 * max(rng_all, 1.0)
                            if tol_cluster is None else float(tol_cluster))
        marks = np.zeros(len(idx), dtype=bool)
        for r, s in enumerate(slices):
            marks[r] = self._coincident(s)
        self.marks = marks
        self._ref = None
        clean = np.nonzero(~marks)[0]
        if len(clean) > 0:
            order = sorted(clean, key=lambda r: (abs(int(idx[r])), -int(idx[r])))
            self._ref_i = int(idx[order[0]])
            ref_vals = slices[order[0]]
            self._ref_norm = float(np.max(np.abs(ref_vals))) + 1.0
            self._ref = True

    def _coincident(self, s):
        if s.max() - s.min() < self.tol_cluster:
            return True
        d = np.diff(s)
        sign = np.sign(d)
        nz = sign != 0
        flips = np.nonzero(np.diff(sign[nz]) != 0)[0]
        pos = np.nonzero(nz)[0]
        ext = s[pos[flips] + 1]
        if len(ext) < 2:
            return False
        ext = np.sort(ext)
        return bool(np.any(np.diff(ext) < self.tol_cluster))

    def bump(self, p, x):
        if self._ref is None or not self.marks.any():
            return np.zeros(np.broadcast(np.asarray(p), np.asarray(x)).shape)
        n = self.n
        grid = np.arange(-n * n, n * n + 1) / n
        w = np.interp(np.asarray(p, dtype=np.float64), grid,
                      self.marks.astype(np.float64))
        ref = self.base.evaluate(self._ref_i / n, np.asarray(x, dtype=np.float64))
        return (1.0 / n) * w * ref / self._ref_norm

    def _eval(self, p, x):
        return np.asarray(self.base.evaluate(p, x)) + self.bump(p, x)


def build_constrained_approx(field, n):
    """Constrained PL approximation with nodes i/n on [-n, n] and its
    structure (known by construction: every half-grid point is a
    breakpoint, nodes are minima, midpoints maxima, 2 n^2 + 1 wells).
    n must be a power of two."""
    approx = PLConstrainedField(field, n)
    bps = -n + np.arange(4 * n * n + 1) * (0.5 / n)
    rho = field.modulus(-float(n), float(n))
    structure = ConstrainedStructure(
        breakpoints=bps, central_pos=2 * n * n,
        lipschitz=1.0 + n * rho(1.0 / n), p_box=n + 0.5)
    return approx, structure


def declutter(field, n, tol_cluster=None):
    return DeclutteredField(field, n, tol_cluster)


# ---------------------------------------------------------------------------
# branch detection
# ---------------------------------------------------------------------------

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _refine_extremum(field, x, a, b, kind):
    # golden-section search; unbiased at kinks and smooth extrema alike
    s = 1.0 if kind == 1 else -1.0
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc = s * field.evaluate(c, x)
    fd = s * field.evaluate(d, x)
    for _ in range(90):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = s * field.evaluate(c, x)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = s * field.evaluate(d, x)
        if b - a < 1e-13 * (1.0 + abs(a)):
            break
    return 0.5 * (a + b)


def _breakpoints_one_probe(field, x, p_box, n_grid):
    ps = np.linspace(-p_box, p_box, n_grid)
    step = ps[1] - ps[0]
    h = 0.25 * step
    g = field.evaluate(ps + h, x) - field.evaluate(ps - h, x)
    sign = np.sign(g)
    # treat exact zeros as the sign about to come
    for i in range(len(sign) - 2, -1, -1):
        if sign[i] == 0:
            sign[i] = sign[i + 1]
    flips = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    kinds = [1 if sign[i] < 0 else -1 for i in flips]  # 1 = minimum
    roots = [_refine_extremum(field, x, ps[i] - step, ps[i + 1] + step, k)
             for i, k in zip(flips, kinds)]
    return np.asarray(roots), kinds


def default_p_box(field):
    m0 = max(field.sup_abs_on(-1.0), field.sup_abs_on(0.0), field.sup_abs_on(1.0))
    return max(3.0, field.coercivity_radius(m0 + 1.0) + 0.5)


def _tie_break(minima, tol=None):
    """Central-well tie-break: smallest |p| within tolerance, then smallest p."""
    minima = np.asarray(minima, dtype=np.float64)
    if tol is None:
        tol = 1e-6 * (1.0 + np.max(np.abs(minima)))
    a_min = np.min(np.abs(minima))
    eligible = np.nonzero(np.abs(minima) <= a_min + tol)[0]
    return int(eligible[np.argmin(minima[eligible])])


def detect_branches(field, p_box=None, n_probes=8, n_grid=2001,
                    tol_bp=None, central=None):
    """Locate x-independent breakpoints by sign changes of dH/dp.

    Breakpoints are found per probe x on a fine p-grid, refined by
    bisection, then required to agree across probes within tol_bp; larger
    drift raises NotConstrained naming the offending probe pair.
    Returns (ConstrainedStructure, ExtremaProcesses).
    """
    if p_box is None:
        p_box = default_p_box(field)
    if tol_bp is None:
        tol_bp = 1e-4 * 2 * p_box
    if field.period is not None:
        xs = np.linspace(0.0, field.period, n_probes, endpoint=False) + \
            0.0371 * field.period
    else:
        ell = field.cell_length or 1.0
        xs = np.linspace(0.0, 24 * ell, n_probes, endpoint=False) + 0.37 * ell

    all_roots, all_kinds = [], []
    for x in xs:
        r, k = _breakpoints_one_probe(field, float(x), p_box, n_grid)
        all_roots.append(r)
        all_kinds.append(k)
    counts = {len(r) for r in all_roots}
    if len(counts) != 1:
        raise NotConstrained(
            f"breakpoint count varies across x probes: {sorted(counts)}")
    roots = np.stack(all_roots)
    drift = roots.max(axis=0) - roots.min(axis=0) if roots.shape[1] else np.zeros(0)
    if roots.shape[1] and drift.max() > tol_bp:
        j = int(np.argmax(drift))
        i_lo, i_hi = int(np.argmin(roots[:, j])), int(np.argmax(roots[:, j]))
        raise NotConstrained(
            f"breakpoint {j} drifts {drift.max():.3g} between x={xs[i_lo]:.6g} "
            f"and x={xs[i_hi]:.6g}")
    bps = np.median(roots, axis=0)
    kinds = all_kinds[0]
    if len(bps) == 0:
        raise NotConstrained("no breakpoints found: field is monotone in p")
    if kinds[0] != 1 or kinds[-1] != 1 or any(
            kinds[i] == kinds[i + 1] for i in range(len(kinds) - 1)):
        raise NotConstrained("breakpoints do not alternate min/max")

    minima = bps[0::2]
    if central is not None:
        c_idx = int(np.argmin(np.abs(minima - central)))
    else:
        c_idx = _tie_break(minima)
    structure = ConstrainedStructure(
        breakpoints=bps, central_pos=2 * c_idx,
        lipschitz=field.lipschitz_on(p_box), p_box=float(p_box))
    return structure, ExtremaProcesses(field, structure)


# ---------------------------------------------------------------------------
# branch inversion
# ---------------------------------------------------------------------------

def _capped_interval(field, structure, j, side, mu):
    lo, hi = structure.branch_interval(j, side)
    if np.isinf(hi):
        hi = max(field.coercivity_radius(abs(mu) + 1.0), lo + 1.0)
    if np.isinf(lo):
        lo = min(-field.coercivity_radius(abs(mu) + 1.0), hi - 1.0)
    return lo, hi


def branch_inverse(field, structure, j, x, mu, side="+"):
    """p with H(p, x) = mu on monotone branch j; |H(p,x) - mu| <= 1e-10."""
    lo, hi = _capped_interval(field, structure, j, side, mu)
    v_lo, v_hi = field.evaluate(lo, x), field.evaluate(hi, x)
    v_min, v_max = min(v_lo, v_hi), max(v_lo, v_hi)
    if not (v_min - TOL_INV <= mu <= v_max + TOL_INV):
        raise OutOfBranchRange(
            f"mu={mu:.6g} outside branch {side}{j} range "
            f"[{v_min:.6g}, {v_max:.6g}] at x={x:.6g}")
    if abs(v_lo - mu) <= TOL_INV:
        return float(lo)
    if abs(v_hi - mu) <= TOL_INV:
        return float(hi)
    root = brentq(lambda p: field.evaluate(p, x) - mu, lo, hi,
                  xtol=1e-14, rtol=8.9e-16)
    return float(root)


def branch_inverse_grid(field, structure, j, xs, mu, side="+"):
    """Vectorized branch inversion over x; returns (p, feasible_mask)."""
    xs = np.asarray(xs, dtype=np.float64)
    lo0, hi0 = _capped_interval(field, structure, j, side, mu)
    lo = np.full(xs.shape, lo0)
    hi = np.full(xs.shape, hi0)
    v_lo = field.evaluate(lo0, xs)
    v_hi = field.evaluate(hi0, xs)
    increasing = structure.branch_increasing(j, side)
    v_min = np.minimum(v_lo, v_hi)
    v_max = np.maximum(v_lo, v_hi)
    feasible = (v_min - TOL_INV <= mu) & (mu <= v_max + TOL_INV)
    for _ in range(70):
        mid = 0.5 * (lo + hi)
        below = field.evaluate(mid, xs) < mu
        take_lo = below if increasing else ~below
        lo = np.where(take_lo, mid, lo)
        hi = np.where(take_lo, hi, mid)
    out = 0.5 * (lo + hi)
    return np.where(feasible, out, np.nan), feasible


# ---------------------------------------------------------------------------
# oscillation classification
# ---------------------------------------------------------------------------

@dataclass
class OscillationStats:
    """Window statistics driving the small/large oscillation dichotomy."""

    small: bool
    M_lo: float          # essinf of the max process
    m_hi: float          # esssup of the min process
    M_hi: float          # esssup of the max process
    m_lo: float          # essinf of the min process
    k_lo: int            # positive branch attaining M_lo
    k_hi: int            # positive branch attaining m_hi
    P: float             # p_{k_hi}
    Q: float             # q_{k_lo}
    q_k_hi: float        # q_{k_hi}
    dispersion: float
    per_seed: list = dc_field(default_factory=list)


def classify_oscillation(fields, structure, window_cells=100,
                         samples_per_cell=16):
    """Small vs large oscillation from window extrema of m(x) and M(x).

    ``fields`` is one realization or a list (one per seed); statistics are
    averaged across them and the spread reported as dispersion.  The
    arg-branches are taken on the positive side, as required by the
    one-sided gluing constructions.
    """
    if isinstance(fields, HamiltonianField):
        fields = [fields]
    pos_min = structure.positive_minima()
    pos_max = structure.positive_maxima()
    if len(pos_min) == 0:
        raise NotApplicable("no positive-side wells to classify")
    rows = []
    for f in fields:
        cell = f.period if f.period is not None else (f.cell_length or 1.0)
        xs = np.linspace(0.0, window_cells * cell,
                         window_cells * samples_per_cell, endpoint=False)
        proc = ExtremaProcesses(f, structure)
        m_vals = proc.m(xs)
        M_vals = proc.M(xs)
        per_max = f.evaluate(pos_max[:, None], xs[None, :])
        per_min = f.evaluate(pos_min[:, None], xs[None, :])
        rows.append({
            "M_lo": float(M_vals.min()), "m_hi": float(m_vals.max()),
            "M_hi": float(M_vals.max()), "m_lo": float(m_vals.min()),
            "essinf_Mj": per_max.min(axis=1), "esssup_mj": per_min.max(axis=1)})
    M_lo = float(np.mean([r["M_lo"] for r in rows]))
    m_hi = float(np.mean([r["m_hi"] for r in rows]))
    M_hi = float(np.mean([r["M_hi"] for r in rows]))
    m_lo = float(np.mean([r["m_lo"] for r in rows]))
    spread = max(
        np.ptp([r["M_lo"] for r in rows]), np.ptp([r["m_hi"] for r in rows]))
    span = max(M_hi - m_lo, 1e-30)
    if spread > 0.1 * span:
        warnings.warn(
            f"cross-seed dispersion {spread:.3g} exceeds 10% of the "
            f"oscillation span {span:.3g}", UnstableStatistics)
    essinf_Mj = np.mean([r["essinf_Mj"] for r in rows], axis=0)
    esssup_mj = np.mean([r["esssup_mj"] for r in rows], axis=0)
    k_lo = int(np.argmax(essinf_Mj)) + 1
    k_hi = int(np.argmin(esssup_mj)) + 1
    return OscillationStats(
        small=M_lo >= m_hi, M_lo=M_lo, m_hi=m_hi, M_hi=M_hi, m_lo=m_lo,
        k_lo=k_lo, k_hi=k_hi,
        P=float(pos_min[k_hi - 1]), Q=float(pos_max[k_lo - 1]),
        q_k_hi=float(pos_max[k_hi - 1]),
        dispersion=float(spread), per_seed=rows)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def esssup_probe(field, p, window_cells=200, samples_per_cell=32):
    cell = field.period if field.period is not None else (field.cell_length or 1.0)
    xs = np.linspace(0.0, window_cells * cell,
                     window_cells * samples_per_cell, endpoint=False)
    return float(np.max(field.evaluate(p, xs)))


def normalize(field, structure, central=None):
    """Shift coordinates so a central minimum sits at p = 0 with probed
    esssup H(0, x) = 0.

    The central well defaults to the tie-break (smallest |p|, then smallest
    p); pass ``central`` to pick another minimum.  Returns
    (field', structure', p_shift, mu_shift) with
    Hbar_orig(p) = Hbar_norm(p - p_shift) + mu_shift.
    """
    minima = structure.minima
    if len(minima) == 0:
        raise NotApplicable("no local minimum breakpoint")
    if central is not None:
        c_idx = int(np.argmin(np.abs(minima - central)))
    else:
        c_idx = _tie_break(minima)
    p_shift = float(minima[c_idx])
    mu_shift = esssup_probe(field, p_shift)
    out = TransformedField(field, p_shift, mu_shift)
    new_structure = structure.shifted(p_shift, mu_shift)
    new_structure.central_pos = 2 * c_idx
    return out, new_structure, p_shift, mu_shift

