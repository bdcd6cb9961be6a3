"""Reduction machinery for constrained Hamiltonians.

The engine splits a two-sided field at its central minimum, classifies
each one-sided piece by oscillation, and either rewrites it with steep
cone modifications (small oscillation), nudges a degenerate tie with the
tilt hat (M_lo == m_hi), or stops at a large-oscillation or quasi-convex
leaf.  Every rewrite records the combination rule that reassembles the
effective Hamiltonian from the children, so an effective curve can be
evaluated bottom-up and cross-checked against the direct discounted-solver
route.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .curve import EffectiveCurve
from .env import HamiltonianField
from .errors import NotApplicable, ReductionStalled
from .structure import (ConstrainedStructure, classify_oscillation,
                        detect_branches, normalize)
from . import cell_solver as _cs


# ---------------------------------------------------------------------------
# modified fields
# ---------------------------------------------------------------------------

class ConeAboveField(HamiltonianField):
    """H below the splice, the slope-L cone above it:
    H1-type modification, kills all structure right of Q."""

    def __init__(self, base, Q, L):
        super().__init__()
        self.base = base
        self.Q = float(Q)
        self.L = float(L)
        self.period = base.period
        self.cell_length = base.cell_length
        self.deterministic = base.deterministic

    def _eval(self, p, x):
        p = np.asarray(p, dtype=np.float64)
        base_at_q = self.base.evaluate(self.Q, x)
        inner = self.base.evaluate(np.minimum(p, self.Q), x)
        return np.where(p > self.Q, self.L * np.abs(p - self.Q) + base_at_q, inner)


class ConeBelowField(HamiltonianField):
    """H above the splice, the slope-L cone below it."""

    def __init__(self, base, q, L):
        super().__init__()
        self.base = base
        self.q = float(q)
        self.L = float(L)
        self.period = base.period
        self.cell_length = base.cell_length
        self.deterministic = base.deterministic

    def _eval(self, p, x):
        p = np.asarray(p, dtype=np.float64)
        base_at_q = self.base.evaluate(self.q, x)
        inner = self.base.evaluate(np.maximum(p, self.q), x)
        return np.where(p < self.q, self.L * np.abs(p - self.q) + base_at_q, inner)


class MaxField(HamiltonianField):
    def __init__(self, f1, f2):
        super().__init__()
        self.f1, self.f2 = f1, f2
        self.period = f1.period
        self.cell_length = f1.cell_length
        self.deterministic = f1.deterministic and f2.deterministic

    def _eval(self, p, x):
        return np.maximum(self.f1.evaluate(p, x), self.f2.evaluate(p, x))


class ReflectedCapField(HamiltonianField):
    """The right-steep-side middle modification: H on [0, P], slopes -L
    leaving both ends.  The raw display is not coercive, so the downslopes
    are capped at the probed minimum minus one and continue upward with
    slope +L; the cap only matters far outside [0, P]."""

    def __init__(self, base, P, L):
        super().__init__()
        self.base = base
        self.P = float(P)
        self.L = float(L)
        self.period = base.period
        self.cell_length = base.cell_length
        self.deterministic = base.deterministic
        xs = base.probe_xs(512)
        ps = np.linspace(0.0, P, 129)
        self._floor = float(base.evaluate(ps[:, None], xs[None, :]).min()) - 1.0

    def _eval(self, p, x):
        p = np.asarray(p, dtype=np.float64)
        inner = self.base.evaluate(np.clip(p, 0.0, self.P), x)
        down = np.where(p < 0.0, inner - self.L * np.abs(p),
                        np.where(p > self.P, inner - self.L * (p - self.P), inner))
        over = np.maximum(down, self._floor)
        dist = np.where(p < 0.0, -p, np.where(p > self.P, p - self.P, 0.0))
        reach = (inner - self._floor) / self.L
        capped = np.where(dist > reach, self._floor + self.L * (dist - reach), over)
        return np.where((p >= 0.0) & (p <= self.P), inner, capped)


class TiltedField(HamiltonianField):
    """Base minus the hat of height 1/n peaking at the tied well, zero at
    the neighboring maxima: breaks an M_lo == m_hi tie downward."""

    def __init__(self, base, a, b, c, n):
        super().__init__()
        if not (a < b < c):
            raise NotApplicable("tilt hat needs a < peak < c")
        self.base = base
        self.a, self.b, self.c = float(a), float(b), float(c)
        self.n = int(n)
        self.period = base.period
        self.cell_length = base.cell_length
        self.deterministic = base.deterministic

    def hat(self, p):
        p = np.asarray(p, dtype=np.float64)
        up = (p - self.a) / (self.n * (self.b - self.a))
        down = -(p - self.b) / (self.n * (self.c - self.b)) + 1.0 / self.n
        out = np.where(p <= self.b, up, down)
        return np.where((p >= self.a) & (p <= self.c), out, 0.0)

    def _eval(self, p, x):
        return np.asarray(self.base.evaluate(p, x)) - self.hat(p)


class MirroredField(HamiltonianField):
    """H(-p, x): maps index (L_tilde, 0) onto (0, L_tilde)."""

    def __init__(self, base):
        super().__init__()
        self.base = base
        self.period = base.period
        self.cell_length = base.cell_length
        self.deterministic = base.deterministic

    def _eval(self, p, x):
        return np.asarray(self.base.evaluate(-np.asarray(p), x))


def _mirror_structure(structure):
    bps = -structure.breakpoints[::-1]
    central = len(structure.breakpoints) - 1 - structure.central_pos
    return ConstrainedStructure(bps, central, structure.lipschitz,
                                structure.p_box, normalized=structure.normalized)


# ---------------------------------------------------------------------------
# the three constructions
# ---------------------------------------------------------------------------

def _require_normalized(field, structure, tol=1e-6):
    if abs(structure.central) > tol:
        raise NotApplicable("field is not normalized: central minimum not at 0")


def split_min(field, structure):
    """H+ / H- split at the central minimum.

    H+ keeps H on p >= 0 and continues with L|p| + H(0, x) below; H- is
    mirrored.  Combination: Hbar = Hbar+ on p >= 0, Hbar- on p < 0.
    Children come with their one-sided structures attached.
    """
    _require_normalized(field, structure)
    L = structure.lipschitz
    plus = ConeBelowField(field, 0.0, L)
    minus = ConeAboveField(field, 0.0, L)
    c = structure.central_pos
    s_plus = ConstrainedStructure(structure.breakpoints[c:], 0, L,
                                  structure.p_box, normalized=True)
    s_minus = ConstrainedStructure(structure.breakpoints[:c + 1], c, L,
                                   structure.p_box, normalized=True)
    return (plus, s_plus), (minus, s_minus)


@dataclass
class SteepSideFamily:
    case: str              # "left" | "right"
    H1: HamiltonianField
    H2: HamiltonianField
    H3: HamiltonianField
    s1: ConstrainedStructure
    s3: ConstrainedStructure
    P: float
    Q: float
    M_lo: float

    def combine(self, c1, c3, p_grid):
        """Assemble Hbar from the children curves on p_grid."""
        if self.case == "left":
            return EffectiveCurve.minimum([c1, c3], p_grid)
        mid = EffectiveCurve.minimum([c1, c3], p_grid)
        mid_vals = np.minimum(mid.evaluate(p_grid), self.M_lo)
        pieces = [
            (lambda p: p <= 0.0, c1),
            (lambda p: p >= self.P, c3),
            (lambda p: (p > 0.0) & (p < self.P),
             EffectiveCurve(p_grid, mid_vals, mid.budget_at(p_grid))),
        ]
        return EffectiveCurve.piecewise(pieces, p_grid)


def _sub_structure(structure, keep_mask, central_value=None):
    bps = structure.breakpoints[keep_mask]
    if central_value is None:
        c_pos = 0
    else:
        c_pos = int(np.argmin(np.abs(bps - central_value)))
    return ConstrainedStructure(bps, c_pos, structure.lipschitz,
                                structure.p_box, normalized=False)


def steep_side_family(field, structure, stats):
    """Left / right steep-side modifications for a small-oscillation
    index (0, L) field.

    Left case (P < Q): H1 cones above Q = q_{k_lo}, H3 cones below
    q_{k_hi}, H2 = max(H1, H3); Hbar = min(Hbar1, Hbar3).
    Right case (Q <= P): H1 cones above Q, H3 cones below Q, H2 is the
    reflected cap on [0, P]; Hbar = Hbar1 on p <= 0,
    min(Hbar1, Hbar3, M_lo) on (0, P), Hbar3 on p >= P.
    """
    _require_normalized(field, structure)
    if structure.index[0] != 0:
        raise NotApplicable("steep-side constructions assume index (0, L)")
    if not stats.small:
        raise NotApplicable("field has large oscillation")
    if stats.M_lo - stats.m_hi <= 1e-6 * (abs(stats.M_hi - stats.m_lo) + 1.0):
        raise NotApplicable("M_lo == m_hi within tolerance: tilt first")
    L = structure.lipschitz
    P, Q = stats.P, stats.Q
    bps = structure.breakpoints
    if P < Q:
        H1 = ConeAboveField(field, Q, L)
        H3 = ConeBelowField(field, stats.q_k_hi, L)
        s1 = _sub_structure(structure, bps < Q, central_value=0.0)
        s3 = _sub_structure(structure, bps > stats.q_k_hi)
        H2 = MaxField(H1, H3)
        case = "left"
    else:
        H1 = ConeAboveField(field, Q, L)
        H3 = ConeBelowField(field, Q, L)
        s1 = _sub_structure(structure, bps < Q, central_value=0.0)
        s3 = _sub_structure(structure, bps > Q)
        H2 = ReflectedCapField(field, P, L)
        case = "right"
    s1.normalized = True   # central minimum still at 0 with esssup 0
    return SteepSideFamily(case=case, H1=H1, H2=H2, H3=H3, s1=s1, s3=s3,
                           P=P, Q=Q, M_lo=stats.M_lo)


def tilt(field, structure, stats, n):
    """Subtract the hat peaking 1/n at p_{k_hi} with zeros at the
    neighboring maxima, turning M_lo == m_hi into a strict inequality."""
    span = abs(stats.M_hi - stats.m_lo) + 1.0
    if abs(stats.M_lo - stats.m_hi) > 1e-6 * span + 1e-9:
        raise NotApplicable("tilt applies only when M_lo == m_hi (within tol)")
    pos_max = structure.positive_maxima()
    a = pos_max[stats.k_lo - 1]                    # q_{k_lo}
    b = stats.P                                    # p_{k_hi}
    if stats.k_lo >= 2:
        c = pos_max[stats.k_lo - 2]                # q_{k_lo - 1}
    else:
        c = b + (b - a)
        warnings.warn("no maximum right of the tied well: using a symmetric "
                      "virtual hat endpoint", stacklevel=2)
    if not a < b:
        # the tied well sits left of q_{k_lo}: peak between its neighbors
        pm = structure.positive_maxima()
        right = pm[pm > b]
        a = pm[pm < b].max() if np.any(pm < b) else 0.0
        c = right.min() if len(right) else b + (b - a)
    return TiltedField(field, a, b, c, n)


# ---------------------------------------------------------------------------
# reduction tree
# ---------------------------------------------------------------------------

@dataclass
class ReductionNode:
    kind: str                     # split | steep_left | steep_right | tilt
    #                             # | mirror | leaf
    field: HamiltonianField
    structure: ConstrainedStructure | None
    p_shift: float = 0.0          # child coords -> parent coords bookkeeping
    mu_shift: float = 0.0
    leaf_kind: str | None = None  # xfree | quasi_convex | large_osc | direct
    children: list = dc_field(default_factory=list)
    params: dict = dc_field(default_factory=dict)

    def depth(self):
        if not self.children:
            return 1
        return 1 + max(ch.depth() for ch in self.children)

    def leaves(self):
        if self.kind == "leaf":
            yield self
        for ch in self.children:
            yield from ch.leaves()

    def to_dict(self):
        d = {"kind": self.kind, "p_shift": self.p_shift,
             "mu_shift": self.mu_shift, "params": dict(self.params)}
        if self.leaf_kind:
            d["leaf_kind"] = self.leaf_kind
        if self.structure is not None:
            d["structure"] = self.structure.to_dict()
        if self.children:
            d["children"] = [ch.to_dict() for ch in self.children]
        return d


def _is_xfree(field, tol=1e-10):
    xs = field.probe_xs(64)
    for p in (-1.3, 0.0, 0.7, 2.1):
        vals = field.evaluate(p, xs)
        if np.ptp(vals) > tol * (1.0 + np.max(np.abs(vals))):
            return False
    return True


def build_reduction_tree(field, structure=None, central=None, tilt_n=64,
                         max_depth=8, _depth=0):
    """Recursively reduce a constrained field to evaluable leaves.

    Stops at x-free, quasi-convex and large-oscillation leaves.  A
    steep-side child that fails to decrease the well count is demoted to a
    direct-solver leaf and the stall is surfaced as a warning.
    """
    if structure is None:
        structure, _ = detect_branches(field)
    field_n, structure_n, p_shift, mu_shift = normalize(
        field, structure, central=central)
    node = ReductionNode(kind="leaf", field=field_n, structure=structure_n,
                         p_shift=p_shift, mu_shift=mu_shift)
    if _depth >= max_depth:
        warnings.warn("max reduction depth reached: direct leaf", stacklevel=2)
        node.leaf_kind = "direct"
        return node
    if _is_xfree(field_n):
        node.leaf_kind = "xfree"
        return node
    Lt, L = structure_n.index
    if Lt == 0 and L == 0:
        node.leaf_kind = "quasi_convex"
        return node
    if Lt > 0 and L > 0:
        node.kind = "split"
        (plus, s_plus), (minus, s_minus) = split_min(field_n, structure_n)
        node.children = [
            _reduce_normalized(plus, s_plus, tilt_n, max_depth, _depth + 1),
            _reduce_normalized(minus, s_minus, tilt_n, max_depth, _depth + 1)]
        return node
    return _one_sided(node, field_n, structure_n, tilt_n, max_depth, _depth)


def _reduce_normalized(field, structure, tilt_n, max_depth, depth):
    """Recurse on an already-normalized child with known structure."""
    node = ReductionNode(kind="leaf", field=field, structure=structure)
    if _is_xfree(field):
        node.leaf_kind = "xfree"
        return node
    Lt, L = structure.index
    if Lt == 0 and L == 0:
        node.leaf_kind = "quasi_convex"
        return node
    if Lt > 0 and L > 0:
        node.kind = "split"
        (plus, s_plus), (minus, s_minus) = split_min(field, structure)
        node.children = [
            _reduce_normalized(plus, s_plus, tilt_n, max_depth, depth + 1),
            _reduce_normalized(minus, s_minus, tilt_n, max_depth, depth + 1)]
        return node
    return _one_sided(node, field, structure, tilt_n, max_depth, depth)


def _one_sided(node, field, structure, tilt_n, max_depth, depth):
    Lt, L = structure.index
    if Lt > 0:
        # mirror (L_tilde, 0) onto (0, L_tilde)
        node.kind = "mirror"
        child_field = MirroredField(field)
        child_struct = _mirror_structure(structure)
        node.children = [_reduce_normalized(child_field, child_struct,
                                            tilt_n, max_depth, depth + 1)]
        return node
    if depth >= max_depth:
        warnings.warn("max reduction depth reached: direct leaf", stacklevel=2)
        node.leaf_kind = "direct"
        return node
    stats = classify_oscillation(field, structure)
    node.params.update({"M_lo": stats.M_lo, "m_hi": stats.m_hi,
                        "P": stats.P, "Q": stats.Q})
    if not stats.small:
        node.leaf_kind = "large_osc"
        return node
    span = abs(stats.M_hi - stats.m_lo) + 1.0
    if stats.M_lo - stats.m_hi <= 1e-6 * span:
        node.kind = "tilt"
        node.params["n"] = tilt_n
        tilted = tilt(field, structure, stats, tilt_n)
        node.children = [_reduce_normalized(tilted, structure, tilt_n,
                                            max_depth, depth + 1)]
        return node
    fam = steep_side_family(field, structure, stats)
    node.kind = "steep_left" if fam.case == "left" else "steep_right"
    node.params.update({"case": fam.case})
    wells = structure.wells
    children = []
    for child_field, child_struct in ((fam.H1, fam.s1), (fam.H3, fam.s3)):
        if child_struct.wells >= wells:
            warnings.warn(ReductionStalled(
                f"steep-side child keeps {child_struct.wells} wells "
                f"(parent {wells}): direct-solver leaf").args[0],
                stacklevel=2)
            ch = ReductionNode(kind="leaf", field=child_field,
                               structure=child_struct, leaf_kind="direct")
        elif child_struct.normalized:
            ch = _reduce_normalized(child_field, child_struct, tilt_n,
                                    max_depth, depth + 1)
        else:
            ch = build_reduction_tree(child_field, structure=child_struct,
                                      tilt_n=tilt_n, max_depth=max_depth,
                                      _depth=depth + 1)
        children.append(ch)
    node.children = children
    node.params["family"] = fam
    return node


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class LeafOptions:
    lam_schedule: tuple = _cs.LAMBDA_SCHEDULE
    dx: float | None = None
    seeds: tuple = (0,)
    R: float = 2.0
    mu_points: int = 15
    window_cells: int = 100
    ergodic_windows: tuple = (100, 200, 400)


def default_leaf_evaluator(leaf, p_grid, opts):
    field, structure = leaf.field, leaf.structure
    kind = leaf.leaf_kind
    if kind == "xfree":
        vals = field.evaluate(np.asarray(p_grid, float), 0.0)
        return EffectiveCurve(p_grid, np.atleast_1d(vals),
                              source=["xfree"] * len(p_grid))
    if kind == "quasi_convex":
        try:
            return convex_oracle(field, p_lo=float(np.min(p_grid)) - 0.5,
                                 p_hi=float(np.max(p_grid)) + 0.5)
        except NotApplicable:
            kind = "direct"
    if kind == "large_osc":
        from .large_osc import assemble_effective_curve
        return assemble_effective_curve(
            field, structure, mu_points=opts.mu_points,
            window_cells=max(opts.window_cells, 50),
            p_hi=float(np.max(p_grid)) + 0.5,
            p_lo=float(np.min(p_grid)) - 0.5)
    ests = [_cs.estimate_hbar(field, float(p), lam_schedule=opts.lam_schedule,
                              seeds=opts.seeds, R=opts.R, dx=opts.dx)
            for p in np.asarray(p_grid, float)]
    return EffectiveCurve(p_grid, [e.value for e in ests],
                          [e.dispersion for e in ests],
                          source=["solver"] * len(p_grid))


def evaluate_tree(node, p_grid, opts=None, leaf_evaluator=None):
    """Combine leaf curves bottom-up through the recorded rules.

    The returned curve lives in the coordinates of ``node``'s parent
    frame, i.e. the original field's coordinates at the root.
    """
    opts = opts or LeafOptions()
    leaf_eval = leaf_evaluator or default_leaf_evaluator
    p_grid = np.asarray(p_grid, dtype=np.float64)
    inner = _evaluate_inner(node, p_grid - node.p_shift, opts, leaf_eval)
    return inner.transformed(node.p_shift, node.mu_shift)


def _evaluate_inner(node, p_grid, opts, leaf_eval):
    if node.kind == "leaf":
        return leaf_eval(node, p_grid, opts)
    if node.kind == "mirror":
        child = node.children[0]
        sub = _evaluate_inner(child, -p_grid[::-1] - child.p_shift, opts,
                              leaf_eval).transformed(child.p_shift,
                                                     child.mu_shift)
        vals = sub.evaluate(-p_grid)
        buds = sub.budget_at(-p_grid)
        return EffectiveCurve(p_grid, vals, buds)
    if node.kind == "tilt":
        child = node.children[0]
        sub = _evaluate_inner(child, p_grid - child.p_shift, opts, leaf_eval) \
            .transformed(child.p_shift, child.mu_shift)
        n = node.params["n"]
        return EffectiveCurve(p_grid, sub.evaluate(p_grid),
                              sub.budget_at(p_grid) + 1.0 / n)
    curves = []
    for child in node.children:
        sub = _evaluate_inner(child, p_grid - child.p_shift, opts, leaf_eval) \
            .transformed(child.p_shift, child.mu_shift)
        curves.append(sub)
    if node.kind == "split":
        plus, minus = curves
        pieces = [(lambda p: p >= 0.0, plus), (lambda p: p < 0.0, minus)]
        return EffectiveCurve.piecewise(pieces, p_grid)
    if node.kind in ("steep_left", "steep_right"):
        fam = node.params["family"]
        return fam.combine(curves[0], curves[1], p_grid)
    raise ValueError(f"unknown node kind {node.kind}")


# ---------------------------------------------------------------------------
# quasi-convex oracle and squeeze check
# ---------------------------------------------------------------------------

def convex_oracle(source, seeds=(0,), p_lo=-4.0, p_hi=4.0, n_mu=33,
                  window_cells=400, samples_per_cell=16):
    """Ground-truth effective Hamiltonian for quasi-convex fields by
    inverse-branch averaging.

    For levels mu above the flat level (the window esssup of the pointwise
    minimum of H), the two branch inverses are window-averaged:
    Hbar(p -+ (mu)) = mu.  The flat piece spans the averaged inverses at
    the flat level.  Multi-seed sources report the cross-seed spread as
    the confidence interval.
    """
    from .env import EnvironmentSpec, sample as env_sample
    if isinstance(source, EnvironmentSpec):
        fields = [env_sample(source, s) for s in seeds]
    else:
        fields = [source]
    per_seed = []
    for f in fields:
        cell = f.period if f.period is not None else (f.cell_length or 1.0)
        xs = np.linspace(0.0, window_cells * cell,
                         window_cells * samples_per_cell, endpoint=False)
        pg = np.linspace(p_lo, p_hi, 513)
        vals = f.evaluate(pg[:, None], xs[None, :])
        arg = pg[np.argmin(vals, axis=0)]
        # quasi-convexity probe: no interior rebound above tolerance
        vmin = vals.min(axis=0)
        tol = 1e-8 * (np.max(vals) - np.min(vals) + 1.0)
        for j in (0, len(xs) // 3, 2 * len(xs) // 3):
            col = vals[:, j]
            k = int(np.argmin(col))
            if np.any(np.diff(col[:k + 1]) > tol) or \
                    np.any(np.diff(col[k:]) < -tol):
                raise NotApplicable("field is not quasi-convex in p")
        mu0 = float(vmin.max())
        # cap levels so both crossings stay inside [p_lo, p_hi] for every x
        mu_hi = float(min(np.min(vals[0, :]), np.min(vals[-1, :])))
        if mu_hi <= mu0:
            raise NotApplicable("p-range too narrow for the requested levels")
        mus = mu0 + (mu_hi - mu0) * np.linspace(1e-6, 1.0, n_mu) ** 1.5
        lo = np.full(len(xs), p_lo)
        hi = np.full(len(xs), p_hi)
        p_plus, p_minus = [], []
        for mu in mus:
            a, b = arg.copy(), hi.copy()
            for _ in range(60):
                m = 0.5 * (a + b)
                below = f.evaluate(m, xs) < mu
                a, b = np.where(below, m, a), np.where(below, b, m)
            p_plus.append(float(np.mean(0.5 * (a + b))))
            a, b = lo.copy(), arg.copy()
            for _ in range(60):
                m = 0.5 * (a + b)
                below = f.evaluate(m, xs) < mu
                a, b = np.where(below, a, m), np.where(below, m, b)
            p_minus.append(float(np.mean(0.5 * (a + b))))
        per_seed.append((mu0, mus, np.asarray(p_minus), np.asarray(p_plus)))
    mu0 = float(np.mean([r[0] for r in per_seed]))
    mus = per_seed[0][1]
    pm = np.mean([r[2] for r in per_seed], axis=0)
    pp = np.mean([r[3] for r in per_seed], axis=0)
    ci_m = np.ptp([r[2] for r in per_seed], axis=0) if len(per_seed) > 1 else 0 * pm
    ci_p = np.ptp([r[3] for r in per_seed], axis=0) if len(per_seed) > 1 else 0 * pp
    ps = np.concatenate([pm[::-1], pp])
    vs = np.concatenate([mus[::-1], mus])
    cis = np.concatenate([ci_m[::-1], ci_p])
    return EffectiveCurve(ps, vs, cis, source=["oracle"] * len(ps),
                          flat=(float(pm[0]), float(pp[0]), mu0))


def squeeze_check(curve, q, tol_flat=0.05, tol_zero=0.02, n_grid=11):
    """Flat-piece check: Hbar(q) = 0 with Hbar > 0 beyond q forces
    Hbar = 0 on [0, q] (mirrored for q < 0); skipped when the hypothesis
    fails numerically."""
    if abs(curve.evaluate(q)) > tol_zero:
        return _cs.CheckOutcome("skipped", {"reason": "Hbar(q) != 0",
                                            "value": curve.evaluate(q)})
    if q > 0:
        beyond = np.linspace(q + 0.1, q + 1.0, 16)
    elif q < 0:
        beyond = np.linspace(q - 1.0, q - 0.1, 16)
    else:
        return _cs.CheckOutcome("passed", {"interval": "degenerate"})
    if np.any(curve.evaluate(beyond) <= 1e-6):
        return _cs.CheckOutcome("skipped",
                                {"reason": "Hbar not positive beyond q"})
    inner = np.linspace(0.0, q, n_grid)
    vals = np.abs(curve.evaluate(inner))
    worst = int(np.argmax(vals))
    ok = vals[worst] <= tol_flat
    return _cs.CheckOutcome("passed" if ok else "failed",
                            {"worst_p": float(inner[worst]),
                             "worst_value": float(vals[worst])})
