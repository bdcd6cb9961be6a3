"""Sampled piecewise-linear representation of an effective Hamiltonian."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ExtrapolationUsed


@dataclass
class EffectiveCurve:
    """A sampled p -> Hbar(p) map with per-point error budgets.

    Between samples the curve is linear.  ``level_intervals`` records the
    flat level sets [p_lo, p_hi] at each sampled level mu, and ``flat``
    the minimum-level flat piece, when known.
    """

    p: np.ndarray
    values: np.ndarray
    budget: np.ndarray = None
    source: list = None
    level_intervals: list = dc_field(default_factory=list)
    flat: tuple | None = None

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.budget is None:
            self.budget = np.zeros_like(self.p)
        self.budget = np.asarray(self.budget, dtype=np.float64)
        if self.source is None:
            self.source = ["sample"] * len(self.p)
        order = np.argsort(self.p, kind="stable")
        self.p = self.p[order]
        self.values = self.values[order]
        self.budget = self.budget[order]
        self.source = [self.source[i] for i in order]

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, p, extrapolate="linear"):
        p = np.asarray(p, dtype=np.float64)
        out = np.interp(p, self.p, self.values)
        below, above = p < self.p[0], p > self.p[-1]
        if np.any(below) or np.any(above):
            if extrapolate == "raise":
                raise ValueError("point outside curve support")
            if extrapolate == "linear":
                warnings.warn("evaluating effective curve outside its support",
                              ExtrapolationUsed)
                if len(self.p) >= 2:
                    sl = (self.values[1] - self.values[0]) / (self.p[1] - self.p[0])
                    sr = (self.values[-1] - self.values[-2]) / (self.p[-1] - self.p[-2])
                    out = np.where(below, self.values[0] + sl * (p - self.p[0]), out)
                    out = np.where(above, self.values[-1] + sr * (p - self.p[-1]), out)
        return out if out.ndim else float(out)

    __call__ = evaluate

    def budget_at(self, p):
        p = np.asarray(p, dtype=np.float64)
        out = np.interp(p, self.p, self.budget)
        return out if out.ndim else float(out)

    # -- transforms and combinations ----------------------------------------

    def transformed(self, p_shift, mu_shift):
        """Undo a normalization: Hbar_orig(p) = Hbar_norm(p - p_shift) + mu_shift."""
        levels = [dict(li, p_lo=li["p_lo"] + p_shift, p_hi=li["p_hi"] + p_shift,
                       mu=li["mu"] + mu_shift) for li in self.level_intervals]
        flat = None
        if self.flat is not None:
            lo, hi, lev = self.flat
            flat = (lo + p_shift, hi + p_shift, lev + mu_shift)
        return EffectiveCurve(self.p + p_shift, self.values + mu_shift,
                              self.budget.copy(), list(self.source), levels, flat)

    @staticmethod
    def minimum(curves, p_grid=None):
        """Pointwise min of curves on the union grid (or a given grid);
        the budget at each point is the active curve's budget."""
        if p_grid is None:
            p_grid = np.unique(np.concatenate([c.p for c in curves]))
        vals = np.stack([c.evaluate(p_grid) for c in curves])
        buds = np.stack([c.budget_at(p_grid) for c in curves])
        k = np.argmin(vals, axis=0)
        idx = np.arange(len(p_grid))
        return EffectiveCurve(p_grid, vals[k, idx], buds[k, idx],
                              ["min"] * len(p_grid))

    @staticmethod
    def piecewise(pieces, p_grid):
        """Assemble from (mask_fn, curve_like) pairs evaluated on p_grid.

        ``curve_like`` is an EffectiveCurve or a (value, budget) constant
        pair; the first piece whose mask holds wins at each point.
        """
        p_grid = np.asarray(p_grid, dtype=np.float64)
        vals = np.empty_like(p_grid)
        buds = np.empty_like(p_grid)
        done = np.zeros(len(p_grid), dtype=bool)
        for mask_fn, obj in pieces:
            m = mask_fn(p_grid) & ~done
            if not np.any(m):
                continue
            if isinstance(obj, EffectiveCurve):
                vals[m] = obj.evaluate(p_grid[m])
                buds[m] = obj.budget_at(p_grid[m])
            else:
                v, b = obj
                vals[m] = v
                buds[m] = b
            done |= m
        if not np.all(done):
            raise ValueError("piecewise masks do not cover the grid")
        return EffectiveCurve(p_grid, vals, buds)

    # -- diagnostics ---------------------------------------------------------

    def is_level_set_convex(self, levels=None, tol=1e-9):
        """Check that each sampled sublevel set {p : Hbar(p) <= c} is a
        single interval of grid points."""
        if levels is None:
            levels = np.unique(self.values)
        for c in np.atleast_1d(levels):
            mask = self.values <= c + tol
            if not mask.any():
                continue
            idx = np.nonzero(mask)[0]
            if idx[-1] - idx[0] + 1 != len(idx):
                return False
        return True

    def rows(self):
        for i in range(len(self.p)):
            yield (self.p[i], self.values[i], self.budget[i], self.source[i])
