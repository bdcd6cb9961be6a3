"""Stationary-ergodic environments and Hamiltonian field realizations.

A field is one realization of H(p, x) that can be evaluated at any (p, x)
in O(1), with structural metadata (Lipschitz constant in p, coercivity
radius, continuity modulus) verified by probing rather than symbolically:
user profiles are treated as black boxes.

Two concrete kinds are provided:

* ``periodic``: H(p, x) periodic in x, deterministic (seed-independent).
* ``checkerboard``: per-unit-cell i.i.d. parameter draws, blended C^1
  across cell boundaries over a width of 0.1 * cell_length so the field
  stays continuous in x.  All randomness comes from a counter-based hash
  of (seed, cell index), so evaluation never stores a realization.

``separable`` and ``composite`` environments are thin constructors on top
of the checkerboard kind.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ProfileError

ENV_SCHEMA = "env/1"

DEFAULT_P_BOX = 2.0


# ---------------------------------------------------------------------------
# counter-based randomness
# ---------------------------------------------------------------------------

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_MUL2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(z):
    z = (z + _SM_GAMMA).astype(np.uint64)
    z = ((z ^ (z >> np.uint64(30))) * _SM_MUL1).astype(np.uint64)
    z = ((z ^ (z >> np.uint64(27))) * _SM_MUL2).astype(np.uint64)
    return z ^ (z >> np.uint64(31))


def cell_uniform(seed, idx):
    """Deterministic uniform [0, 1) value for each integer cell index.

    Bit-exact for a given (seed, idx); vectorized over idx.
    """
    idx_u = np.asarray(idx, dtype=np.int64).astype(np.uint64)
    seed_u = np.uint64(np.int64(seed))
    h = _splitmix64(idx_u ^ _splitmix64(np.atleast_1d(seed_u))[0])
    out = (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    return out


def split_seed(master, k):
    """Derive the k-th child seed from a master seed (counter mode)."""
    h = _splitmix64(np.atleast_1d(np.uint64(np.int64(master)) ^ _splitmix64(
        np.atleast_1d(np.uint64(np.int64(k))))[0]))[0]
    return int(np.int64(h))


# ---------------------------------------------------------------------------
# profile registry
# ---------------------------------------------------------------------------

def _pwl(p, nodes, values, cone_slope):
    p = np.asarray(p, dtype=np.float64)
    inner = np.interp(p, nodes, values)
    left = values[0] + cone_slope * (nodes[0] - p)
    right = values[-1] + cone_slope * (p - nodes[-1])
    return np.where(p < nodes[0], left, np.where(p > nodes[-1], right, inner))


_BASES = {
    "abs": lambda p: np.abs(p),
    "quadratic": lambda p: np.asarray(p, dtype=np.float64) ** 2,
    "double_well": lambda p: (np.asarray(p, dtype=np.float64) ** 2 - 1.0) ** 2,
}


def _build_periodic_profile(name, params, period):
    two_pi = 2.0 * math.pi / period
    if name == "abs_plus_sin":
        a = params.get("amplitude", 1.0)
        return lambda p, x: np.abs(p) + a * np.sin(two_pi * x)
    if name == "quartic_plus_sin":
        a = params.get("amplitude", 1.0)
        return lambda p, x: (np.asarray(p) ** 2 - 1.0) ** 2 + a * np.sin(two_pi * x)
    if name == "base_plus_sin":
        a = params.get("amplitude", 1.0)
        base = _BASES[params.get("base", "double_well")]
        return lambda p, x: base(p) + a * np.sin(two_pi * x)
    if name == "xfree":
        base = _BASES[params.get("base", "quadratic")]
        return lambda p, x: base(p) + 0.0 * np.asarray(x)
    if name == "pwl_wells_plus_dip":
        nodes = np.asarray(params["nodes"], dtype=np.float64)
        values = np.asarray(params["values"], dtype=np.float64)
        slope = params.get("cone_slope", 2.0)
        a = params.get("amplitude", 0.1)
        return lambda p, x: _pwl(p, nodes, values, slope) + a * (np.sin(two_pi * x) - 1.0)
    raise ProfileError(f"unknown periodic profile {name!r}")


def _build_template(name, params):
    if name == "abs_plus_v":
        return lambda p, x, v: np.abs(p) + v
    if name == "quartic_plus_v":
        return lambda p, x, v: (np.asarray(p) ** 2 - 1.0) ** 2 + v
    if name == "base_plus_v":
        base = _BASES[params.get("base", "abs")]
        return lambda p, x, v: base(p) + v
    if name == "base_plus_sin_plus_v":
        base = _BASES[params.get("base", "double_well")]
        a = params.get("amplitude", 0.5)
        w = 2.0 * math.pi / params.get("inner_period", 1.0)
        return lambda p, x, v: base(p) + a * np.sin(w * x) + v
    raise ProfileError(f"unknown checkerboard template {name!r}")


# ---------------------------------------------------------------------------
# environment specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnvironmentSpec:
    """Description of a stationary environment, serializable as env/1.

    ``profile`` is a registry name (serializable) or a raw callable
    (accepted everywhere, rejected by serialization).  Periodic profiles
    are callables (p, x); checkerboard templates are (p, x, v) with v the
    blended per-cell parameter.
    """

    kind: str
    profile: object
    params: dict = dc_field(default_factory=dict)
    period: float | None = None
    cell_length: float | None = None
    value_range: tuple | None = None

    def profile_fn(self):
        if callable(self.profile):
            return self.profile
        if self.kind == "periodic":
            return _build_periodic_profile(self.profile, self.params, self.period)
        return _build_template(self.profile, self.params)

    def to_dict(self):
        if callable(self.profile):
            raise ProfileError("raw-callable profiles cannot be serialized; "
                               "register a named profile instead")
        d = {"schema": ENV_SCHEMA, "kind": self.kind, "profile": self.profile,
             "params": dict(self.params)}
        if self.period is not None:
            d["period"] = self.period
        if self.cell_length is not None:
            d["cell_length"] = self.cell_length
        if self.value_range is not None:
            d["value_range"] = list(self.value_range)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_dict(d):
        if d.get("schema") != ENV_SCHEMA:
            raise ProfileError(f"unsupported environment schema {d.get('schema')!r}")
        vr = d.get("value_range")
        return EnvironmentSpec(
            kind=d["kind"], profile=d["profile"], params=dict(d.get("params", {})),
            period=d.get("period"), cell_length=d.get("cell_length"),
            value_range=tuple(vr) if vr is not None else None)

    @staticmethod
    def from_json(text):
        return EnvironmentSpec.from_dict(json.loads(text))


def _probe_profile(fn, takes_v, period_or_cell):
    ps = np.linspace(-3.0, 3.0, 41)
    xs = np.linspace(0.0, 2.0 * period_or_cell, 37)
    with np.errstate(all="ignore"):
        if takes_v:
            vals = fn(ps[:, None], xs[None, :], 0.0)
        else:
            vals = fn(ps[:, None], xs[None, :])
    if not np.all(np.isfinite(vals)):
        bad = np.argwhere(~np.isfinite(np.asarray(vals)))[0]
        raise ProfileError(
            f"profile returned non-finite value near p={ps[bad[0]]:.3g}, "
            f"x={xs[bad[1]]:.3g}")


def make_periodic(profile, period, params=None):
    """Spec for a deterministic periodic medium; realizations ignore the seed."""
    if not period > 0:
        raise ProfileError("period must be positive")
    spec = EnvironmentSpec(kind="periodic", profile=profile,
                           params=dict(params or {}), period=float(period))
    _probe_profile(spec.profile_fn(), takes_v=False, period_or_cell=period)
    return spec


def make_checkerboard(value_range, cell_length, profile_template, params=None):
    """Spec for an i.i.d.-per-cell medium with C^1 boundary blending."""
    lo, hi = float(value_range[0]), float(value_range[1])
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ProfileError("value_range must be bounded")
    if hi < lo:
        raise ProfileError("empty value_range")
    if not cell_length > 0:
        raise ProfileError("cell_length must be positive")
    spec = EnvironmentSpec(kind="checkerboard", profile=profile_template,
                           params=dict(params or {}), cell_length=float(cell_length),
                           value_range=(lo, hi))
    _probe_profile(spec.profile_fn(), takes_v=True, period_or_cell=cell_length)
    return spec


def make_separable(base, value_range, cell_length, params=None):
    """H(p, x) = base(p) + V(x) with V an i.i.d. checkerboard process."""
    prm = dict(params or {})
    prm["base"] = base
    return make_checkerboard(value_range, cell_length, "base_plus_v", prm)


def make_composite(base, amplitude, inner_period, value_range, cell_length):
    """base(p) + a sin(2 pi x / T) + V(x): periodic forcing plus checkerboard."""
    prm = {"base": base, "amplitude": amplitude, "inner_period": inner_period}
    return make_checkerboard(value_range, cell_length, "base_plus_sin_plus_v", prm)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

class HamiltonianField:
    """One realization of H(p, x), evaluable anywhere, immutable after build.

    Structural metadata is probed lazily and cached: ``lipschitz_on(r)``
    bounds |dH/dp| over [-r, r], ``coercivity_radius(mu)`` returns the
    smallest probed r with H(+-r, x) > mu for all probe x, and
    ``modulus(p_lo, p_hi)`` returns the continuity-modulus callable over a
    compact p-set.
    """

    #: spatial period of the realization, or None for random media
    period = None
    #: cell length for random media, or None
    cell_length = None
    #: True when the realization does not depend on the seed
    deterministic = True

    def __init__(self):
        self._cache = {}

    # -- evaluation ---------------------------------------------------------

    def _eval(self, p, x):
        raise NotImplementedError

    def evaluate(self, p, x):
        p = np.asarray(p, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        out = self._eval(p, x)
        return out if out.ndim else float(out)

    __call__ = evaluate

    def shifted(self, y):
        """Field translated in space: shifted(y)(p, x) == self(p, x + y)."""
        return ShiftedField(self, y)

    # -- probing ------------------------------------------------------------

    def probe_xs(self, n=512):
        """Representative x probes: one period, or a 48-cell window."""
        if self.period is not None:
            return np.arange(n) * (self.period / n)
        cells = 48
        ell = self.cell_length or 1.0
        return np.arange(n) * (cells * ell / n)

    def lipschitz_on(self, r, n_p=601):
        key = ("lip", round(float(r), 12))
        if key not in self._cache:
            ps = np.linspace(-r, r, n_p)
            xs = self.probe_xs(256)
            h = 1e-6 * (1.0 + r)
            d = self.evaluate(ps[:, None] + h, xs[None, :]) - \
                self.evaluate(ps[:, None], xs[None, :])
            self._cache[key] = float(np.max(np.abs(d)) / h)
        return self._cache[key]

    @property
    def lipschitz_p(self):
        """Probed p-Lipschitz constant over the default box [-2, 2]."""
        return self.lipschitz_on(DEFAULT_P_BOX)

    def coercivity_radius(self, mu_max):
        """Smallest probed r such that min_x H(+-r, x) > mu_max."""
        key = ("coer", round(float(mu_max), 12))
        if key in self._cache:
            return self._cache[key]
        xs = self.probe_xs(512)
        margin = 1e-9 * (1.0 + abs(mu_max))

        def g(rs):
            rs = np.atleast_1d(rs)
            vplus = self.evaluate(rs[:, None], xs[None, :]).min(axis=1)
            vminus = self.evaluate(-rs[:, None], xs[None, :]).min(axis=1)
            return np.minimum(vplus, vminus)

        R = 4.0
        for _ in range(40):
            rs = np.linspace(0.0, R, max(int(R / 0.02), 64) + 1)
            ok = g(rs) > mu_max + margin
            if ok[-1] and ok[-2]:
                break
            R *= 2.0
        else:
            raise ProfileError("field does not look coercive on probes")
        bad = np.nonzero(~ok)[0]
        if len(bad) == 0:
            self._cache[key] = 0.0
            return 0.0
        lo, hi = rs[bad[-1]], rs[bad[-1] + 1]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if g(mid)[0] > mu_max + margin:
                hi = mid
            else:
                lo = mid
        self._cache[key] = float(hi)
        return float(hi)

    def modulus(self, p_lo, p_hi):
        """Continuity modulus rho_K over K = [p_lo, p_hi]: rho(r) = L * r.

        L is the probed maximum difference quotient in (p, x) on K times a
        probe window; the returned callable carries it as ``rho.L``.
        """
        ps = np.linspace(p_lo, p_hi, 401)
        xs = self.probe_xs(256)
        hp = 1e-6 * (1.0 + abs(p_hi - p_lo))
        hx = 1e-6 * (1.0 + float(self.period or self.cell_length or 1.0))
        base = self.evaluate(ps[:, None], xs[None, :])
        dp = np.max(np.abs(self.evaluate(ps[:, None] + hp, xs[None, :]) - base)) / hp
        dx = np.max(np.abs(self.evaluate(ps[:, None], xs[None, :] + hx) - base)) / hx
        L = float(max(dp, dx))

        def rho(r):
            return L * np.asarray(r, dtype=np.float64)

        rho.L = L
        return rho

    def sup_abs_on(self, p, n=512):
        """Probed sup over x of |H(p, x)| for a fixed tilt p."""
        xs = self.probe_xs(n)
        return float(np.max(np.abs(self.evaluate(p, xs))))


class PeriodicField(HamiltonianField):
    """Deterministic periodic realization; x is reduced mod period so the
    stationarity identity H(p, x + period) = H(p, x) is exact on dyadic
    probe points."""

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        self.period = float(spec.period)
        self._fn = spec.profile_fn()

    def _eval(self, p, x):
        T = self.period
        xr = x - T * np.floor(x / T)
        return np.asarray(self._fn(p, xr), dtype=np.float64)


def _smoothstep(u):
    return u * u * (3.0 - 2.0 * u)


class CheckerboardField(HamiltonianField):
    """Realization with i.i.d. per-cell values, C^1-blended across cell
    boundaries over width 0.1 * cell_length.

    ``wrap_cells`` periodizes the realization on a torus of that many
    cells (a representative volume): the field becomes periodic with
    period wrap_cells * cell_length while staying seed-dependent, which
    removes window-boundary error from discounted solves at the price of
    finite-volume fluctuation in the averages.
    """

    deterministic = False

    def __init__(self, spec, seed, cell_offset=0, wrap_cells=None):
        super().__init__()
        self.spec = spec
        self.seed = int(seed)
        self.cell_offset = int(cell_offset)
        self.cell_length = float(spec.cell_length)
        self.wrap_cells = int(wrap_cells) if wrap_cells else None
        if self.wrap_cells:
            self.period = self.wrap_cells * self.cell_length
        lo, hi = spec.value_range
        self._lo, self._span = float(lo), float(hi - lo)
        self._fn = spec.profile_fn()

    def _cell_value(self, idx):
        idx = np.asarray(idx) + self.cell_offset
        if self.wrap_cells:
            idx = np.mod(idx, self.wrap_cells)
        u = cell_uniform(self.seed, idx)
        return self._lo + self._span * u

    def periodized(self, n_cells):
        return CheckerboardField(self.spec, self.seed, self.cell_offset, n_cells)

    def cell_values(self, x):
        """Blended parameter process V(x), vectorized."""
        x = np.asarray(x, dtype=np.float64)
        ell = self.cell_length
        idx = np.floor(x / ell).astype(np.int64)
        t = x - idx * ell
        w = 0.1 * ell
        v0 = self._cell_value(idx)
        left = t < 0.5 * w
        right = t > ell - 0.5 * w
        out = np.array(v0, dtype=np.float64, copy=True)
        if np.any(left):
            s = _smoothstep(0.5 + t[left] / w)
            vprev = self._cell_value(idx[left] - 1)
            out[left] = vprev + (v0[left] - vprev) * s
        if np.any(right):
            s = _smoothstep((t[right] - (ell - 0.5 * w)) / w)
            vnext = self._cell_value(idx[right] + 1)
            out[right] = v0[right] + (vnext - v0[right]) * s
        return out

    def _eval(self, p, x):
        p, x = np.broadcast_arrays(np.asarray(p, float), np.asarray(x, float))
        v = self.cell_values(x.ravel()).reshape(x.shape)
        return np.asarray(self._fn(p, x, v), dtype=np.float64)

    def shifted_cells(self, k):
        """Shift the cell-index stream by k cells; equals shifting x by
        k * cell_length (bit-exact on dyadic probes)."""
        return CheckerboardField(self.spec, self.seed, self.cell_offset + k,
                                 self.wrap_cells)


class ShiftedField(HamiltonianField):
    def __init__(self, base, y):
        super().__init__()
        self.base = base
        self.y = float(y)
        self.period = base.period
        self.cell_length = base.cell_length
        self.deterministic = base.deterministic

    def _eval(self, p, x):
        return np.asarray(self.base.evaluate(p, np.asarray(x) + self.y))


def sample(spec, seed=0):
    """Realize a field from a spec; bit-deterministic in (spec, seed)."""
    if spec.kind == "periodic":
        return PeriodicField(spec)
    if spec.kind == "checkerboard":
        return CheckerboardField(spec, seed)
    raise ProfileError(f"unknown environment kind {spec.kind!r}")
