"""Generic route to the effective Hamiltonian: solve the discounted problem

    lam * v + H(p + v', x) = 0

with a monotone Lax-Friedrichs scheme and extrapolate -lam * v(0) to
lam -> 0.

The discretization is the classical LF numerical Hamiltonian

    Hhat(q-, q+, x) = H(p + (q- + q+)/2, x) - theta * (q+ - q-)/2

with one-sided differences, zero-slope ghosts at the edges of a pad that
is excluded from every reported quantity, and theta at least the
p-Lipschitz bound of H over the reachable gradient range, which makes the
explicit update w <- w - dt * (lam w + Hhat) monotone under the CFL
condition dt * (theta/dx + lam) <= 1.

The steady state of that monotone scheme is the unique solution of the
discrete system; we reach it by a damped semismooth Newton iteration on
the same discrete equations (tridiagonal Jacobian, banded solve), with
red-black exact nodal relaxation when Newton stalls on a kink
configuration and explicit monotone steps as the final verification.
Pure marching contracts only at rate lam * dt per step, which is far too
slow at lam = 0.005 on windows X = R / lam; Newton finds the same fixed
point in a handful of iterations.

Spatially periodic realizations (periodic media, or checkerboards
periodized on a representative torus) use an exact fast path: the
whole-line discounted solution is itself periodic, so one period with
wraparound stencils is solved instead of a window.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from scipy.linalg import solve_banded

from .env import EnvironmentSpec, HamiltonianField, sample
from .errors import Diverged, NoisyLimit

LAMBDA_SCHEDULE = (0.04, 0.02, 0.01, 0.005)


@dataclass
class SolverGrid:
    """Grid and scheme parameters for one discounted solve.

    Non-periodic grids span [-(X+pad), X+pad] with values reported only on
    |x| <= X; periodic grids cover one period with wraparound stencils.
    """

    X: float
    dx: float
    theta: float
    dt: float
    tol_res: float
    pad: float = 0.0
    periodic: bool = False
    period: float | None = None

    def nodes(self):
        if self.periodic:
            n = max(int(round(self.period / self.dx)), 8)
            return np.arange(n) * (self.period / n)
        m = int(np.ceil((self.X + self.pad) / self.dx))
        return np.arange(-m, m + 1) * self.dx

    def check_cfl(self, lam):
        if self.dt * (self.theta / self.dx + lam) > 1.0 + 1e-12:
            raise ValueError(
                f"CFL violated: dt*(theta/dx + lam) = "
                f"{self.dt * (self.theta / self.dx + lam):.3g} > 1")


@dataclass
class DiscountedSolution:
    """Steady state of the discounted LF scheme on one grid."""

    x: np.ndarray          # core nodes, |x| <= X (whole period if periodic)
    v: np.ndarray          # values on the core
    x_full: np.ndarray
    w_full: np.ndarray
    p: float
    lam: float
    residual: float
    grad_range: tuple
    grid: SolverGrid
    iterations: int

    @property
    def minus_lambda_v0(self):
        i0 = int(np.argmin(np.abs(self.x)))
        return -self.lam * float(self.v[i0])

    @property
    def minus_lambda_v_mean(self):
        """Core-window average of -lam v; same limit as the center value
        (the convergence is uniform on |x| <= R/lam) with far smaller
        variance in random media."""
        return -self.lam * float(np.mean(self.v))


def _operator(field, p, lam, grid, xs, w):
    # zero-slope ghost values at the window edges keep every row of the
    # discrete system strictly monotone (an upwind-copy ghost loses that
    # under boundary inflow and the iteration stalls on the edge rows);
    # the induced boundary layer dies inside the pad
    dx = grid.dx
    if grid.periodic:
        qm = (w - np.roll(w, 1)) / dx
        qp = (np.roll(w, -1) - w) / dx
    else:
        qp = np.empty_like(w)
        qm = np.empty_like(w)
        qp[:-1] = (w[1:] - w[:-1]) / dx
        qm[1:] = qp[:-1]
        qp[-1] = 0.0
        qm[0] = 0.0
    c = 0.5 * (qm + qp)
    diss = 0.5 * grid.theta * (qp - qm)
    return lam * w + field.evaluate(p + c, xs) - diss, c


def _solve_cyclic_tridiag(dl, dd, du, cl, cu, b):
    # Sherman-Morrison on top of two banded solves
    n = len(dd)
    gamma = -dd[0]
    dd2 = dd.copy()
    dd2[0] -= gamma
    dd2[-1] -= cl * cu / gamma
    ab = np.zeros((3, n))
    ab[0, 1:] = du[:-1]
    ab[1, :] = dd2
    ab[2, :-1] = dl[1:]
    u = np.zeros(n)
    u[0], u[-1] = gamma, cu
    y = solve_banded((1, 1), ab, b)
    z = solve_banded((1, 1), ab, u)
    vy = y[0] + cl / gamma * y[-1]
    vz = z[0] + cl / gamma * z[-1]
    return y - z * (vy / (1.0 + vz))


def _newton_step(field, p, lam, grid, xs, w, res, c):
    dx, theta = grid.dx, grid.theta
    eps = 1e-7 * (1.0 + np.max(np.abs(p + c)))
    hp = (field.evaluate(p + c + eps, xs) - field.evaluate(p + c - eps, xs)) \
        / (2.0 * eps)
    dd = np.full(len(xs), lam + theta / dx)
    dl = -hp / (2.0 * dx) - theta / (2.0 * dx)
    du = hp / (2.0 * dx) - theta / (2.0 * dx)
    if grid.periodic:
        delta = _solve_cyclic_tridiag(dl, dd, du, dl[0], du[-1], res)
    else:
        # edge rows from the zero-slope ghosts: still M-rows
        dd = dd.copy()
        dd[0] = lam + grid.theta / (2 * dx) - hp[0] / (2 * dx)
        du[0] = hp[0] / (2 * dx) - grid.theta / (2 * dx)
        dd[-1] = lam + grid.theta / (2 * dx) + hp[-1] / (2 * dx)
        dl[-1] = -hp[-1] / (2 * dx) - grid.theta / (2 * dx)
        ab = np.zeros((3, len(xs)))
        ab[0, 1:] = du[:-1]
        ab[1, :] = dd
        ab[2, :-1] = dl[1:]
        delta = solve_banded((1, 1), ab, res)
    return w - delta


def explicit_step(field, p, lam, grid, xs, w):
    """One monotone pseudo-time update w - dt * (lam w + Hhat)."""
    res, _ = _operator(field, p, lam, grid, xs, w)
    return w - grid.dt * res


def _red_black_sweep(field, p, lam, grid, xs, w):
    # The LF pointwise equation is linear in w_i, so each half-sweep is an
    # exact nodal solve; this repairs kink configurations Newton thrashes on.
    dx, th = grid.dx, grid.theta
    w = w.copy()
    denom = lam + th / dx
    if grid.periodic:
        parity = np.arange(len(w)) % 2
        for par in (0, 1):
            wm, wp = np.roll(w, 1), np.roll(w, -1)
            new = (th * (wp + wm) / (2 * dx)
                   - field.evaluate(p + (wp - wm) / (2 * dx), xs)) / denom
            idx = parity == par
            w[idx] = new[idx]
        # a constant shift moves the residual by exactly lam * shift: solve
        # the zero mode directly (the torus has no boundary to anchor it)
        res, _ = _operator(field, p, lam, grid, xs, w)
        return w - float(np.mean(res)) / lam
    parity = np.arange(1, len(w) - 1) % 2
    for par in (0, 1):
        wm, wp = w[:-2], w[2:]
        new = (th * (wp + wm) / (2 * dx)
               - field.evaluate(p + (wp - wm) / (2 * dx), xs[1:-1])) / denom
        idx = parity == par
        w[1:-1][idx] = new[idx]
    # edge rows (zero-slope ghost) are scalar-monotone: relaxed updates
    tau = 1.0 / denom
    for _ in range(2):
        q0 = (w[1] - w[0]) / dx
        g0 = lam * w[0] + field.evaluate(p + 0.5 * q0, xs[0]) - 0.5 * th * q0
        w[0] -= tau * g0
        qn = (w[-1] - w[-2]) / dx
        gn = lam * w[-1] + field.evaluate(p + 0.5 * qn, xs[-1]) + 0.5 * th * qn
        w[-1] -= tau * gn
    return w


def solve_discounted(field, p, lam, grid, w0=None, max_iters=200,
                     verify_steps=12, nested=True):
    """Steady state of the discounted LF scheme; Diverged on failure.

    Cold starts are warmed by nested iteration: the same problem is solved
    on dyadically coarsened grids first and prolonged, which settles the
    kink configuration before the fine grid sees it.  The result is
    certified by ``verify_steps`` explicit monotone updates: the residual
    of the returned iterate must stay at tolerance under the very scheme
    whose fixed point is claimed.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    grid.check_cfl(lam)
    xs = grid.nodes()
    if w0 is None and nested and len(xs) > 128:
        coarse = replace(grid, dx=grid.dx * 2,
                         dt=0.9 / (grid.theta / (grid.dx * 2) + lam))
        sol_c = solve_discounted(field, p, lam, coarse, max_iters=max_iters,
                                 verify_steps=0, nested=True)
        if grid.periodic:
            xs_c = np.concatenate([sol_c.x_full, [grid.period]])
            w_c = np.concatenate([sol_c.w_full, [sol_c.w_full[0]]])
        else:
            xs_c, w_c = sol_c.x_full, sol_c.w_full
        w0 = np.interp(xs, xs_c, w_c)
    if w0 is None:
        w = np.full(len(xs), -float(np.mean(field.evaluate(p, xs))) / lam)
    else:
        w = np.asarray(w0, dtype=np.float64).copy()
        if len(w) != len(xs):
            raise ValueError("w0 does not match the grid")
    # float64 noise floor of the residual: differencing w of size |w| ~ H/lam
    # against theta/dx cannot do better than this
    scale_h = float(np.max(np.abs(field.evaluate(p, xs))))
    eps64 = np.finfo(np.float64).eps
    floor = 64.0 * eps64 * (grid.theta / grid.dx * max(1.0, np.max(np.abs(w)))
                            + scale_h)
    tol = max(grid.tol_res, floor)
    trace = []
    res, c = _operator(field, p, lam, grid, xs, w)
    rnorm = float(np.max(np.abs(res)))
    iters = 0
    for outer in range(60):
        for _ in range(max_iters):
            if rnorm <= tol:
                break
            w_new = _newton_step(field, p, lam, grid, xs, w, res, c)
            # damped acceptance: take the best candidate along the halvings
            step, best = 1.0, None
            for _ in range(12):
                cand = w + step * (w_new - w)
                res_c, c_c = _operator(field, p, lam, grid, xs, cand)
                rc = float(np.max(np.abs(res_c)))
                if best is None or rc < best[0]:
                    best = (rc, cand, res_c, c_c)
                if rc < rnorm * (1.0 - 0.25 * step) or rc <= tol:
                    break
                step *= 0.5
            if best[0] >= rnorm * (1.0 - 1e-12):
                break
            rnorm, w, res, c = best
            iters += 1
            trace.append(rnorm)
        if rnorm <= tol:
            break
        # Newton stagnated on a kink configuration: exact nodal relaxation
        for _ in range(40):
            w = _red_black_sweep(field, p, lam, grid, xs, w)
        res, c = _operator(field, p, lam, grid, xs, w)
        rnorm = float(np.max(np.abs(res)))
        iters += 40
        trace.append(rnorm)
    if rnorm > tol:
        raise Diverged(f"residual {rnorm:.3g} > tol {tol:.3g} "
                       f"after {iters} iterations", trace)
    for _ in range(verify_steps):
        w = explicit_step(field, p, lam, grid, xs, w)
    res, _ = _operator(field, p, lam, grid, xs, w)
    rnorm = float(np.max(np.abs(res)))
    if rnorm > 4.0 * tol:
        raise Diverged(
            f"explicit verification drifted to residual {rnorm:.3g}", trace)

    if grid.periodic:
        core = np.ones(len(xs), dtype=bool)
    else:
        core = np.abs(xs) <= grid.X + 1e-12
    dgrad = np.diff(w) / grid.dx
    if grid.periodic:
        gmin, gmax = float(dgrad.min()), float(dgrad.max())
    else:
        inner = core[:-1] & core[1:]
        gmin, gmax = float(dgrad[inner].min()), float(dgrad[inner].max())
    return DiscountedSolution(
        x=xs[core], v=w[core], x_full=xs, w_full=w, p=float(p), lam=float(lam),
        residual=rnorm, grad_range=(gmin, gmax), grid=grid, iterations=iters)


# ---------------------------------------------------------------------------
# grid policy and the lam -> 0 limit
# ---------------------------------------------------------------------------

def default_grid_policy(field, p, lam, R=2.0, dx=None, pad_cells=10):
    """Grid for one (p, lam) solve.

    dx defaults to min(1e-2, cell/64) so at least 64 nodes resolve one
    period or cell.  theta is the probed p-Lipschitz bound over the
    reachable gradient range |p + v'| <= coercivity_radius(sup|H(p, .)|),
    plus slack.  Deterministic periodic fields solve one period exactly;
    random media get the window X = R / lam with a 10 dx pad.
    """
    cell = field.period if field.period is not None else (field.cell_length or 1.0)
    if dx is None:
        dx = min(1e-2, cell / 64.0)
    m0 = field.sup_abs_on(p)
    r = field.coercivity_radius(m0 + 0.5)
    theta = field.lipschitz_on(r + 0.25)
    tol = 1e-9 * (1.0 + m0)
    dt = 0.9 / (theta / dx + lam)
    if field.period is not None:
        return SolverGrid(X=field.period / 2, dx=dx, theta=theta, dt=dt,
                          tol_res=tol, periodic=True, period=field.period)
    return SolverGrid(X=R / lam, dx=dx, theta=theta, dt=dt, tol_res=tol,
                      pad=pad_cells * dx)


@dataclass
class HbarEstimate:
    """Trend-extrapolated effective Hamiltonian value at one tilt p."""

    p: float
    value: float
    dispersion: float
    noisy: bool
    per_seed: dict
    rows: list = dc_field(default_factory=list)  # CSV rows per (lam, seed)


def estimate_hbar(source, p, lam_schedule=LAMBDA_SCHEDULE, seeds=(0,),
                  grid_policy=None, R=2.0, dx=None, estimator="auto",
                  periodize_cells=None):
    """Estimate Hbar(p) = lim -lam v_lam(0) along a decreasing lam schedule.

    ``source`` is an EnvironmentSpec (sampled per seed) or a field
    realization.  Per seed, per-lam values are fitted linearly in lam and
    the intercept extrapolated; the dispersion combines the cross-seed
    spread, the fit residual, and the first-order truncation lam_min*|b|/2.
    A non-monotone trend beyond tolerance raises the NoisyLimit warning
    but the estimate is still returned.

    ``estimator``: "center" reads -lam v(0); "mean" reads the core-window
    average of -lam v, which has the same limit (the definition gives
    uniform convergence on |x| <= R/lam) and much smaller variance in
    random media; "auto" picks center for deterministic realizations and
    mean otherwise.

    ``periodize_cells``: wrap random realizations on a torus of that many
    cells (representative volume) before solving; "auto" sizes the torus
    to the window 2 R / lam_min.  Removes window-boundary error entirely;
    cross-seed spread then reflects pure finite-volume fluctuation.
    """
    lam_schedule = tuple(lam_schedule)
    if len(lam_schedule) < 3 or any(
            b >= a for a, b in zip(lam_schedule, lam_schedule[1:])):
        raise ValueError("lam_schedule must be strictly decreasing, >= 3 entries")
    if isinstance(source, EnvironmentSpec):
        fields = {s: sample(source, s) for s in seeds}
        if periodize_cells and source.kind == "checkerboard":
            if periodize_cells == "auto":
                ell = source.cell_length or 1.0
                periodize_cells = int(np.ceil(2.0 * R / (lam_schedule[-1] * ell)))
            fields = {s: f.periodized(int(periodize_cells))
                      for s, f in fields.items()}
    elif isinstance(source, HamiltonianField):
        fields = {seeds[0] if seeds else 0: source}
    else:
        raise TypeError("source must be an EnvironmentSpec or a field")
    first = next(iter(fields.values()))
    if first.deterministic:
        fields = {next(iter(fields)): first}
    if estimator == "auto":
        estimator = "center" if first.deterministic else "mean"

    policy = grid_policy or (lambda f, pp, lm: default_grid_policy(
        f, pp, lm, R=R, dx=dx))
    per_seed = {}
    rows = []
    for seed, f in fields.items():
        vals = []
        w_prev, xs_prev = None, None
        for lam in lam_schedule:
            grid = policy(f, p, lam)
            xs = grid.nodes()
            w0 = None
            # warm starts across lam help deterministic solves; on random
            # realizations they pin stale kink configurations, where the
            # nested-cold hierarchy is both faster and more robust
            if f.deterministic and w_prev is not None \
                    and len(xs) == len(xs_prev) and np.allclose(xs, xs_prev):
                lam_prev, val_prev = vals[-1]
                w0 = w_prev - val_prev * (1.0 / lam - 1.0 / lam_prev)
            try:
                sol = solve_discounted(f, p, lam, grid, w0=w0)
            except Diverged:
                if w0 is None:
                    raise
                sol = solve_discounted(f, p, lam, grid, w0=None)
            val = (sol.minus_lambda_v0 if estimator == "center"
                   else sol.minus_lambda_v_mean)
            vals.append((lam, val))
            rows.append((p, lam, seed, sol.minus_lambda_v0, sol.residual,
                         sol.grad_range[0], sol.grad_range[1]))
            w_prev, xs_prev = sol.w_full, sol.x_full
        per_seed[seed] = vals
    lams = np.asarray(lam_schedule)
    intercepts, resids, slopes = {}, [], []
    for seed, vals in per_seed.items():
        ys = np.asarray([v for _, v in vals])
        b, a = np.polyfit(lams, ys, 1)
        intercepts[seed] = float(a)
        resids.append(float(np.max(np.abs(a + b * lams - ys))))
        slopes.append(abs(float(b)))
    value = float(np.mean(list(intercepts.values())))
    spread = float(np.ptp(list(intercepts.values()))) if len(intercepts) > 1 else 0.0
    resid = float(np.max(resids))
    truncation = 0.5 * max(slopes) * lams[-1]
    # discretization uncertainty: first-order Richardson from a dx/2 solve
    # of the smallest-lam problem, first seed: bias(dx) ~ 2 |val - val_half|
    f0 = next(iter(fields.values()))
    lam_min = lam_schedule[-1]
    grid_f = policy(f0, p, lam_min)
    grid_h = replace(grid_f, dx=grid_f.dx * 0.5,
                     dt=0.9 / (grid_f.theta / (grid_f.dx * 0.5) + lam_min))
    sol_h = solve_discounted(f0, p, lam_min, grid_h)
    val_h = (sol_h.minus_lambda_v0 if estimator == "center"
             else sol_h.minus_lambda_v_mean)
    fine_tail = per_seed[next(iter(per_seed))][-1][1]
    discretization = 2.0 * abs(fine_tail - val_h)
    dispersion = spread + resid + truncation + discretization
    noisy = False
    for seed, vals in per_seed.items():
        ys = np.asarray([v for _, v in vals])
        diffs = np.diff(ys)
        monotone = np.all(diffs >= -1e-12) or np.all(diffs <= 1e-12)
        if not monotone and resid > 0.02 * (1.0 + abs(value)):
            noisy = True
    if noisy:
        warnings.warn(f"non-monotone discounted trend at p={p:.4g}", NoisyLimit)
    return HbarEstimate(p=float(p), value=value, dispersion=float(dispersion),
                        noisy=noisy, per_seed=per_seed, rows=rows)


# ---------------------------------------------------------------------------
# diagnostic checks
# ---------------------------------------------------------------------------

@dataclass
class CheckOutcome:
    status: str            # "passed" | "failed" | "skipped"
    detail: dict

    def __bool__(self):
        return self.status == "passed"


def calibrate_comparison_constant(field, p):
    """C(p) = 1/delta(p): delta makes H move by < 1 over the reachable
    gradient range, so C is the probed Lipschitz bound there."""
    m0 = field.sup_abs_on(p)
    r = field.coercivity_radius(m0 + 0.5)
    return max(field.lipschitz_on(abs(p) + r + 1.0), 1e-12)


def comparison_gap(u, v, M=None, C=None, field=None):
    """Check |lam u - lam v|(x) <= (M/R) sqrt(x^2+1) + M C / R on the
    common window of two solutions of the same discounted problem."""
    if abs(u.lam - v.lam) > 1e-15 or abs(u.p - v.p) > 1e-15:
        raise ValueError("solutions must share (p, lam)")
    lam = u.lam
    X = min(u.x.max(), v.x.max())
    R = lam * X
    xs = u.x[np.abs(u.x) <= X + 1e-12]
    a = np.interp(xs, u.x, u.v)
    b = np.interp(xs, v.x, v.v)
    gap = np.abs(lam * a - lam * b)
    if M is None:
        M = max(np.max(np.abs(lam * a)), np.max(np.abs(lam * b)))
    if C is None:
        if field is None:
            raise ValueError("need C or a field to calibrate it")
        C = calibrate_comparison_constant(field, u.p)
    bound = (M / R) * np.sqrt(xs ** 2 + 1.0) + M * C / R
    viol = gap - bound
    worst = int(np.argmax(viol))
    ok = viol[worst] <= 1e-12
    return CheckOutcome(
        status="passed" if ok else "failed",
        detail={"worst_x": float(xs[worst]), "gap": float(gap[worst]),
                "bound": float(bound[worst]), "M": float(M), "C": float(C),
                "R": float(R)})


def essinf_probe(field, p, n=4096):
    return float(np.min(field.evaluate(p, field.probe_xs(n))))


def esssup_probe_p(field, p, n=4096):
    return float(np.max(field.evaluate(p, field.probe_xs(n))))


def gradient_control_check(field, solution, p0, P, hbar_p0, case=1, tol=1e-9):
    """Gradient localization check for the discounted solution.

    Cases follow the two-point control dichotomy: (1) Hbar(p0) below
    essinf H(P, .) with p0 < P forces p0 + v' <= P on the window; (2) the
    mirrored bound; (3)/(4) the esssup variants.  When the hypothesis
    fails numerically the check is reported as skipped, not failed.
    """
    Pl = essinf_probe(field, P)
    Pu = esssup_probe_p(field, P)
    hyp = {1: hbar_p0 < Pl and p0 < P,
           2: hbar_p0 < Pl and p0 > P,
           3: hbar_p0 > Pu and p0 < P,
           4: hbar_p0 > Pu and p0 > P}[case]
    if not hyp:
        return CheckOutcome("skipped", {"reason": "hypothesis not satisfied",
                                        "essinf_HP": Pl, "esssup_HP": Pu,
                                        "hbar_p0": hbar_p0})
    w, xs = solution.w_full, solution.x_full
    if solution.grid.periodic:
        grads = np.concatenate([(w - np.roll(w, 1)), (np.roll(w, -1) - w)]) \
            / solution.grid.dx
    else:
        core = np.abs(xs) <= solution.grid.X + 1e-12
        d = np.diff(w) / solution.grid.dx
        grads = np.concatenate([d[core[:-1] & core[1:]]])
    vals = p0 + grads
    if case in (1, 3):
        bad = vals > P + tol
        ok = not bad.any()
        extreme = float(vals.max())
    else:
        bad = vals < P - tol
        ok = not bad.any()
        extreme = float(vals.min())
    return CheckOutcome("passed" if ok else "failed",
                        {"extreme": extreme, "P": P, "violations": int(bad.sum()),
                         "total": int(len(vals))})


def monotone_update_check(field, p, lam, grid, w, rng, n_points=100):
    """Randomized monotone-scheme probe: raising any stencil value never
    lowers the explicit update."""
    xs = grid.nodes()
    base = explicit_step(field, p, lam, grid, xs, w)
    n = len(xs)
    for _ in range(n_points):
        i = int(rng.integers(1, n - 1))
        j = i + int(rng.integers(-1, 2))
        eta = float(rng.uniform(1e-6, 1e-2))
        w2 = w.copy()
        w2[j] += eta
        upd = explicit_step(field, p, lam, grid, xs, w2)
        if upd[i] < base[i] - 1e-12:
            return CheckOutcome("failed", {"i": i, "j": j, "eta": eta,
                                           "drop": float(base[i] - upd[i])})
    return CheckOutcome("passed", {"points": n_points})
