"""Lax-Oleinik semigroups on a torus grid, weak KAM solutions and cut times.

The negative/positive operators are inf/sup convolutions with the kernel
A_t.  On the grid they are realized as a windowed search over precomputed
node-to-node cost tables (the window radius lambda*t comes from the speed
bound), refined by a short continuous descent on the argument point using
kernel endpoint momenta.

A weak KAM solution is computed by the normalized fixed-point iteration
phi <- T^-_t phi - min(T^-_t phi); the critical value is the drift of the
unnormalized iteration at the fixed point.  The cut-time function is
recovered from the commutator defect (T^-_t T^+_t - T^+_t T^-_t) phi, which
vanishes exactly up to the cut time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .action import (CostTable, ShortTimeConstants, build_cost_table,
                     default_segments, minimize_paths, short_time_constants)
from .errors import AmbiguousMax, DegenerateTime, NonConvergence
from .grid import GridField, constant_field
from .hamiltonians import HamiltonianSpec, LagrangianSpec, hamiltonian_flow_raw, lagrangian_from
from .torus import wrap, wrap_diff

T_LADDER_SIZE = 14


@dataclass
class CriticalSolveResult:
    """Weak KAM solution (normalized to min phi = 0) and the critical value."""

    phi: GridField
    c_value: float
    iterations: int
    residual: float
    constants: ShortTimeConstants
    converged: bool


@dataclass
class CutTimeField:
    """Cut-time values per node, capped at the horizon, with defect samples.

    ``tau.values == horizon`` flags projected-Aubry candidates; the ladder
    and per-node defect curves document the bisection resolution.
    """

    tau: GridField
    horizon: float
    defect_tol: float
    t_ladder: np.ndarray
    defects: np.ndarray  # (len(t_ladder), *grid shape)


# ---------------------------------------------------------------------------
# Grid applications of T^- / T^+
# ---------------------------------------------------------------------------

def _window_radius(constants: ShortTimeConstants, t: float, h: float, n: int) -> int:
    w = int(np.ceil(constants.lam * t / h)) + 2
    w = int(np.ceil(w / 16.0)) * 16
    return min(w, n // 2 - 1)


def _constants_for(phi: GridField, L: LagrangianSpec,
                   constants: ShortTimeConstants | None) -> ShortTimeConstants:
    return constants if constants is not None else short_time_constants(phi, L)


def t_minus(phi: GridField, L: LagrangianSpec, t: float,
            constants: ShortTimeConstants | None = None, refine: bool = True) -> GridField:
    """(T^-_t phi)(x) = min_y { phi(y) + A_t(y, x) } on the grid.

    Durations beyond the admissible step are composed from
    ceil(t / tau_phi_step) equal substeps via the semigroup property.
    """
    return _semigroup_apply(phi, L, t, -1, constants, refine)


def t_plus(phi: GridField, L: LagrangianSpec, t: float,
           constants: ShortTimeConstants | None = None, refine: bool = True) -> GridField:
    """(T^+_t phi)(x) = max_y { phi(y) - A_t(x, y) }, the adjoint regularization."""
    return _semigroup_apply(phi, L, t, +1, constants, refine)


def _semigroup_apply(phi, L, t, sign, constants, refine):
    if t == 0:
        return phi
    if t < 0:
        raise DegenerateTime(f"negative duration {t}")
    constants = _constants_for(phi, L, constants)
    k = max(1, int(np.ceil(t / constants.tau_phi_step - 1e-12)))
    sub = t / k
    out = phi
    for _ in range(k):
        out = _apply_once(out, L, sub, sign, constants, refine)
    return out


def _apply_once(phi, L, t, sign, constants, refine):
    n, d, h = phi.n, phi.dim, phi.spacing
    w = _window_radius(constants, t, h, n)
    for _ in range(4):
        if d == 1:
            values, best_off, cand, touched = _scan_1d(phi, L, t, sign, w)
        else:
            values, best_off, touched = _scan_2d(phi, L, t, sign, w)
        if not touched or w >= n // 2 - 1:
            break
        w = min(n // 2 - 1, w + max(16, w // 2))  # fallback: widen the window
    if sign > 0 and t < constants.tau_phi_step and d == 1:
        _check_ambiguous_max(cand, h, w)
    if refine:
        curv = max(constants.C2 / t - (constants.C1 if sign > 0 else 0.0),
                   0.1 * constants.C2 / t)
        if d == 1:
            values = _refine_1d(phi, L, t, sign, values, best_off, cand, curv)
        else:
            values = _refine_2d(phi, L, t, sign, values, best_off, curv)
    return GridField(values, phi.period, phi.meta)


def _scan_1d(phi, L, t, sign, w):
    n = phi.n
    table = build_cost_table(L, n, t, w)
    w = table.radius_nodes
    vals = phi.values
    W = 2 * w + 1
    cand = np.empty((W, n))
    for idx in range(W):
        k = idx - w
        if sign < 0:
            cand[idx] = np.roll(vals + table.values[:, idx], k)
        else:
            cand[idx] = np.roll(vals, -k) - table.values[:, idx]
    best_idx = np.argmin(cand, axis=0) if sign < 0 else np.argmax(cand, axis=0)
    values = np.take_along_axis(cand, best_idx[None, :], axis=0)[0]
    best_off = best_idx - w
    touched = bool(np.any(np.abs(best_off) >= w))
    return values, best_off, cand, touched


def _scan_2d(phi, L, t, sign, w):
    n = phi.n
    table = build_cost_table(L, n, t, w)
    w = table.radius_nodes
    vals = phi.values
    offs = np.arange(-w, w + 1)
    best = np.full((n, n), np.inf if sign < 0 else -np.inf)
    best_k1 = np.zeros((n, n), dtype=np.int32)
    best_k2 = np.zeros((n, n), dtype=np.int32)
    for i1, k1 in enumerate(offs):
        for i2, k2 in enumerate(offs):
            col = table.values[:, :, i1, i2]
            if sign < 0:
                c = np.roll(vals + col, (k1, k2), axis=(0, 1))
                upd = c < best
            else:
                c = np.roll(vals, (-k1, -k2), axis=(0, 1)) - col
                upd = c > best
            best = np.where(upd, c, best)
            best_k1 = np.where(upd, k1, best_k1)
            best_k2 = np.where(upd, k2, best_k2)
    touched = bool(np.any((np.abs(best_k1) >= w) | (np.abs(best_k2) >= w)))
    return best, np.stack([best_k1, best_k2], axis=-1), touched


def _check_ambiguous_max(cand, h, w):
    W = cand.shape[0]
    if W < 2:
        return
    top2 = np.argpartition(-cand, 1, axis=0)[:2]
    v1 = np.take_along_axis(cand, top2[:1], axis=0)[0]
    v2 = np.take_along_axis(cand, top2[1:2], axis=0)[0]
    sep = np.abs(top2[0] - top2[1]) * h
    bad = (np.abs(v1 - v2) < 1e-12) & (sep > 3 * h)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise AmbiguousMax(
            f"two grid maximizers tie below the short-time bound at node {i} "
            f"(separation {float(sep[i]):.3g})")


def _refine_1d(phi, L, t, sign, values, best_off, cand, curv, steps=5):
    n, h = phi.n, phi.spacing
    w = (cand.shape[0] - 1) // 2
    nodes = phi.axis_coords()
    targets = nodes[:, None]
    idx = best_off + w
    # parabola seed through the three neighboring grid candidates
    im = np.clip(idx - 1, 0, 2 * w)
    ip = np.clip(idx + 1, 0, 2 * w)
    cols = np.arange(n)
    q0 = values
    qm = cand[im, cols]
    qp = cand[ip, cols]
    denom = qm - 2 * q0 + qp
    interior = (im != idx) & (ip != idx)
    concave_ok = (denom > 1e-14) if sign < 0 else (denom < -1e-14)
    # offset-index step maps to -sign * h in argument space for T^-, +h for T^+
    delta = np.where(interior & concave_ok,
                     sign * 0.5 * h * (qm - qp) / np.where(denom == 0, 1, denom), 0.0)
    delta = np.clip(delta, -0.5 * h, 0.5 * h)
    # unwrapped argument point near the target: start node x_i - k h for T^-,
    # end node x_i + k h for T^+
    y_node = targets - (best_off * h)[:, None] if sign < 0 else targets + (best_off * h)[:, None]
    y = y_node + delta[:, None]
    obj, mom = _objective_1d(phi, L, t, sign, targets, y)
    better = (obj < q0) if sign < 0 else (obj > q0)
    obj = np.where(better, obj, q0)
    y = np.where(better[:, None], y, y_node)
    if not np.all(better):
        _, mom_fallback = _objective_1d(phi, L, t, sign, targets, y)
        mom = np.where(better[:, None], mom, mom_fallback)
    for _ in range(steps):
        grad = phi.gradient_central(y) - mom
        step = np.clip(sign * grad / curv, -0.45 * h, 0.45 * h)
        y_try = y + step
        obj_try, mom_try = _objective_1d(phi, L, t, sign, targets, y_try)
        acc = (obj_try < obj) if sign < 0 else (obj_try > obj)
        obj = np.where(acc, obj_try, obj)
        y = np.where(acc[:, None], y_try, y)
        mom = np.where(acc[:, None], mom_try, mom)
    return obj


def _objective_1d(phi, L, t, sign, targets, y):
    """Objective and momentum gradient for the continuous refinement."""
    if sign < 0:
        starts = y
        ends = y + wrap_diff(targets - y, phi.period)
        res = minimize_paths(L, starts, ends, t)
        return phi.interp(y[:, 0]) + res["value"], res["p0"]
    starts = targets
    ends = targets + wrap_diff(y - targets, phi.period)
    res = minimize_paths(L, starts, ends, t)
    return phi.interp(y[:, 0]) - res["value"], res["p1"]


def _refine_2d(phi, L, t, sign, values, best_off, curv, steps=3):
    n, h = phi.n, phi.spacing
    coords = phi.node_coords()
    targets = coords
    off = best_off.reshape(-1, 2) * h
    y = coords - off if sign < 0 else coords + off
    obj = values.reshape(-1)
    mom = None
    for it in range(steps):
        if mom is None:
            obj_cur, mom = _objective_2d(phi, L, t, sign, targets, y)
            better = (obj_cur < obj) if sign < 0 else (obj_cur > obj)
            obj = np.where(better, obj_cur, obj)
        grad = phi.gradient_central(y) - mom
        step = np.clip(sign * grad / curv, -0.45 * h, 0.45 * h)
        for ax in range(2):
            y_try = y.copy()
            y_try[:, ax] += step[:, ax]
            obj_try, mom_try = _objective_2d(phi, L, t, sign, targets, y_try)
            acc = (obj_try < obj) if sign < 0 else (obj_try > obj)
            obj = np.where(acc, obj_try, obj)
            y = np.where(acc[:, None], y_try, y)
            mom = np.where(acc[:, None], mom_try, mom)
    return obj.reshape(n, n)


def _objective_2d(phi, L, t, sign, targets, y):
    if sign < 0:
        ends = y + wrap_diff(targets - y, phi.period)
        res = minimize_paths(L, y, ends, t)
        return phi.interp(y) + res["value"], res["p0"]
    ends = targets + wrap_diff(y - targets, phi.period)
    res = minimize_paths(L, targets, ends, t)
    return phi.interp(y) - res["value"], res["p1"]


# ---------------------------------------------------------------------------
# Pointwise T^+ / T^- (off-grid arguments, short times)
# ---------------------------------------------------------------------------

def lax_oleinik_point(phi: GridField, L: LagrangianSpec, t: float, xs, sign: int,
                      constants: ShortTimeConstants, refine_steps: int = 5,
                      N: int | None = None):
    """Evaluate T^{+/-}_t phi at arbitrary points for t below the step bound.

    Returns (values, arg_points, momenta) with momenta = D_y A at the
    optimizer (sign>0) or -D_x A (sign<0); shapes (B,), (B,d), (B,d).
    """
    if t <= 0:
        raise DegenerateTime(f"duration must be positive, got {t}")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    B, d = xs.shape
    h = phi.spacing
    w = min(int(np.ceil(constants.lam * t / h)) + 2, phi.n // 2 - 1)
    offs = np.arange(-w, w + 1) * h
    if d == 1:
        grid_y = xs[:, None, 0] + offs[None, :]          # (B, W)
        ys = grid_y.reshape(-1, 1)
    else:
        o2 = np.stack(np.meshgrid(offs, offs, indexing="ij"), axis=-1).reshape(-1, 2)
        ys = (xs[:, None, :] + o2[None, :, :]).reshape(-1, 2)
    W = ys.shape[0] // B
    base = np.repeat(xs, W, axis=0)
    if sign < 0:
        res = minimize_paths(L, ys, ys + wrap_diff(base - ys, phi.period), t, N)
        obj = phi.interp(ys if d > 1 else ys[:, 0]) + res["value"]
        mom = res["p0"]
    else:
        res = minimize_paths(L, base, base + wrap_diff(ys - base, phi.period), t, N)
        obj = phi.interp(ys if d > 1 else ys[:, 0]) - res["value"]
        mom = res["p1"]
    obj = obj.reshape(B, W)
    pick = np.argmin(obj, axis=1) if sign < 0 else np.argmax(obj, axis=1)
    rows = np.arange(B)
    best = obj[rows, pick]
    y = ys.reshape(B, W, d)[rows, pick]
    mom = mom.reshape(B, W, d)[rows, pick]
    curv = max(constants.C2 / t - (constants.C1 if sign > 0 else 0.0),
               0.1 * constants.C2 / t)
    for _ in range(refine_steps):
        grad = phi.gradient_central(y) - mom
        step = np.clip(sign * grad / curv, -0.45 * h, 0.45 * h)
        y_try = y + step
        if sign < 0:
            res = minimize_paths(L, y_try, y_try + wrap_diff(xs - y_try, phi.period), t, N)
            obj_try = phi.interp(y_try if d > 1 else y_try[:, 0]) + res["value"]
            mom_try = res["p0"]
        else:
            res = minimize_paths(L, xs, xs + wrap_diff(y_try - xs, phi.period), t, N)
            obj_try = phi.interp(y_try if d > 1 else y_try[:, 0]) - res["value"]
            mom_try = res["p1"]
        acc = (obj_try < best) if sign < 0 else (obj_try > best)
        best = np.where(acc, obj_try, best)
        y = np.where(acc[:, None], y_try, y)
        mom = np.where(acc[:, None], mom_try, mom)
    return best, y, mom


# ---------------------------------------------------------------------------
# Weak KAM fixed point
# ---------------------------------------------------------------------------

def weak_kam_solve(H: HamiltonianSpec, n: int, t_step: float = 0.2,
                   tol: float = 1e-6, max_iter: int = 2000,
                   refine: bool = True, strict: bool = True) -> CriticalSolveResult:
    """Iterate phi <- T^-_t phi - min(T^-_t phi) from phi = 0 to the fixed point.

    The critical value is minus the mean nodewise drift per unit time at the
    fixed point.  ``refine=False`` skips the continuous argument descent
    (used at 2D scale where the grid-only drift bias is within tolerance).
    """
    if not (0 < t_step <= 1):
        raise ValueError("t_step must lie in (0, 1]")
    if n < 64:
        raise ValueError("need n >= 64")
    L = lagrangian_from(H)
    phi = constant_field(0.0, n, H.dim, H.period)
    constants = None
    lip_at_constants = -1.0
    it = 0
    delta = np.inf
    for it in range(1, max_iter + 1):
        lip = phi.lipschitz()
        if constants is None or lip > lip_at_constants * 1.25 + 1e-12:
            constants = short_time_constants(phi, L)
            lip_at_constants = max(lip, 1e-9)
        psi = t_minus(phi, L, t_step, constants, refine)
        nxt = GridField(psi.values - psi.min(), phi.period, phi.meta)
        delta = nxt.max_abs_diff(phi)
        phi = nxt
        if delta <= tol:
            break
    constants = short_time_constants(phi, L)  # final field's constants
    psi = t_minus(phi, L, t_step, constants, refine)
    c_value = -float(np.mean(psi.values - phi.values)) / t_step
    residual = float(np.max(np.abs(psi.values + c_value * t_step - phi.values)))
    converged = delta <= tol
    result = CriticalSolveResult(phi=phi, c_value=c_value, iterations=it,
                                 residual=residual, constants=constants,
                                 converged=converged)
    if strict and not converged:
        raise NonConvergence(f"weak KAM iteration stalled (delta {delta:.3e})",
                             best=result, residual=delta)
    return result


# ---------------------------------------------------------------------------
# Commutator defect and cut time
# ---------------------------------------------------------------------------

_FIELD_CACHE: dict = {}


def clear_field_cache():
    _FIELD_CACHE.clear()


def commutator_defect_field(phi: GridField, L: LagrangianSpec, t: float,
                            constants: ShortTimeConstants | None = None,
                            refine: bool = True) -> GridField:
    """(T^-_t T^+_t - T^+_t T^-_t) phi as a grid field (cached per (phi, t))."""
    constants = _constants_for(phi, L, constants)
    key = (phi.content_key(), round(t, 12), refine)
    if key in _FIELD_CACHE:
        return _FIELD_CACHE[key]
    tp = t_plus(phi, L, t, constants, refine)
    tmtp = t_minus(tp, L, t, constants, refine)
    tm = t_minus(phi, L, t, constants, refine)
    tptm = t_plus(tm, L, t, constants, refine)
    out = GridField(tmtp.values - tptm.values, phi.period, phi.meta)
    _FIELD_CACHE[key] = out
    return out


def commutator_defect(phi: GridField, L: LagrangianSpec, t: float, x,
                      constants: ShortTimeConstants | None = None) -> float:
    """Pointwise commutator defect; nonnegative up to grid tolerance for
    weak KAM fields."""
    field = commutator_defect_field(phi, L, t, constants)
    x = np.atleast_1d(np.asarray(x, float))
    return float(field.interp(x if phi.dim > 1 else x[0]))


def default_t_ladder(horizon: float, size: int = T_LADDER_SIZE) -> np.ndarray:
    lad = np.geomspace(0.01, horizon, size)
    lad = np.unique(np.round(np.concatenate([lad, [0.05, horizon]]), 12))
    return lad[lad <= horizon + 1e-12]


def grid_self_defect(phi: GridField, L: LagrangianSpec,
                     t_ladder, constants=None) -> float:
    """Max |defect| at the Aubry probes (argmin of phi and neighbors)."""
    flat = int(np.argmin(phi.values))
    if phi.dim == 1:
        probe_idx = [(flat + s) % phi.n for s in (-1, 0, 1)]
        coords = [np.array([i * phi.spacing]) for i in probe_idx]
    else:
        i, j = np.unravel_index(flat, phi.values.shape)
        coords = [np.array([(i + a) % phi.n, (j + b) % phi.n]) * phi.spacing
                  for a in (-1, 0, 1) for b in (-1, 0, 1)]
    worst = 0.0
    for t in t_ladder:
        f = commutator_defect_field(phi, L, t, constants)
        for c in coords:
            worst = max(worst, abs(float(f.interp(c if phi.dim > 1 else c[0]))))
    return worst


def calibrate_defect_tol(phi: GridField, L: LagrangianSpec, horizon: float,
                         constants=None, floor: float = 1e-4) -> float:
    """defect_tol = max(5 x grid self-defect on Aubry probes, floor)."""
    lad = default_t_ladder(horizon)
    return max(5.0 * grid_self_defect(phi, L, lad, constants), floor)


def cut_time(phi: GridField, L: LagrangianSpec, x, horizon: float,
             defect_tol: float, constants: ShortTimeConstants | None = None,
             t_grid=None) -> float:
    """sup { t <= horizon : defect(phi, t, x) <= defect_tol } by bisection.

    The bisection runs over a fixed time ladder so defect fields are shared
    across queries; the resolution is one ladder step.
    """
    lad = default_t_ladder(horizon) if t_grid is None else np.asarray(t_grid)
    x = np.atleast_1d(np.asarray(x, float))
    xq = x if phi.dim > 1 else x[0]

    def defect_at(i):
        f = commutator_defect_field(phi, L, lad[i], constants)
        return float(f.interp(xq))

    if defect_at(len(lad) - 1) <= defect_tol:
        return float(horizon)
    lo, hi = -1, len(lad) - 1   # lo: last index known below tol (-1 = none)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if defect_at(mid) <= defect_tol:
            lo = mid
        else:
            hi = mid
    return float(lad[lo]) if lo >= 0 else 0.0


def cut_time_field(phi: GridField, L: LagrangianSpec, horizon: float,
                   defect_tol: float | None = None,
                   constants: ShortTimeConstants | None = None) -> CutTimeField:
    """Vectorized ladder scan of the cut time over all nodes."""
    constants = _constants_for(phi, L, constants)
    lad = default_t_ladder(horizon)
    if defect_tol is None:
        defect_tol = calibrate_defect_tol(phi, L, horizon, constants)
    defects = np.empty((len(lad),) + phi.values.shape)
    for i, t in enumerate(lad):
        defects[i] = commutator_defect_field(phi, L, t, constants).values
    below = defects <= defect_tol
    # monotone sup: largest ladder time with all smaller ladder times below tol
    run = np.ones(phi.values.shape, dtype=bool)
    tau = np.zeros(phi.values.shape)
    for i, t in enumerate(lad):
        run = run & below[i]
        tau = np.where(run, t, tau)
    tau = np.where(run, horizon, tau)
    return CutTimeField(GridField(tau, phi.period), horizon, float(defect_tol), lad, defects)


# ---------------------------------------------------------------------------
# Arnaud graph diagnostic
# ---------------------------------------------------------------------------

def arnaud_graph_check(phi: GridField, H: HamiltonianSpec, t: float,
                       samples: int = 32,
                       constants: ShortTimeConstants | None = None,
                       dt: float = 1e-3) -> dict:
    """Flow graph(DT^+_t phi) forward and measure membership in graph(D^+ phi).

    For sampled x the momentum DT^+_t phi(x) is the initial momentum of the
    maximizing arc; Phi_H^t must carry it into the superdifferential at the
    arrival point.  Reports max membership distance and arc mismatch.
    """
    from .semiconcave import superdifferential

    L = lagrangian_from(H)
    constants = _constants_for(phi, L, constants)
    if not t < constants.tau_phi_step:
        raise ValueError("arnaud_graph_check requires t < tau_phi_step")
    n = phi.n
    idx = np.linspace(0, n**phi.dim, samples, endpoint=False).astype(int)
    xs = phi.node_coords()[idx]
    vals, ys, p_end = lax_oleinik_point(phi, L, t, xs, +1, constants)
    # initial momentum of the maximizing arc x -> y
    ends = xs + wrap_diff(ys - xs, phi.period)
    res = minimize_paths(L, xs, ends, t)
    p0 = res["p0"]
    xe, pe = hamiltonian_flow_raw(H, xs, p0, t, dt)
    arc_mismatch = float(np.max(np.abs(wrap_diff(xe - ends, phi.period))))
    # the arc arrival point is the maximizer itself; the flow reproduces it
    # up to arc_mismatch, so membership is tested at the maximizer
    dists = []
    for k in range(xs.shape[0]):
        sd = superdifferential(phi, wrap(ends[k], phi.period))
        dists.append(sd.membership_distance(pe[k]))
    dists = np.array(dists)
    return {"max_membership_distance": float(np.max(dists)),
            "mean_membership_distance": float(np.mean(dists)),
            "max_arc_mismatch": arc_mismatch,
            "samples": int(xs.shape[0]),
            "grid_spacing": phi.spacing}
