"""Minimal Lagrangian action between torus points over a fixed time.

The kernel A_t(x, y) is the infimum of the action integral over curves from
x to y in time t.  It is computed by minimizing the discrete action

    S(xi) = sum_i L((xi_i + xi_{i+1})/2, (xi_{i+1} - xi_i)/ds) * ds

over interior nodes with damped Newton on the discrete Euler-Lagrange
system (tridiagonal in 1D, block-tridiagonal with 2x2 blocks in 2D), one
solve per path, vectorized over large batches of endpoint pairs.  Paths are
stored as unwrapped lifts; the torus enters only through the choice of the
3^d nearest homotopy lifts of the endpoint.

Short-time regularity constants (semiconcavity C1 of a field, convexity
C2/t of the kernel, speed bound lambda, admissible step tau) are estimated
empirically and feed the Lax-Oleinik layer.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTime, EmptyProbe, NonConvergence
from .hamiltonians import HamiltonianSpec, LagrangianSpec, hamiltonian_flow_raw
from .torus import TWO_PI, TorusPoint, as_coords, wrap, wrap_diff

_ELEMENT_BUDGET = 4_000_000  # per-array elements per Newton chunk


def default_segments(t: float) -> int:
    return max(8, int(np.ceil(t / 0.01)))


@dataclass(frozen=True)
class ActionPath:
    """Time-sampled minimizing curve, stored with its unwrapped lift."""

    times: np.ndarray
    lift: np.ndarray            # (N+1, d), unwrapped
    period: float = TWO_PI

    @property
    def points(self) -> np.ndarray:
        return wrap(self.lift, self.period)

    @property
    def segments(self) -> int:
        return self.lift.shape[0] - 1

    def velocity(self) -> np.ndarray:
        ds = self.times[1] - self.times[0]
        return np.diff(self.lift, axis=0) / ds


@dataclass(frozen=True)
class ActionResult:
    """Value of A_t(x,y) with the minimizer and endpoint momenta.

    ``momentum_out`` is L_v at s=t (= D_y A_t); ``-momentum_in`` is D_x A_t.
    """

    value: float
    path: ActionPath
    momentum_in: np.ndarray
    momentum_out: np.ndarray
    converged: bool
    el_residual: float


# ---------------------------------------------------------------------------
# Batched Newton minimizer
# ---------------------------------------------------------------------------

def _tridiag_solve(diag, lower, upper, rhs):
    """Batched Thomas algorithm; diag (B,M), lower/upper (B,M-1), rhs (B,M)."""
    B, M = diag.shape
    c = np.empty_like(upper) if M > 1 else np.empty((B, 0))
    d = np.empty_like(rhs)
    denom = diag[:, 0]
    d[:, 0] = rhs[:, 0] / denom
    for i in range(1, M):
        c[:, i - 1] = upper[:, i - 1] / denom
        denom = diag[:, i] - lower[:, i - 1] * c[:, i - 1]
        d[:, i] = (rhs[:, i] - lower[:, i - 1] * d[:, i - 1]) / denom
    x = np.empty_like(rhs)
    x[:, -1] = d[:, -1]
    for i in range(M - 2, -1, -1):
        x[:, i] = d[:, i] - c[:, i] * x[:, i + 1]
    return x


def _inv2(A):
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    out = np.empty_like(A)
    out[..., 0, 0] = A[..., 1, 1]
    out[..., 1, 1] = A[..., 0, 0]
    out[..., 0, 1] = -A[..., 0, 1]
    out[..., 1, 0] = -A[..., 1, 0]
    return out / det[..., None, None]


def _block_tridiag_solve(diag, lower, upper, rhs):
    """Batched block-Thomas; diag (B,M,2,2), lower/upper (B,M-1,2,2), rhs (B,M,2)."""
    B, M = diag.shape[:2]
    cp = np.empty_like(upper) if M > 1 else np.empty((B, 0, 2, 2))
    dp = np.empty_like(rhs)
    inv = _inv2(diag[:, 0])
    dp[:, 0] = np.einsum("bij,bj->bi", inv, rhs[:, 0])
    for i in range(1, M):
        cp[:, i - 1] = np.einsum("bij,bjk->bik", inv, upper[:, i - 1])
        denom = diag[:, i] - np.einsum("bij,bjk->bik", lower[:, i - 1], cp[:, i - 1])
        inv = _inv2(denom)
        dp[:, i] = np.einsum("bij,bj->bi", inv,
                             rhs[:, i] - np.einsum("bij,bj->bi", lower[:, i - 1], dp[:, i - 1]))
    x = np.empty_like(rhs)
    x[:, -1] = dp[:, -1]
    for i in range(M - 2, -1, -1):
        x[:, i] = dp[:, i] - np.einsum("bij,bj->bi", cp[:, i], x[:, i + 1])
    return x


def _action_and_grad(L, xi, ds):
    """Discrete action, interior gradient and per-segment derivative data."""
    m = 0.5 * (xi[:, :-1] + xi[:, 1:])
    v = np.diff(xi, axis=1) / ds
    lvals = L.evaluate(m, v)
    S = np.sum(lvals, axis=1) * ds
    Lx = L.gradient_x(m, v)
    Lv = L.gradient_v(m, v)
    grad = ds * 0.5 * (Lx[:, :-1] + Lx[:, 1:]) + (Lv[:, :-1] - Lv[:, 1:])
    return S, grad, m, v, Lx, Lv


def minimize_paths(L: LagrangianSpec, x0, y1, t, N=None, tol=1e-9, max_iter=30,
                   init=None):
    """Minimize the discrete action for a batch of endpoint pairs.

    x0, y1: (B, d) start points and *lifted* end points (no wrapping applied).
    Returns dict with lift (B, N+1, d), value, p0, p1, grad_inf, converged.
    """
    if t <= 0:
        raise DegenerateTime(f"duration must be positive, got {t}")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    y1 = np.atleast_2d(np.asarray(y1, dtype=float))
    B, d = x0.shape
    N = default_segments(t) if N is None else int(N)
    if N < 4:
        raise ValueError("need at least 4 segments")
    chunk = max(256, _ELEMENT_BUDGET // ((N + 1) * d))
    outs = {k: [] for k in ("lift", "value", "p0", "p1", "grad_inf", "converged")}
    for lo in range(0, B, chunk):
        hi = min(B, lo + chunk)
        sub_init = None if init is None else init[lo:hi]
        res = _minimize_chunk(L, x0[lo:hi], y1[lo:hi], t, N, tol, max_iter, sub_init)
        for k in outs:
            outs[k].append(res[k])
    return {k: np.concatenate(v, axis=0) for k, v in outs.items()}


def _minimize_chunk(L, x0, y1, t, N, tol, max_iter, init):
    B, d = x0.shape
    ds = t / N
    s = np.linspace(0.0, 1.0, N + 1)
    if init is None:
        xi = x0[:, None, :] + s[None, :, None] * (y1 - x0)[:, None, :]
    else:
        xi = np.array(init, dtype=float)
        xi[:, 0] = x0
        xi[:, -1] = y1
    S, grad, m, v, Lx, Lv = _action_and_grad(L, xi, ds)
    mu = np.zeros(B)  # Levenberg shift, per path
    for _ in range(max_iter):
        gi = np.max(np.abs(grad), axis=(1, 2))
        if np.max(gi) <= tol:
            break
        delta = _newton_step(L, m, v, grad, ds, mu)
        # backtracking on the action value
        alpha = np.ones(B)
        best_new = None
        for _ in range(12):
            trial = xi.copy()
            trial[:, 1:-1] += alpha[:, None, None] * delta
            S_new, g_new, m_new, v_new, Lx_new, Lv_new = _action_and_grad(L, trial, ds)
            worse = S_new > S + 1e-13 * (1 + np.abs(S))
            if not np.any(worse):
                best_new = (trial, S_new, g_new, m_new, v_new, Lx_new, Lv_new)
                break
            alpha = np.where(worse, 0.5 * alpha, alpha)
        if best_new is None:
            # stalled lines get a Levenberg boost and a frozen position
            stuck = S_new > S + 1e-13 * (1 + np.abs(S))
            mu = np.where(stuck, np.maximum(1.0, mu * 10.0), mu)
            keep = stuck[:, None, None]
            trial = np.where(keep, xi, trial)
            S_new = np.where(stuck, S, S_new)
            best_new = (trial, S_new, *_action_and_grad(L, trial, ds)[1:])
        xi, S, grad, m, v, Lx, Lv = best_new[0], best_new[1], best_new[2], best_new[3], best_new[4], best_new[5], best_new[6]
    gi = np.max(np.abs(grad), axis=(1, 2))
    p0 = Lv[:, 0] - 0.5 * ds * Lx[:, 0]
    p1 = Lv[:, -1] + 0.5 * ds * Lx[:, -1]
    return {"lift": xi, "value": S, "p0": p0, "p1": p1,
            "grad_inf": gi, "converged": gi <= max(tol, 1e-7)}


def _newton_step(L, m, v, grad, ds, mu):
    B, N, d = m.shape
    Lxx = L.hessian_xx(m, v)
    Lxv = L.hessian_xv(m, v)
    Lvv = L.hessian_vv(m, v)
    sym = Lxv + np.swapaxes(Lxv, -1, -2)
    asym = Lxv - np.swapaxes(Lxv, -1, -2)
    a_ii = 0.25 * ds * Lxx - 0.5 * sym + Lvv / ds          # d^2(seg)/d xi_i^2
    a_jj = 0.25 * ds * Lxx + 0.5 * sym + Lvv / ds          # d^2(seg)/d xi_{i+1}^2
    a_ij = 0.25 * ds * Lxx + 0.5 * asym - Lvv / ds         # coupling i -> i+1
    diag = a_jj[:, :-1] + a_ii[:, 1:]                      # interior nodes 1..N-1
    upper = a_ij[:, 1:-1] if N > 2 else a_ij[:, 1:0]
    if d == 1:
        dg = diag[..., 0, 0] + mu[:, None]
        up = upper[..., 0, 0]
        lo = up  # symmetric in 1D (a_ij scalar, asym=0 for our families)
        step = _tridiag_solve(dg, lo, up, -grad[..., 0])
        return step[..., None]
    dg = diag + mu[:, None, None, None] * np.eye(2)
    lo = np.swapaxes(upper, -1, -2)
    return _block_tridiag_solve(dg, lo, upper, -grad)


# ---------------------------------------------------------------------------
# Fundamental solution
# ---------------------------------------------------------------------------

def fundamental_solution(L: LagrangianSpec, t: float, x, y, N: int | None = None,
                         all_lifts: bool = True) -> ActionResult:
    """A_t(x, y) with the minimizer over the 3^d nearest homotopy lifts.

    Equal-action lifts are resolved by the smallest lexicographic lift
    index, which keeps results deterministic.
    """
    if t <= 0:
        raise DegenerateTime(f"duration must be positive, got {t}")
    d = L.dim
    x = as_coords(x, d)
    y = as_coords(y, d)
    N = default_segments(t) if N is None else int(N)
    base = x + wrap_diff(y - x, L.period)
    if all_lifts:
        ks = np.stack(np.meshgrid(*([np.array([-1.0, 0.0, 1.0])] * d), indexing="ij"),
                      axis=-1).reshape(-1, d)
    else:
        ks = np.zeros((1, d))
    ends = base[None, :] + L.period * ks
    starts = np.broadcast_to(x, ends.shape).copy()
    res = minimize_paths(L, starts, ends, t, N)
    best = int(np.argmin(np.round(res["value"], 12)))  # round: deterministic ties
    times = np.linspace(0.0, t, N + 1)
    path = ActionPath(times, res["lift"][best], L.period)
    return ActionResult(float(res["value"][best]), path,
                        res["p0"][best], res["p1"][best],
                        bool(res["converged"][best]), float(res["grad_inf"][best]))


def shooting_solution(H: HamiltonianSpec, t: float, x, y, p0=None,
                      dt=None, tol=1e-10, max_iter=60) -> tuple[np.ndarray, np.ndarray]:
    """Two-point boundary solve of the Hamiltonian flow: find p0 with
    pi(Phi_H^t(x, p0)) = y (lifted).  Cross-validates the variational kernel."""
    d = H.dim
    x = as_coords(x, d)
    y = as_coords(y, d)
    target = x + wrap_diff(y - x, H.period)
    dt = min(1e-3, t / 50) if dt is None else dt
    p = np.zeros(d) if p0 is None else np.array(p0, dtype=float)
    for _ in range(max_iter):
        xe, pe = hamiltonian_flow_raw(H, x, p, t, dt)
        r = xe - target
        if np.max(np.abs(r)) <= tol:
            return p, pe
        J = np.empty((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = 1e-6
            xp, _ = hamiltonian_flow_raw(H, x, p + e, t, dt)
            J[:, j] = (xp - xe) / 1e-6
        p = p - np.linalg.solve(J, r)
    raise NonConvergence("shooting solve stalled", best=p, residual=float(np.max(np.abs(r))))


# ---------------------------------------------------------------------------
# Cost tables for the Lax-Oleinik layer
# ---------------------------------------------------------------------------

class CostTable:
    """A_t between grid nodes within an offset window, plus metadata.

    ``values[i..., k...]`` = A_t(node_i, node_i + offset_k) where offsets
    run over [-w, w]^d grid steps (lifted, never wrapped).
    """

    def __init__(self, t, n, d, radius_nodes, N, values, period=TWO_PI):
        self.t = float(t)
        self.n = int(n)
        self.d = int(d)
        self.radius_nodes = int(radius_nodes)
        self.N = int(N)
        self.values = values
        self.period = float(period)

    @property
    def offsets(self):
        return np.arange(-self.radius_nodes, self.radius_nodes + 1)


_TABLE_CACHE: dict = {}


def clear_table_cache():
    _TABLE_CACHE.clear()


def build_cost_table(L: LagrangianSpec, n: int, t: float, radius_nodes: int,
                     N: int | None = None, cache: bool = True) -> CostTable:
    """Vectorized A_t table over all (node, offset) pairs within the window."""
    d = L.dim
    N = default_segments(t) if N is None else int(N)
    w = int(radius_nodes)
    if w >= n // 2:
        w = n // 2 - 1
    key = (L.hamiltonian.cache_key(), n, d, round(t, 12), w, N)
    if cache and key in _TABLE_CACHE:
        return _TABLE_CACHE[key]
    h = L.period / n
    nodes_1d = np.arange(n) * h
    offs = np.arange(-w, w + 1) * h
    if d == 1:
        starts = np.repeat(nodes_1d, offs.size)[:, None]
        ends = starts + np.tile(offs, n)[:, None]
        res = minimize_paths(L, starts, ends, t, N)
        values = res["value"].reshape(n, offs.size)
    else:
        nodes = np.stack(np.meshgrid(nodes_1d, nodes_1d, indexing="ij"), axis=-1).reshape(-1, 2)
        ko = np.stack(np.meshgrid(offs, offs, indexing="ij"), axis=-1).reshape(-1, 2)
        W = ko.shape[0]
        values = np.empty((n * n, W))
        # chunk over nodes to bound memory
        node_chunk = max(1, _ELEMENT_BUDGET // (W * (N + 1) * d))
        for lo in range(0, n * n, node_chunk):
            hi = min(n * n, lo + node_chunk)
            starts = np.repeat(nodes[lo:hi], W, axis=0)
            ends = starts + np.tile(ko, (hi - lo, 1))
            res = minimize_paths(L, starts, ends, t, N)
            values[lo:hi] = res["value"].reshape(hi - lo, W)
        values = values.reshape(n, n, offs.size, offs.size)
    table = CostTable(t, n, d, w, N, values, L.period)
    if cache:
        _TABLE_CACHE[key] = table
    return table


def save_cost_table(path: str, table: CostTable, key_extra: dict | None = None):
    """Binary layout: one JSON header line + row-major float64 payload."""
    header = {"t": table.t, "n": table.n, "d": table.d,
              "radius_nodes": table.radius_nodes, "N": table.N,
              "period": table.period, "shape": list(table.values.shape)}
    header.update(key_extra or {})
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write((json.dumps(header, sort_keys=True) + "\n").encode())
        f.write(np.ascontiguousarray(table.values, dtype=np.float64).tobytes())
    os.replace(tmp, path)


def load_cost_table(path: str) -> tuple[CostTable, dict]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        payload = np.frombuffer(f.read(), dtype=np.float64).reshape(header["shape"])
    table = CostTable(header["t"], header["n"], header["d"], header["radius_nodes"],
                      header["N"], payload, header["period"])
    return table, header


# ---------------------------------------------------------------------------
# Short-time constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShortTimeConstants:
    """Regularity constants driving the intrinsic construction.

    C1: semiconcavity constant of the field; C2: short-time convexity
    coefficient of the kernel (A_t is C2/t-convex near the diagonal);
    lam: speed bound lambda_0 + 1; tau_phi_step: admissible intrinsic step
    with C1 - C2/tau < 0.
    """

    C1: float
    C2: float
    lam: float
    tau_phi_step: float
    lip: float

    def __post_init__(self):
        assert self.tau_phi_step > 0
        assert self.C1 - self.C2 / self.tau_phi_step < 0


def short_time_constants(phi, L: LagrangianSpec, bracket=(0.05, 0.4),
                         probes: int = 6) -> ShortTimeConstants:
    """Estimate (C1, C2, lambda, tau) for a grid field and a Lagrangian.

    C2 comes from sampled Hessians of y -> A_t(x, y) near the diagonal,
    fitted as c/t across the time bracket; the admissible step is the
    largest bracket time with C1 - C2/t below a 10% safety margin.
    """
    values = phi.values
    n = values.shape[0]
    if n < 8:
        raise EmptyProbe("need at least 8 grid points per axis")
    if not np.all(np.isfinite(values)):
        raise EmptyProbe("field has non-finite values")
    h = phi.spacing
    d = phi.dim
    # C1: max positive second central difference, per axis
    c1 = 0.0
    for ax in range(d):
        second = (np.roll(values, -1, axis=ax) - 2 * values + np.roll(values, 1, axis=ax)) / h**2
        c1 = max(c1, float(np.max(second)))
    c1 = max(c1, 0.0)
    lip = phi.lipschitz()
    lam0 = _speed_bound(L.hamiltonian, lip + 1.0, n)
    # C2: min eigenvalue of Hess_y A_t at probe base points, scaled by t
    rng = np.random.default_rng(7)
    xs = phi.node_coords()[rng.choice(n**d, size=min(probes, n**d), replace=False)]
    ts = np.geomspace(bracket[0], bracket[1], 4)
    c2_samples = []
    for t in ts:
        delta = max(2e-3, 0.02 * t)
        hess_mins = _kernel_hessian_min(L, xs, t, delta)
        c2_samples.append(t * np.median(hess_mins))
    c2 = float(np.median(c2_samples))
    if c2 <= 0:
        raise EmptyProbe("kernel convexity probe failed (C2 <= 0)")
    # margin: require C1 - C2/t < -0.1*C2/t, i.e. t < 0.9*C2/C1
    tau = bracket[1] if c1 <= 1e-12 else min(bracket[1], 0.9 * c2 / c1)
    tau = max(tau, bracket[0])
    return ShortTimeConstants(C1=c1, C2=c2, lam=lam0 + 1.0, tau_phi_step=float(tau), lip=lip)


def _speed_bound(H: HamiltonianSpec, p_radius: float, n: int) -> float:
    d = H.dim
    xs = np.linspace(0, H.period, min(n, 64), endpoint=False)
    grid = np.stack(np.meshgrid(*([xs] * d), indexing="ij"), axis=-1).reshape(-1, d)
    best = 0.0
    if d == 1:
        dirs = [np.array([1.0]), np.array([-1.0])]
    else:
        ang = np.linspace(0, 2 * np.pi, 16, endpoint=False)
        dirs = [np.array([np.cos(a), np.sin(a)]) for a in ang]
    for e in dirs:
        for r in (p_radius, 0.5 * p_radius):
            p = np.broadcast_to(r * e, grid.shape)
            sp = np.sqrt(np.sum(H.gradient_p(grid, p) ** 2, axis=-1))
            best = max(best, float(np.max(sp)))
    return best


def _kernel_hessian_min(L, xs, t, delta):
    """Smallest eigenvalue of the end-point Hessian of A_t at probe points."""
    B, d = xs.shape
    outs = np.empty(B)
    if d == 1:
        pts = np.concatenate([xs, xs + delta, xs - delta])
        starts = np.concatenate([xs, xs, xs])
        res = minimize_paths(L, starts, pts, t)
        v0, vp, vm = res["value"][:B], res["value"][B:2 * B], res["value"][2 * B:]
        outs = (vp - 2 * v0 + vm) / delta**2
        return outs
    e = np.eye(2) * delta
    stencils = [np.zeros(2), e[0], -e[0], e[1], -e[1], e[0] + e[1], e[0] - e[1],
                -e[0] + e[1], -e[0] - e[1]]
    ends = np.concatenate([xs + s for s in stencils])
    starts = np.tile(xs, (len(stencils), 1))
    vals = minimize_paths(L, starts, ends, t)["value"].reshape(len(stencils), B)
    v0, vxp, vxm, vyp, vym, vpp, vpm, vmp, vmm = vals
    hxx = (vxp - 2 * v0 + vxm) / delta**2
    hyy = (vyp - 2 * v0 + vym) / delta**2
    hxy = (vpp - vpm - vmp + vmm) / (4 * delta**2)
    tr = hxx + hyy
    disc = np.sqrt(np.maximum((hxx - hyy) ** 2 + 4 * hxy**2, 0.0))
    return 0.5 * (tr - disc)
