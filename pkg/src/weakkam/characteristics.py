"""Singular characteristics: intrinsic steps, minimizing movements, the
sharp-selection flow and their diagnostics.

The forward flow integrates gamma' = H_p(gamma, p#(gamma)) by explicit
Euler steps; the driving field is only right-continuous along the path, so
higher-order schemes gain nothing at corners.  In 1D a step that crosses a
stationary singular node (one whose minimal-energy velocity vanishes) is
shortened to land exactly on it, which realizes the right-derivative
semantics of the broken-characteristic equation at the resolution of the
grid.

The intrinsic construction iterates y -> argmax { phi(z) - A_tau(y, z) }
for steps below the admissible bound; its vanishing-step limit is compared
against the sharp flow by the scheme-agreement tests.  Backward minimizing
movements iterate argmin { phi(y) + A_tau(y, z) } and return one branch
per reachable gradient at a singular start.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .action import ShortTimeConstants, default_segments, minimize_paths
from .errors import StepTooLarge
from .grid import GridField
from .hamiltonians import HamiltonianSpec, LagrangianSpec, lagrangian_from
from .laxoleinik import (_FIELD_CACHE, commutator_defect_field, cut_time,
                         default_t_ladder, lax_oleinik_point, t_plus)
from .semiconcave import (SlopeTables, minimal_energy_selection, p_sharp_interval,
                          superdifferential, superdifferential_interval)
from .torus import wrap, wrap_diff

_STOP_TOL = 1e-6


@dataclass
class CharacteristicPath:
    """Time-sampled curve with positions, momenta and diagnostics.

    positions are wrapped representatives; velocities are right differences
    (the last entry repeats).  ``scheme`` is one of {intrinsic, w_delta,
    ode_sharp, mollified, backward_classical}.
    """

    times: np.ndarray
    positions: np.ndarray      # (K, d)
    momenta: np.ndarray        # (K, d)
    velocities: np.ndarray     # (K, d)
    scheme: str
    diagnostics: dict = field(default_factory=dict)
    period: float = 2 * np.pi

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def at(self, t: float) -> np.ndarray:
        """Position at a sample time (nearest sample)."""
        k = int(np.argmin(np.abs(self.times - t)))
        return self.positions[k]

    def sup_distance(self, other: "CharacteristicPath") -> float:
        """Sup over common sample times of the torus distance."""
        k = min(len(self.times), len(other.times))
        d = wrap_diff(self.positions[:k] - other.positions[:k], self.period)
        return float(np.max(np.sqrt(np.sum(d * d, axis=-1))))

    def max_step(self) -> float:
        d = wrap_diff(np.diff(self.positions, axis=0), self.period)
        return float(np.max(np.sqrt(np.sum(d * d, axis=-1)))) if len(self.times) > 1 else 0.0

    def write_csv(self, path: str):
        K, d = self.positions.shape
        edi = self.diagnostics.get("edi_residual", np.full(K, np.nan))
        inc = self.diagnostics.get("inclusion_residual", np.full(K, np.nan))
        ct = self.diagnostics.get("cut_time", np.full(K, np.nan))
        tmp = path + ".tmp"
        with open(tmp, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t"] + [f"x{j}" for j in range(d)] + [f"p{j}" for j in range(d)]
                       + ["edi_residual", "inclusion_residual", "cut_time"])
            for k in range(K):
                w.writerow([f"{self.times[k]:.17g}"]
                           + [f"{v:.17g}" for v in self.positions[k]]
                           + [f"{v:.17g}" for v in self.momenta[k]]
                           + [f"{edi[k] if np.ndim(edi) else edi:.17g}",
                              f"{inc[k] if np.ndim(inc) else inc:.17g}",
                              f"{ct[k] if np.ndim(ct) else ct:.17g}"])
        os.replace(tmp, path)


def _finish_path(times, lifts, momenta, scheme, period, diagnostics=None):
    lifts = np.asarray(lifts)
    vel = np.zeros_like(lifts)
    if len(times) > 1:
        dts = np.diff(times)[:, None]
        vel[:-1] = np.diff(lifts, axis=0) / dts
        vel[-1] = vel[-2]
    return CharacteristicPath(np.asarray(times, dtype=float), wrap(lifts, period),
                              np.asarray(momenta), vel, scheme,
                              dict(diagnostics or {}), period)


# ---------------------------------------------------------------------------
# Minimal-energy velocity field
# ---------------------------------------------------------------------------

class SharpSelector:
    """Vectorized p#/velocity queries for a fixed (phi, H) pair.

    Caches the slope tables and the list of stationary singular nodes used
    by the event-aware stepping.
    """

    def __init__(self, phi: GridField, H: HamiltonianSpec):
        self.phi = phi
        self.H = H
        self.tab = SlopeTables.for_field(phi)
        if phi.dim == 1:
            self.corners = self.tab.corner_coords
            vc = []
            for c in self.corners:
                lo, hi = superdifferential_interval(phi, np.array([c]), self.tab)
                p = p_sharp_interval(H, np.array([c]), lo, hi)
                vc.append(float(H.gradient_p(np.array([c]), np.array([p[0]]))[0]))
            self.corner_velocity = np.array(vc)
        else:
            self.corners = np.empty((0, 2))
            self.corner_velocity = np.empty(0)

    def momentum(self, xs: np.ndarray) -> np.ndarray:
        """p#(x) for query points xs of shape (B, d)."""
        xs = np.atleast_2d(xs)
        if self.phi.dim == 1:
            lo, hi = superdifferential_interval(self.phi, xs[:, 0], self.tab)
            return p_sharp_interval(self.H, xs[:, 0], lo, hi)[:, None]
        out = np.empty_like(xs)
        for k in range(xs.shape[0]):
            sd = superdifferential(self.phi, xs[k])
            out[k] = minimal_energy_selection(self.H, sd, xs[k]).p_sharp
        return out

    def velocity(self, xs: np.ndarray):
        p = self.momentum(xs)
        return self.H.gradient_p(np.atleast_2d(xs), p), p


def strict_characteristics_batch(phi: GridField, H: HamiltonianSpec, xs, T: float,
                                 dt: float = 1e-3, record_every: int = 1,
                                 selector: SharpSelector | None = None):
    """Explicit sharp-selection flow for a batch of initial points.

    Returns (times, lifts (B, K, d), momenta (B, K, d)).  Positions are
    unwrapped lifts; a 1D step crossing a stationary singular node is
    shortened to land on it exactly.
    """
    sel = selector or SharpSelector(phi, H)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    B, d = xs.shape
    n_steps = int(np.round(T / dt))
    rec_t = [0.0]
    x = xs.copy()
    v, p = sel.velocity(x)
    lifts = [x.copy()]
    moms = [p.copy()]
    for k in range(n_steps):
        proposed = x + dt * v
        if d == 1 and sel.corners.size:
            for c, vc in zip(sel.corners, sel.corner_velocity):
                if abs(vc) > _STOP_TOL:
                    continue
                a = wrap_diff(x[:, 0] - c, phi.period)
                b = a + dt * v[:, 0]
                crossed = (np.abs(a) > _STOP_TOL) & (np.sign(a) != np.sign(b))
                proposed[:, 0] = np.where(crossed, x[:, 0] - a, proposed[:, 0])
        x = proposed
        v, p = sel.velocity(wrap(x, phi.period))
        if (k + 1) % record_every == 0:
            rec_t.append((k + 1) * dt)
            lifts.append(x.copy())
            moms.append(p.copy())
    return (np.array(rec_t), np.swapaxes(np.array(lifts), 0, 1),
            np.swapaxes(np.array(moms), 0, 1))


def strict_singular_characteristic(phi: GridField, H: HamiltonianSpec, x, T: float,
                                   dt: float = 1e-3) -> CharacteristicPath:
    """Forward broken characteristic gamma' = H_p(gamma, p#(gamma))."""
    if dt > 1e-2:
        raise ValueError("dt must be at most 1e-2")
    times, lifts, moms = strict_characteristics_batch(phi, H, np.atleast_2d(x), T, dt)
    return _finish_path(times, lifts[0], moms[0], "ode_sharp", phi.period)


# ---------------------------------------------------------------------------
# Intrinsic construction and minimizing movements
# ---------------------------------------------------------------------------

def intrinsic_step(phi: GridField, L: LagrangianSpec, x, tau: float,
                   constants: ShortTimeConstants) -> np.ndarray:
    """argmax_y { phi(y) - A_tau(x, y) }, the one-step intrinsic update."""
    if not 0 < tau <= constants.tau_phi_step:
        raise StepTooLarge(f"tau={tau} exceeds admissible step {constants.tau_phi_step}")
    _, y, _ = lax_oleinik_point(phi, L, tau, np.atleast_2d(x), +1, constants)
    return y[0]


def intrinsic_characteristic(phi: GridField, H: HamiltonianSpec, x, tau: float,
                             T: float, constants: ShortTimeConstants,
                             fill_arcs: bool = True) -> CharacteristicPath:
    """Euler-segment iteration of the intrinsic step with arc-filled samples.

    Intermediate samples come from the connecting minimizing arcs, so the
    vanishing-step comparison against the sharp flow stays honest.
    """
    L = lagrangian_from(H)
    K = int(np.ceil(T / tau - 1e-12))
    x0 = np.atleast_1d(np.asarray(x, dtype=float))
    zs = [x0]
    for _ in range(K):
        zs.append(np.asarray(intrinsic_step(phi, L, zs[-1], tau, constants), dtype=float))
    zs = np.array(zs)                       # (K+1, d), wrapped representatives
    # unwrapped lift of the partition sequence
    lifts = [zs[0]]
    for k in range(1, K + 1):
        lifts.append(lifts[-1] + wrap_diff(zs[k] - zs[k - 1], phi.period))
    lifts = np.array(lifts)
    if not fill_arcs:
        times = np.arange(K + 1) * tau
        moms = _arc_momenta_at_nodes(L, lifts, tau)
        return _finish_path(times, lifts, moms, "intrinsic", phi.period)
    N = default_segments(tau)
    res = minimize_paths(L, lifts[:-1], lifts[1:], tau, N)
    ds = tau / N
    samples = [lifts[0][None, :]]
    times = [np.array([0.0])]
    moms = [res["p0"][:1]]
    for k in range(K):
        arc = res["lift"][k]                # (N+1, d)
        m = 0.5 * (arc[:-1] + arc[1:])
        v = np.diff(arc, axis=0) / ds
        pm = L.gradient_v(m, v)             # midpoint momenta
        samples.append(arc[1:])
        times.append(k * tau + ds * np.arange(1, N + 1))
        moms.append(np.concatenate([pm[1:], res["p1"][k][None, :]], axis=0))
    lift_samples = np.concatenate(samples, axis=0)
    times = np.concatenate(times)
    moms = np.concatenate(moms, axis=0)
    return _finish_path(times, lift_samples, moms, "intrinsic", phi.period,
                        {"partition_points": lifts})


def _arc_momenta_at_nodes(L, lifts, tau):
    if len(lifts) < 2:
        return np.zeros_like(lifts)
    res = minimize_paths(L, lifts[:-1], lifts[1:], tau)
    moms = np.concatenate([res["p0"][:1], res["p1"]], axis=0)
    return moms


def minimizing_movement(phi: GridField, H: HamiltonianSpec, x, tau: float, T: float,
                        constants: ShortTimeConstants,
                        direction: str = "forward"):
    """Discrete-in-time variational curves from x with step tau.

    forward: iterated argmax of phi(.) - A_tau(z, .), sampled at partition
    points (the piecewise-constant curve z^tau).  backward: iterated argmin
    of phi(.) + A_tau(., z); at a singular start one path is returned per
    detected reachable gradient, so the result is always a list.
    """
    if direction == "forward":
        return intrinsic_characteristic(phi, H, x, tau, T, constants, fill_arcs=False)
    if direction != "backward":
        raise ValueError("direction must be 'forward' or 'backward'")
    return _backward_movement(phi, H, x, tau, T, constants)


def _backward_movement(phi, H, x, tau, T, constants):
    L = lagrangian_from(H)
    K = int(np.ceil(T / tau - 1e-12))
    x0 = np.atleast_1d(np.asarray(x, dtype=float))
    starts = _backward_first_step(phi, L, x0, tau, constants)
    paths = []
    for z1, p_init in starts:
        zs = [x0, z1]
        for _ in range(K - 1):
            _, y, _ = lax_oleinik_point(phi, L, tau, np.atleast_2d(zs[-1]), -1, constants)
            zs.append(y[0])
        lifts = [zs[0]]
        for k in range(1, len(zs)):
            lifts.append(lifts[-1] + wrap_diff(zs[k] - zs[k - 1], phi.period))
        lifts = np.array(lifts)
        # arcs run from z_{k+1} to z_k in time tau; momenta at junctions
        res = minimize_paths(L, lifts[1:], lifts[:-1], tau)
        arrive = res["p1"]                  # at z_k
        depart = res["p0"]                  # at z_{k+1}
        moms = np.concatenate([arrive, depart[-1:]], axis=0)
        junction = np.abs(arrive[1:] - depart[:-1])
        dphi = phi.gradient_central(wrap(lifts[1:], phi.period))
        grad_mismatch = np.abs(depart - dphi)
        el_residual = float(max(np.max(junction) if junction.size else 0.0,
                                np.max(grad_mismatch)))
        times = np.arange(len(zs)) * tau
        path = _finish_path(times, lifts, moms, "backward_classical", phi.period,
                            {"el_residual": el_residual,
                             "initial_momentum": p_init})
        paths.append(path)
    return paths


def _backward_first_step(phi, L, x0, tau, constants):
    """Basin-aware first backward step: one refined minimizer per basin."""
    h = phi.spacing
    d = x0.size
    w = min(int(np.ceil(constants.lam * tau / h)) + 2, phi.n // 2 - 1)
    offs = np.arange(-w, w + 1) * h
    if d == 1:
        ys = (x0[0] + offs)[:, None]
    else:
        o2 = np.stack(np.meshgrid(offs, offs, indexing="ij"), axis=-1).reshape(-1, 2)
        ys = x0[None, :] + o2
    base = np.broadcast_to(x0, ys.shape).copy()
    res = minimize_paths(L, ys, ys + wrap_diff(base - ys, phi.period), tau)
    obj = phi.interp(ys if d > 1 else ys[:, 0]) + res["value"]
    if d == 1:
        locmin = np.flatnonzero((obj <= np.roll(obj, 1)) & (obj <= np.roll(obj, -1)))
        locmin = locmin[(locmin > 0) & (locmin < len(obj) - 1)]
    else:
        locmin = np.array([int(np.argmin(obj))])
    if locmin.size == 0:
        locmin = np.array([int(np.argmin(obj))])
    # refine each basin candidate by damped Newton with a value guard
    curv = max(constants.C2 / tau, 1e-6)
    branches = []
    for j in locmin:
        y = ys[j].copy()
        val = obj[j]
        for _ in range(8):
            r = minimize_paths(L, y[None, :], (y + wrap_diff(x0 - y, phi.period))[None, :], tau)
            grad = phi.gradient_central(wrap(y, phi.period))[0] - r["p0"][0]
            step = np.clip(-grad / curv, -0.45 * h, 0.45 * h)
            y_try = y + step
            r_try = minimize_paths(L, y_try[None, :],
                                   (y_try + wrap_diff(x0 - y_try, phi.period))[None, :], tau)
            val_try = float(phi.interp(y_try if d > 1 else y_try[0]) + r_try["value"][0])
            if val_try < val:
                y, val = y_try, val_try
            else:
                break
        arc = minimize_paths(L, y[None, :], (y + wrap_diff(x0 - y, phi.period))[None, :], tau)
        branches.append((y, arc["p1"][0], val))
    # dedupe within 3h and keep ascending arrival-momentum order
    kept = []
    for y, p1, val in sorted(branches, key=lambda b: b[2]):
        if all(np.max(np.abs(wrap_diff(y - yk, phi.period))) > 3 * h for yk, _, _ in kept):
            kept.append((y, p1, val))
    vmin = kept[0][2]
    kept = [(y, p1) for y, p1, val in kept if val <= vmin + max(1e-6, 10 * h**2 / tau)]
    return kept


# ---------------------------------------------------------------------------
# Partition vector fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PartitionScheme:
    """Partition points {tau_i} of [0, T] with lookup of the next point."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or len(pts) < 1 or np.any(np.diff(pts) <= 0):
            raise ValueError("partition points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, tau: float, T: float) -> "PartitionScheme":
        k = int(np.ceil(T / tau - 1e-12))
        return cls(np.arange(1, k + 1) * tau)

    @property
    def width(self) -> float:
        pts = np.concatenate([[0.0], self.points])
        return float(np.max(np.diff(pts)))

    def next_after(self, t: float) -> float:
        """tau_Delta(t) = inf { tau_i : tau_i > t }."""
        idx = np.searchsorted(self.points, t, side="right")
        if idx >= len(self.points):
            raise ValueError(f"t={t} beyond the partition horizon")
        return float(self.points[idx])

    def last_at_or_before(self, t: float) -> float:
        pts = np.concatenate([[0.0], self.points])
        return float(pts[np.searchsorted(pts, t, side="right") - 1])


def w_delta_field(phi: GridField, H: HamiltonianSpec, partition: PartitionScheme,
                  t: float, x, constants: ShortTimeConstants) -> np.ndarray:
    """W_Delta(t, x) = H_p(x, D T^+_{tau_Delta(t) - t} phi(x)).

    The gradient is taken by central differences of the regularized field,
    which is C^{1,1} because the remaining step stays below the bound.
    """
    s = partition.next_after(t) - t
    if s <= 0:
        raise ValueError("partition lookup produced a non-positive step")
    if s > constants.tau_phi_step:
        raise StepTooLarge("partition width exceeds the admissible step")
    L = lagrangian_from(H)
    key = (phi.content_key(), round(s, 12), "T+field")
    fld = _FIELD_CACHE.get(key)
    if fld is None:
        fld = t_plus(phi, L, s, constants)
        _FIELD_CACHE[key] = fld
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g = fld.gradient_central(x[None, :])[0]
    return H.gradient_p(x, g)


# ---------------------------------------------------------------------------
# Mollified generalized characteristics
# ---------------------------------------------------------------------------

def mollify(phi: GridField, eps: float) -> GridField:
    """Periodic smoothing by a wrapped Gaussian truncated at 4 eps.

    Averaging against a probability kernel preserves the semiconcavity
    upper bound.
    """
    n = phi.n
    h = phi.spacing
    ax = np.arange(n) * h
    r = np.abs(wrap_diff(ax, phi.period))
    k = np.where(r <= 4 * eps, np.exp(-0.5 * (r / eps) ** 2), 0.0)
    k /= k.sum()
    if phi.dim == 1:
        sm = np.real(np.fft.ifft(np.fft.fft(phi.values) * np.fft.fft(k)))
    else:
        K2 = np.outer(k, k)
        sm = np.real(np.fft.ifft2(np.fft.fft2(phi.values) * np.fft.fft2(K2)))
    return GridField(sm, phi.period, phi.meta)


def mollified_generalized_characteristic(phi: GridField, H: HamiltonianSpec, x,
                                         T: float, eps_schedule=(0.2, 0.1, 0.05),
                                         dt: float = 1e-3):
    """Classical flows of the mollified fields and their smallest-eps limit.

    Returns (paths, limit_path, report); the report carries pairwise sup
    distances as a Cauchy diagnostic.
    """
    eps_schedule = list(eps_schedule)
    if any(e2 >= e1 for e1, e2 in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError("eps schedule must be strictly decreasing")
    if eps_schedule[-1] < 2 * phi.spacing:
        raise ValueError("smallest eps must stay above 2h")
    paths = []
    for eps in eps_schedule:
        sm = mollify(phi, eps)
        times, lifts, moms = strict_characteristics_batch(sm, H, np.atleast_2d(x), T, dt)
        p = _finish_path(times, lifts[0], moms[0], "mollified", phi.period,
                         {"eps": eps})
        paths.append(p)
    dists = {}
    for i in range(len(paths)):
        for j in range(i + 1, len(paths)):
            dists[(eps_schedule[i], eps_schedule[j])] = paths[i].sup_distance(paths[j])
    return paths, paths[-1], {"pairwise_sup_distance": dists}


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def edi_residual(path: CharacteristicPath, phi: GridField, H: HamiltonianSpec,
                 windows=None) -> dict:
    """Energy-dissipation residual per window:
    | phi(gamma(t2)) - phi(gamma(t1)) - int (L + H(p#)) ds | by trapezoid."""
    L = lagrangian_from(H)
    pos = path.positions
    vals = phi.interp(pos if phi.dim > 1 else pos[:, 0])
    integrand = (L.evaluate(pos, path.velocities)
                 + H.evaluate(pos, path.momenta))
    times = path.times
    if windows is None:
        windows = [(times[0], times[-1])]
    out = []
    for (t1, t2) in windows:
        i1 = int(np.argmin(np.abs(times - t1)))
        i2 = int(np.argmin(np.abs(times - t2)))
        seg = integrand[i1:i2 + 1]
        dts = np.diff(times[i1:i2 + 1])
        integral = float(np.sum(0.5 * (seg[:-1] + seg[1:]) * dts))
        resid = abs(float(vals[i2] - vals[i1]) - integral)
        length = max(float(times[i2] - times[i1]), 1e-12)
        out.append({"window": (float(times[i1]), float(times[i2])),
                    "residual": resid, "per_unit_time": resid / length})
    return {"windows": out,
            "max_per_unit_time": max(w["per_unit_time"] for w in out)}


def gc_inclusion_residual(path: CharacteristicPath, phi: GridField,
                          H: HamiltonianSpec, boundary_samples: int = 16) -> np.ndarray:
    """Distance of the sampled velocity to co H_p(gamma, D^+ phi(gamma))."""
    pos = path.positions
    K = pos.shape[0]
    out = np.zeros(K)
    if phi.dim == 1:
        lo, hi = superdifferential_interval(phi, pos[:, 0])
        samples = np.linspace(0.0, 1.0, boundary_samples)
        ps = lo[:, None] + samples[None, :] * (hi - lo)[:, None]
        imgs = np.empty_like(ps)
        for j in range(boundary_samples):
            imgs[:, j] = H.gradient_p(pos, ps[:, j][:, None])[:, 0]
        lo_img = np.min(imgs, axis=1)
        hi_img = np.max(imgs, axis=1)
        v = path.velocities[:, 0]
        out = np.maximum(np.maximum(lo_img - v, v - hi_img), 0.0)
        return out
    from .semiconcave import _convex_hull, _polygon_distance
    for k in range(K):
        sd = superdifferential(phi, pos[k])
        pts = np.concatenate([sd.vertices, sd.boundary_samples(boundary_samples)], axis=0)
        imgs = np.array([H.gradient_p(pos[k], p) for p in pts])
        hull = _convex_hull(imgs)
        out[k] = _polygon_distance(hull, path.velocities[k])
    return out


def cut_time_points(phi: GridField, L: LagrangianSpec, xs, horizon: float,
                    defect_tol: float, constants=None) -> np.ndarray:
    """Vectorized ladder scan of the cut time at arbitrary points."""
    lad = default_t_ladder(horizon)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    q = xs if phi.dim > 1 else xs[:, 0]
    run = np.ones(xs.shape[0], dtype=bool)
    tau = np.zeros(xs.shape[0])
    for t in lad:
        fld = commutator_defect_field(phi, L, t, constants)
        run = run & (fld.interp(q) <= defect_tol)
        tau = np.where(run, t, tau)
    return np.where(run, horizon, tau)


def propagation_check(path: CharacteristicPath, phi: GridField, L: LagrangianSpec,
                      cut_tol: float = 0.05, horizon: float = 2.0,
                      defect_tol: float | None = None, constants=None,
                      sample_stride: int = 50) -> dict:
    """Once in the cut locus, always in the cut locus (up to tolerance).

    Vacuous when the initial point is not detected as cut.
    """
    from .laxoleinik import calibrate_defect_tol
    if defect_tol is None:
        defect_tol = calibrate_defect_tol(phi, L, horizon, constants)
    taus0 = cut_time_points(phi, L, path.positions[:1], horizon, defect_tol, constants)
    if taus0[0] > cut_tol:
        return {"applicable": False, "violations": [], "initial_cut_time": float(taus0[0]),
                "defect_tol": float(defect_tol)}
    idx = np.arange(0, len(path.times), sample_stride)
    taus = cut_time_points(phi, L, path.positions[idx], horizon, defect_tol, constants)
    bad = idx[taus > cut_tol]
    return {"applicable": True,
            "violations": [float(path.times[i]) for i in bad],
            "initial_cut_time": float(taus0[0]),
            "defect_tol": float(defect_tol),
            "checked": int(len(idx))}


def stability_experiment(phi: GridField, H: HamiltonianSpec, x, T: float = 2.0,
                         dt: float = 1e-3, mollify_eps=(0.1, 0.05, 0.025),
                         amplitude_jitter: float = 0.01) -> dict:
    """Perturb phi (mollification) and H (parameter jitter); report path
    distances against the unperturbed sharp characteristic."""
    from .hamiltonians import mechanical

    base = strict_singular_characteristic(phi, H, x, T, dt)
    moll = []
    for eps in mollify_eps:
        pert = strict_singular_characteristic(mollify(phi, eps), H, x, T, dt)
        moll.append({"eps": float(eps), "sup_distance": base.sup_distance(pert)})
    report = {"mollify": moll}
    if H.family == "mechanical":
        a = H.params["amplitudes"] * (1.0 + amplitude_jitter)
        H2 = mechanical(a, H.params["centers"])
        pert = strict_singular_characteristic(phi, H2, x, T, dt)
        report["h_jitter"] = {"relative": float(amplitude_jitter),
                              "sup_distance": base.sup_distance(pert)}
    return report
