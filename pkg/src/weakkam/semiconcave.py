"""Superdifferentials, singular sets and the minimal-energy selection.

For a semiconcave grid field the superdifferential at a point is
reconstructed from one-sided difference quotients of the interpolant at
offsets {h, 2h, 4h}, Richardson-extrapolated.  Quotients whose sampling
range crosses a detected corner are replaced by the clean side, so the
reconstructed set collapses to the one-sided slope immediately next to a
corner and to the full interval [right slope, left slope] exactly at it.
In 2D, limiting gradients are estimated by least-squares fits on 16
angular sectors and the superdifferential is the convex hull of the merged
cluster representatives.

The minimal-energy selection p#(x) minimizes p -> H(x,p) over this convex
set; it drives every singular-characteristic construction downstream.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRadius, EmptySuperdifferential, SelectionFailure
from .grid import GridField
from .hamiltonians import HamiltonianSpec
from .torus import wrap_diff

_NODE_SNAP = 1e-7


# ---------------------------------------------------------------------------
# Convex sets of momenta
# ---------------------------------------------------------------------------

@dataclass
class SuperDiff:
    """Convex representation of D^+ phi(x).

    1D: interval [p_lo, p_hi] with p_lo the right one-sided slope and p_hi
    the left one-sided slope (ordered for semiconcave fields).  2D: convex
    polytope given by CCW vertices.  ``extremal_gradients`` approximates
    the reachable set D* phi(x).
    """

    dim: int
    p_lo: float | None = None
    p_hi: float | None = None
    vertices: np.ndarray | None = None
    extremal_gradients: np.ndarray | None = None
    slope_tol: float = 1e-8

    @property
    def diameter(self) -> float:
        if self.dim == 1:
            return abs(self.p_hi - self.p_lo)
        if len(self.vertices) == 1:
            return 0.0
        d = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.max(np.sqrt(np.sum(d * d, axis=-1))))

    @property
    def is_singleton(self) -> bool:
        return self.diameter <= 2 * self.slope_tol

    def interval(self) -> tuple[float, float]:
        if self.dim != 1:
            raise ValueError("interval() is 1D only")
        return (min(self.p_lo, self.p_hi), max(self.p_lo, self.p_hi))

    def membership_distance(self, p) -> float:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if self.dim == 1:
            lo, hi = self.interval()
            return float(max(lo - p[0], p[0] - hi, 0.0))
        return _polygon_distance(self.vertices, p)

    def boundary_samples(self, count: int = 16) -> np.ndarray:
        """Points on the boundary (1D: interval samples) for hull images."""
        if self.dim == 1:
            lo, hi = self.interval()
            return np.linspace(lo, hi, count)[:, None]
        V = self.vertices
        if len(V) == 1:
            return V.copy()
        segs = np.concatenate([V, V[:1]], axis=0)
        pts = []
        per_edge = max(1, count // len(V))
        for a, b in zip(segs[:-1], segs[1:]):
            s = np.linspace(0, 1, per_edge, endpoint=False)[:, None]
            pts.append(a + s * (b - a))
        return np.concatenate(pts, axis=0)


def _cross2(u, v):
    return u[0] * v[1] - u[1] * v[0]


def _convex_hull(points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Andrew monotone chain; degenerates to the input for <= 2 points."""
    pts = np.unique(np.round(points, 12), axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and _cross2(out[-1] - out[-2], p - out[-2]) <= tol:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    return hull if len(hull) >= 1 else pts[:1]


def _polygon_distance(V: np.ndarray, p: np.ndarray) -> float:
    if len(V) == 1:
        return float(np.linalg.norm(p - V[0]))
    if len(V) == 2:
        return float(_segment_distance(V[0], V[1], p))
    inside = True
    n = len(V)
    for i in range(n):
        a, b = V[i], V[(i + 1) % n]
        if _cross2(b - a, p - a) < -1e-12:
            inside = False
            break
    if inside:
        return 0.0
    return float(min(_segment_distance(V[i], V[(i + 1) % n], p) for i in range(n)))


def _segment_distance(a, b, p):
    ab = b - a
    denom = float(np.dot(ab, ab))
    s = 0.0 if denom == 0 else float(np.clip(np.dot(p - a, ab) / denom, 0.0, 1.0))
    return np.linalg.norm(p - (a + s * ab))


def _project_polygon(V: np.ndarray, p: np.ndarray) -> np.ndarray:
    if len(V) == 1:
        return V[0]
    if len(V) == 2:
        return _segment_project(V[0], V[1], p)
    inside = all(_cross2(V[(i + 1) % len(V)] - V[i], p - V[i]) >= -1e-12
                 for i in range(len(V)))
    if inside:
        return p
    best, bd = None, np.inf
    for i in range(len(V)):
        q = _segment_project(V[i], V[(i + 1) % len(V)], p)
        d = np.linalg.norm(p - q)
        if d < bd:
            best, bd = q, d
    return best


def _segment_project(a, b, p):
    ab = b - a
    denom = float(np.dot(ab, ab))
    s = 0.0 if denom == 0 else float(np.clip(np.dot(p - a, ab) / denom, 0.0, 1.0))
    return a + s * ab


# ---------------------------------------------------------------------------
# Node-level slope tables (1D) and sector gradients (2D)
# ---------------------------------------------------------------------------

def _richardson(q1, q2, q4):
    # one-sided quotients at offsets h, 2h, 4h -> O(h^3) slope estimate
    return (8.0 * q1 - 6.0 * q2 + q4) / 3.0


class SlopeTables:
    """Per-field cache of node slopes, corners and sector geometry."""

    _cache: dict = {}

    def __init__(self, phi: GridField, jump_tol: float | None = None):
        self.phi = phi
        n, h = phi.n, phi.spacing
        v = phi.values
        # C1 for slope resolution: robust quantile of positive second
        # differences (isolated kinks must not inflate the tolerance)
        secs = []
        for ax in range(phi.dim):
            sec = (np.roll(v, -1, axis=ax) - 2 * v + np.roll(v, 1, axis=ax)) / h**2
            secs.append(np.maximum(sec, 0.0).ravel())
        self.c1 = float(np.quantile(np.concatenate(secs), 0.95))
        self.slope_tol = max(4 * h * self.c1, 1e-9)
        self.jump_tol = jump_tol if jump_tol is not None else max(3 * self.slope_tol, 10 * h)
        if phi.dim == 1:
            self.right = _richardson((np.roll(v, -1) - v) / h,
                                     (np.roll(v, -2) - v) / (2 * h),
                                     (np.roll(v, -4) - v) / (4 * h))
            self.left = _richardson((v - np.roll(v, 1)) / h,
                                    (v - np.roll(v, 2)) / (2 * h),
                                    (v - np.roll(v, 4)) / (4 * h))
            raw = self.left - self.right          # > 0 at semiconcave corners
            # a corner contaminates quotients within 4 nodes; keep local maxima
            # and drop sidelobes of convex kinks (those sit next to a negative
            # jump stronger than themselves)
            window = np.stack([np.roll(raw, s) for s in range(-4, 5)], axis=0)
            corners = ((raw > self.jump_tol)
                       & (raw >= np.max(window, axis=0) - 1e-12)
                       & (np.min(window, axis=0) >= -raw))
            self.corner_coords = np.flatnonzero(corners) * h
            self.singular = corners
            # diagnostic jump: raw values with corner-contaminated zones zeroed
            self.jump = raw.copy()
            for i in np.flatnonzero(corners):
                for s in range(1, 5):
                    self.jump[(i + s) % n] = 0.0
                    self.jump[(i - s) % n] = 0.0
            self.jump[corners] = raw[corners]
        else:
            self._init_sectors()
            g = self.sector_gradients(phi.node_coords())
            d = g[:, :, None, :] - g[:, None, :, :]
            self.jump = np.sqrt(np.sum(d * d, axis=-1)).max(axis=(1, 2)).reshape(v.shape)
            self.singular = self.jump > self.jump_tol

    @classmethod
    def for_field(cls, phi: GridField, jump_tol: float | None = None) -> "SlopeTables":
        key = (phi.content_key(), jump_tol)
        tab = cls._cache.get(key)
        if tab is None:
            tab = cls(phi, jump_tol)
            cls._cache[key] = tab
        return tab

    # -- 2D sector machinery ------------------------------------------------
    def _init_sectors(self, n_sectors: int = 16):
        h = self.phi.spacing
        radii = np.array([1.0, 2.0, 3.0, 4.0]) * h
        self.sector_offsets = []
        self.sector_pinv = []
        for s in range(n_sectors):
            theta = 2 * np.pi * s / n_sectors
            angs = theta + np.array([-1.0, 0.0, 1.0]) * (np.pi / n_sectors)
            offs = np.array([[r * np.cos(a), r * np.sin(a)] for a in angs for r in radii])
            A = np.concatenate([np.ones((len(offs), 1)), offs], axis=1)
            self.sector_offsets.append(offs)
            self.sector_pinv.append(np.linalg.pinv(A)[1:])  # rows: d/dx, d/dy
        self.sector_offsets = np.array(self.sector_offsets)  # (S, K, 2)
        self.sector_pinv = np.array(self.sector_pinv)        # (S, 2, K)

    def sector_gradients(self, xs: np.ndarray) -> np.ndarray:
        """(B, S, 2) limiting-gradient estimates around each query point."""
        B = xs.shape[0]
        S, K, _ = self.sector_offsets.shape
        pts = xs[:, None, None, :] + self.sector_offsets[None, :, :, :]
        vals = self.phi.interp(pts.reshape(-1, 2)).reshape(B, S, K)
        return np.einsum("sdk,bsk->bsd", self.sector_pinv, vals)


# ---------------------------------------------------------------------------
# Superdifferential queries
# ---------------------------------------------------------------------------

def superdifferential(phi: GridField, x, probe_radius: float | None = None,
                      jump_tol: float | None = None) -> SuperDiff:
    """D^+ phi(x) estimated from the grid field.

    ``probe_radius`` defaults to 4h and must be at least 2h (the sampling
    range of the slope quotients).
    """
    h = phi.spacing
    if probe_radius is None:
        probe_radius = 4 * h
    if probe_radius < 2 * h:
        raise DegenerateRadius(f"probe radius {probe_radius:.3g} below 2h")
    tab = SlopeTables.for_field(phi, jump_tol)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if phi.dim == 1:
        lo, hi = superdifferential_interval(phi, x[:1].reshape(1), tab)
        lo, hi = float(lo[0]), float(hi[0])
        extremal = np.array([[lo], [hi]]) if abs(hi - lo) > tab.slope_tol else np.array([[0.5 * (lo + hi)]])
        return SuperDiff(1, p_lo=lo, p_hi=hi, extremal_gradients=extremal,
                         slope_tol=tab.slope_tol)
    g = tab.sector_gradients(x.reshape(1, 2))[0]
    reps = _merge_clusters(g, tab.slope_tol)
    hull = _convex_hull(reps)
    return SuperDiff(2, vertices=hull, extremal_gradients=reps, slope_tol=tab.slope_tol)


def superdifferential_interval(phi: GridField, xs: np.ndarray,
                               tab: SlopeTables | None = None):
    """Vectorized 1D interval estimates (p_lo, p_hi) at query points xs (B,)."""
    if tab is None:
        tab = SlopeTables.for_field(phi)
    h = phi.spacing
    xs = np.asarray(xs, dtype=float).reshape(-1)
    f = phi.interp(xs)
    q = {}
    for k in (1, 2, 4):
        q[("r", k)] = (phi.interp(xs + k * h) - f) / (k * h)
        q[("l", k)] = (f - phi.interp(xs - k * h)) / (k * h)
    right = _richardson(q[("r", 1)], q[("r", 2)], q[("r", 4)])
    left = _richardson(q[("l", 1)], q[("l", 2)], q[("l", 4)])
    p_lo, p_hi = right.copy(), left.copy()
    if tab.corner_coords.size:
        d = wrap_diff(xs[:, None] - tab.corner_coords[None, :], phi.period)
        snap = np.any(np.abs(d) <= _NODE_SNAP, axis=1)
        contaminated_left = np.any((d > _NODE_SNAP) & (d <= 4 * h), axis=1)
        contaminated_right = np.any((d < -_NODE_SNAP) & (d >= -4 * h), axis=1)
        # clean side wins strictly next to a corner; exactly at it, keep both
        only_left = contaminated_left & ~contaminated_right & ~snap
        only_right = contaminated_right & ~contaminated_left & ~snap
        p_hi = np.where(only_left, right, p_hi)
        p_lo = np.where(only_right, left, p_lo)
        both = contaminated_left & contaminated_right & ~snap
        if np.any(both | snap):
            nearest = np.argmin(np.abs(d), axis=1)
            node_idx = np.round(tab.corner_coords[nearest] / h).astype(int) % phi.n
            use = both | snap
            p_lo = np.where(use, tab.right[node_idx], p_lo)
            p_hi = np.where(use, tab.left[node_idx], p_hi)
    return p_lo, p_hi


def _merge_clusters(gradients: np.ndarray, tol: float) -> np.ndarray:
    reps: list[np.ndarray] = []
    counts: list[int] = []
    for g in gradients:
        for i, r in enumerate(reps):
            if np.linalg.norm(g - r) < max(tol, 1e-9):
                reps[i] = (r * counts[i] + g) / (counts[i] + 1)
                counts[i] += 1
                break
        else:
            reps.append(np.array(g))
            counts.append(1)
    return np.array(reps)


# ---------------------------------------------------------------------------
# Minimal-energy selection
# ---------------------------------------------------------------------------

@dataclass
class SelectionResult:
    """H-minimizing momentum over the superdifferential at x."""

    p_sharp: np.ndarray
    h_value: float
    active_face: object
    interior: bool


def minimal_energy_selection(H: HamiltonianSpec, sd: SuperDiff, x) -> SelectionResult:
    """argmin { H(x,p) : p in D^+ phi(x) }, unique by strict convexity."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if sd.dim == 1:
        if sd.p_lo is None or sd.p_hi is None:
            raise EmptySuperdifferential("empty 1D superdifferential")
        lo, hi = sd.interval()
        p_free = _fiber_minimum(H, x.reshape(1, -1))[0]
        p = float(np.clip(p_free[0], lo, hi))
        face = "interior" if lo + 1e-12 < p < hi - 1e-12 else ("lo" if p <= lo + 1e-12 else "hi")
        return SelectionResult(np.array([p]), float(H.evaluate(x, np.array([p]))),
                               face, face == "interior")
    V = sd.vertices
    if V is None or len(V) == 0:
        raise EmptySuperdifferential("empty 2D superdifferential")
    if len(V) == 1:
        p = V[0]
        return SelectionResult(p.copy(), float(H.evaluate(x, p)), ("vertex", 0), False)
    p = np.mean(V, axis=0)
    val = float(H.evaluate(x, p))
    step = 1.0
    for _ in range(200):  # projected gradient with backtracking
        g = H.gradient_p(x, p)
        trial = _project_polygon(V, p - step * g)
        tval = float(H.evaluate(x, trial))
        if tval < val - 1e-15:
            p, val = trial, tval
            step = min(step * 1.5, 10.0)
        else:
            step *= 0.5
            if step < 1e-12:
                break
    best_p, best_val, face = p, val, None
    for i, vtx in enumerate(V):  # vertex / edge-restricted refinements
        w = float(H.evaluate(x, vtx))
        if w < best_val - 1e-14:
            best_p, best_val, face = vtx.copy(), w, ("vertex", i)
    m = len(V)
    for i in range(m if m > 2 else 1):
        a, b = V[i], V[(i + 1) % m]
        pe, ve = _edge_minimum(H, x, a, b)
        if ve < best_val - 1e-14:
            best_p, best_val, face = pe, ve, ("edge", i)
    if face is None:
        inside = _polygon_distance(V, best_p) == 0.0 and all(
            np.linalg.norm(best_p - vtx) > 1e-10 for vtx in V)
        boundary = min(_segment_distance(V[i], V[(i + 1) % m], best_p) for i in range(m)) if m > 2 else 0.0
        interior = bool(m > 2 and boundary > 1e-10)
        face = "interior" if interior else ("edge", int(np.argmin(
            [_segment_distance(V[i], V[(i + 1) % m], best_p) for i in range(m)])))
        return SelectionResult(best_p.copy(), best_val, face, interior)
    return SelectionResult(best_p.copy(), best_val, face, False)


def _edge_minimum(H, x, a, b, iters=60):
    lo, hi = 0.0, 1.0
    for _ in range(iters):  # golden-section on the strictly convex edge restriction
        m1 = lo + 0.381966 * (hi - lo)
        m2 = hi - 0.381966 * (hi - lo)
        f1 = float(H.evaluate(x, a + m1 * (b - a)))
        f2 = float(H.evaluate(x, a + m2 * (b - a)))
        if f1 <= f2:
            hi = m2
        else:
            lo = m1
    s = 0.5 * (lo + hi)
    p = a + s * (b - a)
    return p, float(H.evaluate(x, p))


def _fiber_minimum(H: HamiltonianSpec, xs: np.ndarray, tol=1e-12, iters=50):
    """Unconstrained fiber minimizer p*(x) solving H_p(x,p) = 0, batched."""
    p = np.zeros_like(xs)
    for _ in range(iters):
        g = H.gradient_p(xs, p)
        if np.max(np.abs(g)) <= tol:
            break
        hpp = H.hessian_p(xs, p)
        p = p - np.linalg.solve(hpp, g[..., None])[..., 0]
    return p


def p_sharp_interval(H: HamiltonianSpec, xs: np.ndarray, p_lo: np.ndarray,
                     p_hi: np.ndarray) -> np.ndarray:
    """Vectorized 1D minimal-energy selection: clamp the fiber minimum."""
    lo = np.minimum(p_lo, p_hi)
    hi = np.maximum(p_lo, p_hi)
    p_free = _fiber_minimum(H, xs.reshape(-1, 1))[:, 0]
    return np.clip(p_free, lo, hi)


# ---------------------------------------------------------------------------
# Singular masks
# ---------------------------------------------------------------------------

@dataclass
class SingularMask:
    """Per-node singularity flags with gradient-jump magnitudes.

    1D jumps are signed (left slope minus right slope, positive at
    semiconcave corners); 2D jumps are sector-gradient diameters.  The
    closure mask dilates by one node and approximates the C^{1,1} singular
    support.
    """

    singular: np.ndarray
    jump: np.ndarray
    closure: np.ndarray
    jump_tol: float

    def write_csv(self, path: str, spacing: float):
        idx = np.stack(np.unravel_index(np.arange(self.singular.size), self.singular.shape), axis=-1)
        tmp = path + ".tmp"
        with open(tmp, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"x{j}" for j in range(idx.shape[1])] + ["jump", "singular", "closure"])
            for k in range(idx.shape[0]):
                coords = [f"{v * spacing:.17g}" for v in idx[k]]
                w.writerow(coords + [f"{self.jump.ravel()[k]:.17g}",
                                     int(self.singular.ravel()[k]),
                                     int(self.closure.ravel()[k])])
        os.replace(tmp, path)


def singular_mask(phi: GridField, jump_tol: float | None = None) -> SingularMask:
    tab = SlopeTables.for_field(phi, jump_tol)
    if jump_tol is not None and not jump_tol > 2 * tab.slope_tol:
        raise ValueError("jump_tol must exceed 2 * slope_tol")
    singular = tab.singular
    closure = singular.copy()
    for ax in range(phi.dim):
        closure = closure | np.roll(singular, 1, axis=ax) | np.roll(singular, -1, axis=ax)
    return SingularMask(singular=singular, jump=tab.jump, closure=closure,
                        jump_tol=tab.jump_tol)


# ---------------------------------------------------------------------------
# Lower semicontinuity diagnostic for x -> H(x, p#(x))
# ---------------------------------------------------------------------------

def h_sharp_lsc_check(H: HamiltonianSpec, phi: GridField, samples: int = 16,
                      tol: float = 0.1) -> dict:
    """Probe liminf H(x_k, p#(x_k)) >= H(x, p#(x)) - tol along grid lines."""
    h = phi.spacing
    n = phi.n
    idx = np.linspace(0, n**phi.dim, samples, endpoint=False).astype(int)
    centers = phi.node_coords()[idx]
    offsets = np.array([1, 2, 4]) * h
    violations = []
    details = []
    for x in centers:
        sd = superdifferential(phi, x)
        center_val = minimal_energy_selection(H, sd, x).h_value
        approach = []
        for ax in range(phi.dim):
            for sgn in (-1.0, 1.0):
                for off in offsets:
                    xk = x.copy()
                    xk[ax] += sgn * off
                    sdk = superdifferential(phi, xk)
                    approach.append(minimal_energy_selection(H, sdk, xk).h_value)
        liminf = float(np.min(approach))
        details.append({"x": [float(c) for c in x], "center": center_val, "liminf": liminf})
        if liminf < center_val - tol:
            violations.append(details[-1])
    return {"violations": violations, "checked": len(details), "details": details}
