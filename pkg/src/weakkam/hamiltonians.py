"""Tonelli Hamiltonian/Lagrangian pairs on the flat torus.

Built-in families carry closed-form Fenchel transforms:

* ``mechanical``: H(x,p) = |p|^2/2 + V(x) with a trigonometric potential
  V(x) = -sum_i a_i cos(x_i - c_i), so L(x,v) = |v|^2/2 - V(x).
* ``quadratic``: H(x,p) = p^T A p / 2 with constant SPD A, L(x,v) = v^T A^{-1} v / 2.
* ``custom``: user callables; the Legendre transform falls back to a damped
  Newton inversion of p -> H_p(x,p).

All evaluation callables are vectorized: positions/momenta have shape
(..., d) and values have shape (...).  Custom Hamiltonians must be C^2;
merely C^{1,1} callables are outside the supported class and may stall the
Newton-based transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NonConvergence, NonTonelli
from .torus import TWO_PI, TorusPoint, as_coords, wrap

_EYE = {1: np.eye(1), 2: np.eye(2)}


@dataclass(frozen=True)
class PhaseState:
    """Point of T*M (kind='cotangent') or TM (kind='tangent')."""

    position: TorusPoint
    vector: np.ndarray
    kind: str = "cotangent"

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.vector, dtype=float)).copy()
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)
        if self.kind not in ("cotangent", "tangent"):
            raise ValueError("kind must be 'cotangent' or 'tangent'")


class HamiltonianSpec:
    """Tonelli Hamiltonian with derivative callables and a family tag.

    Parameters are the vectorized callables ``h``, ``h_p``, ``h_x`` and
    optionally ``h_pp`` (finite differences otherwise).  Use the module
    factories (:func:`mechanical`, :func:`quadratic_hamiltonian`,
    :func:`custom_hamiltonian`, :func:`make_hamiltonian`) rather than the
    constructor.
    """

    def __init__(self, name, family, dim, h, h_p, h_x, h_pp=None, params=None,
                 period=TWO_PI, validate=True):
        self.name = name
        self.family = family
        self.dim = int(dim)
        self.period = float(period)
        self.params = dict(params or {})
        self._h, self._h_p, self._h_x, self._h_pp = h, h_p, h_x, h_pp
        if validate:
            self._probe_tonelli()

    # -- evaluation -------------------------------------------------------
    def evaluate(self, x, p):
        return self._h(np.asarray(x, float), np.asarray(p, float))

    def gradient_p(self, x, p):
        return self._h_p(np.asarray(x, float), np.asarray(p, float))

    def gradient_x(self, x, p):
        return self._h_x(np.asarray(x, float), np.asarray(p, float))

    def hessian_p(self, x, p, h=1e-5):
        if self._h_pp is not None:
            return self._h_pp(np.asarray(x, float), np.asarray(p, float))
        x = np.asarray(x, float)
        p = np.asarray(p, float)
        d = self.dim
        out = np.empty(p.shape[:-1] + (d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            out[..., j] = (self.gradient_p(x, p + e) - self.gradient_p(x, p - e)) / (2 * h)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    # -- construction-time probes ----------------------------------------
    def _probe_tonelli(self, lattice=5, radii=(0.0, 1.0, 3.0)):
        pts = np.linspace(0.0, self.period, lattice, endpoint=False)
        xs = np.stack(np.meshgrid(*([pts] * self.dim), indexing="ij"), axis=-1).reshape(-1, self.dim)
        dirs = _unit_directions(self.dim)
        for r in radii:
            for e in dirs:
                p = np.broadcast_to(r * e, xs.shape)
                hpp = self.hessian_p(xs, p)
                eigs = np.linalg.eigvalsh(hpp)
                if np.min(eigs) <= 0:
                    raise NonTonelli(
                        f"H_pp not positive definite at probe (min eig {np.min(eigs):.3e})")
        # superlinearity probe: H(x, R e)/R must grow with R
        for e in dirs:
            ratios = []
            for big in (10.0, 100.0):
                p = np.broadcast_to(big * e, xs.shape)
                ratios.append(np.min(self.evaluate(xs, p)) / big)
            if not ratios[1] > ratios[0]:
                raise NonTonelli("superlinearity probe failed along a unit direction")

    # -- misc --------------------------------------------------------------
    def cache_key(self):
        items = tuple(sorted((k, _param_key(v)) for k, v in self.params.items()))
        if self.family == "custom":
            return ("custom", id(self._h), self.dim)
        return (self.family, self.name, self.dim, items)

    def __repr__(self):
        return f"HamiltonianSpec({self.name!r}, family={self.family!r}, dim={self.dim})"


def _param_key(v):
    a = np.asarray(v)
    return (a.shape, tuple(np.round(a.ravel(), 12)))


def _unit_directions(dim):
    if dim == 1:
        return [np.array([1.0]), np.array([-1.0])]
    angles = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    return [np.array([np.cos(a), np.sin(a)]) for a in angles]


class LagrangianSpec:
    """Fenchel dual of a Tonelli Hamiltonian with the derivatives used by
    the discrete action solver (L, L_v, L_x and second derivatives)."""

    def __init__(self, hamiltonian: HamiltonianSpec, l, l_v, l_x,
                 l_vv=None, l_xv=None, l_xx=None):
        self.hamiltonian = hamiltonian
        self.dim = hamiltonian.dim
        self.period = hamiltonian.period
        self._l, self._l_v, self._l_x = l, l_v, l_x
        self._l_vv, self._l_xv, self._l_xx = l_vv, l_xv, l_xx

    def evaluate(self, x, v):
        return self._l(np.asarray(x, float), np.asarray(v, float))

    def gradient_v(self, x, v):
        return self._l_v(np.asarray(x, float), np.asarray(v, float))

    def gradient_x(self, x, v):
        return self._l_x(np.asarray(x, float), np.asarray(v, float))

    def hessian_vv(self, x, v):
        if self._l_vv is not None:
            return self._l_vv(np.asarray(x, float), np.asarray(v, float))
        return _fd_jac(lambda u: self.gradient_v(x, u), np.asarray(v, float), self.dim)

    def hessian_xv(self, x, v):
        """d/dx of L_v; zero for mechanical/quadratic families."""
        if self._l_xv is not None:
            return self._l_xv(np.asarray(x, float), np.asarray(v, float))
        return _fd_jac(lambda u: self.gradient_v(u, v), np.asarray(x, float), self.dim)

    def hessian_xx(self, x, v):
        if self._l_xx is not None:
            return self._l_xx(np.asarray(x, float), np.asarray(v, float))
        return _fd_jac(lambda u: self.gradient_x(u, v), np.asarray(x, float), self.dim)

    def min_bound(self, samples: int = 256):
        """Lower bound of L over a probe lattice at v=0 (used for action bounds)."""
        pts = np.linspace(0, self.period, samples, endpoint=False)
        xs = np.stack(np.meshgrid(*([pts] * self.dim), indexing="ij"), axis=-1).reshape(-1, self.dim)
        return float(np.min(self.evaluate(xs, np.zeros_like(xs))))


def _fd_jac(g, u, d, h=1e-5):
    out = np.empty(u.shape[:-1] + (d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        out[..., j] = (g(u + e) - g(u - e)) / (2 * h)
    return out


# ---------------------------------------------------------------------------
# Built-in families
# ---------------------------------------------------------------------------

def mechanical(amplitudes, centers=None, name=None, period=TWO_PI) -> HamiltonianSpec:
    """H(x,p) = |p|^2/2 - sum_i a_i cos(x_i - c_i).

    ``amplitudes`` has one entry per torus dimension; the classical pendulum
    is ``mechanical([1.0])``.
    """
    a = np.atleast_1d(np.asarray(amplitudes, dtype=float))
    dim = a.size
    c = np.zeros(dim) if centers is None else np.atleast_1d(np.asarray(centers, dtype=float))
    if c.size != dim:
        raise ValueError("centers must match amplitudes in length")

    def V(x):
        return -np.sum(a * np.cos(x - c), axis=-1)

    def V_x(x):
        return a * np.sin(x - c)

    def V_xx(x):
        out = np.zeros(np.asarray(x).shape[:-1] + (dim, dim))
        diag = a * np.cos(x - c)
        for j in range(dim):
            out[..., j, j] = diag[..., j]
        return out

    h = lambda x, p: 0.5 * np.sum(p * p, axis=-1) + V(x)
    h_p = lambda x, p: np.broadcast_to(p, np.broadcast_shapes(x.shape, p.shape)).copy()
    h_x = lambda x, p: np.broadcast_to(V_x(x), np.broadcast_shapes(x.shape, p.shape)).copy()
    h_pp = lambda x, p: np.broadcast_to(_EYE[dim], np.broadcast_shapes(x.shape, p.shape) + (dim,)).copy()

    H = HamiltonianSpec(name or f"mechanical{dim}d", "mechanical", dim, h, h_p, h_x, h_pp,
                        params={"amplitudes": a, "centers": c}, period=period)
    H._potential = (V, V_x, V_xx)
    return H


def quadratic_hamiltonian(metric, name=None, period=TWO_PI) -> HamiltonianSpec:
    """H(x,p) = p^T A p / 2 for a constant SPD matrix A."""
    A = np.atleast_2d(np.asarray(metric, dtype=float))
    dim = A.shape[0]
    Ainv = np.linalg.inv(A)

    h = lambda x, p: 0.5 * np.einsum("...i,ij,...j->...", p, A, p)
    h_p = lambda x, p: np.einsum("ij,...j->...i", A, p)
    h_x = lambda x, p: np.zeros(np.broadcast_shapes(x.shape, p.shape))
    h_pp = lambda x, p: np.broadcast_to(A, np.broadcast_shapes(x.shape, p.shape) + (dim,)).copy()

    H = HamiltonianSpec(name or f"quadratic{dim}d", "quadratic", dim, h, h_p, h_x, h_pp,
                        params={"metric": A}, period=period)
    H._metric_inv = Ainv
    return H


def custom_hamiltonian(h, h_p, h_x, dim, h_pp=None, name="custom", period=TWO_PI) -> HamiltonianSpec:
    return HamiltonianSpec(name, "custom", dim, h, h_p, h_x, h_pp, period=period)


def lagrangian_from(H: HamiltonianSpec) -> LagrangianSpec:
    """Fenchel transform of H, closed-form for built-in families."""
    d = H.dim
    if H.family == "mechanical":
        V, V_x, V_xx = H._potential
        l = lambda x, v: 0.5 * np.sum(v * v, axis=-1) - V(x)
        l_v = lambda x, v: np.broadcast_to(v, np.broadcast_shapes(x.shape, v.shape)).copy()
        l_x = lambda x, v: np.broadcast_to(-V_x(x), np.broadcast_shapes(x.shape, v.shape)).copy()
        l_vv = lambda x, v: np.broadcast_to(_EYE[d], np.broadcast_shapes(x.shape, v.shape) + (d,)).copy()
        l_xv = lambda x, v: np.zeros(np.broadcast_shapes(x.shape, v.shape) + (d,))
        l_xx = lambda x, v: -V_xx(np.broadcast_to(x, np.broadcast_shapes(x.shape, v.shape)).copy())
        return LagrangianSpec(H, l, l_v, l_x, l_vv, l_xv, l_xx)
    if H.family == "quadratic":
        Ainv = H._metric_inv
        l = lambda x, v: 0.5 * np.einsum("...i,ij,...j->...", v, Ainv, v)
        l_v = lambda x, v: np.einsum("ij,...j->...i", Ainv, v)
        l_x = lambda x, v: np.zeros(np.broadcast_shapes(x.shape, v.shape))
        l_vv = lambda x, v: np.broadcast_to(Ainv, np.broadcast_shapes(x.shape, v.shape) + (d,)).copy()
        l_xv = lambda x, v: np.zeros(np.broadcast_shapes(x.shape, v.shape) + (d,))
        l_xx = l_xv
        return LagrangianSpec(H, l, l_v, l_x, l_vv, l_xv, l_xx)

    # custom family: invert p -> H_p pointwise
    def l(x, v):
        p, val = legendre_to_lagrangian(H, x, v)
        return val

    def l_v(x, v):
        p, _ = legendre_to_lagrangian(H, x, v)
        return p

    def l_x(x, v):
        p, _ = legendre_to_lagrangian(H, x, v)
        return -H.gradient_x(np.asarray(x, float), p)

    return LagrangianSpec(H, l, l_v, l_x)


# ---------------------------------------------------------------------------
# Legendre transform and classical flows
# ---------------------------------------------------------------------------

def legendre_to_lagrangian(H: HamiltonianSpec, x, v, tol=1e-10, max_iter=100):
    """Solve H_p(x,p) = v for p and return (p, L(x,v) = <p,v> - H(x,p)).

    Closed-form for built-in families; damped Newton with the identity
    momentum as initial guess otherwise.
    """
    x = as_coords_like(x, H.dim)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if H.family == "mechanical":
        p = np.broadcast_to(v, np.broadcast_shapes(x.shape, v.shape)).copy()
        return p, np.sum(p * v, axis=-1) - H.evaluate(x, p)
    if H.family == "quadratic":
        p = np.einsum("ij,...j->...i", H._metric_inv, v)
        return p, np.sum(p * v, axis=-1) - H.evaluate(x, p)

    p = np.array(np.broadcast_to(v, np.broadcast_shapes(x.shape, v.shape)), dtype=float)
    for _ in range(max_iter):
        r = H.gradient_p(x, p) - v
        res = np.max(np.sqrt(np.sum(r * r, axis=-1)))
        if res <= tol:
            break
        hpp = H.hessian_p(x, p)
        step = np.linalg.solve(hpp, r[..., None])[..., 0]
        # damped update: halve until the residual norm decreases
        alpha = np.ones(r.shape[:-1])
        for _ in range(30):
            p_new = p - alpha[..., None] * step
            r_new = H.gradient_p(x, p_new) - v
            worse = np.sum(r_new * r_new, axis=-1) > np.sum(r * r, axis=-1)
            if not np.any(worse):
                break
            alpha = np.where(worse, 0.5 * alpha, alpha)
        p = p - alpha[..., None] * step
    r = H.gradient_p(x, p) - v
    res = float(np.max(np.sqrt(np.sum(r * r, axis=-1))))
    if res > tol:
        raise NonConvergence(f"Legendre inversion stalled at residual {res:.2e} "
                             "(non-Tonelli input?)", best=p, residual=res)
    return p, np.sum(p * v, axis=-1) - H.evaluate(x, p)


def as_coords_like(x, dim):
    if isinstance(x, TorusPoint):
        return np.array(x.coords, dtype=float)
    return np.atleast_1d(np.asarray(x, dtype=float))


def velocity_to_momentum(H, x, v):
    p, _ = legendre_to_lagrangian(H, x, v)
    return p


def momentum_to_velocity(H, x, p):
    return H.gradient_p(as_coords_like(x, H.dim), np.asarray(p, float))


def hamiltonian_flow(H: HamiltonianSpec, s0: PhaseState, t: float, dt: float = 1e-3) -> PhaseState:
    """Flow of x' = H_p, p' = -H_x by classical RK4 with fixed step.

    ``t`` may be negative (the backward flow Phi_H^{-t}).
    """
    x, p = _flow_arrays(H, s0)
    x, p = hamiltonian_flow_raw(H, x, p, t, dt)
    return PhaseState(TorusPoint(wrap(x, H.period), H.period), p, "cotangent")


def hamiltonian_flow_raw(H, x, p, t, dt):
    """Array-valued RK4 flow; x, p shaped (..., d).  Positions are unwrapped."""
    x = np.array(x, dtype=float)
    p = np.array(p, dtype=float)
    if t == 0:
        return x, p
    n = max(1, int(np.ceil(abs(t) / dt)))
    h = t / n

    def rhs(x, p):
        return H.gradient_p(x, p), -H.gradient_x(x, p)

    for _ in range(n):
        k1x, k1p = rhs(x, p)
        k2x, k2p = rhs(x + 0.5 * h * k1x, p + 0.5 * h * k1p)
        k3x, k3p = rhs(x + 0.5 * h * k2x, p + 0.5 * h * k2p)
        k4x, k4p = rhs(x + h * k3x, p + h * k3p)
        x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        p = p + (h / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
    return x, p


def euler_lagrange_flow(L: LagrangianSpec, s0: PhaseState, t: float, dt: float = 1e-3) -> PhaseState:
    """Euler-Lagrange flow on TM, integrated through the Hamiltonian side."""
    H = L.hamiltonian
    x = np.array(as_coords_like(s0.position, L.dim))
    if s0.kind == "tangent":
        p = velocity_to_momentum(H, x, s0.vector)
    else:
        p = np.asarray(s0.vector, float)
    x, p = hamiltonian_flow_raw(H, x, p, t, dt)
    v = momentum_to_velocity(H, x, p)
    return PhaseState(TorusPoint(wrap(x, L.period), L.period), v, "tangent")


def _flow_arrays(H, s0: PhaseState):
    x = np.array(as_coords_like(s0.position, H.dim))
    if s0.kind == "cotangent":
        return x, np.array(s0.vector, dtype=float)
    return x, velocity_to_momentum(H, x, s0.vector)


# ---------------------------------------------------------------------------
# Family registry (CLI + experiment configs)
# ---------------------------------------------------------------------------

def make_hamiltonian(family: str, params: dict | None = None) -> HamiltonianSpec:
    """Build a Hamiltonian from a family name and a parameter map."""
    params = dict(params or {})
    if family in ("free", "free1d"):
        return mechanical([0.0], name="free1d")
    if family == "free2d":
        return mechanical([0.0, 0.0], name="free2d")
    if family == "pendulum":
        amp = float(params.get("amplitude", 1.0))
        center = float(params.get("center", 0.0))
        return mechanical([amp], [center], name="pendulum")
    if family == "mechanical":
        return mechanical(params["amplitudes"], params.get("centers"))
    if family == "mechanical2d":
        a = params.get("amplitudes", [1.0, 1.0])
        return mechanical(a, params.get("centers"), name="mechanical2d")
    if family == "quadratic":
        return quadratic_hamiltonian(params.get("metric", np.eye(int(params.get("dim", 1)))))
    raise ValueError(f"unknown Hamiltonian family '{family}'")


FAMILIES = {
    "free": "H = |p|^2/2 on T^1",
    "free2d": "H = |p|^2/2 on T^2",
    "pendulum": "H = p^2/2 - amplitude*cos(x - center) on T^1",
    "mechanical": "H = |p|^2/2 - sum a_i cos(x_i - c_i)",
    "mechanical2d": "H = |p|^2/2 - cos(x1) - cos(x2) on T^2",
    "quadratic": "H = p^T A p / 2 with constant SPD A",
}
