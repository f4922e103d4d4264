import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import weakkam as wk
from weakkam.errors import NonTonelli
from weakkam.hamiltonians import hamiltonian_flow_raw


def test_torus_point_wrapping_and_metric():
    p = wk.TorusPoint([2 * np.pi + 0.3])
    assert np.allclose(p.coords, [0.3])
    q = wk.TorusPoint([2 * np.pi - 0.3])
    assert np.isclose(p.distance(q), 0.6)
    assert np.isclose(p.distance(q), q.distance(p))


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2),
       st.lists(st.floats(-50, 50), min_size=2, max_size=2))
@settings(max_examples=50, deadline=None)
def test_torus_metric_bound_2d(a, b):
    p, q = wk.TorusPoint(a), wk.TorusPoint(b)
    d = p.distance(q)
    assert d >= 0
    assert d <= np.pi * np.sqrt(2) + 1e-12
    assert np.isclose(d, q.distance(p))


def test_legendre_selfdual_quadratic():
    H = wk.make_hamiltonian("free")
    p, L = wk.legendre_to_lagrangian(H, [0.7], [1.0])
    assert np.allclose(p, [1.0])
    assert np.isclose(L, 0.5)


def test_legendre_pendulum_closed_form():
    # L(x,v) = v^2/2 + cos x
    H = wk.make_hamiltonian("pendulum")
    p, L = wk.legendre_to_lagrangian(H, [0.0], [2.0])
    assert np.allclose(p, [2.0])
    assert np.isclose(L, 3.0)
    p, L = wk.legendre_to_lagrangian(H, [np.pi], [0.0])
    assert np.allclose(p, [0.0])
    assert np.isclose(L, -1.0)


def test_legendre_custom_newton_matches_closed_form():
    Hm = wk.make_hamiltonian("pendulum")
    H = wk.custom_hamiltonian(
        h=lambda x, p: 0.5 * np.sum(p * p, axis=-1) - np.sum(np.cos(x), axis=-1),
        h_p=lambda x, p: np.broadcast_to(p, np.broadcast_shapes(x.shape, p.shape)).copy(),
        h_x=lambda x, p: np.broadcast_to(np.sin(x), np.broadcast_shapes(x.shape, p.shape)).copy(),
        dim=1)
    for x, v in [(0.3, 1.2), (2.0, -0.7)]:
        p1, L1 = wk.legendre_to_lagrangian(H, [x], [v])
        p2, L2 = wk.legendre_to_lagrangian(Hm, [x], [v])
        assert np.allclose(p1, p2, atol=1e-9)
        assert np.isclose(L1, L2, atol=1e-9)


@given(st.floats(0.1, 6.0), st.floats(-2.5, 2.5))
@settings(max_examples=30, deadline=None)
def test_legendre_involution(x, p):
    H = wk.make_hamiltonian("pendulum")
    v = H.gradient_p(np.array([x]), np.array([p]))
    p_back, _ = wk.legendre_to_lagrangian(H, [x], v)
    assert np.allclose(p_back, [p], atol=1e-8)


def test_fenchel_identity_on_probe_lattice():
    H = wk.make_hamiltonian("pendulum")
    xs = np.linspace(0, 2 * np.pi, 17)[:, None]
    ps = np.linspace(-2, 2, 9)
    for pval in ps:
        p = np.full_like(xs, pval)
        v = H.gradient_p(xs, p)
        p2, L = wk.legendre_to_lagrangian(H, xs, v)
        resid = np.abs(np.sum(p2 * v, axis=-1) - H.evaluate(xs, p2) - L)
        assert np.max(resid) <= 1e-8


def test_non_tonelli_rejected():
    with pytest.raises(NonTonelli):
        wk.custom_hamiltonian(
            h=lambda x, p: -0.5 * np.sum(p * p, axis=-1),
            h_p=lambda x, p: -np.broadcast_to(p, np.broadcast_shapes(x.shape, p.shape)).copy(),
            h_x=lambda x, p: np.zeros(np.broadcast_shapes(x.shape, p.shape)),
            dim=1)


def test_free_flow_is_translation():
    H = wk.make_hamiltonian("free")
    s = wk.PhaseState(wk.TorusPoint([0.0]), np.array([1.0]))
    out = wk.hamiltonian_flow(H, s, 1.0, 1e-3)
    assert np.allclose(out.position.coords, [1.0], atol=1e-12)
    assert np.allclose(out.vector, [1.0])


def test_pendulum_fixed_point_at_pi():
    H = wk.make_hamiltonian("pendulum")
    s = wk.PhaseState(wk.TorusPoint([np.pi]), np.array([0.0]))
    out = wk.hamiltonian_flow(H, s, 5.0, 1e-3)
    assert np.allclose(out.position.coords, [np.pi], atol=1e-10)
    assert np.allclose(out.vector, [0.0], atol=1e-10)


def test_separatrix_energy_conservation():
    H = wk.make_hamiltonian("pendulum")
    s = wk.PhaseState(wk.TorusPoint([0.0]), np.array([2.0]))
    out = wk.hamiltonian_flow(H, s, 1.0, 1e-3)
    E = float(H.evaluate(out.position.coords, out.vector))
    assert abs(E - 1.0) <= 1e-8


def test_flow_group_property():
    H = wk.make_hamiltonian("pendulum")
    x0, p0 = np.array([0.7]), np.array([1.3])
    xa, pa = hamiltonian_flow_raw(H, x0, p0, 0.8, 1e-3)
    xb, pb = hamiltonian_flow_raw(H, xa, pa, 0.5, 1e-3)
    xc, pc = hamiltonian_flow_raw(H, x0, p0, 1.3, 1e-3)
    assert np.allclose(xb, xc, atol=1e-9)
    assert np.allclose(pb, pc, atol=1e-9)


def test_backward_flow_inverts_forward():
    H = wk.make_hamiltonian("pendulum")
    x0, p0 = np.array([1.1]), np.array([0.4])
    x1, p1 = hamiltonian_flow_raw(H, x0, p0, 0.6, 1e-3)
    x2, p2 = hamiltonian_flow_raw(H, x1, p1, -0.6, 1e-3)
    assert np.allclose(x2, x0, atol=1e-10)
    assert np.allclose(p2, p0, atol=1e-10)


def test_euler_lagrange_flow_equilibrium_and_free():
    H = wk.make_hamiltonian("pendulum")
    L = wk.lagrangian_from(H)
    s = wk.PhaseState(wk.TorusPoint([np.pi]), np.array([0.0]), "tangent")
    out = wk.euler_lagrange_flow(L, s, 3.0, 1e-3)
    assert np.allclose(out.position.coords, [np.pi], atol=1e-9)

    Hf = wk.make_hamiltonian("free")
    Lf = wk.lagrangian_from(Hf)
    s = wk.PhaseState(wk.TorusPoint([0.0]), np.array([1.0]), "tangent")
    out = wk.euler_lagrange_flow(Lf, s, 2.0, 1e-3)
    assert np.allclose(out.position.coords, [2.0], atol=1e-10)
    assert np.allclose(out.vector, [1.0])


def test_euler_lagrange_agrees_with_hamiltonian_flow():
    H = wk.make_hamiltonian("pendulum")
    L = wk.lagrangian_from(H)
    s_t = wk.PhaseState(wk.TorusPoint([0.0]), np.array([2.0]), "tangent")
    out_l = wk.euler_lagrange_flow(L, s_t, 0.5, 1e-4)
    s_h = wk.PhaseState(wk.TorusPoint([0.0]), np.array([2.0]), "cotangent")
    out_h = wk.hamiltonian_flow(H, s_h, 0.5, 1e-4)
    v_h = H.gradient_p(out_h.position.coords, out_h.vector)
    assert np.allclose(out_l.position.coords, out_h.position.coords, atol=1e-6)
    assert np.allclose(out_l.vector, v_h, atol=1e-6)


def test_phase_state_conversion_round_trip():
    H = wk.make_hamiltonian("pendulum")
    from weakkam.hamiltonians import momentum_to_velocity, velocity_to_momentum
    x = np.array([0.9])
    p = np.array([1.7])
    v = momentum_to_velocity(H, x, p)
    p2 = velocity_to_momentum(H, x, v)
    assert np.max(np.abs(p2 - p)) <= 1e-8


def test_family_registry():
    assert set(wk.FAMILIES) >= {"free", "pendulum", "mechanical2d", "quadratic"}
    H = wk.make_hamiltonian("mechanical2d")
    assert H.dim == 2
    with pytest.raises(ValueError):
        wk.make_hamiltonian("nope")
