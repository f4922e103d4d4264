import numpy as np
import pytest

import weakkam as wk
from weakkam.action import minimize_paths, shooting_solution, build_cost_table
from weakkam.errors import DegenerateTime, EmptyProbe
from weakkam.hamiltonians import hamiltonian_flow_raw

from oracles import free_action


def test_free_particle_closed_form(free1d):
    L = free1d["L"]
    r = wk.fundamental_solution(L, 1.0, [0.0], [1.0])
    assert np.isclose(r.value, 0.5, atol=1e-12)
    assert np.allclose(r.momentum_in, [1.0], atol=1e-12)
    assert np.allclose(r.momentum_out, [1.0], atol=1e-12)
    assert r.converged
    # straight path
    v = r.path.velocity()
    assert np.allclose(v, 1.0, atol=1e-10)


def test_free_particle_wrap_distance(free1d):
    # antipodal pair: d = pi, A = d^2/(2t) = pi^2 at t = 0.5
    r = wk.fundamental_solution(free1d["L"], 0.5, [0.0], [np.pi])
    assert np.isclose(r.value, np.pi**2, atol=1e-10)


@pytest.mark.parametrize("x,y,t", [(0.2, 1.0, 0.7), (5.9, 0.4, 0.3), (3.0, 3.1, 1.0)])
def test_free_particle_random_pairs(free1d, x, y, t):
    r = wk.fundamental_solution(free1d["L"], t, [x], [y])
    assert np.isclose(r.value, free_action(x, y, t), atol=1e-10)


def test_pendulum_action_matches_shooting(pend):
    r = wk.fundamental_solution(pend.L, 0.1, [0.3], [0.35], N=200)
    p0, p1 = shooting_solution(pend.H, 0.1, [0.3], [0.35])
    # action along the shot trajectory, trapezoid at fine resolution
    ts = np.linspace(0, 0.1, 2001)
    dt = ts[1] - ts[0]
    x, p = np.array([0.3]), p0
    lvals = []
    for _ in ts:
        v = pend.H.gradient_p(x, p)
        lvals.append(float(pend.L.evaluate(x, v)))
        x, p = hamiltonian_flow_raw(pend.H, x, p, dt, dt)
    S = np.trapezoid(lvals, dx=dt)
    assert abs(r.value - S) <= 1e-6
    assert np.allclose(r.momentum_in, p0, atol=1e-6)
    assert np.allclose(r.momentum_out, p1, atol=1e-6)


def test_degenerate_time_rejected(pend):
    with pytest.raises(DegenerateTime):
        wk.fundamental_solution(pend.L, 0.0, [0.0], [1.0])
    with pytest.raises(DegenerateTime):
        wk.fundamental_solution(pend.L, -0.5, [0.0], [1.0])


def test_el_residual_small_when_converged(pend):
    r = wk.fundamental_solution(pend.L, 0.3, [0.5], [1.2])
    assert r.converged
    assert r.el_residual <= 1e-7


def test_action_lower_bound(pend):
    # A_t >= -max|L^-| * t with the probe-lattice minimum of L
    lmin = pend.L.min_bound()
    for t in (0.1, 0.5):
        r = wk.fundamental_solution(pend.L, t, [1.0], [1.3])
        assert r.value >= lmin * t - 1e-9


def test_triangle_markov_property(pend):
    rng = np.random.default_rng(3)
    for _ in range(5):
        x, z = rng.uniform(0, 2 * np.pi, 2)
        r = wk.fundamental_solution(pend.L, 0.4, [x], [z])
        mid = r.path.lift[r.path.segments // 2]
        r1 = wk.fundamental_solution(pend.L, 0.2, [x], mid)
        r2 = wk.fundamental_solution(pend.L, 0.2, mid, [z])
        # subadditivity for arbitrary y
        y = rng.uniform(0, 2 * np.pi)
        s1 = wk.fundamental_solution(pend.L, 0.2, [x], [y])
        s2 = wk.fundamental_solution(pend.L, 0.2, [y], [z])
        assert r.value <= s1.value + s2.value + 1e-9
        # equality when y sits on the minimizer
        assert abs(r.value - (r1.value + r2.value)) <= 1e-5


def test_endpoint_gradient_matches_finite_differences(pend):
    t, x, y = 0.25, 0.8, 1.7
    h = 1e-3
    r = wk.fundamental_solution(pend.L, t, [x], [y])
    vp = wk.fundamental_solution(pend.L, t, [x], [y + h]).value
    vm = wk.fundamental_solution(pend.L, t, [x], [y - h]).value
    fd = (vp - vm) / (2 * h)
    assert abs(fd - r.momentum_out[0]) <= 1e-4
    # and D_x A = -momentum_in
    vp = wk.fundamental_solution(pend.L, t, [x + h], [y]).value
    vm = wk.fundamental_solution(pend.L, t, [x - h], [y]).value
    fd = (vp - vm) / (2 * h)
    assert abs(fd + r.momentum_in[0]) <= 1e-4


def test_reversible_symmetry(pend):
    # L even in v => A_t(x,y) = A_t(y,x)
    a = wk.fundamental_solution(pend.L, 0.3, [0.4], [1.9]).value
    b = wk.fundamental_solution(pend.L, 0.3, [1.9], [0.4]).value
    assert abs(a - b) <= 1e-8


def test_minimize_paths_batched_matches_single(pend):
    xs = np.array([[0.1], [0.5], [4.0]])
    ys = np.array([[0.6], [0.2], [4.4]])
    batch = minimize_paths(pend.L, xs, ys, 0.2)
    for k in range(3):
        single = wk.fundamental_solution(pend.L, 0.2, xs[k], ys[k], all_lifts=False)
        assert np.isclose(batch["value"][k], single.value, atol=1e-10)


def test_2d_free_action():
    H = wk.make_hamiltonian("free2d")
    L = wk.lagrangian_from(H)
    r = wk.fundamental_solution(L, 0.5, [0.0, 0.0], [1.0, 0.5])
    assert np.isclose(r.value, (1.0**2 + 0.5**2) / (2 * 0.5), atol=1e-10)
    # wrap in the first coordinate
    r = wk.fundamental_solution(L, 0.5, [0.2, 1.0], [2 * np.pi - 0.2, 1.0])
    assert np.isclose(r.value, (0.4**2) / (2 * 0.5), atol=1e-10)


def test_2d_mechanical_action_matches_separable_sum():
    H2 = wk.make_hamiltonian("mechanical2d")
    L2 = wk.lagrangian_from(H2)
    H1 = wk.make_hamiltonian("pendulum")
    L1 = wk.lagrangian_from(H1)
    r2 = wk.fundamental_solution(L2, 0.3, [0.3, 1.0], [0.5, 1.4])
    ra = wk.fundamental_solution(L1, 0.3, [0.3], [0.5])
    rb = wk.fundamental_solution(L1, 0.3, [1.0], [1.4])
    assert abs(r2.value - (ra.value + rb.value)) <= 1e-7


def test_cost_table_roundtrip(tmp_path, pend):
    table = build_cost_table(pend.L, 64, 0.1, 8)
    path = str(tmp_path / "table.bin")
    wk.save_cost_table(path, table, {"hamiltonian": "pendulum"})
    loaded, header = wk.load_cost_table(path)
    assert header["hamiltonian"] == "pendulum"
    assert np.array_equal(loaded.values, table.values)
    assert loaded.t == table.t and loaded.radius_nodes == table.radius_nodes


def test_short_time_constants_zero_field(free1d):
    phi = wk.constant_field(0.0, 64)
    c = wk.short_time_constants(phi, free1d["L"])
    assert c.C1 == 0.0
    assert c.tau_phi_step == pytest.approx(0.4, abs=1e-12)  # bracket top
    assert c.C1 - c.C2 / c.tau_phi_step < 0


def test_short_time_constants_corner_scale(free1d):
    # corner of slope jump 4 at one node: C1 ~ 4/h, tau ~ h/4 scale
    n = 256
    h = 2 * np.pi / n
    xs = np.arange(n) * h
    phi = wk.GridField(2.0 * np.abs(np.mod(xs + np.pi, 2 * np.pi) - np.pi))
    c = wk.short_time_constants(phi, free1d["L"], bracket=(0.001, 0.4))
    assert c.C1 == pytest.approx(4.0 / h, rel=0.15)
    assert c.tau_phi_step == pytest.approx(0.9 * c.C2 * h / 4.0, rel=0.25)


def test_short_time_constants_coarse_grid_rejected(free1d):
    with pytest.raises(EmptyProbe):
        wk.short_time_constants(wk.constant_field(0.0, 4), free1d["L"])


def test_pendulum_constants_pipeline(pend):
    c = pend.constants
    assert c.C1 > 0
    assert c.tau_phi_step > 0
    assert c.C1 - c.C2 / c.tau_phi_step < 0
    assert 0.9 <= c.C2 <= 1.1  # kernel convexity ~ H_pp^{-1} = 1
