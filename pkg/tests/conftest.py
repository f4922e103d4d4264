import numpy as np
import pytest

import weakkam as wk


class PendulumLab:
    """Shared pendulum workspace: one n=512 weak KAM solve per session."""

    def __init__(self, n=512):
        self.n = n
        self.H = wk.make_hamiltonian("pendulum")
        self.L = wk.lagrangian_from(self.H)
        self.sol = wk.weak_kam_solve(self.H, n, t_step=0.2, tol=1e-7, max_iter=3000)
        self.phi = self.sol.phi
        self.c = self.sol.c_value
        self.constants = self.sol.constants
        self.h = self.phi.spacing

    def exact_phi(self, xs=None):
        xs = self.phi.axis_coords() if xs is None else np.asarray(xs)
        vals = -4.0 * np.sin(xs / 2.0)
        return vals - vals.min()


@pytest.fixture(scope="session")
def pend():
    return PendulumLab()


@pytest.fixture(scope="session")
def free1d():
    H = wk.make_hamiltonian("free")
    return {"H": H, "L": wk.lagrangian_from(H)}
