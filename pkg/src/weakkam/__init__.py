"""weakkam: weak KAM solutions, singular characteristics and measure
transport for Tonelli Hamiltonians on the flat torus."""

from .torus import TorusPoint, torus_diff, torus_dist, wrap, wrap_diff
from .hamiltonians import (FAMILIES, HamiltonianSpec, LagrangianSpec, PhaseState,
                           euler_lagrange_flow, hamiltonian_flow, lagrangian_from,
                           legendre_to_lagrangian, make_hamiltonian, mechanical,
                           quadratic_hamiltonian, custom_hamiltonian)
from .action import (ActionPath, ActionResult, CostTable, ShortTimeConstants,
                     build_cost_table, fundamental_solution, load_cost_table,
                     save_cost_table, shooting_solution, short_time_constants)
from .grid import GridField, constant_field, field_from_function
from .laxoleinik import (CriticalSolveResult, CutTimeField, arnaud_graph_check,
                         calibrate_defect_tol, commutator_defect,
                         commutator_defect_field, cut_time, cut_time_field,
                         t_minus, t_plus, weak_kam_solve)
from .semiconcave import (SelectionResult, SingularMask, SuperDiff,
                          h_sharp_lsc_check, minimal_energy_selection,
                          singular_mask, superdifferential)

__version__ = "0.1.0"
