"""Rough paths, rough flows and flow-transformed viscosity solvers.

The package lifts drivers to geometric rough paths, solves rough differential
equations for flows of diffeomorphisms, and uses those flows to turn rough
transport and semilinear Hamilton-Jacobi equations into deterministic ones.
"""

__version__ = "0.1.0"

from .increments import GridPath, Increment2, Increment3, TimeGrid, delta1, delta2, delta3, sew_integral
from .rough_path import RoughPath, check_chen, check_geometric, lift_piecewise_linear, synth_driver
from .controlled import StrongControlled, WeakControlled, compose_strong, rough_integral, taylor_expand
from .spatial import DomainError, SpaceGrid
from .flow import Flow, solve_flow, solve_points
from .transport import TransportProblem, solve_transport
from .semilinear import SemilinearProblem, solve_semilinear
from .viscosity import default_test_family, viscosity_verify

__all__ = [
    "__version__",
    "GridPath", "Increment2", "Increment3", "TimeGrid", "delta1", "delta2", "delta3", "sew_integral",
    "RoughPath", "check_chen", "check_geometric", "lift_piecewise_linear", "synth_driver",
    "StrongControlled", "WeakControlled", "compose_strong", "rough_integral", "taylor_expand",
    "DomainError", "SpaceGrid",
    "Flow", "solve_flow", "solve_points",
    "TransportProblem", "solve_transport",
    "SemilinearProblem", "solve_semilinear",
    "default_test_family", "viscosity_verify",
]
