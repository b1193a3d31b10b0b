"""Transient gas-network simulation and adjoint-based optimal gas flow."""

from .adjoint import CostFunctional, Functional, adjoint_sweep, fd_verify, functional_gradient, gradient
from .errors import GasOptError
from .lumping import LumpingConfig, LumpingScheme, assemble_constraints, smooth_max, smooth_min
from .mesh import Mesh, MeshOptions, build_mesh
from .network import GasNetwork, evaluate_boundary, friction_from_roughness, load_network, parse_network
from .ogf import OGFProblem, OGFSolution, OptimizerOptions, external_solver_bridge, solve_ogf
from .simulator import SolverOptions, Trajectory, objective_cost, simulate, steady_state

__version__ = "0.1.0"

__all__ = [
    "CostFunctional", "Functional", "GasNetwork", "GasOptError", "LumpingConfig", "LumpingScheme",
    "Mesh", "MeshOptions", "OGFProblem", "OGFSolution", "OptimizerOptions", "SolverOptions",
    "Trajectory", "adjoint_sweep", "assemble_constraints", "build_mesh", "evaluate_boundary",
    "external_solver_bridge", "fd_verify", "friction_from_roughness", "functional_gradient",
    "gradient", "load_network", "objective_cost", "parse_network", "simulate", "smooth_max",
    "smooth_min", "solve_ogf", "steady_state",
]
