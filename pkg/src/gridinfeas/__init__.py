"""Certified three-phase infeasibility analysis for distribution feeders.

Given an unbalanced feeder model, this package finds the minimum-norm set
of fictitious current sources that restores feasibility of the network
equations under voltage and thermal limits, and certifies the result with
a near-zero optimality gap via convex relaxation, bound tightening, and
spatial branch-and-bound.
"""

from .bnb import (GlobalResult, InfeasibleModelError, SolveOptions,
                  compute_gap, solve_global)
from .cli import Report, RunConfig, emit_sparsity_comparison, main, run
from .convex import ConvexModel, ConvexSolution, solve_convex, write_mps
from .formulation import (BoxInfeasibleError, Bounds, ConstraintSystem,
                          VariableSpace, build, evaluate_residual,
                          flat_start, initial_bounds)
from .localnlp import LocalSolution, solve_local
from .network import (Diagnostic, FeederFormatError, Line, Network, Node,
                      parse_feeder, serialize_network, validate)
from .sbt import TighteningError, TighteningTrace, tighten, width_reduction

__all__ = [
    "Bounds", "BoxInfeasibleError", "ConstraintSystem", "ConvexModel",
    "ConvexSolution", "Diagnostic", "FeederFormatError", "GlobalResult",
    "InfeasibleModelError", "Line", "LocalSolution", "Network", "Node",
    "Report", "RunConfig", "SolveOptions", "TighteningError",
    "TighteningTrace", "VariableSpace", "build", "compute_gap",
    "emit_sparsity_comparison", "evaluate_residual", "flat_start",
    "initial_bounds", "main", "parse_feeder", "run", "serialize_network",
    "solve_convex", "solve_global", "solve_local", "tighten", "validate",
    "width_reduction", "write_mps",
]

__version__ = "0.1.0"
