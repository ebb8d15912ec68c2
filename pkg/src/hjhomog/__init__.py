"""Numerical laboratory for Hamilton-Jacobi problems on periodically
perforated domains with Dirichlet data on the hole boundaries.

The package computes the small-scale value function by a semi-Lagrangian
scheme, travel-cost (metric) functions by dynamic programming on the
perforated cell, effective Lagrangian/Hamiltonian tables by large-cell
averaging, and the limiting obstacle-type solution by a stopped Hopf-Lax
formula.  Experiment drivers reproduce the first-order convergence rate
and its optimality at desk scale.
"""

from hjhomog.geometry import (
    Hole,
    UnitCellGeometry,
    DomainView,
    Classification,
    classify_point,
    boundary_distance,
    project_to_boundary,
    defect_density,
)
from hjhomog.dynamics import (
    LagrangianModel,
    BoundaryData,
    velocity_bound,
    numeric_conjugate,
)
from hjhomog.hj_solver import Grid, ValueField, solve_dirichlet, solve_state_constraint
from hjhomog.metric import MetricQuery, EffectiveTables, mtilde, mstar, mbar_star
from hjhomog.limit import LimitQuery, hopf_lax_u, ubar, obstacle_residual

__version__ = "0.1.0"

__all__ = [
    "Hole",
    "UnitCellGeometry",
    "DomainView",
    "Classification",
    "classify_point",
    "boundary_distance",
    "project_to_boundary",
    "defect_density",
    "LagrangianModel",
    "BoundaryData",
    "velocity_bound",
    "numeric_conjugate",
    "Grid",
    "ValueField",
    "solve_dirichlet",
    "solve_state_constraint",
    "MetricQuery",
    "EffectiveTables",
    "mtilde",
    "mstar",
    "mbar_star",
    "LimitQuery",
    "hopf_lax_u",
    "ubar",
    "obstacle_residual",
    "__version__",
]
