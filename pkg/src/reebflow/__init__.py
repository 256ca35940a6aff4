"""Fast-advection averaging on Reeb graphs.

Simulation library for the slow dynamics of diffusions with a strong
incompressible drift: Reeb-graph construction for planar Hamiltonians, the
averaged diffusion on the graph, spatially homogeneous noise, SPDE solvers
on the plane and on the graph, and a CLI harness that runs the convergence
experiments.
"""

from .hamiltonian import (
    HamiltonianField,
    CriticalPoint,
    make_hamiltonian,
    builtin_names,
    from_callables,
    find_critical_points,
    verify_confinement,
)
from .grids import GridFunction2D, GraphFunction
from .reeb import (
    ReebGraph,
    GraphPoint,
    LevelCycle,
    build_graph,
    trace_cycle,
    period,
    edge_flux,
    level_average,
    project,
    project_function,
    lift,
    direct_return_time,
)

__all__ = [
    "from_callables",
    "HamiltonianField",
    "CriticalPoint",
    "make_hamiltonian",
    "builtin_names",
    "find_critical_points",
    "verify_confinement",
    "GridFunction2D",
    "GraphFunction",
    "ReebGraph",
    "GraphPoint",
    "LevelCycle",
    "build_graph",
    "trace_cycle",
    "period",
    "edge_flux",
    "level_average",
    "project",
    "project_function",
    "lift",
    "direct_return_time",
]

__version__ = "0.1.0"
