"""Weighted L2 spaces on the plane and on the graph.

The weight is a positive decreasing profile h of the level coordinate; on
the plane it acts through composition with the Hamiltonian (so the plane
weight is evaluated in closed form, never by lifting a discretization).
Plane norms use tensor midpoint quadrature on the cell-centered grid; graph
norms use the per-edge Clenshaw-Curtis rule on the tabulation nodes, with
the period as the natural measure density.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grids import GraphFunction, GridFunction2D
from .reeb import ReebGraph

Array = np.ndarray


@dataclass(frozen=True)
class Weight:
    """Decreasing level profile h(z) with its derivative (optional)."""

    h: Callable[[Array], Array]
    name: str = "weight"

    def on_plane(self, field, grid: GridFunction2D) -> Array:
        """Closed-form plane weight h(H(x)) at the grid cell centers."""
        return self.h(field.value(grid.points()))

    def on_edges(self, graph: ReebGraph) -> list[Array]:
        return [self.h(e.z_nodes) for e in graph.edges]


def exp_weight(rate: float = 1.0) -> Weight:
    return Weight(h=lambda z: np.exp(-rate * np.asarray(z)), name=f"exp({rate:g})")


def admissibility_integral(weight: Weight, graph: ReebGraph) -> float:
    """Total graph mass: sum over edges of the integral of h(z) T(z) dz."""
    total = 0.0
    for e in graph.edges:
        total += float(
            np.sum(e.quad_weights * weight.h(e.z_nodes) * e.period_values)
        )
    return total


def admissibility_tail_fraction(weight: Weight, graph: ReebGraph) -> float:
    """Estimate of the mass beyond the cap relative to the total.

    The unbounded edge is extrapolated with a frozen period and the exact
    weight profile; for the default exponential weight the tail integral is
    h(z_max) * T(z_max) / rate, which we bound with a direct quadrature over
    a long synthetic extension.
    """
    total = admissibility_integral(weight, graph)
    top = graph.edges[0]
    t_end = float(top.period_values[-1])
    z_ext = np.linspace(graph.z_max, graph.z_max + 60.0, 4001)
    tail = float(np.trapezoid(weight.h(z_ext) * t_end, z_ext))
    return tail / (total + tail)


def _plane_product(u: GridFunction2D, v: GridFunction2D, gamma: Array) -> float:
    u.check_same_grid(v)
    return float(u.cell_area * np.sum(u.values * v.values * gamma))


def inner_plane(u: GridFunction2D, v: GridFunction2D, weight: Weight, field) -> float:
    gamma = weight.on_plane(field, u)
    return _plane_product(u, v, gamma)


def norm_plane(u: GridFunction2D, weight: Weight, field) -> float:
    return float(np.sqrt(max(inner_plane(u, u, weight, field), 0.0)))


def inner_graph(f: GraphFunction, g: GraphFunction, weight: Weight,
                graph: ReebGraph) -> float:
    total = 0.0
    for e in graph.edges:
        fe = f.edge_values[e.k]
        ge = g.edge_values[e.k]
        total += float(
            np.sum(e.quad_weights * fe * ge * weight.h(e.z_nodes) * e.period_values)
        )
    return total


def norm_graph(f: GraphFunction, weight: Weight, graph: ReebGraph) -> float:
    return float(np.sqrt(max(inner_graph(f, f, weight, graph), 0.0)))


def duality_check(
    f: GraphFunction,
    u: GridFunction2D,
    weight: Weight,
    graph: ReebGraph,
) -> tuple[float, float]:
    """Both sides of the projection/lift duality pairing.

    Returns (graph pairing of f with the level averages of u, plane pairing
    of the lift of f with u); the two are equal up to quadrature error.
    """
    from .reeb import lift, project_function

    u_avg = project_function(graph, u)
    graph_side = inner_graph(f, u_avg, weight, graph)
    f_lift = lift(graph, f, u)
    plane_side = inner_plane(f_lift, u, weight, graph.field)
    return graph_side, plane_side
