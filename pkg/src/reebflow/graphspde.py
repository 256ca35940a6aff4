"""The averaged SPDE on the graph, driven by projected plane noise.

The deterministic part reuses the finite-volume Crank-Nicolson core of the
averaged semigroup; reaction and noise enter explicitly per step.  Noise
increments are level averages of the very same plane-field increments, so a
plane run and a graph run driven from one stream are coupled pathwise, as
the convergence statements require.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverDivergedError
from .graphdiff import EdgeCoefficients, GluingWeights, GraphHeatSolver
from .grids import GraphFunction, GridFunction2D
from .pde2d import PlaneSolver, SPDEConfig, _norm_guard
from .reeb import LevelProjector, ReebGraph

Array = np.ndarray


def _barycentric_matrix(nodes: Array, targets: Array) -> Array:
    """Interpolation matrix from Chebyshev-type nodes to arbitrary targets."""
    n = len(nodes)
    w = np.ones(n)
    for j in range(n):
        d = nodes[j] - np.delete(nodes, j)
        w[j] = 1.0 / np.prod(np.sign(d)) / np.exp(np.sum(np.log(np.abs(d))))
    t = np.clip(targets, nodes.min(), nodes.max())
    M = np.zeros((len(t), n))
    for i, tt in enumerate(t):
        diff = tt - nodes
        hit = np.argmin(np.abs(diff))
        if abs(diff[hit]) < 1e-14:
            M[i, hit] = 1.0
            continue
        terms = w / diff
        M[i] = terms / terms.sum()
    return M


class GraphSPDEStepper:
    """Per-step driver: Crank-Nicolson transport, explicit reaction, then
    the projected noise increment, all on the solver's internal nodes."""

    def __init__(self, coeffs: EdgeCoefficients, gluing: GluingWeights,
                 dt: float, n_z: int = 240, theta: float = 0.5):
        self.heat = GraphHeatSolver(coeffs, gluing, n_z=n_z, theta=theta)
        self.graph = coeffs.graph
        self.dt = dt
        # per-edge interpolation matrices: tabulation nodes -> solver nodes
        self._interp = [
            _barycentric_matrix(e.z_nodes, self.heat.edge_nodes[e.k])
            for e in self.graph.edges
        ]

    def noise_vector(self, gf: GraphFunction) -> Array:
        """Spread a projected increment onto the solver unknowns."""
        vec = np.zeros(self.heat.n_unknowns)
        for e in self.graph.edges:
            vals = self._interp[e.k] @ gf.edge_values[e.k]
            idx = self.heat.node_index[e.k]
            keep = idx >= 0
            vec[idx[keep]] = vals[keep]
        for vid, gi in self.heat.vertex_index.items():
            vec[gi] = gf.vertex_values[vid]
        return vec

    def step(self, vec: Array, cap_value: float, reaction=None,
             dispersion=None, noise_vec: Array | None = None) -> Array:
        v = self.heat.step(vec, cap_value, self.dt)
        if reaction is not None:
            v = v + self.dt * reaction(v)
        if noise_vec is not None:
            if dispersion is not None:
                v = v + dispersion(v) * noise_vec
            else:
                v = v + noise_vec
        if not np.all(np.isfinite(v)):
            raise SolverDivergedError("graph SPDE state became non-finite")
        return v


class SolverLifter:
    """Per-step lift of solver state onto a grid, linear in z per edge.

    Precomputes the edge-index map of the grid once; lifting a solver
    vector is then one np.interp per edge.
    """

    def __init__(self, graph: ReebGraph, grid: GridFunction2D,
                 heat: "GraphHeatSolver"):
        from .reeb import edge_index_map

        z, k = edge_index_map(graph, grid)
        self.shape = z.shape
        self.zflat = z.ravel()
        self.kflat = k.ravel()
        self.heat = heat
        self.masks = [np.flatnonzero(self.kflat == e.k) for e in graph.edges]

    def lift(self, vec: Array, cap_value: float) -> Array:
        out = np.empty(self.zflat.shape)
        for e in self.heat.graph.edges:
            rows = self.masks[e.k]
            if len(rows) == 0:
                continue
            idx = self.heat.node_index[e.k]
            node_vals = np.where(idx >= 0, vec[np.maximum(idx, 0)], cap_value)
            out[rows] = np.interp(self.zflat[rows], self.heat.edge_nodes[e.k],
                                  node_vals)
        return out.reshape(self.shape)


@dataclass
class GraphSPDEConfig:
    coeffs: EdgeCoefficients
    gluing: GluingWeights
    initial: GraphFunction
    dt: float
    horizon: float
    reaction: object = None
    dispersion: object = None
    sampler: object = None
    trajectory: int = 0
    projector: LevelProjector | None = None
    snapshot_times: tuple = ()
    n_z: int = 240


@dataclass
class GraphTrajectory:
    times: list
    snapshots: list  # GraphFunction per requested time

    def snapshot_at(self, t: float) -> GraphFunction:
        i = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.snapshots[i]


def evolve_graph_spde(config: GraphSPDEConfig) -> GraphTrajectory:
    """Trajectory of the averaged SPDE with its own projected noise."""
    stepper = GraphSPDEStepper(config.coeffs, config.gluing, config.dt,
                               n_z=config.n_z)
    stream = None
    projector = config.projector
    if config.sampler is not None:
        stream = config.sampler.open_stream(config.trajectory)
        if projector is None:
            projector = LevelProjector(config.coeffs.graph,
                                       config.sampler.grid)
    vec, cap = stepper.heat.to_vector(config.initial)
    n_steps = max(1, int(round(config.horizon / config.dt)))
    want = {}
    for t_req in config.snapshot_times:
        want.setdefault(min(n_steps, max(0, int(round(t_req / config.dt)))),
                        []).append(t_req)
    times, snaps = [], []
    for t_req in want.get(0, []):
        times.append(t_req)
        snaps.append(stepper.heat.to_graph_function(vec, cap))
    for i in range(1, n_steps + 1):
        noise_vec = None
        if stream is not None:
            inc = stream.increment(config.dt)
            noise_vec = stepper.noise_vector(projector.project_values(inc.values))
        vec = stepper.step(vec, cap, config.reaction, config.dispersion,
                           noise_vec)
        for t_req in want.get(i, []):
            times.append(t_req)
            snaps.append(stepper.heat.to_graph_function(vec, cap))
    if not times:
        times = [config.horizon]
        snaps = [stepper.heat.to_graph_function(vec, cap)]
    return GraphTrajectory(times=times, snapshots=snaps)


@dataclass
class CoupledTrajectory:
    times: list
    plane_snapshots: list  # GridFunction2D
    graph_snapshots: list  # GraphFunction
    clamped_fraction: float = 0.0


def evolve_coupled(
    graph: ReebGraph,
    plane_config: SPDEConfig,
    coeffs: EdgeCoefficients,
    gluing: GluingWeights,
    graph_initial: GraphFunction | None = None,
    n_z: int = 240,
    projector: LevelProjector | None = None,
    on_step=None,
) -> CoupledTrajectory:
    """Run the plane SPDE and the averaged SPDE in lockstep on one noise.

    Every step draws a single plane increment; the graph side receives its
    level averages.  ``on_step(step_index, time, plane_values, graph_vec,
    stepper)`` is invoked after each step for streaming metrics.
    """
    plane_config.validate()
    field = plane_config.field
    grid = plane_config.initial
    plane = PlaneSolver(field, grid, plane_config.eps, plane_config.dt,
                        plane_config.flow_substep, plane_config.interp_kind)
    stepper = GraphSPDEStepper(coeffs, gluing, plane_config.dt, n_z=n_z)
    if projector is None:
        projector = LevelProjector(graph, grid)
    if graph_initial is None:
        graph_initial = projector.project(grid)
    stream = None
    if plane_config.sampler is not None:
        stream = plane_config.sampler.open_stream(plane_config.trajectory)

    u = grid.values.copy()
    vec, cap = stepper.heat.to_vector(graph_initial)
    n_steps = max(1, int(round(plane_config.horizon / plane_config.dt)))
    want = {}
    for t_req in plane_config.snapshot_times:
        want.setdefault(min(n_steps, max(0, int(round(t_req / plane_config.dt)))),
                        []).append(t_req)
    times, psnaps, gsnaps = [], [], []

    def record(t_req):
        times.append(t_req)
        psnaps.append(GridFunction2D(grid.box, u.copy()))
        gsnaps.append(stepper.heat.to_graph_function(vec, cap))

    for t_req in want.get(0, []):
        record(t_req)
    for i in range(1, n_steps + 1):
        dW = None
        noise_vec = None
        if stream is not None:
            dW = stream.increment(plane_config.dt).values
            noise_vec = stepper.noise_vector(projector.project_values(dW))
        u = plane.step(u, reaction=plane_config.reaction,
                       dispersion=plane_config.dispersion
                       if stream is not None else None,
                       noise_increment=dW)
        _norm_guard(u, plane_config.blowup_guard)
        vec = stepper.step(vec, cap, plane_config.reaction,
                           plane_config.dispersion, noise_vec)
        if on_step is not None:
            on_step(i, i * plane_config.dt, u, vec, stepper)
        for t_req in want.get(i, []):
            record(t_req)
    if not times:
        record(plane_config.horizon)
    return CoupledTrajectory(times=times, plane_snapshots=psnaps,
                             graph_snapshots=gsnaps,
                             clamped_fraction=plane.clamped_fraction)
