"""The averaged diffusion on the graph.

Within each edge the limit generator is the divergence-form operator
(2 T)^{-1} d/dz (A d/dz): the diffusion coefficient is the orbit average of
|grad H|^2 and the drift is the orbit average of lap H / 2, which are tied
together through the flux A = a T and its derivative.  At interior (saddle)
vertices incident edges exchange mass through flux-weighted gluing.

Two realizations are provided: Euler-Maruyama paths with a redistribution
ball at the vertices, and a finite-volume Crank-Nicolson solve of the
backward equation whose vertex cells enforce the flux balance exactly (so
constants are preserved to machine precision).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from .errors import SolverDivergedError
from .grids import GraphFunction
from .reeb import GraphPoint, ReebGraph, trace_cycle

Array = np.ndarray


@dataclass
class EdgeCoefficients:
    graph: ReebGraph
    diffusion: list  # per edge: spline of a(z) = orbit average of |grad H|^2
    drift: list  # per edge: spline of b(z) = orbit average of lap H / 2
    consistency_error: float  # max relative |a T - A| over interior nodes
    divergence_form_error: float  # max |A'/(2T) - b| / scale, interior nodes

    def a(self, k: int, z: Array) -> Array:
        e = self.graph.edges[k]
        return np.maximum(self.diffusion[k](np.clip(z, e.z_nodes[0], e.z_nodes[-1])), 0.0)

    def b(self, k: int, z: Array) -> Array:
        e = self.graph.edges[k]
        return self.drift[k](np.clip(z, e.z_nodes[0], e.z_nodes[-1]))


@dataclass
class GluingWeights:
    # vertex id -> list of (edge k, side) with side +1 when the edge sits
    # above the vertex (its lower endpoint), -1 when below; plus the flux
    # weight of that edge evaluated at the vertex
    incident: dict
    weights: dict
    additivity_error: float


def assemble_coefficients(field, graph: ReebGraph) -> EdgeCoefficients:
    """Tabulate the edge diffusion/drift and verify both identities that
    guard against mis-assembly (a T = A, and A'/(2T) = b)."""
    from scipy.interpolate import CubicSpline

    diffusion, drift = [], []
    cons_err = 0.0
    div_err = 0.0
    for e in graph.edges:
        a_vals = np.array([
            c.average(field.grad_norm(c.points) ** 2) for c in e.cycles
        ])
        diffusion.append(CubicSpline(e.z_nodes, a_vals))
        drift.append(e.drift_spline)
        cons = np.abs(a_vals * e.period_values - e.flux_values) / e.flux_values
        cons_err = max(cons_err, float(np.max(cons)))
        interior = slice(len(e.z_nodes) // 4, -len(e.z_nodes) // 4)
        zi = e.z_nodes[interior]
        lhs = e.flux_spline(zi, 1) / (2.0 * e.period_spline(zi))
        rhs = e.drift_spline(zi)
        scale = max(1.0, float(np.max(np.abs(rhs))))
        div_err = max(div_err, float(np.max(np.abs(lhs - rhs))) / scale)
    return EdgeCoefficients(graph, diffusion, drift, cons_err, div_err)


def assemble_gluing(graph: ReebGraph) -> GluingWeights:
    """Flux weights of the edges incident to each saddle vertex.

    The flux is continuous through the saddle, so both sides are probed a
    tiny offset into their edges; the outer flux must match the sum of the
    inner ones (contour additivity).
    """
    incident: dict = {}
    weights: dict = {}
    add_err = 0.0
    for v in graph.interior_vertices():
        inc = []
        w = []
        for e in graph.edges:
            if e.v_hi == v.id:
                inc.append((e.k, -1))
                z = v.value - 1e-6 * e.length
                w.append(trace_cycle(graph, z, e.k, n_points=128).flux())
            elif e.v_lo == v.id:
                inc.append((e.k, +1))
                z = v.value + 1e-6 * e.length
                w.append(trace_cycle(graph, z, e.k, n_points=128).flux())
        incident[v.id] = inc
        weights[v.id] = np.asarray(w)
        above = sum(wt for (k, s), wt in zip(inc, w) if s > 0)
        below = sum(wt for (k, s), wt in zip(inc, w) if s < 0)
        if above > 0:
            add_err = max(add_err, abs(above - below) / above)
    return GluingWeights(incident, weights, add_err)


# --------------------------------------------------------------------------
# path simulation
# --------------------------------------------------------------------------


@dataclass
class GraphPathState:
    z: Array
    k: Array
    alive: Array


def simulate_paths_graph(
    coeffs: EdgeCoefficients,
    gluing: GluingWeights,
    start: GraphPoint,
    t: float,
    dt: float,
    n_paths: int,
    seed: int = 0,
    delta_v: float | None = None,
) -> GraphPathState:
    """Euler-Maruyama ensemble of the averaged diffusion.

    Inside a redistribution ball of radius delta_v around a saddle vertex
    the walker exits onto an incident edge with probability proportional to
    that edge's flux weight, re-emitted delta_v into the edge.  Extremum
    endpoints clamp the move (the degenerate diffusion makes them
    non-sticky); the cap level absorbs.
    """
    graph = coeffs.graph
    if delta_v is None:
        delta_v = 1e-2 * min(e.length for e in graph.edges)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    z = np.full(n_paths, float(start.z))
    k = np.full(n_paths, int(start.k), dtype=np.int64)
    alive = np.ones(n_paths, dtype=bool)
    n_steps = max(1, int(round(t / dt)))

    vertex_of_edge_end = {}
    for e in graph.edges:
        vertex_of_edge_end[(e.k, -1)] = e.v_lo
        vertex_of_edge_end[(e.k, +1)] = e.v_hi

    saddle_ids = {v.id for v in graph.interior_vertices()}

    for _ in range(n_steps):
        noise = rng.standard_normal(n_paths)
        for kk in np.unique(k[alive]):
            sel = alive & (k == kk)
            e = graph.edges[kk]
            zz = z[sel]
            a = coeffs.a(kk, zz)
            b = coeffs.b(kk, zz)
            zz = zz + b * dt + np.sqrt(np.maximum(a, 0.0) * dt) * noise[sel]
            # clamp at extremum endpoints, absorb at the cap
            v_lo = graph.vertices[e.v_lo]
            v_hi = graph.vertices[e.v_hi]
            if v_lo.kind in ("minimum",):
                zz = np.maximum(zz, e.z_lo)
            if v_hi.kind == "maximum":
                zz = np.minimum(zz, e.z_hi)
            z[sel] = zz
        # absorb at the cap
        top = graph.edges[0]
        hit = alive & (k == top.k) & (z >= graph.z_max)
        if hit.any():
            alive[hit] = False
            z[hit] = graph.z_max
        # vertex redistribution
        for vid in saddle_ids:
            v_val = graph.vertices[vid].value
            in_ball = np.zeros(n_paths, dtype=bool)
            for (kk, side) in gluing.incident[vid]:
                e = graph.edges[kk]
                if side < 0:
                    in_ball |= alive & (k == kk) & (z > v_val - delta_v)
                else:
                    in_ball |= alive & (k == kk) & (z < v_val + delta_v)
            idx = np.flatnonzero(in_ball)
            if len(idx) == 0:
                continue
            w = gluing.weights[vid]
            p = w / w.sum()
            choice = rng.choice(len(w), size=len(idx), p=p)
            inc = gluing.incident[vid]
            for c, (kk, side) in enumerate(inc):
                rows = idx[choice == c]
                if len(rows) == 0:
                    continue
                k[rows] = kk
                z[rows] = v_val + side * delta_v
    return GraphPathState(z=z, k=k, alive=alive)


def simulate_path(coeffs, gluing, start: GraphPoint, t: float, dt: float,
                  seed: int = 0) -> GraphPoint:
    st = simulate_paths_graph(coeffs, gluing, start, t, dt, 1, seed=seed)
    return GraphPoint(z=float(st.z[0]), k=int(st.k[0]),
                      vertex=None if st.alive[0] else 0)


# --------------------------------------------------------------------------
# backward-equation solver
# --------------------------------------------------------------------------


class GraphHeatSolver:
    """Finite-volume Crank-Nicolson integrator of the averaged equation.

    Unknowns are the uniform nodes of every edge; a node at a saddle vertex
    is shared by all incident edges, and the vertex cell balances their
    fluxes (the discrete Kirchhoff condition).  The cap end is reflecting by
    default (matching the zero-flux box of the plane solver); "frozen"
    implements the absorbing cutoff instead.  The row sums of the generator
    vanish, so constants are exactly invariant.
    """

    def __init__(
        self,
        coeffs: EdgeCoefficients,
        gluing: GluingWeights,
        n_z: int = 240,
        theta: float = 0.5,
        cap_mode: str = "reflecting",
    ):
        if cap_mode not in ("reflecting", "frozen"):
            raise ValueError(f"unknown cap_mode {cap_mode!r}")
        self.coeffs = coeffs
        self.graph = coeffs.graph
        self.gluing = gluing
        self.theta = float(theta)
        self.cap_mode = cap_mode

        graph = self.graph
        total_len = sum(e.length for e in graph.edges)
        self.edge_nodes = []  # per edge: node z array
        self.node_index = []  # per edge: global unknown index per node (-1 frozen)
        self.vertex_index = {}  # saddle vertex id -> unknown index
        n_unknowns = 0

        # allocate shared vertex unknowns first
        for v in graph.interior_vertices():
            self.vertex_index[v.id] = n_unknowns
            n_unknowns += 1

        self.frozen_nodes = []  # (edge k, node position) for cap ends
        for e in graph.edges:
            m = max(16, int(round(n_z * e.length / total_len)))
            zs = np.linspace(e.z_lo, e.z_hi, m + 1)
            idx = np.empty(m + 1, dtype=np.int64)
            for i, zz in enumerate(zs):
                at_lo = i == 0
                at_hi = i == m
                if at_lo and graph.vertices[e.v_lo].kind == "saddle":
                    idx[i] = self.vertex_index[e.v_lo]
                elif at_hi and graph.vertices[e.v_hi].kind == "saddle":
                    idx[i] = self.vertex_index[e.v_hi]
                elif (at_hi and graph.vertices[e.v_hi].kind == "infinity"
                        and cap_mode == "frozen"):
                    idx[i] = -1  # frozen (absorbing) cap value
                else:
                    # reflecting cap: the top node is an ordinary unknown
                    # with no outside flux, matching the conservative box
                    # closure of the plane solver
                    idx[i] = n_unknowns
                    n_unknowns += 1
            self.edge_nodes.append(zs)
            self.node_index.append(idx)
        self.n_unknowns = n_unknowns

        # assemble mass (lumped) and flux matrices over the unknowns
        mass = np.zeros(n_unknowns)
        rows, cols, vals = [], [], []
        self._frozen_flux = np.zeros(n_unknowns)  # coefficient on the cap value
        for e in graph.edges:
            zs = self.edge_nodes[e.k]
            idx = self.node_index[e.k]
            dz = zs[1] - zs[0]
            z_half = 0.5 * (zs[:-1] + zs[1:])
            a_half = self.coeffs.a(e.k, z_half)
            t_half = e.period_spline(np.clip(z_half, e.z_nodes[0], e.z_nodes[-1]))
            # half-flux coefficients A/2 = a T / 2 at interfaces
            c_half = 0.5 * a_half * t_half
            t_nodes = e.period_spline(np.clip(zs, e.z_nodes[0], e.z_nodes[-1]))
            for i, zz in enumerate(zs):
                gi = idx[i]
                if gi < 0:
                    continue
                cell = dz * (0.5 if (i == 0 or i == len(zs) - 1) else 1.0)
                mass[gi] += t_nodes[i] * cell
            for i in range(len(zs) - 1):
                gi, gj = idx[i], idx[i + 1]
                w = c_half[i] / dz
                if gi >= 0:
                    rows.append(gi); cols.append(gi); vals.append(-w)
                    if gj >= 0:
                        rows.append(gi); cols.append(gj); vals.append(w)
                    else:
                        self._frozen_flux[gi] += w
                if gj >= 0:
                    rows.append(gj); cols.append(gj); vals.append(-w)
                    if gi >= 0:
                        rows.append(gj); cols.append(gi); vals.append(w)
        flux = sp.csr_matrix(
            (vals, (rows, cols)), shape=(n_unknowns, n_unknowns)
        )
        self._mass = mass
        self._flux = flux
        self._solver_cache = {}

    # -- vector <-> graph function -----------------------------------------
    def to_vector(self, f: GraphFunction) -> tuple[Array, float]:
        """Solver unknowns plus the frozen cap value."""
        vec = np.zeros(self.n_unknowns)
        cap_value = float(f.vertex_values[0])
        for e in self.graph.edges:
            vals = f.evaluate(self.edge_nodes[e.k], e.k)
            idx = self.node_index[e.k]
            keep = idx >= 0
            vec[idx[keep]] = vals[keep]
        return vec, cap_value

    def to_graph_function(self, vec: Array, cap_value: float) -> GraphFunction:
        edge_values = []
        for e in self.graph.edges:
            idx = self.node_index[e.k]
            node_vals = np.where(idx >= 0, vec[np.maximum(idx, 0)], cap_value)
            edge_values.append(np.interp(e.z_nodes, self.edge_nodes[e.k], node_vals))
        vertex_values = np.zeros(len(self.graph.vertices))
        for v in self.graph.vertices:
            if v.id in self.vertex_index:
                vertex_values[v.id] = vec[self.vertex_index[v.id]]
            elif v.kind == "infinity":
                vertex_values[v.id] = cap_value
            else:
                # extremum endpoint: value of its single incident edge end
                for e in self.graph.edges:
                    if e.v_lo == v.id:
                        vertex_values[v.id] = vec[self.node_index[e.k][0]]
                        break
                    if e.v_hi == v.id:
                        gi = self.node_index[e.k][-1]
                        vertex_values[v.id] = vec[gi] if gi >= 0 else cap_value
                        break
        return GraphFunction(self.graph, edge_values, vertex_values)

    # -- stepping ------------------------------------------------------------
    def _factor(self, dt: float):
        key = round(dt, 14)
        got = self._solver_cache.get(key)
        if got is None:
            n = self.n_unknowns
            minv = sp.diags(1.0 / self._mass)
            gen = minv @ self._flux
            lhs = (sp.identity(n) - self.theta * dt * gen).tocsc()
            rhs = sp.identity(n) + (1 - self.theta) * dt * gen
            got = (factorized(lhs), rhs, minv @ self._frozen_flux)
            self._solver_cache[key] = got
        return got

    def step(self, vec: Array, cap_value: float, dt: float) -> Array:
        solve, rhs, frozen = self._factor(dt)
        out = solve(rhs @ vec + dt * frozen * cap_value)
        if not np.all(np.isfinite(out)):
            raise SolverDivergedError("graph solve produced non-finite values")
        return out

    def run(self, f: GraphFunction, t: float, dt: float) -> GraphFunction:
        vec, cap = self.to_vector(f)
        n_steps = max(1, int(round(t / dt)))
        for _ in range(n_steps):
            vec = self.step(vec, cap, dt)
        return self.to_graph_function(vec, cap)


def semigroup_apply(
    coeffs: EdgeCoefficients,
    gluing: GluingWeights,
    f: GraphFunction,
    t: float,
    dt: float = 2e-3,
    n_z: int = 240,
    solver: GraphHeatSolver | None = None,
    cap_mode: str = "reflecting",
) -> GraphFunction:
    """Action of the averaged semigroup on f by the backward solve."""
    if solver is None:
        solver = GraphHeatSolver(coeffs, gluing, n_z=n_z, cap_mode=cap_mode)
    return solver.run(f, t, dt)
