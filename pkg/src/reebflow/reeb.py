"""Reeb graph of a planar Hamiltonian.

Level sets are split into connected components; identifying each component
to a point yields a graph whose edges carry the level coordinate z.  The
construction walks slabs between consecutive critical values, counts
components by marching squares, and glues slabs together by continuation
along the gradient.  Each edge is then tabulated on Chebyshev-spaced levels:
the rotation period T_k(z), the contour flux A_k(z) (circulation of |grad H|)
and the projected drift, all obtained from arc-length contour quadrature.

Component identification for the projection onto the graph moves a point
along the gradient to the mid-level of its slab and matches it to the
nearest stored component polyline, which stays robust arbitrarily close to
saddle levels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree
from skimage import measure

from .errors import (
    CriticalValueCollisionError,
    NoReturnError,
    ResolutionTooCoarseError,
)
from .flow import move_to_level
from .grids import GraphFunction, GridFunction2D
from .hamiltonian import (
    VALUE_SEP_TOL,
    CriticalPoint,
    HamiltonianField,
    find_critical_points,
)

CONTOUR_TOL = 1e-9
# tabulation stays this fraction of the edge length away from its endpoints
SADDLE_CLIP_FRACTION = 1e-4
EXTREMUM_CLIP_FRACTION = 1e-6

Array = np.ndarray


@dataclass
class LevelCycle:
    """Closed orbit polyline at level z on edge k, arc-length parameterized.

    ``points`` omits the duplicated closing point; ``arc_weights`` are the
    (uniform) arc elements, so closed-curve quadrature is a plain weighted
    sum and converges spectrally for smooth integrands.
    """

    z: float
    k: int
    points: Array
    arc_weights: Array
    grad_norms: Array
    length: float

    def circulation(self, values=None) -> float:
        """Integral of ``values`` (default 1) against dl."""
        if values is None:
            return float(self.arc_weights.sum())
        return float(np.sum(values * self.arc_weights))

    def period(self) -> float:
        return float(np.sum(self.arc_weights / self.grad_norms))

    def flux(self) -> float:
        return float(np.sum(self.arc_weights * self.grad_norms))

    def average(self, values: Array) -> float:
        """Probability average against the invariant measure of the orbit."""
        return float(
            np.sum(values * self.arc_weights / self.grad_norms) / self.period()
        )


@dataclass
class Vertex:
    id: int
    value: float
    kind: str  # "minimum" | "maximum" | "saddle" | "infinity"
    location: tuple[float, float] | None


@dataclass
class Edge:
    k: int
    z_lo: float
    z_hi: float
    v_lo: int
    v_hi: int
    slab_indices: list[int]
    seeds: dict[int, Array]  # slab index -> point on the mid-level contour
    polylines: dict[int, Array]  # slab index -> mid-level contour polyline
    # tabulation, filled by build_graph
    z_nodes: Array = None
    quad_weights: Array = None
    period_values: Array = None
    flux_values: Array = None
    drift_values: Array = None
    cycles: list = dc_field(default_factory=list)
    period_spline: CubicSpline = None
    flux_spline: CubicSpline = None
    drift_spline: CubicSpline = None

    @property
    def length(self) -> float:
        return self.z_hi - self.z_lo

    def seed_point(self) -> Array:
        return self.seeds[self.slab_indices[0]]


@dataclass
class GraphPoint:
    z: float
    k: int
    vertex: int | None = None  # set when the point sits on a vertex

    @property
    def at_vertex(self) -> bool:
        return self.vertex is not None


class ReebGraph:
    def __init__(self, field, box, z_max, vertices, edges, slabs, slab_table):
        self.field: HamiltonianField = field
        self.box = box
        self.z_max = float(z_max)
        self.vertices: list[Vertex] = vertices
        self.edges: list[Edge] = edges
        self.slabs: list[tuple[float, float]] = slabs
        # slab index -> list of (edge k, polyline, KD tree over polyline)
        self._slab_table = slab_table
        self._index_map_cache: dict = {}

    # -- lookups ----------------------------------------------------------
    def slab_of(self, z: Array) -> Array:
        bounds = np.array([s[0] for s in self.slabs] + [self.slabs[-1][1]])
        idx = np.searchsorted(bounds, z, side="right") - 1
        return np.clip(idx, 0, len(self.slabs) - 1)

    def edges_at(self, z: float) -> list[int]:
        s = int(self.slab_of(np.array([z]))[0])
        return [k for k, _, _ in self._slab_table[s]]

    def vertex_values(self) -> Array:
        return np.array([v.value for v in self.vertices])

    def interior_vertices(self) -> list[Vertex]:
        return [v for v in self.vertices if v.kind == "saddle"]

    # -- serialization ----------------------------------------------------
    def to_json(self) -> str:
        kind_map = {
            "minimum": "extremum",
            "maximum": "extremum",
            "saddle": "saddle",
            "infinity": "infinity",
        }
        doc = {
            "z_max": self.z_max,
            "vertices": [
                {
                    "id": v.id,
                    "value": v.value,
                    "kind": kind_map[v.kind],
                    "location": None if v.location is None else list(v.location),
                }
                for v in self.vertices
            ],
            "edges": [
                {
                    "k": e.k,
                    "z_interval": [e.z_lo, e.z_hi],
                    "endpoints": [e.v_lo, e.v_hi],
                    "z_nodes": e.z_nodes.tolist(),
                    "period": e.period_values.tolist(),
                    "flux": e.flux_values.tolist(),
                }
                for e in self.edges
            ],
        }
        return json.dumps(doc, indent=2)


# --------------------------------------------------------------------------
# contour tracing
# --------------------------------------------------------------------------


def _tangent_batch(field, p: Array) -> Array:
    g = field.gradient(p)
    gn = np.maximum(np.sqrt(g[..., 0] ** 2 + g[..., 1] ** 2), 1e-300)
    t = np.empty_like(g)
    t[..., 0] = g[..., 1] / gn
    t[..., 1] = -g[..., 0] / gn
    return t


def _project_to_level(field, p: Array, z, n_iter: int = 1) -> Array:
    for _ in range(n_iter):
        g = field.gradient(p)
        gn2 = np.maximum(g[..., 0] ** 2 + g[..., 1] ** 2, 1e-300)
        p = p - ((field.value(p) - z) / gn2)[..., None] * g
    return p


def _trace_batch(field, starts: Array, base_steps: Array, max_steps: int = 60000):
    """Trace several closed orbits at once with adaptive arc-length RK4.

    Returns per-orbit dense polylines, cumulative arc lengths and the refined
    total length (section-crossing time), or None entries for orbits that
    failed to close.
    """
    m = len(starts)
    starts = np.asarray(starts, dtype=float)
    z = field.value(starts)
    t0 = _tangent_batch(field, starts)
    gn_ref = np.maximum(field.grad_norm(starts), 1e-300)

    p = starts.copy()
    s = np.zeros(m)
    active = np.ones(m, dtype=bool)
    lengths = np.full(m, np.nan)
    hist_p = [starts.copy()]
    hist_s = [s.copy()]
    hist_mask = [active.copy()]

    for it in range(max_steps):
        if not active.any():
            break
        gn = field.grad_norm(p)
        ds = base_steps * np.clip(gn / gn_ref, 1e-3, 1.0)
        ds = np.where(active, ds, 0.0)
        k1 = _tangent_batch(field, p)
        k2 = _tangent_batch(field, p + 0.5 * ds[:, None] * k1)
        k3 = _tangent_batch(field, p + 0.5 * ds[:, None] * k2)
        k4 = _tangent_batch(field, p + ds[:, None] * k3)
        p_new = p + (ds[:, None] / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        p_new = _project_to_level(field, p_new, z)
        s_new = s + ds

        a_old = np.einsum("ij,ij->i", p - starts, t0)
        a_new = np.einsum("ij,ij->i", p_new - starts, t0)
        near = np.hypot(p_new[:, 0] - starts[:, 0], p_new[:, 1] - starts[:, 1]) < 12 * base_steps
        crossed = active & (it > 4) & (a_old < 0.0) & (a_new >= 0.0) & near
        for i in np.flatnonzero(crossed):
            lengths[i] = _refine_crossing(field, p[i], s[i], starts[i], t0[i], z[i])
        active = active & ~crossed
        p = np.where(active[:, None], p_new, p)
        s = np.where(active, s_new, s)
        hist_p.append(p.copy())
        hist_s.append(s.copy())
        hist_mask.append(active | crossed)

    results = []
    P = np.array(hist_p)  # (steps, m, 2)
    S = np.array(hist_s)
    M = np.array(hist_mask)
    for i in range(m):
        if not np.isfinite(lengths[i]):
            results.append(None)
            continue
        rows = M[:, i]
        results.append((P[rows, i, :], S[rows, i], lengths[i]))
    return results


def _refine_crossing(field, p, s, start, t0, z, n_iter: int = 4):
    """Newton in arc length for the Poincare-section return point."""
    q = p.copy()
    s_q = float(s)
    for _ in range(n_iter):
        a = float(np.dot(q - start, t0))
        tq = _tangent_batch(field, q[None, :])[0]
        da = float(np.dot(tq, t0))
        if abs(da) < 1e-6:
            break
        delta = -a / da
        k1 = tq
        k2 = _tangent_batch(field, (q + 0.5 * delta * k1)[None, :])[0]
        k3 = _tangent_batch(field, (q + 0.5 * delta * k2)[None, :])[0]
        k4 = _tangent_batch(field, (q + delta * k3)[None, :])[0]
        q = q + (delta / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        q = _project_to_level(field, q[None, :], z)[0]
        s_q += delta
    return s_q


def _resample_cycle(field, dense_pts, dense_s, length, z, k, n_points) -> LevelCycle:
    s_targets = np.arange(n_points) * (length / n_points)
    # dense_s may have repeated trailing values once an orbit froze; keep the
    # strictly increasing prefix
    keep = np.concatenate(([True], np.diff(dense_s) > 0))
    ss = dense_s[keep]
    pp = dense_pts[keep]
    x = np.interp(s_targets, ss, pp[:, 0])
    y = np.interp(s_targets, ss, pp[:, 1])
    pts = np.stack([x, y], axis=-1)
    pts = _project_to_level(field, pts, z, n_iter=3)
    gn = field.grad_norm(pts)
    w = np.full(n_points, length / n_points)
    return LevelCycle(z=float(z), k=k, points=pts, arc_weights=w,
                      grad_norms=gn, length=float(length))


def trace_cycle(graph: ReebGraph, z: float, k: int, n_points: int = 256) -> LevelCycle:
    """Closed level-set component at level z on edge k."""
    cycles = trace_cycles(graph, [float(z)], k, n_points)
    return cycles[0]


def trace_cycles(graph: ReebGraph, zs, k: int, n_points: int = 256) -> list[LevelCycle]:
    """Trace several levels of one edge in a single batched sweep."""
    field = graph.field
    e = graph.edges[k]
    zs = np.asarray(zs, dtype=float)
    lo = e.z_lo + 1e-12 * max(1.0, abs(e.z_lo))
    hi = e.z_hi - 1e-12 * max(1.0, abs(e.z_hi))
    if np.any(zs <= e.z_lo) or np.any(zs >= e.z_hi):
        raise ValueError(f"levels must be interior to edge {k}: ({e.z_lo}, {e.z_hi})")
    zs = np.clip(zs, lo, hi)

    slab_idx = graph.slab_of(zs)
    starts = np.empty((len(zs), 2))
    hints = np.empty(len(zs))
    for i, (zz, si) in enumerate(zip(zs, slab_idx)):
        si = int(si)
        if si not in e.seeds:
            si = min(e.slab_indices, key=lambda s: abs(0.5 * sum(graph.slabs[s]) - zz))
        seed = e.seeds[si]
        starts[i] = move_to_level(field, seed, zz)
        poly = e.polylines[si]
        hints[i] = np.sum(np.hypot(*(np.diff(poly, axis=0).T)))
    base = np.maximum(hints / 800.0, 1e-9)
    traced = _trace_batch(field, starts, base)
    # the hint length comes from the slab-mid polyline; orbits much smaller
    # or larger than that were stepped at the wrong scale, so retrace them
    redo = []
    for i, tr in enumerate(traced):
        if tr is not None:
            ratio = tr[2] / hints[i]
            if not (0.7 < ratio < 1.5):
                redo.append(i)
    if redo:
        idx = np.array(redo)
        base2 = np.array([traced[i][2] / 800.0 for i in redo])
        for j, tr in zip(redo, _trace_batch(field, starts[idx], base2)):
            if tr is not None:
                traced[j] = tr
    out = []
    for i, tr in enumerate(traced):
        if tr is None:
            raise NoReturnError(
                f"contour at z={zs[i]:.6g} on edge {k} failed to close"
            )
        dense_pts, dense_s, length = tr
        out.append(_resample_cycle(field, dense_pts, dense_s, length, zs[i], k, n_points))
    return out


def direct_return_time(field: HamiltonianField, point, t_max: float = 1e4) -> float:
    """Return time of the advection flow dx/dt = perp-grad H through ``point``.

    Independent of the arc-length quadrature route: integrates the flow in
    time with a high-order adaptive scheme and locates the Poincare-section
    return by event detection.
    """
    p0 = np.asarray(point, dtype=float)
    t0 = _tangent_batch(field, p0[None, :])[0]

    def rhs(t, y):
        return field.perp_gradient(y)

    def section(t, y):
        return float(np.dot(y - p0, t0))

    section.terminal = True
    section.direction = 1.0

    # launch slightly forward so the event at t=0 is not retriggered
    v0 = field.perp_gradient(p0)
    speed = float(np.hypot(*v0))
    dt0 = 1e-6 / max(speed, 1e-12)
    sol = solve_ivp(rhs, (0.0, dt0), p0, rtol=1e-12, atol=1e-14, dense_output=False)
    y1 = sol.y[:, -1]
    sol = solve_ivp(
        rhs, (dt0, t_max), y1, events=section, rtol=1e-11, atol=1e-13, max_step=t_max
    )
    if not len(sol.t_events[0]):
        raise NoReturnError("time-flow orbit did not return within t_max")
    return float(sol.t_events[0][0])


# --------------------------------------------------------------------------
# graph construction
# --------------------------------------------------------------------------


def _auto_box(field: HamiltonianField, z_level: float, n_angles: int = 64):
    """Square box that contains the z_level level set with margin."""
    angles = np.linspace(0, 2 * np.pi, n_angles, endpoint=False)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    r_hi = 1.0
    for _ in range(60):
        if np.all(field.value(r_hi * dirs) >= 1.02 * z_level):
            break
        r_hi *= 1.5
    lo = np.zeros(n_angles)
    hi = np.full(n_angles, r_hi)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        val = field.value(mid[:, None] * dirs)
        above = val >= 1.02 * z_level
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    r = float(np.max(hi)) * 1.08 + 0.2
    return (-r, r, -r, r)


def _closed_contours(h_grid: Array, level: float, box, res: int):
    x0, x1, y0, y1 = box
    dx = (x1 - x0) / (res - 1)
    dy = (y1 - y0) / (res - 1)
    out = []
    for c in measure.find_contours(h_grid, level):
        if not np.allclose(c[0], c[-1]):
            continue  # touches the border: not a closed component
        phys = np.stack([x0 + c[:, 0] * dx, y0 + c[:, 1] * dy], axis=-1)
        out.append(phys)
    return out


def _point_in_polygon(poly: Array, pts: Array) -> Array:
    """Even-odd ray casting; poly closed (first == last point)."""
    x = np.asarray(pts, dtype=float)[..., 0]
    y = np.asarray(pts, dtype=float)[..., 1]
    inside = np.zeros(np.shape(x), dtype=bool)
    px, py = poly[:-1, 0], poly[:-1, 1]
    qx, qy = poly[1:, 0], poly[1:, 1]
    for a_x, a_y, b_x, b_y in zip(px, py, qx, qy):
        cond = (a_y > y) != (b_y > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = a_x + (y - a_y) * (b_x - a_x) / (b_y - a_y)
        hit = cond & (x < x_cross)
        inside ^= hit
    return inside


def _cluster_values(values: list[float], tol: float) -> list[float]:
    vals = sorted(values)
    clusters: list[list[float]] = []
    for v in vals:
        if clusters and v - clusters[-1][-1] <= tol:
            clusters[-1].append(v)
        else:
            clusters.append([v])
    return [float(np.mean(c)) for c in clusters]


def build_graph(
    field: HamiltonianField,
    z_max: float | None = None,
    grid_resolution: int = 512,
    n_edge_nodes: int = 33,
    cycle_points: int = 256,
    search_box: tuple[float, float, float, float] | None = None,
    check_refinement: bool = True,
) -> ReebGraph:
    """Construct the graph of level-set component families.

    Critical values split [0, z_max] into slabs; components are counted by
    marching squares at each slab's mid level and glued across critical
    values by gradient continuation.  Every edge is tabulated (period, flux,
    drift) on Chebyshev nodes clipped away from its vertices.
    """
    crit = find_critical_points(field, search_box or (-6.0, 6.0, -6.0, 6.0))
    if not crit:
        raise ValueError("no critical points found; not a confining Hamiltonian")
    max_crit = max(c.value for c in crit)
    if z_max is None:
        z_max = max_crit + 10.0
    if z_max < max_crit + 1.0:
        raise ValueError("z_max must exceed the largest critical value + 1")
    box = _auto_box(field, z_max)
    for c in crit:
        if not (box[0] < c.location[0] < box[1] and box[2] < c.location[1] < box[3]):
            raise ValueError(f"critical point {c.location} outside analysis box")

    cluster_vals = _cluster_values([c.value for c in crit], VALUE_SEP_TOL)
    boundaries = [v for v in cluster_vals if v < z_max - VALUE_SEP_TOL]
    if not boundaries or boundaries[0] > VALUE_SEP_TOL:
        boundaries = [0.0] + boundaries
    slabs = [
        (boundaries[i], boundaries[i + 1] if i + 1 < len(boundaries) else z_max)
        for i in range(len(boundaries))
    ]

    # sample H once on a node grid for the contouring pass
    x0, x1, y0, y1 = box
    xs = np.linspace(x0, x1, grid_resolution)
    ys = np.linspace(y0, y1, grid_resolution)
    h_grid = field.value(np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1))

    slab_components: list[list[Array]] = []
    for s_lo, s_hi in slabs:
        z_mid = 0.5 * (s_lo + s_hi)
        comps = _closed_contours(h_grid, z_mid, box, grid_resolution)
        if not comps:
            raise ResolutionTooCoarseError(
                f"no closed component found at level {z_mid:.4g}"
            )
        if check_refinement:
            coarse = _closed_contours(
                h_grid[::2, ::2], z_mid, box, (grid_resolution + 1) // 2
            )
            if len(coarse) != len(comps):
                raise ResolutionTooCoarseError(
                    f"component count changes under refinement at level {z_mid:.4g}"
                )
        slab_components.append(comps)

    if len(slab_components[-1]) != 1:
        raise CriticalValueCollisionError(
            "top slab must contain exactly one (unbounded-family) component"
        )

    # continuation relation between consecutive slabs
    n_slabs = len(slabs)
    links: list[set[tuple[int, int]]] = []  # per boundary: (below idx, above idx)
    for s in range(n_slabs - 1):
        z_below = 0.5 * sum(slabs[s])
        z_above = 0.5 * sum(slabs[s + 1])
        v_bound = slabs[s][1]
        pairs = set()
        for bi, comp in enumerate(slab_components[s]):
            pts = comp[:: max(1, len(comp) // 8)][:8]
            moved = move_to_level(field, pts, z_above)
            ok = np.abs(field.value(moved) - z_above) < 1e-6 * max(1.0, z_above)
            for mp in moved[ok]:
                ai = _nearest_component(slab_components[s + 1], mp)
                pairs.add((bi, ai))
        for ai, comp in enumerate(slab_components[s + 1]):
            pts = comp[:: max(1, len(comp) // 8)][:8]
            moved = move_to_level(field, pts, z_below)
            ok = np.abs(field.value(moved) - z_below) < 1e-6 * max(1.0, z_below)
            for mp in moved[ok]:
                bi = _nearest_component(slab_components[s], mp)
                pairs.add((bi, ai))
        links.append(pairs)
        del v_bound

    # assemble chains of components into edges, inserting vertices at the
    # boundaries where the component family actually changes
    vertices: list[Vertex] = [Vertex(0, float(z_max), "infinity", None)]
    crit_by_cluster: dict[int, list[CriticalPoint]] = {}
    for c in crit:
        ci = int(np.argmin([abs(c.value - v) for v in cluster_vals]))
        crit_by_cluster.setdefault(ci, []).append(c)

    def add_vertex(value, kind, location):
        vid = len(vertices)
        vertices.append(Vertex(vid, float(value), kind, location))
        return vid

    # chain id per (slab, component)
    chain_id = {}
    chains: list[dict] = []

    def new_chain(s, ci):
        cid = len(chains)
        chains.append({"parts": [(s, ci)], "v_lo": None, "v_hi": None})
        chain_id[(s, ci)] = cid
        return cid

    for ci in range(len(slab_components[0])):
        new_chain(0, ci)
    for s in range(n_slabs - 1):
        pairs = links[s]
        below_ids = set(b for b, _ in pairs)
        above_ids = set(a for _, a in pairs)
        # group the bipartite relation into connected clusters
        groups = _bipartite_groups(pairs, len(slab_components[s]), len(slab_components[s + 1]))
        boundary_value = slabs[s][1]
        for bset, aset in groups:
            if len(bset) == 1 and len(aset) == 1:
                b, a = next(iter(bset)), next(iter(aset))
                cid = chain_id[(s, b)]
                chains[cid]["parts"].append((s + 1, a))
                chain_id[(s + 1, a)] = cid
            elif len(aset) >= 1 and len(bset) >= 1:
                # a non-degenerate saddle joins exactly three edge ends; more
                # means several equal-value saddles act on one family
                if len(aset) + len(bset) > 3:
                    raise CriticalValueCollisionError(
                        f"{len(bset)}+{len(aset)} component families meet at "
                        f"level {boundary_value:.6g}; saddle values collide"
                    )
                # saddle: below chains terminate, above chains start
                sp = _match_critical(
                    crit, boundary_value, "saddle",
                    slab_components[s + 1][next(iter(aset))],
                )
                vid = add_vertex(sp.value, "saddle", sp.location)
                for b in bset:
                    chains[chain_id[(s, b)]]["v_hi"] = vid
                for a in aset:
                    cid = chain_id.get((s + 1, a))
                    if cid is None:
                        cid = new_chain(s + 1, a)
                    chains[cid]["v_lo"] = vid
        # births at this boundary (above components with no below partner)
        for a in range(len(slab_components[s + 1])):
            if a not in above_ids and (s + 1, a) not in chain_id:
                cid = new_chain(s + 1, a)
                mp = _match_critical(
                    crit, boundary_value, "minimum", slab_components[s + 1][a]
                )
                chains[cid]["v_lo"] = add_vertex(mp.value, "minimum", mp.location)
        # deaths (below components with no above partner): local maximum
        for b in range(len(slab_components[s])):
            if b not in below_ids and chains[chain_id[(s, b)]]["v_hi"] is None:
                comp = slab_components[s][b]
                mp = _match_critical(crit, boundary_value, "maximum", comp)
                chains[chain_id[(s, b)]]["v_hi"] = add_vertex(mp.value, "maximum", mp.location)

    # slab-0 chains start at minima with the bottom cluster value
    for cid, ch in enumerate(chains):
        s0, c0 = ch["parts"][0]
        if s0 == 0 and ch["v_lo"] is None:
            mp = _match_critical(crit, slabs[0][0], "minimum", slab_components[0][c0])
            ch["v_lo"] = add_vertex(mp.value, "minimum", mp.location)
        if ch["parts"][-1][0] == n_slabs - 1:
            ch["v_hi"] = 0  # infinity vertex

    edges: list[Edge] = []
    for ch in chains:
        parts = ch["parts"]
        s_first, s_last = parts[0][0], parts[-1][0]
        seeds, polylines, slab_ids = {}, {}, []
        for s, ci in parts:
            comp = slab_components[s][ci]
            gn = field.grad_norm(comp)
            seeds[s] = comp[int(np.argmax(gn))].copy()
            polylines[s] = comp
            slab_ids.append(s)
        if ch["v_lo"] is None or ch["v_hi"] is None:
            raise CriticalValueCollisionError(
                "failed to attach a component family to vertices; critical "
                "values may be unresolvably close"
            )
        edges.append(
            Edge(
                k=-1,
                z_lo=slabs[s_first][0],
                z_hi=slabs[s_last][1],
                v_lo=ch["v_lo"],
                v_hi=ch["v_hi"],
                slab_indices=slab_ids,
                seeds=seeds,
                polylines=polylines,
            )
        )

    # deterministic numbering: unbounded edge first, rest by geometry
    top = [e for e in edges if e.v_hi == 0]
    if len(top) != 1:
        raise CriticalValueCollisionError("exactly one unbounded edge expected")
    rest = sorted(
        (e for e in edges if e.v_hi != 0),
        key=lambda e: (e.z_lo, e.z_hi, e.seed_point()[0], e.seed_point()[1]),
    )
    edges = top + rest
    for i, e in enumerate(edges):
        e.k = i

    slab_table = [[] for _ in slabs]
    for e in edges:
        for s in e.slab_indices:
            slab_table[s].append((e.k, e.polylines[s], cKDTree(e.polylines[s])))

    graph = ReebGraph(field, box, z_max, vertices, edges, slabs, slab_table)
    _tabulate(graph, n_edge_nodes, cycle_points)
    return graph


def _nearest_component(components: list[Array], point: Array) -> int:
    dists = [float(np.min(np.hypot(c[:, 0] - point[0], c[:, 1] - point[1])))
             for c in components]
    return int(np.argmin(dists))


def _bipartite_groups(pairs, n_below, n_above):
    """Connected clusters of the (below, above) relation."""
    parent: dict = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        parent[find(a)] = find(b)

    for b, a in pairs:
        union(("b", b), ("a", a))
    groups: dict = {}
    for b, a in pairs:
        root = find(("b", b))
        g = groups.setdefault(root, (set(), set()))
        g[0].add(b)
        g[1].add(a)
    return list(groups.values())


def _match_critical(crit, value, kind, polyline) -> CriticalPoint:
    cands = [c for c in crit if abs(c.value - value) < 1e-6 * max(1.0, abs(value)) + VALUE_SEP_TOL]
    kind_cands = [c for c in cands if c.kind == kind]
    if not kind_cands:
        raise CriticalValueCollisionError(
            f"no {kind} critical point at value {value:.6g} matches a topology change"
        )
    if len(kind_cands) == 1:
        return kind_cands[0]
    if kind == "saddle":
        d = [
            float(np.min(np.hypot(polyline[:, 0] - c.location[0],
                                  polyline[:, 1] - c.location[1])))
            for c in kind_cands
        ]
        return kind_cands[int(np.argmin(d))]
    inside = [
        c
        for c in kind_cands
        if bool(_point_in_polygon(polyline, np.array(c.location)))
    ]
    if len(inside) == 1:
        return inside[0]
    if not inside:
        raise CriticalValueCollisionError(
            f"no {kind} at value {value:.6g} lies inside the born component"
        )
    # nested candidates: pick the one closest to the contour centroid
    cen = polyline.mean(axis=0)
    d = [np.hypot(c.location[0] - cen[0], c.location[1] - cen[1]) for c in inside]
    return inside[int(np.argmin(d))]


def _clenshaw_curtis(n: int):
    """n+1 nodes/weights on [-1, 1], nodes ascending."""
    theta = np.pi * np.arange(n + 1) / n
    x = np.cos(theta)
    w = np.zeros(n + 1)
    kk = np.arange(1, n // 2 + 1)
    bk = np.where(2 * kk == n, 1.0, 2.0)
    for i in range(n + 1):
        w[i] = (2.0 / n) * (1.0 - np.sum(bk / (4 * kk**2 - 1) * np.cos(2 * kk * theta[i])))
    w[0] *= 0.5
    w[-1] *= 0.5
    return x[::-1].copy(), w[::-1].copy()


def _clip_width(vertex: Vertex, length: float) -> float:
    # the period is log-singular only at saddles; extremum and cap ends can
    # be tabulated essentially all the way to the vertex
    if vertex.kind == "saddle":
        return SADDLE_CLIP_FRACTION * length
    return EXTREMUM_CLIP_FRACTION * length


def _tabulate(graph: ReebGraph, n_edge_nodes: int, cycle_points: int):
    for e in graph.edges:
        lo = e.z_lo + _clip_width(graph.vertices[e.v_lo], e.length)
        hi = e.z_hi - _clip_width(graph.vertices[e.v_hi], e.length)
        xi, wi = _clenshaw_curtis(n_edge_nodes - 1)
        z_nodes = lo + (hi - lo) * (xi + 1.0) / 2.0
        e.z_nodes = z_nodes
        e.quad_weights = wi * (hi - lo) / 2.0
        e.cycles = trace_cycles(graph, z_nodes, e.k, cycle_points)
        e.period_values = np.array([c.period() for c in e.cycles])
        e.flux_values = np.array([c.flux() for c in e.cycles])
        lap = [graph.field.laplacian(c.points) for c in e.cycles]
        e.drift_values = np.array(
            [c.average(0.5 * l) for c, l in zip(e.cycles, lap)]
        )
        e.period_spline = CubicSpline(z_nodes, e.period_values)
        e.drift_spline = CubicSpline(z_nodes, e.drift_values)
        # the flux vanishes at extremum endpoints; pin the spline there
        zf, af = [list(z_nodes), list(e.flux_values)]
        v_lo, v_hi = graph.vertices[e.v_lo], graph.vertices[e.v_hi]
        if v_lo.kind == "minimum":
            zf, af = [e.z_lo] + zf, [0.0] + af
        if v_hi.kind == "maximum":
            zf, af = zf + [e.z_hi], af + [0.0]
        e.flux_spline = CubicSpline(np.asarray(zf), np.asarray(af))


# --------------------------------------------------------------------------
# graph operations
# --------------------------------------------------------------------------


def period(graph: ReebGraph, z: float, k: int, n_points: int = 256) -> float:
    """Rotation period at (z, k) by fresh contour quadrature."""
    return trace_cycle(graph, z, k, n_points).period()


def edge_flux(graph: ReebGraph, z: float, k: int, n_points: int = 256) -> float:
    """Contour circulation of |grad H| at (z, k) by fresh quadrature."""
    return trace_cycle(graph, z, k, n_points).flux()


def _eval_on_cycle(u, cycle: LevelCycle) -> Array:
    if isinstance(u, GridFunction2D):
        return u.interpolate(cycle.points, kind="linear")
    return np.asarray(u(cycle.points), dtype=float)


def level_average(graph: ReebGraph, u, z: float, k: int, n_points: int = 256) -> float:
    """Average of u against the invariant measure on the (z, k) orbit."""
    cyc = trace_cycle(graph, z, k, n_points)
    return cyc.average(_eval_on_cycle(u, cyc))


def project_function(graph: ReebGraph, u) -> GraphFunction:
    """Level averages of u at every edge node, as a graph function.

    Vertex values come from the concentration of the invariant measure: at
    interior and extremum vertices the orbit average collapses to the value
    of u at the critical point itself.
    """
    edge_values = []
    for e in graph.edges:
        vals = np.array([c.average(_eval_on_cycle(u, c)) for c in e.cycles])
        edge_values.append(vals)
    vertex_values = np.zeros(len(graph.vertices))
    for v in graph.vertices:
        if v.kind == "infinity":
            top = graph.edges[0]
            vertex_values[v.id] = edge_values[0][-1] if top.v_hi == v.id else 0.0
        else:
            loc = np.asarray(v.location)
            if isinstance(u, GridFunction2D):
                vertex_values[v.id] = float(u.interpolate(loc[None, :])[0])
            else:
                vertex_values[v.id] = float(np.asarray(u(loc[None, :]))[0])
    return GraphFunction(graph, edge_values, vertex_values)


def project(graph: ReebGraph, x, near_tol: float = CONTOUR_TOL) -> GraphPoint:
    """Identification map: x -> (H(x), component index)."""
    x = np.asarray(x, dtype=float)
    z = float(graph.field.value(x))
    for v in graph.vertices:
        if v.kind != "infinity" and abs(z - v.value) < near_tol:
            return GraphPoint(z=v.value, k=_incident_edge(graph, v.id), vertex=v.id)
    if z >= graph.z_max:
        return GraphPoint(z=graph.z_max, k=0, vertex=0)
    s = int(graph.slab_of(np.array([z]))[0])
    table = graph._slab_table[s]
    if len(table) == 1:
        return GraphPoint(z=z, k=table[0][0])
    z_mid = 0.5 * sum(graph.slabs[s])
    moved = move_to_level(graph.field, x[None, :], z_mid)[0]
    dists = [tree.query(moved)[0] for _, _, tree in table]
    return GraphPoint(z=z, k=table[int(np.argmin(dists))][0])


def _incident_edge(graph: ReebGraph, vid: int) -> int:
    for e in graph.edges:
        if e.v_lo == vid or e.v_hi == vid:
            return e.k
    return 0


def edge_index_map(graph: ReebGraph, grid: GridFunction2D):
    """Vectorized component identification for every cell center of ``grid``.

    Returns (z, k) arrays of shape (nx, ny); points at or above the cap
    level are assigned to the unbounded edge with z clamped to z_max.
    Results are cached on the graph keyed by the grid geometry.
    """
    key = (grid.box, grid.values.shape)
    cached = graph._index_map_cache.get(key)
    if cached is not None:
        return cached
    pts = grid.points().reshape(-1, 2)
    z = graph.field.value(pts)
    k = np.zeros(len(pts), dtype=np.int64)
    zc = np.clip(z, 0.0, graph.z_max)
    slab = graph.slab_of(zc)
    for s, table in enumerate(graph._slab_table):
        sel = np.flatnonzero((slab == s) & (z < graph.z_max))
        if len(sel) == 0:
            continue
        if len(table) == 1:
            k[sel] = table[0][0]
            continue
        z_mid = 0.5 * sum(graph.slabs[s])
        moved = move_to_level(graph.field, pts[sel], z_mid)
        dist = np.full((len(table), len(sel)), np.inf)
        for i, (_, _, tree) in enumerate(table):
            dist[i] = tree.query(moved)[0]
        choice = np.argmin(dist, axis=0)
        edge_ids = np.array([t[0] for t in table])
        k[sel] = edge_ids[choice]
    k[z >= graph.z_max] = 0
    nx, ny = grid.values.shape
    out = (zc.reshape(nx, ny), k.reshape(nx, ny))
    graph._index_map_cache[key] = out
    return out


def lift(graph: ReebGraph, f: GraphFunction, grid_template: GridFunction2D) -> GridFunction2D:
    """Compose a graph function with the identification map: f(H(x), k(x))."""
    z, k = edge_index_map(graph, grid_template)
    vals = f.evaluate(z.ravel(), k.ravel()).reshape(z.shape)
    return GridFunction2D(grid_template.box, vals)


class LevelProjector:
    """Precompiled level averaging of grid fields at every edge node.

    All cycle points get bilinear gather stencils on the target grid once;
    projecting a field is then one gather plus segmented sums.  Used in the
    per-step projection of noise increments and in semigroup comparisons.
    """

    def __init__(self, graph: ReebGraph, grid_template: GridFunction2D):
        from .grids import bilinear_stencil

        self.graph = graph
        self.grid = grid_template
        pts = []
        coeffs = []
        starts = []
        self._layout = []  # (edge k, node count)
        pos = 0
        for e in graph.edges:
            self._layout.append((e.k, len(e.cycles)))
            for c in e.cycles:
                starts.append(pos)
                # weights of the invariant probability measure on the orbit
                coeffs.append(c.arc_weights / c.grad_norms / c.period())
                pts.append(c.points)
                pos += len(c.points)
        self._starts = np.array(starts, dtype=np.int64)
        self._coeffs = np.concatenate(coeffs)
        all_pts = np.concatenate(pts, axis=0)
        self._idx, self._w = bilinear_stencil(grid_template, all_pts)

        v_pts = []
        self._v_interp_rows = []
        for v in graph.vertices:
            if v.kind != "infinity":
                self._v_interp_rows.append(v.id)
                v_pts.append(v.location)
        if v_pts:
            self._v_idx, self._v_w = bilinear_stencil(
                grid_template, np.asarray(v_pts)
            )
        else:
            self._v_idx = self._v_w = None

    def project_values(self, values: Array) -> GraphFunction:
        flat = np.asarray(values, dtype=float).ravel()
        at_pts = (flat[self._idx] * self._w).sum(axis=-1) * self._coeffs
        sums = np.add.reduceat(at_pts, self._starts)
        edge_values = []
        pos = 0
        for k, n in self._layout:
            edge_values.append(sums[pos:pos + n])
            pos += n
        vertex_values = np.zeros(len(self.graph.vertices))
        if self._v_idx is not None:
            vv = (flat[self._v_idx] * self._v_w).sum(axis=-1)
            for row, vid in enumerate(self._v_interp_rows):
                vertex_values[vid] = vv[row]
        for v in self.graph.vertices:
            if v.kind == "infinity":
                vertex_values[v.id] = edge_values[0][-1]
        return GraphFunction(self.graph, edge_values, vertex_values)

    def project(self, u: GridFunction2D) -> GraphFunction:
        u.check_same_grid(self.grid)
        return self.project_values(u.values)
