"""Discrete carriers for functions on the plane and on the graph.

``GridFunction2D`` is a cell-centered scalar field on a rectangle (midpoint
quadrature, bilinear or cubic interpolation).  ``GraphFunction`` stores one
value array per edge on that edge's quadrature nodes plus one value per
vertex, which pins continuity across edges that meet there.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import GridMismatchError

Array = np.ndarray


@dataclass
class GridFunction2D:
    box: tuple[float, float, float, float]
    values: Array  # shape (nx, ny), values[i, j] at cell center (x_i, y_j)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-d array")

    # --- geometry -------------------------------------------------------
    @property
    def nx(self) -> int:
        return self.values.shape[0]

    @property
    def ny(self) -> int:
        return self.values.shape[1]

    @property
    def hx(self) -> float:
        x0, x1, _, _ = self.box
        return (x1 - x0) / self.nx

    @property
    def hy(self) -> float:
        _, _, y0, y1 = self.box
        return (y1 - y0) / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def xs(self) -> Array:
        x0, _, _, _ = self.box
        return x0 + (np.arange(self.nx) + 0.5) * self.hx

    @property
    def ys(self) -> Array:
        _, _, y0, _ = self.box
        return y0 + (np.arange(self.ny) + 0.5) * self.hy

    def points(self) -> Array:
        """Cell centers, shape (nx, ny, 2)."""
        return np.stack(np.meshgrid(self.xs, self.ys, indexing="ij"), axis=-1)

    @classmethod
    def from_callable(cls, box, nx: int, ny: int, fn) -> "GridFunction2D":
        g = cls(box, np.zeros((nx, ny)))
        g.values = np.asarray(fn(g.points()), dtype=float)
        return g

    def like(self, values: Array) -> "GridFunction2D":
        if values.shape != self.values.shape:
            raise GridMismatchError("shape mismatch in like()")
        return GridFunction2D(self.box, np.asarray(values, dtype=float))

    def check_same_grid(self, other: "GridFunction2D"):
        if self.box != other.box or self.values.shape != other.values.shape:
            raise GridMismatchError(
                f"grids differ: {self.box}/{self.values.shape} vs "
                f"{other.box}/{other.values.shape}"
            )

    # --- quadrature and arithmetic --------------------------------------
    def integral(self) -> float:
        return float(self.cell_area * self.values.sum())

    def __add__(self, other):
        if isinstance(other, GridFunction2D):
            self.check_same_grid(other)
            return self.like(self.values + other.values)
        return self.like(self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction2D):
            self.check_same_grid(other)
            return self.like(self.values - other.values)
        return self.like(self.values - other)

    def __mul__(self, other):
        if isinstance(other, GridFunction2D):
            self.check_same_grid(other)
            return self.like(self.values * other.values)
        return self.like(self.values * other)

    __rmul__ = __mul__

    # --- interpolation ---------------------------------------------------
    def _fractional_index(self, pts: Array):
        x0, _, y0, _ = self.box
        pts = np.asarray(pts, dtype=float)
        fx = (pts[..., 0] - x0) / self.hx - 0.5
        fy = (pts[..., 1] - y0) / self.hy - 0.5
        return fx, fy

    def interpolate(self, pts: Array, kind: str = "linear") -> Array:
        """Evaluate at arbitrary points; coordinates are clamped to the box
        (constant extension past the outermost cell centers)."""
        fx, fy = self._fractional_index(pts)
        if kind == "linear":
            return _interp_bilinear(self.values, fx, fy)
        if kind == "cubic":
            return _interp_cubic(self.values, fx, fy)
        raise ValueError(f"unknown interpolation kind {kind!r}")


def _interp_bilinear(v: Array, fx: Array, fy: Array) -> Array:
    nx, ny = v.shape
    fx = np.clip(fx, 0.0, nx - 1.0)
    fy = np.clip(fy, 0.0, ny - 1.0)
    i0 = np.clip(np.floor(fx).astype(np.int64), 0, nx - 2)
    j0 = np.clip(np.floor(fy).astype(np.int64), 0, ny - 2)
    tx = fx - i0
    ty = fy - j0
    v00 = v[i0, j0]
    v10 = v[i0 + 1, j0]
    v01 = v[i0, j0 + 1]
    v11 = v[i0 + 1, j0 + 1]
    return (
        v00 * (1 - tx) * (1 - ty)
        + v10 * tx * (1 - ty)
        + v01 * (1 - tx) * ty
        + v11 * tx * ty
    )


def bilinear_stencil(grid: GridFunction2D, pts: Array):
    """Flat gather indices and weights for bilinear evaluation at ``pts``.

    Returns (idx, w) of shape (m, 4) so that repeated interpolation of many
    fields on the same grid reduces to ``values.ravel()[idx] @ w``.
    """
    fx, fy = grid._fractional_index(np.asarray(pts, dtype=float).reshape(-1, 2))
    nx, ny = grid.values.shape
    fx = np.clip(fx, 0.0, nx - 1.0)
    fy = np.clip(fy, 0.0, ny - 1.0)
    i0 = np.clip(np.floor(fx).astype(np.int64), 0, nx - 2)
    j0 = np.clip(np.floor(fy).astype(np.int64), 0, ny - 2)
    tx = fx - i0
    ty = fy - j0
    base = i0 * ny + j0
    idx = np.stack([base, base + ny, base + 1, base + ny + 1], axis=-1)
    w = np.stack(
        [(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty], axis=-1
    )
    return idx, w


def _catmull_rom_weights(t: Array):
    t2 = t * t
    t3 = t2 * t
    w0 = -0.5 * t3 + t2 - 0.5 * t
    w1 = 1.5 * t3 - 2.5 * t2 + 1.0
    w2 = -1.5 * t3 + 2.0 * t2 + 0.5 * t
    w3 = 0.5 * t3 - 0.5 * t2
    return w0, w1, w2, w3


def _interp_cubic(v: Array, fx: Array, fy: Array) -> Array:
    nx, ny = v.shape
    fx = np.clip(fx, 0.0, nx - 1.0)
    fy = np.clip(fy, 0.0, ny - 1.0)
    i0 = np.clip(np.floor(fx).astype(np.int64), 0, nx - 2)
    j0 = np.clip(np.floor(fy).astype(np.int64), 0, ny - 2)
    tx = fx - i0
    ty = fy - j0
    wx = _catmull_rom_weights(tx)
    wy = _catmull_rom_weights(ty)
    out = np.zeros(np.broadcast(fx, fy).shape)
    for a in range(4):
        ia = np.clip(i0 + a - 1, 0, nx - 1)
        row = np.zeros_like(out)
        for b in range(4):
            jb = np.clip(j0 + b - 1, 0, ny - 1)
            row += wy[b] * v[ia, jb]
        out += wx[a] * row
    return out


@dataclass
class GraphFunction:
    """Per-edge value arrays on the graph's edge nodes plus vertex values.

    ``graph`` only needs ``edges[k].z_nodes``, ``edges[k].z_lo/z_hi`` and
    ``edges[k].v_lo/v_hi`` attributes, so this type stays decoupled from the
    construction machinery.
    """

    graph: object
    edge_values: list[Array]
    vertex_values: Array
    _splines: dict = dc_field(default_factory=dict, repr=False)

    @classmethod
    def from_callable(cls, graph, fn) -> "GraphFunction":
        """``fn(z, k)`` vectorized in z."""
        ev = [np.asarray(fn(e.z_nodes, e.k), dtype=float) for e in graph.edges]
        vv = np.array([fn(np.array([v.value]), _vertex_edge(graph, v))[0]
                       for v in graph.vertices])
        return cls(graph, ev, vv)

    @classmethod
    def constant(cls, graph, c: float) -> "GraphFunction":
        ev = [np.full(len(e.z_nodes), float(c)) for e in graph.edges]
        vv = np.full(len(graph.vertices), float(c))
        return cls(graph, ev, vv)

    def copy(self) -> "GraphFunction":
        return GraphFunction(
            self.graph,
            [v.copy() for v in self.edge_values],
            self.vertex_values.copy(),
        )

    def _edge_spline(self, k: int) -> CubicSpline:
        sp = self._splines.get(k)
        if sp is None:
            e = self.graph.edges[k]
            z = np.concatenate(([e.z_lo], e.z_nodes, [e.z_hi]))
            vals = np.concatenate(
                (
                    [self.vertex_values[e.v_lo]],
                    self.edge_values[k],
                    [self.vertex_values[e.v_hi]],
                )
            )
            sp = CubicSpline(z, vals)
            self._splines[k] = sp
        return sp

    def evaluate(self, z: Array, k: Array) -> Array:
        """Evaluate at graph points; z is clamped to the edge interval."""
        z = np.asarray(z, dtype=float)
        k = np.asarray(k)
        out = np.empty(np.broadcast(z, k).shape, dtype=float)
        zb = np.broadcast_to(z, out.shape)
        kb = np.broadcast_to(k, out.shape)
        for kk in np.unique(kb):
            e = self.graph.edges[int(kk)]
            sel = kb == kk
            zz = np.clip(zb[sel], e.z_lo, e.z_hi)
            out[sel] = self._edge_spline(int(kk))(zz)
        return out

    def map(self, fn) -> "GraphFunction":
        return GraphFunction(
            self.graph,
            [np.asarray(fn(v), dtype=float) for v in self.edge_values],
            np.asarray(fn(self.vertex_values), dtype=float),
        )

    def _binary(self, other, op) -> "GraphFunction":
        if isinstance(other, GraphFunction):
            ev = [op(a, b) for a, b in zip(self.edge_values, other.edge_values)]
            vv = op(self.vertex_values, other.vertex_values)
        else:
            ev = [op(a, other) for a in self.edge_values]
            vv = op(self.vertex_values, other)
        return GraphFunction(self.graph, ev, vv)

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b)

    def __mul__(self, other):
        return self._binary(other, lambda a, b: a * b)

    __rmul__ = __mul__

    def max_abs(self) -> float:
        m = max((float(np.max(np.abs(v))) for v in self.edge_values if len(v)),
                default=0.0)
        if len(self.vertex_values):
            m = max(m, float(np.max(np.abs(self.vertex_values))))
        return m


def _vertex_edge(graph, v):
    for e in graph.edges:
        if e.v_lo == v.id or e.v_hi == v.id:
            return e.k
    return 0
