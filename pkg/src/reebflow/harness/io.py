"""Artifact writers: RFC-4180 CSV tables, binary field snapshots, and the
per-edge coefficient exports."""

from __future__ import annotations

import csv
import io as _io
import struct
from pathlib import Path

import numpy as np


def format_float(x) -> str:
    """Shortest roundtrip representation, stable across runs."""
    return repr(float(x))


def write_csv(path, header, rows):
    """RFC-4180: comma separated, CRLF line endings."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([
            format_float(v) if isinstance(v, (float, np.floating)) else v
            for v in row
        ])
    Path(path).write_text(buf.getvalue(), newline="")


def write_field_snapshot(path, grid_fn, time: float):
    """Flat binary: int32 nx, ny; float64 box[4]; float64 time; row-major
    float64 values."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<ii", grid_fn.nx, grid_fn.ny))
        fh.write(struct.pack("<4d", *grid_fn.box))
        fh.write(struct.pack("<d", float(time)))
        fh.write(np.ascontiguousarray(grid_fn.values, dtype="<f8").tobytes())


def read_field_snapshot(path):
    from ..grids import GridFunction2D

    with open(path, "rb") as fh:
        nx, ny = struct.unpack("<ii", fh.read(8))
        box = struct.unpack("<4d", fh.read(32))
        (time,) = struct.unpack("<d", fh.read(8))
        vals = np.frombuffer(fh.read(nx * ny * 8), dtype="<f8").reshape(nx, ny)
    return GridFunction2D(box, vals.copy()), time


def write_coefficients_csv(path, graph, coeffs):
    """Per-edge tables (k, z, period, flux, diffusion, drift)."""
    rows = []
    for e in graph.edges:
        a = coeffs.a(e.k, e.z_nodes)
        b = coeffs.b(e.k, e.z_nodes)
        for z, t, fl, av, bv in zip(e.z_nodes, e.period_values, e.flux_values,
                                    a, b):
            rows.append([e.k, z, t, fl, av, bv])
    write_csv(path, ["edge", "z", "period", "flux", "diffusion", "drift"], rows)


def write_graph_snapshot_csv(path, graph, f):
    """Per-edge (edge, z, value) rows plus one row per vertex."""
    rows = []
    for e in graph.edges:
        for z, v in zip(e.z_nodes, f.edge_values[e.k]):
            rows.append([f"edge{e.k}", z, v])
    for v in graph.vertices:
        rows.append([f"vertex{v.id}", v.value, f.vertex_values[v.id]])
    write_csv(path, ["location", "z", "value"], rows)


def write_norm_series_csv(path, times, norms):
    write_csv(path, ["time", "weighted_norm"], list(zip(times, norms)))
