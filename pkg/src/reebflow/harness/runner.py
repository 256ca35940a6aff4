"""Run orchestration: dispatch experiments, collect tables, persist the
manifest and the CSV artifacts."""

from __future__ import annotations

import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import ConfigInvalidError, ExperimentFailedError
from .config import RunConfig
from .experiments import EXPERIMENTS
from .io import write_csv

TABLE_HEADER = ["experiment", "eps", "value", "std_error", "budget_or_time"]


def _experiment_kwargs(config: RunConfig, exp_id: str) -> dict:
    """Map config keys onto the experiment's keyword arguments."""
    kw: dict = {"seed": config.seed}
    raw = config.raw
    if "hamiltonian.name" in raw:
        kw["hamiltonian"] = raw["hamiltonian.name"]
        if "hamiltonian.params.c" in raw:
            kw["ham_params"] = {"c": float(raw["hamiltonian.params.c"])}
    if "hamiltonian.z_max" in raw:
        kw["z_max"] = float(raw["hamiltonian.z_max"])
    if "sde.eps" in raw:
        grid = raw["sde.eps"]
        kw["eps_grid"] = tuple(float(e) for e in
                               (grid if isinstance(grid, list) else [grid]))
    if "sde.paths" in raw and exp_id in ("spde-convergence", "linear-weak"):
        kw["n_paths"] = int(raw["sde.paths"])
    if "sde.paths" in raw and exp_id == "kernel-bound":
        kw["n_paths"] = int(raw["sde.paths"])
    if "sde.dt" in raw and exp_id in ("spde-convergence", "linear-weak",
                                      "kernel-bound"):
        kw["dt"] = float(raw["sde.dt"])
    if "grid.n" in raw and exp_id != "kernel-bound":
        kw["n_grid"] = int(raw["grid.n"])
    if "graph.n_z" in raw and exp_id != "kernel-bound":
        kw["n_z"] = int(raw["graph.n_z"])
    if "time.tau" in raw and exp_id in ("semigroup-strong", "weak-time-avg",
                                        "spde-convergence"):
        kw["tau"] = float(raw["time.tau"])
    if "time.horizon" in raw and exp_id != "kernel-bound":
        kw["horizon"] = float(raw["time.horizon"])
    if "time.probes" in raw and exp_id in ("semigroup-strong", "weak-time-avg",
                                           "spde-convergence"):
        kw["n_probes"] = int(raw["time.probes"])
    if "noise.s" in raw and exp_id in ("spde-convergence", "linear-weak",
                                       "kernel-bound"):
        kw["noise_s"] = float(raw["noise.s"])
    if "noise.K" in raw and exp_id in ("spde-convergence", "linear-weak",
                                       "kernel-bound"):
        kw["noise_K"] = float(raw["noise.K"])
    if "noise.modes" in raw and exp_id == "kernel-bound":
        kw["hs_modes"] = int(raw["noise.modes"])
    if "noise.seed" in raw and exp_id in ("spde-convergence", "linear-weak"):
        kw["noise_seed"] = int(raw["noise.seed"])
    if "noise.density" in raw and exp_id in ("spde-convergence", "linear-weak"):
        kw["noise_density"] = str(raw["noise.density"])
    if "sde.scheme" in raw and exp_id == "kernel-bound":
        kw["scheme"] = str(raw["sde.scheme"])
    return kw


def _run_one(exp_id: str, kwargs: dict):
    fn, _ = EXPERIMENTS[exp_id]
    return fn(**kwargs)


def _write_exports(config: RunConfig, out_dir: Path):
    """Optional artifacts: per-edge coefficient tables, field snapshots with
    their weighted-norm series, and the graph structure as JSON."""
    raw = config.raw
    if not (raw.get("export.coefficients") or raw.get("export.snapshots")):
        return
    from .. import pde2d, spaces
    from .experiments import gaussian_bump, prepare_bench, PlaneNorm
    from .io import (write_coefficients_csv, write_field_snapshot,
                     write_norm_series_csv)

    name = raw.get("hamiltonian.name", "quadratic")
    params = {}
    if "hamiltonian.params.c" in raw:
        params["c"] = float(raw["hamiltonian.params.c"])
    z_max = float(raw.get("hamiltonian.z_max",
                          60.0 if name == "quartic_well" else 16.0))
    bench = prepare_bench(name, z_max, **params)
    if raw.get("export.coefficients"):
        write_coefficients_csv(out_dir / "coefficients.csv", bench.graph,
                               bench.coeffs)
        (out_dir / "graph.json").write_text(bench.graph.to_json())
    if raw.get("export.snapshots"):
        horizon = float(raw.get("time.horizon", 0.5))
        eps = raw.get("sde.eps", 0.1)
        if isinstance(eps, list):
            eps = min(float(e) for e in eps)
        u0 = gaussian_bump(bench.graph.box, int(raw.get("grid.n", 96)))
        times = (0.5 * horizon, horizon)
        cfg = pde2d.SPDEConfig(field=bench.field, eps=float(eps), initial=u0,
                               dt=2e-3, horizon=horizon, snapshot_times=times)
        out = pde2d.evolve_deterministic(cfg)
        norm = PlaneNorm(bench.field, u0, spaces.exp_weight(1.0))
        norms = []
        for t_req, snap in zip(out.times, out.snapshots):
            write_field_snapshot(out_dir / f"snapshot_t{t_req:g}.bin",
                                 snap, t_req)
            norms.append(norm(snap.values))
        write_norm_series_csv(out_dir / "norms.csv", list(out.times), norms)


def run(config: RunConfig) -> int:
    """Execute the configured experiments; exit code 0 only if every
    verdict passed.  Outputs: manifest.json and tables.csv under the
    configured output directory."""
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    workers = config.workers
    env_workers = os.environ.get("REEBFLOW_WORKERS")
    if env_workers:
        try:
            workers = max(1, int(env_workers))
        except ValueError:
            raise ConfigInvalidError("REEBFLOW_WORKERS must be an integer")

    jobs = [(exp_id, _experiment_kwargs(config, exp_id))
            for exp_id in config.experiments]
    results = {}
    errors = {}
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {exp_id: pool.submit(_run_one, exp_id, kw)
                       for exp_id, kw in jobs}
            for exp_id, fut in futures.items():
                try:
                    results[exp_id] = fut.result()
                except Exception as exc:  # noqa: BLE001 - reported by name
                    errors[exp_id] = repr(exc)
    else:
        for exp_id, kw in jobs:
            try:
                results[exp_id] = _run_one(exp_id, kw)
            except Exception as exc:  # noqa: BLE001
                errors[exp_id] = repr(exc)

    rows = []
    summaries = {}
    all_passed = True
    for exp_id in config.experiments:  # deterministic output order
        if exp_id in errors:
            all_passed = False
            summaries[exp_id] = {"error": errors[exp_id], "passed": False}
            continue
        res = results[exp_id]
        rows.extend(res.csv_rows())
        summaries[exp_id] = res.summary()
        all_passed = all_passed and res.passed()

    write_csv(out_dir / "tables.csv", TABLE_HEADER, rows)
    _write_exports(config, out_dir)
    manifest = {
        "version": __version__,
        "seed": config.seed,
        "experiments": config.experiments,
        "config": {k: v for k, v in sorted(config.raw.items())},
        "results": summaries,
        "numpy": np.__version__,
        "platform": platform.platform(),
        "elapsed_s": time.perf_counter() - t0,
        "passed": all_passed and not errors,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    if errors:
        raise ExperimentFailedError(", ".join(sorted(errors)))
    return 0 if all_passed else 1
