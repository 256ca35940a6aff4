"""The convergence studies, one per limit statement.

Each experiment produces a table of (eps, metric, std error) rows plus an
error budget, and the verdicts are pure functions of the table: strict
monotone decrease across the eps grid, and (where applicable) the final row
below three times the budget.  Probe windows start past the initial mixing
layer observed in pilots, and the graph caps are placed so that the cap
region cannot communicate with the weighted region within the horizon.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .. import graphdiff, noise, pde2d, spaces
from ..errors import FlatPeriodError
from ..grids import GridFunction2D, bilinear_stencil
from ..graphspde import GraphSPDEStepper, SolverLifter, evolve_coupled
from ..hamiltonian import make_hamiltonian
from ..reeb import LevelProjector, build_graph, lift, project
from ..sde import fit_kernel_bound_constant, kernel_histogram

Array = np.ndarray


# --------------------------------------------------------------------------
# results
# --------------------------------------------------------------------------


@dataclass
class ConvergenceTable:
    experiment: str
    eps: list
    values: list
    std_errors: list
    budget: float | None = None
    check_final: bool = True
    extras: dict = dc_field(default_factory=dict)
    elapsed: float = 0.0

    def strictly_decreasing(self) -> bool:
        return all(a > b for a, b in zip(self.values, self.values[1:]))

    def final_ok(self) -> bool:
        if not self.check_final or self.budget is None:
            return True
        return self.values[-1] < 3.0 * self.budget

    def passed(self) -> bool:
        return self.strictly_decreasing() and self.final_ok()

    def csv_rows(self):
        rows = []
        for e, v, s in zip(self.eps, self.values, self.std_errors):
            rows.append([self.experiment, e, v, s,
                         "" if self.budget is None else self.budget])
        return rows

    def summary(self) -> dict:
        return {
            "experiment": self.experiment,
            "eps": list(self.eps),
            "values": [float(v) for v in self.values],
            "std_errors": [float(s) for s in self.std_errors],
            "budget": None if self.budget is None else float(self.budget),
            "strictly_decreasing": self.strictly_decreasing(),
            "final_ok": self.final_ok(),
            "passed": self.passed(),
            "elapsed_s": self.elapsed,
            **{k: _jsonable(v) for k, v in self.extras.items()},
        }


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


@dataclass
class KernelBoundReport:
    experiment: str
    fitted_c: dict  # (eps, t) -> C
    coverage: dict  # (eps, t) -> fraction of bins under the global envelope
    hs_times: list
    hs_sums: list
    hs_slope: float
    slope_band: tuple
    tail_fraction: float
    graph_hs_sums: list
    graph_hs_slope: float
    cx2_table: ConvergenceTable
    elapsed: float = 0.0

    def stability_ratio(self) -> float:
        vals = list(self.fitted_c.values())
        if min(vals) <= 0:
            return float("inf")  # degenerate fit (e.g. no above-floor bins)
        return max(vals) / min(vals)

    def passed(self) -> bool:
        cov_ok = all(c >= 0.99 for c in self.coverage.values())
        stab_ok = self.stability_ratio() <= 2.0
        slope_ok = self.slope_band[0] <= self.hs_slope <= self.slope_band[1]
        gslope_ok = self.slope_band[0] <= self.graph_hs_slope <= self.slope_band[1]
        tail_ok = self.tail_fraction < 0.05
        return (cov_ok and stab_ok and slope_ok and gslope_ok and tail_ok
                and self.cx2_table.passed())

    def csv_rows(self):
        rows = []
        for (eps, t), c in sorted(self.fitted_c.items()):
            rows.append([f"{self.experiment}/envelope", eps, c,
                         self.coverage[(eps, t)], t])
        for t, s in zip(self.hs_times, self.hs_sums):
            rows.append([f"{self.experiment}/hs-sum", 0.0, s, 0.0, t])
        for t, s in zip(self.hs_times, self.graph_hs_sums):
            rows.append([f"{self.experiment}/hs-sum-graph", 0.0, s, 0.0, t])
        rows.extend(self.cx2_table.csv_rows())
        return rows

    def summary(self) -> dict:
        return {
            "experiment": self.experiment,
            "fitted_c": {f"eps={e:g},t={t:g}": float(c)
                         for (e, t), c in self.fitted_c.items()},
            "coverage": {f"eps={e:g},t={t:g}": float(c)
                         for (e, t), c in self.coverage.items()},
            "stability_ratio": (float(self.stability_ratio())
                                if np.isfinite(self.stability_ratio())
                                else None),
            "hs_slope": float(self.hs_slope),
            "graph_hs_slope": float(self.graph_hs_slope),
            "slope_band": list(self.slope_band),
            "tail_fraction": float(self.tail_fraction),
            "mode_projection": self.cx2_table.summary(),
            "passed": self.passed(),
            "elapsed_s": self.elapsed,
        }


# --------------------------------------------------------------------------
# shared machinery
# --------------------------------------------------------------------------

_BENCH_CACHE: dict = {}


@dataclass
class Bench:
    graph: object
    coeffs: object
    gluing: object

    @property
    def field(self):
        return self.graph.field


def prepare_bench(name: str, z_max: float, **params) -> Bench:
    key = (name, float(z_max), tuple(sorted(params.items())))
    got = _BENCH_CACHE.get(key)
    if got is None:
        field = make_hamiltonian(name, **params)
        graph = build_graph(field, z_max=z_max)
        coeffs = graphdiff.assemble_coefficients(field, graph)
        gluing = graphdiff.assemble_gluing(graph)
        got = Bench(graph, coeffs, gluing)
        _BENCH_CACHE[key] = got
    return got


def check_period_varies(graph, rel_tol: float = 1e-4):
    """The pointwise-in-time regime needs a z-dependent rotation period."""
    for e in graph.edges:
        t = e.period_values
        if np.max(np.abs(t - t.mean())) < rel_tol * np.abs(t.mean()):
            raise FlatPeriodError(
                f"edge {e.k} has a z-independent rotation period; use the "
                "time-averaged experiment for this Hamiltonian"
            )


def gaussian_bump(box, n, center=(0.5, 0.3), width=0.6):
    def fn(p):
        d2 = (p[..., 0] - center[0]) ** 2 + (p[..., 1] - center[1]) ** 2
        return np.exp(-d2 / (2 * width**2))

    return GridFunction2D.from_callable(box, n, n, fn)


def taper_window(tgrid, tau, horizon, frac=0.3):
    """C^1 window on [tau, horizon]: cosine ramps over frac of the span."""
    w = np.zeros_like(tgrid)
    span = horizon - tau
    s = (tgrid - tau) / span
    sel = (s >= 0) & (s <= 1)
    w[sel] = 1.0
    lo = sel & (s < frac)
    hi = sel & (s > 1 - frac)
    w[lo] = 0.5 * (1 - np.cos(np.pi * s[lo] / frac))
    w[hi] = 0.5 * (1 - np.cos(np.pi * (1 - s[hi]) / frac))
    return w


class PlaneNorm:
    def __init__(self, field, grid, weight):
        self.gamma = weight.h(field.value(grid.points()))
        self.area = grid.cell_area

    def squared(self, values) -> float:
        return float(self.area * np.sum(values * values * self.gamma))

    def __call__(self, values) -> float:
        return float(np.sqrt(max(self.squared(values), 0.0)))


def _graph_series(bench, f0, gdt, n_steps, n_z, keep_steps):
    """Evolve the averaged equation, returning {step: solver vector}."""
    stepper = GraphSPDEStepper(bench.coeffs, bench.gluing, dt=gdt, n_z=n_z)
    vec, cap = stepper.heat.to_vector(f0)
    out = {0: vec.copy()} if 0 in keep_steps else {}
    for i in range(1, n_steps + 1):
        vec = stepper.heat.step(vec, cap, gdt)
        if i in keep_steps:
            out[i] = vec.copy()
    return stepper, cap, out


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------


def exp_semigroup_strong(
    seed: int = 20240812,
    hamiltonian: str = "quartic_well",
    ham_params: dict | None = None,
    z_max: float = 60.0,
    eps_grid=(0.2, 0.1, 0.05, 0.025),
    n_grid: int = 224,
    n_z: int = 420,
    tau: float = 0.3,
    horizon: float = 1.0,
    n_probes: int = 8,
    gdt: float = 2e-3,
) -> ConvergenceTable:
    """Pointwise-in-time semigroup convergence in the weighted plane norm.

    Requires a Hamiltonian with a z-dependent rotation period.  The budget
    is measured, not assumed: the same pipeline run on level-set-constant
    initial data (where the limit identity is exact for every eps) plus the
    quadrature guard.
    """
    t_start = time.perf_counter()
    ham_params = ham_params or ({"c": 0.5} if hamiltonian == "quartic_well" else {})
    bench = prepare_bench(hamiltonian, z_max, **ham_params)
    check_period_varies(bench.graph)
    weight = spaces.exp_weight(1.0)
    u0 = gaussian_bump(bench.graph.box, n_grid)
    projector = LevelProjector(bench.graph, u0)
    norm = PlaneNorm(bench.field, u0, weight)
    probes = np.linspace(tau, horizon, n_probes)

    f0 = projector.project(u0)
    n_steps = int(round(horizon / gdt))
    keep = {int(round(t / gdt)) for t in probes}
    stepper, cap, series = _graph_series(bench, f0, gdt, n_steps, n_z, keep)
    lifted = {
        s: lift(bench.graph, stepper.heat.to_graph_function(v, cap), u0).values
        for s, v in series.items()
    }

    def plane_sup(initial_values, eps):
        dt = min(gdt, 0.1 * eps)
        cfg = pde2d.SPDEConfig(field=bench.field, eps=eps,
                               initial=GridFunction2D(u0.box, initial_values),
                               dt=dt, horizon=horizon,
                               snapshot_times=tuple(probes))
        out = pde2d.evolve_deterministic(cfg)
        vals = []
        for t_req, snap in zip(out.times, out.snapshots):
            step = int(round(t_req / gdt))
            vals.append(norm(snap.values - lifted[step]))
        return max(vals)

    values = [plane_sup(u0.values, eps) for eps in eps_grid]
    # control: level-constant initial data shares the same graph series
    control0 = lift(bench.graph, f0, u0)
    control = plane_sup(control0.values, eps_grid[-1])
    budget = control + 1e-4 * norm(u0.values)
    return ConvergenceTable(
        experiment="semigroup-strong",
        eps=list(eps_grid),
        values=values,
        std_errors=[0.0] * len(eps_grid),
        budget=budget,
        extras={"control_floor": control, "tau": tau, "horizon": horizon},
        elapsed=time.perf_counter() - t_start,
    )


def exp_weak_time_avg(
    seed: int = 20240812,
    hamiltonian: str = "quadratic",
    ham_params: dict | None = None,
    z_max: float = 16.0,
    eps_grid=(0.2, 0.1, 0.05, 0.025),
    n_grid: int = 224,
    n_z: int = 420,
    tau: float = 0.1,
    horizon: float = 1.0,
    n_probes: int = 8,
    gdt: float = 2e-3,
) -> ConvergenceTable:
    """Time-averaged semigroup convergence at plane probe points.

    No condition on the rotation period: this is the regime for landscapes
    where the period is level-independent and pointwise-in-time convergence
    genuinely fails.  The C^1 time window suppresses the endpoint phases of
    the rotation so the eps-scaling of the averaged difference shows
    cleanly.
    """
    t_start = time.perf_counter()
    ham_params = ham_params or {}
    bench = prepare_bench(hamiltonian, z_max, **ham_params)
    weight_rng = np.random.default_rng(np.random.SeedSequence(
        entropy=(seed, 1)))
    probe_pts = weight_rng.uniform(-1.5, 1.5, size=(n_probes, 2))

    n_steps = int(round(horizon / gdt))
    tgrid = np.arange(n_steps + 1) * gdt
    theta = taper_window(tgrid, tau, horizon)

    def table_for(u_fn):
        u0 = GridFunction2D.from_callable(bench.graph.box, n_grid, n_grid, u_fn)
        projector = LevelProjector(bench.graph, u0)
        f0 = projector.project(u0)
        stepper = GraphSPDEStepper(bench.coeffs, bench.gluing, dt=gdt, n_z=n_z)
        vec, cap = stepper.heat.to_vector(f0)
        z_pr = bench.field.value(probe_pts)
        k_pr = np.array([project(bench.graph, p).k for p in probe_pts])
        gv = np.zeros((n_steps + 1, len(probe_pts)))
        gv[0] = stepper.heat.to_graph_function(vec, cap).evaluate(z_pr, k_pr)
        for i in range(1, n_steps + 1):
            vec = stepper.heat.step(vec, cap, gdt)
            gv[i] = stepper.heat.to_graph_function(vec, cap).evaluate(z_pr, k_pr)
        idxp, wp = bilinear_stencil(u0, probe_pts)
        out = []
        for eps in eps_grid:
            solver = pde2d.PlaneSolver(bench.field, u0, eps, gdt)
            v = u0.values.copy()
            pv = np.zeros((n_steps + 1, len(probe_pts)))
            pv[0] = (v.ravel()[idxp] * wp).sum(-1)
            for i in range(1, n_steps + 1):
                v = solver.step_linear(v)
                pv[i] = (v.ravel()[idxp] * wp).sum(-1)
            diff = (pv - gv) * theta[:, None]
            out.append(float(np.max(np.abs(
                np.trapezoid(diff, dx=gdt, axis=0)))))
        return out

    values = table_for(lambda p: np.cos(p[..., 0]))
    control = table_for(lambda p: 0.5 * np.cos(bench.field.value(p)))
    budget = max(control[-1], 1e-6)
    return ConvergenceTable(
        experiment="weak-time-avg",
        eps=list(eps_grid),
        values=values,
        std_errors=[0.0] * len(eps_grid),
        budget=budget,
        extras={"control": control, "tau": tau, "horizon": horizon},
        elapsed=time.perf_counter() - t_start,
    )


def _density_from(name: str, s: float, p: float, K: float):
    if name == "matern":
        return noise.matern_density(s=s, p=p)
    if name == "band_limited":
        return noise.band_limited_density(radius=K, p=p)
    if name == "mixture":
        return noise.mixture_density(radius=K, p=p)
    raise ValueError(f"unknown noise density {name!r}")


def _lipschitz_pair():
    def b_fn(v):
        return -v

    def s_fn(v):
        return 0.5 * v / (1.0 + np.abs(v)) + 0.1

    return b_fn, s_fn


def exp_spde_convergence(
    seed: int = 20240812,
    hamiltonian: str = "quartic_well",
    ham_params: dict | None = None,
    z_max: float = 60.0,
    eps_grid=(0.2, 0.1, 0.05),
    n_grid: int = 160,
    n_z: int = 420,
    dt: float = 2e-3,
    tau: float = 0.3,
    horizon: float = 0.8,
    n_probes: int = 8,
    n_paths: int = 64,
    noise_s: float = 1.2,
    noise_p: float = 2.0,
    noise_K: float = 6.0,
    noise_seed: int | None = None,
    noise_density: str = "matern",
) -> ConvergenceTable:
    """Pathwise SPDE convergence with coupled noise and Lipschitz terms.

    Common random numbers across the eps grid let the paired differences
    carry the verdict; no expectation-level tolerance is claimed beyond the
    monotone trend.
    """
    t_start = time.perf_counter()
    ham_params = ham_params or ({"c": 0.5} if hamiltonian == "quartic_well" else {})
    bench = prepare_bench(hamiltonian, z_max, **ham_params)
    check_period_varies(bench.graph)
    weight = spaces.exp_weight(1.0)
    u0 = gaussian_bump(bench.graph.box, n_grid)
    dens = _density_from(noise_density, noise_s, noise_p, noise_K)
    if noise_seed is None:
        noise_seed = int(np.random.SeedSequence(
            entropy=(seed, 2)).generate_state(1)[0])
    sampler = noise.HomogeneousFieldSampler(dens, u0, K=noise_K, seed=noise_seed)
    projector = LevelProjector(bench.graph, u0)
    norm = PlaneNorm(bench.field, u0, weight)
    probes = tuple(np.linspace(tau, horizon, n_probes))
    b_fn, s_fn = _lipschitz_pair()

    sups = np.zeros((len(eps_grid), n_paths))
    for ei, eps in enumerate(eps_grid):
        for p in range(n_paths):
            cfg = pde2d.SPDEConfig(
                field=bench.field, eps=eps, initial=u0, dt=dt, horizon=horizon,
                reaction=b_fn, dispersion=s_fn, sampler=sampler, trajectory=p,
                snapshot_times=probes,
            )
            run = evolve_coupled(bench.graph, cfg, bench.coeffs, bench.gluing,
                                 n_z=n_z, projector=projector)
            vals = [
                norm.squared(us.values - lift(bench.graph, gs, u0).values)
                for us, gs in zip(run.plane_snapshots, run.graph_snapshots)
            ]
            sups[ei, p] = max(vals)
    values = sups.mean(axis=1)
    ses = sups.std(axis=1, ddof=1) / np.sqrt(n_paths)
    paired = {}
    for ei in range(len(eps_grid) - 1):
        d = sups[ei] - sups[ei + 1]
        paired[f"{eps_grid[ei]:g}->{eps_grid[ei+1]:g}"] = (
            float(d.mean()), float(d.std(ddof=1) / np.sqrt(n_paths)))
    return ConvergenceTable(
        experiment="spde-convergence",
        eps=list(eps_grid),
        values=[float(v) for v in values],
        std_errors=[float(s) for s in ses],
        budget=None,
        check_final=False,
        extras={"paired_differences": paired, "n_paths": n_paths},
        elapsed=time.perf_counter() - t_start,
    )


def exp_linear_weak(
    seed: int = 20240812,
    hamiltonian: str = "quadratic",
    ham_params: dict | None = None,
    z_max: float = 16.0,
    eps_grid=(0.2, 0.1, 0.05, 0.025),
    n_grid: int = 160,
    n_z: int = 420,
    dt: float = 2e-3,
    horizon: float = 1.0,
    n_paths: int = 32,
    noise_s: float = 1.2,
    noise_p: float = 2.0,
    noise_K: float = 6.0,
    noise_seed: int | None = None,
    noise_density: str = "matern",
    budget_paths: int = 10,
) -> ConvergenceTable:
    """Weak (time-integrated) convergence of the additive-noise equation.

    The period may be level-independent here.  The budget combines the
    Monte Carlo error with a coarse-resolution rerun at the final eps.
    """
    t_start = time.perf_counter()
    ham_params = ham_params or {}
    bench = prepare_bench(hamiltonian, z_max, **ham_params)
    weight = spaces.exp_weight(1.0)
    dens = _density_from(noise_density, noise_s, noise_p, noise_K)
    if noise_seed is None:
        noise_seed = int(np.random.SeedSequence(
            entropy=(seed, 3)).generate_state(1)[0])

    def metric_samples(eps, n, dt_run, n_paths_run):
        u0 = gaussian_bump(bench.graph.box, n, center=(0.4, -0.3), width=0.5)
        sampler = noise.HomogeneousFieldSampler(dens, u0, K=noise_K,
                                                seed=noise_seed)
        projector = LevelProjector(bench.graph, u0)
        norm = PlaneNorm(bench.field, u0, weight)
        n_steps = int(round(horizon / dt_run))
        tgrid = np.arange(n_steps + 1) * dt_run
        theta = taper_window(tgrid, 0.0, horizon)
        vals = np.empty(n_paths_run)
        for p in range(n_paths_run):
            acc = np.zeros((n, n))
            lifter_box = {}

            def on_step(i, t, u_vals, vec, stepper):
                lifter = lifter_box.get("l")
                if lifter is None:
                    lifter = SolverLifter(bench.graph, u0, stepper.heat)
                    lifter_box["l"] = lifter
                lifted = lifter.lift(vec, 0.0)
                acc[...] += (u_vals - lifted) * theta[i] * dt_run

            cfg = pde2d.SPDEConfig(
                field=bench.field, eps=eps, initial=u0, dt=dt_run,
                horizon=horizon, dispersion=lambda v: 1.0 + 0.0 * v,
                sampler=sampler, trajectory=p,
            )
            evolve_coupled(bench.graph, cfg, bench.coeffs, bench.gluing,
                           n_z=n_z, projector=projector, on_step=on_step)
            vals[p] = norm.squared(acc)
        return vals

    values, ses = [], []
    for eps in eps_grid:
        v = metric_samples(eps, n_grid, dt, n_paths)
        values.append(float(v.mean()))
        ses.append(float(v.std(ddof=1) / np.sqrt(len(v))))
    coarse = metric_samples(eps_grid[-1], int(n_grid * 0.7), dt * 1.5,
                            budget_paths)
    budget = 3.0 * ses[-1] + abs(float(coarse.mean()) - values[-1])
    return ConvergenceTable(
        experiment="linear-weak",
        eps=list(eps_grid),
        values=values,
        std_errors=ses,
        budget=budget,
        extras={"coarse_mean": float(coarse.mean()), "n_paths": n_paths},
        elapsed=time.perf_counter() - t_start,
    )


def exp_kernel_bound(
    seed: int = 20240812,
    hamiltonian: str = "quadratic",
    ham_params: dict | None = None,
    eps_grid=(0.1, 0.05, 0.02),
    t_grid=(0.25, 1.0),
    n_paths: int = 100000,
    bins: int = 200,
    dt: float = 2e-3,
    hs_eps: float = 0.05,
    hs_times=(0.05, 0.1, 0.2, 0.4),
    hs_grid: int = 96,
    hs_modes: int = 20,
    noise_s: float = 1.2,
    noise_p: float = 2.0,
    noise_K: float = 6.0,
    j_budget: int | None = None,
    cx2_hamiltonian: str = "quartic_well",
    cx2_eps=(0.2, 0.1, 0.05),
    cx2_t: float = 0.3,
    cx2_modes: int | None = None,
    scheme: str = "strang",
) -> KernelBoundReport:
    """Transition-density envelope fit plus the mode-sum diagnostics.

    The envelope constant must cover >= 99% of the above-floor histogram
    bins with one C across the whole eps grid and stay within x2 between
    eps values; the weighted mode sums must scale inside the p-dependent
    band, and the truncated mode sums of the semigroup difference must
    decrease in eps on a shear-mixing landscape.
    """
    t_start = time.perf_counter()
    ham_params = ham_params or {}
    field = make_hamiltonian(hamiltonian, **ham_params)
    kern_seed = int(np.random.SeedSequence(entropy=(seed, 4)).generate_state(1)[0])
    x0 = np.array([1.0, 0.5])

    fitted, kerns = {}, {}
    for eps in eps_grid:
        for t in t_grid:
            kern = kernel_histogram(field, x0, t, eps, n_paths=n_paths,
                                    bins=bins, box=(-4.5, 4.5, -4.5, 4.5),
                                    dt=dt, seed=kern_seed, scheme=scheme)
            fitted[(eps, t)] = fit_kernel_bound_constant(kern, field,
                                                         quantile=0.995)
            kerns[(eps, t)] = kern
    c_global = max(fitted.values())
    coverage = {}
    for key, kern in kerns.items():
        _, t = key
        xs, ys = kern.bin_centers()
        pts = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
        gap2 = (np.sqrt(field.value(pts) + 1.0)
                - np.sqrt(field.value(x0) + 1.0)) ** 2
        counts = kern.density * kern.n_paths * kern.cell_area
        mask = counts >= 5.0
        if not mask.any() or c_global <= 0:
            coverage[key] = 1.0 if not mask.any() else 0.0
            continue
        bound = (c_global / t) * np.exp(-gap2[mask] / (4 * c_global * t))
        coverage[key] = float(np.mean(kern.density[mask] <= bound))

    # weighted mode sums of the semigroup, plane and graph side
    bench = prepare_bench(hamiltonian, 16.0, **ham_params)
    weight = spaces.exp_weight(1.0)
    u0 = GridFunction2D.from_callable(
        bench.graph.box, hs_grid, hs_grid,
        lambda p: np.exp(-((p[..., 0] - 0.3) ** 2 + p[..., 1] ** 2) / 1.2),
    )
    dens = noise.matern_density(s=noise_s, p=noise_p)
    sampler = noise.HomogeneousFieldSampler(dens, u0, K=noise_K,
                                            modes_per_axis=hs_modes, seed=0)
    norm = PlaneNorm(bench.field, u0, weight)
    m_all = sampler.n_basis()
    if j_budget is None:
        j_budget = min(300, int(0.75 * m_all))
    if cx2_modes is None:
        cx2_modes = min(64, m_all)
    fields = sampler.basis_fields(m_all) * u0.values[None, :, :]
    evolved = pde2d.evolve_linear_batch(bench.field, u0, fields,
                                        list(hs_times), eps=hs_eps, dt=2.5e-3)
    hs_sums, tails = [], []
    for t in hs_times:
        contrib = np.array([norm.squared(v) for v in evolved[t]])
        total = float(contrib.sum())
        hs_sums.append(total)
        tails.append(float(contrib[j_budget:].sum() / total))
    hs_slope = float(np.polyfit(np.log(hs_times), np.log(hs_sums), 1)[0])
    band = (-(noise_p - 1) / noise_p - 0.15, 0.0)

    projector = LevelProjector(bench.graph, u0)
    stepper = GraphSPDEStepper(bench.coeffs, bench.gluing, dt=2.5e-3, n_z=300)
    lifter = SolverLifter(bench.graph, u0, stepper.heat)
    graph_sums = []
    tmax = max(hs_times)
    n_steps = int(round(tmax / 2.5e-3))
    keep = {int(round(t / 2.5e-3)): t for t in hs_times}
    vecs = np.stack([stepper.heat.to_vector(projector.project_values(f))[0]
                     for f in fields])
    sums_at = {}
    for i in range(1, n_steps + 1):
        for j in range(len(vecs)):
            vecs[j] = stepper.heat.step(vecs[j], 0.0, 2.5e-3)
        if i in keep:
            sums_at[keep[i]] = float(sum(
                norm.squared(lifter.lift(v, 0.0)) for v in vecs))
    graph_sums = [sums_at[t] for t in hs_times]
    graph_slope = float(np.polyfit(np.log(hs_times), np.log(graph_sums), 1)[0])

    # truncated mode sums of the semigroup difference on a shearing landscape
    cx2_bench = prepare_bench(
        cx2_hamiltonian, 60.0,
        **({"c": 0.5} if cx2_hamiltonian == "quartic_well" else {}))
    u0c = GridFunction2D.from_callable(
        cx2_bench.graph.box, hs_grid, hs_grid,
        lambda p: np.exp(-((p[..., 0] - 0.3) ** 2 + p[..., 1] ** 2) / 1.2),
    )
    sampler_c = noise.HomogeneousFieldSampler(dens, u0c, K=noise_K,
                                              modes_per_axis=hs_modes, seed=0)
    norm_c = PlaneNorm(cx2_bench.field, u0c, spaces.exp_weight(1.0))
    fields_c = sampler_c.basis_fields(cx2_modes) * u0c.values[None, :, :]
    projector_c = LevelProjector(cx2_bench.graph, u0c)
    stepper_c = GraphSPDEStepper(cx2_bench.coeffs, cx2_bench.gluing,
                                 dt=2e-3, n_z=420)
    lifter_c = SolverLifter(cx2_bench.graph, u0c, stepper_c.heat)
    gsteps = int(round(cx2_t / 2e-3))
    graph_ev = []
    for f in fields_c:
        vec, cap = stepper_c.heat.to_vector(projector_c.project_values(f))
        for _ in range(gsteps):
            vec = stepper_c.heat.step(vec, cap, 2e-3)
        graph_ev.append(lifter_c.lift(vec, cap))
    cx2_values = []
    for eps in cx2_eps:
        ev = pde2d.evolve_linear_batch(cx2_bench.field, u0c, fields_c,
                                       [cx2_t], eps=eps, dt=2e-3)[cx2_t]
        cx2_values.append(float(sum(
            norm_c.squared(ev[j] - graph_ev[j]) for j in range(len(fields_c)))))
    cx2_table = ConvergenceTable(
        experiment="kernel-bound/mode-diff",
        eps=list(cx2_eps),
        values=cx2_values,
        std_errors=[0.0] * len(cx2_eps),
        budget=None,
        check_final=False,
    )
    return KernelBoundReport(
        experiment="kernel-bound",
        fitted_c=fitted,
        coverage=coverage,
        hs_times=list(hs_times),
        hs_sums=hs_sums,
        hs_slope=hs_slope,
        slope_band=band,
        tail_fraction=max(tails),
        graph_hs_sums=graph_sums,
        graph_hs_slope=graph_slope,
        cx2_table=cx2_table,
        elapsed=time.perf_counter() - t_start,
    )


EXPERIMENTS = {
    "semigroup-strong": (
        exp_semigroup_strong,
        "pointwise-in-time semigroup convergence (needs z-dependent period)",
    ),
    "weak-time-avg": (
        exp_weak_time_avg,
        "time-averaged semigroup convergence at probe points (period-flat ok)",
    ),
    "spde-convergence": (
        exp_spde_convergence,
        "pathwise SPDE convergence with coupled noise and Lipschitz terms",
    ),
    "linear-weak": (
        exp_linear_weak,
        "weak convergence of the additive-noise linear equation",
    ),
    "kernel-bound": (
        exp_kernel_bound,
        "transition-density envelope fit and weighted mode-sum diagnostics",
    ),
}


def experiment_ids():
    return sorted(EXPERIMENTS)
