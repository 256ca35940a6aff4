import numpy as np
import pytest

import reebflow as rf
from reebflow import noise, pde2d, sde, spaces
from reebflow.errors import BlowUpError


def gaussian_bump(box, n, s0=0.5, center=(0.6, -0.2), amp=1.0):
    def fn(p):
        d2 = (p[..., 0] - center[0]) ** 2 + (p[..., 1] - center[1]) ** 2
        return amp * np.exp(-d2 / (2 * s0**2))

    return rf.GridFunction2D.from_callable(box, n, n, fn)


@pytest.fixture(scope="module")
def quad():
    return rf.make_hamiltonian("quadratic")


class TestDeterministic:
    def test_constants_preserved(self, quad):
        box = (-4, 4, -4, 4)
        u0 = rf.GridFunction2D.from_callable(box, 96, 96,
                                             lambda p: np.full(p.shape[:-1], 0.7))
        cfg = pde2d.SPDEConfig(field=quad, eps=0.05, initial=u0, dt=5e-3,
                               horizon=0.2)
        out = pde2d.evolve_deterministic(cfg)
        assert np.max(np.abs(out.snapshots[-1].values - 0.7)) < 1e-12

    def test_heat_kernel_spread(self, quad):
        # advection off: per-axis variance of the profile grows by t
        box = (-5, 5, -5, 5)
        s0 = 0.5
        u0 = gaussian_bump(box, 200, s0=s0, center=(0.0, 0.0))
        t = 0.5
        cfg = pde2d.SPDEConfig(field=quad, eps=None, initial=u0, dt=2.5e-3,
                               horizon=t)
        out = pde2d.evolve_deterministic(cfg)
        u = out.snapshots[-1]
        pts = u.points()
        mass = u.values.sum()
        var_x = (u.values * pts[..., 0] ** 2).sum() / mass
        assert var_x == pytest.approx(s0**2 + t, rel=0.01)

    def test_level_constant_invariant_under_advection(self, quad):
        from reebflow.pde2d import _AdvectionMap
        box = (-4, 4, -4, 4)
        u0 = rf.GridFunction2D.from_callable(
            box, 160, 160, lambda p: np.cos(quad.value(p))
        )
        amap = _AdvectionMap(quad, u0, eps=0.05, dt=5e-3, flow_substep=0.01,
                             kind="cubic")
        moved = amap.apply(u0.values)
        # level sets are transported onto themselves; only interpolation acts
        interior = quad.value(u0.points()) < 12.0
        assert np.max(np.abs(moved - u0.values)[interior]) < 2e-3

    def test_semigroup_matches_monte_carlo(self, quartic_graph):
        g = quartic_graph
        field = g.field
        u0 = gaussian_bump(g.box, 160, s0=0.7, center=(0.5, 0.3))
        t, eps = 0.3, 0.1
        evolved = pde2d.semigroup_action(field, u0, t, eps, dt=2e-3)
        rng = np.random.default_rng(0)
        for _ in range(3):
            x = rng.uniform(-1.0, 1.0, 2)
            pde_val = float(evolved.interpolate(x[None, :])[0])
            mc = sde.semigroup_mc(field, u0, x, t, eps, n_paths=40000,
                                  dt=1e-3, seed=17)
            assert abs(pde_val - mc.estimate) < 3 * mc.std_error + 2e-3

    def test_blowup_guard(self, quad):
        box = (-4, 4, -4, 4)
        u0 = gaussian_bump(box, 64, s0=0.5)
        cfg = pde2d.SPDEConfig(field=quad, eps=None, initial=u0, dt=1e-2,
                               horizon=1.0, reaction=lambda v: 30.0 * v,
                               blowup_guard=1e3)
        with pytest.raises(BlowUpError):
            pde2d.evolve_deterministic(cfg)

    def test_reaction_cfl_validated(self, quad):
        box = (-4, 4, -4, 4)
        u0 = gaussian_bump(box, 64, s0=0.5)
        cfg = pde2d.SPDEConfig(field=quad, eps=None, initial=u0, dt=0.5,
                               horizon=1.0, reaction=lambda v: 30.0 * v)
        with pytest.raises(ValueError):
            cfg.validate()


class TestStochastic:
    def test_zero_dispersion_reduces_to_deterministic(self, quad):
        box = (-4, 4, -4, 4)
        u0 = gaussian_bump(box, 96, s0=0.6)
        dens = noise.band_limited_density(radius=1.0)
        sampler = noise.HomogeneousFieldSampler(dens, u0, K=1.0, seed=3)
        base = pde2d.SPDEConfig(field=quad, eps=0.1, initial=u0, dt=5e-3,
                                horizon=0.1, reaction=lambda v: -v)
        det = pde2d.evolve_deterministic(base)
        noisy = pde2d.SPDEConfig(field=quad, eps=0.1, initial=u0, dt=5e-3,
                                 horizon=0.1, reaction=lambda v: -v,
                                 dispersion=lambda v: 0.0 * v, sampler=sampler)
        sto = pde2d.evolve_spde(noisy)
        assert np.array_equal(det.snapshots[-1].values, sto.snapshots[-1].values)

    def test_pathwise_reproducibility(self, quad):
        box = (-4, 4, -4, 4)
        u0 = gaussian_bump(box, 96, s0=0.6)
        dens = noise.band_limited_density(radius=1.0)
        sampler = noise.HomogeneousFieldSampler(dens, u0, K=1.0, seed=5)
        cfg = dict(field=quad, eps=0.1, initial=u0, dt=5e-3, horizon=0.1,
                   dispersion=lambda v: 0.5 + 0.0 * v, sampler=sampler,
                   trajectory=7)
        a = pde2d.evolve_spde(pde2d.SPDEConfig(**cfg))
        b = pde2d.evolve_spde(pde2d.SPDEConfig(**cfg))
        assert np.array_equal(a.snapshots[-1].values, b.snapshots[-1].values)
        c = pde2d.evolve_spde(pde2d.SPDEConfig(**{**cfg, "trajectory": 8}))
        assert not np.array_equal(a.snapshots[-1].values, c.snapshots[-1].values)

    @pytest.mark.slow
    def test_ito_isometry_additive(self, quad):
        # additive noise from zero initial data: the mean squared weighted
        # norm equals the step-level mode sum (discrete stochastic
        # convolution is exactly a sum of independent mode responses)
        box = (-4, 4, -4, 4)
        n = 96
        u0 = rf.GridFunction2D.from_callable(box, n, n,
                                             lambda p: np.zeros(p.shape[:-1]))
        dens = noise.band_limited_density(radius=1.0)
        sampler = noise.HomogeneousFieldSampler(dens, u0, K=1.0,
                                                modes_per_axis=12, seed=11)
        eps, dt, t = 0.1, 5e-3, 0.1
        w = spaces.exp_weight(1.0)
        gamma = w.h(quad.value(u0.points()))
        area = u0.cell_area

        def weighted_sq(vals):
            return float(area * np.sum(vals * vals * gamma))

        # prediction: sum over steps and modes of |L^i e_j|^2
        n_steps = int(round(t / dt))
        m = sampler.n_basis()
        fields = sampler.basis_fields(m)
        solver = pde2d.PlaneSolver(quad, u0, eps, dt)
        predicted = 0.0
        cur = fields.copy()
        for i in range(n_steps):
            if i > 0:
                for j in range(m):
                    cur[j] = solver.step_linear(cur[j])
            predicted += dt * sum(weighted_sq(cur[j]) for j in range(m))

        n_paths = 200
        vals = np.empty(n_paths)
        for p in range(n_paths):
            cfg = pde2d.SPDEConfig(field=quad, eps=eps, initial=u0, dt=dt,
                                   horizon=t, dispersion=lambda v: 1.0 + 0.0 * v,
                                   sampler=sampler, trajectory=p)
            out = pde2d.evolve_spde(cfg)
            vals[p] = weighted_sq(out.snapshots[-1].values)
        est = vals.mean()
        se = vals.std(ddof=1) / np.sqrt(n_paths)
        assert abs(est - predicted) < 3 * se
