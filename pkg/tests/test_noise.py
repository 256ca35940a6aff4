import numpy as np
import pytest
from scipy.special import j1

import reebflow as rf
from reebflow import noise
from reebflow.errors import EmptyModeSetError
from reebflow.reeb import LevelProjector


def flat_grid(box=(-4, 4, -4, 4), n=96):
    return rf.GridFunction2D.from_callable(box, n, n, lambda p: np.zeros(p.shape[:-1]))


@pytest.fixture(scope="module")
def band_sampler():
    dens = noise.band_limited_density(radius=1.0)
    return noise.HomogeneousFieldSampler(dens, flat_grid(), K=1.0, seed=42)


@pytest.fixture(scope="module")
def matern_sampler():
    dens = noise.matern_density(s=1.2, p=2.0)
    return noise.HomogeneousFieldSampler(dens, flat_grid(), K=6.0, seed=7)


class TestDensities:
    def test_symmetry(self):
        rng = np.random.default_rng(0)
        xi = rng.normal(size=(50, 2)) * 3
        for name in ("matern", "band_limited", "mixture"):
            m = noise.make_density(name)
            assert np.allclose(m(xi), m(-xi))

    def test_lp_norm_finite(self):
        m = noise.matern_density(s=1.2, p=2.0)
        val = noise.lp_norm(m, K=8.0)
        assert np.isfinite(val) and val > 0

    def test_truncation_band_limited(self):
        m = noise.band_limited_density(radius=1.0)
        K = noise.truncation_radius(m)
        assert K >= 1.0

    def test_heavy_tail_hits_cap(self):
        m = noise.matern_density(s=1.2)
        assert noise.truncation_radius(m, K_cap=64.0) == 64.0


class TestSynthesis:
    def test_field_is_real(self, band_sampler):
        stream = band_sampler.open_stream(0)
        w = stream.increment_complex(0.5)
        assert np.max(np.abs(w.imag)) < 1e-12 * max(1.0, np.max(np.abs(w.real)))

    def test_mean_zero_and_variance_slope(self, matern_sampler):
        # pointwise variance of the увеличение scales linearly in dt with
        # slope q(0) = truncated spectral mass
        s = matern_sampler
        stream = s.open_stream(1)
        q0 = s.variance_at_point()
        rng_checks = []
        for dt in (0.03, 0.06):
            draws = np.stack(
                [stream.increment(dt).values for _ in range(160)], axis=0
            )
            var = draws.var(axis=0).mean()
            rng_checks.append(var / dt)
        for ratio in rng_checks:
            # n=160 samples of a chi^2 average over correlated cells: allow 15%
            assert abs(ratio - q0) / q0 < 0.15

    def test_reproducible_given_seed(self, matern_sampler):
        a = matern_sampler.open_stream(3).increment(0.1)
        b = matern_sampler.open_stream(3).increment(0.1)
        assert np.array_equal(a.values, b.values)
        c = matern_sampler.open_stream(4).increment(0.1)
        assert not np.array_equal(a.values, c.values)

    def test_empty_mode_set(self):
        dens = noise.SpectralDensity(lambda xi: np.zeros(xi.shape[:-1]), 2.0)
        with pytest.raises(EmptyModeSetError):
            noise.HomogeneousFieldSampler(dens, flat_grid(), K=1.0)

    def test_band_limited_covariance_matches_bessel(self, band_sampler):
        # lag covariance of the synthesized field vs the closed form
        # integral of cos(xi . r) over the unit disk = 2 pi J1(|r|)/|r|
        s = band_sampler
        stream = s.open_stream(9)
        dt = 1.0
        n_draws = 400
        g = s.grid
        i0, j0 = g.nx // 2, g.ny // 2
        lag_cells = [4, 9, 15]
        prods = np.zeros((n_draws, len(lag_cells)))
        for d in range(n_draws):
            w = stream.increment(dt).values
            for li, lc in enumerate(lag_cells):
                prods[d, li] = w[i0, j0] * w[i0 + lc, j0]
        est = prods.mean(axis=0)
        se = prods.std(axis=0) / np.sqrt(n_draws)
        for li, lc in enumerate(lag_cells):
            r = lc * g.hx
            exact = 2 * np.pi * j1(r) / r
            # compare against the sampler's own truncated quadrature too
            disc = s.covariance_function(np.array([[r, 0.0]]))[0]
            assert abs(disc - exact) < 0.05 * abs(exact) + 0.02
            assert abs(est[li] - disc) < 3 * se[li] + 1e-9


class TestMixture:
    def test_atom_contribution_to_covariance(self):
        # finite spectral part: each atom adds w cos(xi . r) to the
        # covariance and w to the pointwise variance rate
        atom_xi = np.array([0.8, -0.4])
        dens = noise.mixture_density(radius=1.0, atoms=((atom_xi, 0.7),))
        grid = flat_grid(n=64)
        s = noise.HomogeneousFieldSampler(dens, grid, K=1.0, seed=5)
        base = noise.HomogeneousFieldSampler(
            noise.band_limited_density(radius=1.0), grid, K=1.0, seed=5)
        assert s.variance_at_point() == pytest.approx(
            base.variance_at_point() + 0.7, rel=1e-12)
        r = np.array([[0.5, 0.2]])
        got = s.covariance_function(r)[0]
        want = base.covariance_function(r)[0] + 0.7 * np.cos(r[0] @ atom_xi)
        assert got == pytest.approx(want, rel=1e-12)

    def test_mixture_sampling_variance(self):
        dens = noise.mixture_density(radius=1.0)
        grid = flat_grid(n=48)
        s = noise.HomogeneousFieldSampler(dens, grid, K=1.0, seed=6)
        stream = s.open_stream(0)
        dt = 0.5
        draws = np.stack([stream.increment(dt).values for _ in range(300)])
        var = draws.var(axis=0).mean() / dt
        assert var == pytest.approx(s.variance_at_point(), rel=0.15)


class TestCovarianceForm:
    def test_positive_semidefinite(self, matern_sampler):
        g = matern_sampler.grid
        psi = rf.GridFunction2D.from_callable(
            g.box, g.nx, g.ny,
            lambda p: np.exp(-(p[..., 0] ** 2 + p[..., 1] ** 2)),
        )
        assert matern_sampler.covariance_form(psi, psi) >= 0

    def test_translation_invariance(self, matern_sampler):
        g = matern_sampler.grid
        shift_cells = 6
        shift = shift_cells * g.hx

        def bump(p, cx):
            return np.exp(-((p[..., 0] - cx) ** 2 + p[..., 1] ** 2) / 0.8)

        psi0 = rf.GridFunction2D.from_callable(g.box, g.nx, g.ny, lambda p: bump(p, -0.8))
        phi0 = rf.GridFunction2D.from_callable(g.box, g.nx, g.ny, lambda p: bump(p, 0.4))
        psi1 = rf.GridFunction2D.from_callable(g.box, g.nx, g.ny, lambda p: bump(p, -0.8 + shift))
        phi1 = rf.GridFunction2D.from_callable(g.box, g.nx, g.ny, lambda p: bump(p, 0.4 + shift))
        q0 = matern_sampler.covariance_form(psi0, phi0)
        q1 = matern_sampler.covariance_form(psi1, phi1)
        assert q1 == pytest.approx(q0, rel=1e-3)

    def test_mc_pairing_matches_quadrature(self, matern_sampler):
        s = matern_sampler
        g = s.grid

        def bump(p, cx, w):
            return np.exp(-((p[..., 0] - cx) ** 2 + p[..., 1] ** 2) / w)

        psi = rf.GridFunction2D.from_callable(g.box, g.nx, g.ny, lambda p: bump(p, -0.5, 1.0))
        phi = rf.GridFunction2D.from_callable(g.box, g.nx, g.ny, lambda p: bump(p, 0.3, 0.7))
        q = s.covariance_form(psi, phi)
        stream = s.open_stream(17)
        t = 1.0
        n = 3000
        vals = np.empty(n)
        area = g.cell_area
        for i in range(n):
            w = stream.increment(t).values
            vals[i] = (np.sum(w * psi.values) * area) * (np.sum(w * phi.values) * area) / t
        est = vals.mean()
        se = vals.std() / np.sqrt(n)
        assert abs(est - q) < 3 * se


class TestBasisFields:
    def test_basis_normalization(self, matern_sampler):
        # the two strongest basis fields carry the largest amplitude
        s = matern_sampler
        fields = s.basis_fields(4)
        assert fields.shape == (4, s.grid.nx, s.grid.ny)
        amps = np.sort(s.amplitudes.reshape(-1))[::-1]
        assert np.max(np.abs(fields[0])) == pytest.approx(np.sqrt(2) * amps[0], rel=1e-12)

    def test_noise_expands_in_basis(self, matern_sampler):
        # the increment variance of the spectral pairing reproduces the sum
        # of squared basis amplitudes (Parseval at the mode level)
        s = matern_sampler
        total = float(np.sum(2 * (np.sort(s.amplitudes.reshape(-1))[::-1] ** 2)[:8] / 2))
        fields = s.basis_fields(16)
        q0_partial = float(np.sum(fields[:, 0, 0] ** 2)) / 2  # cos^2 + sin^2 at a point
        assert q0_partial <= s.variance_at_point() + 1e-12
        assert total <= s.variance_at_point() + 1e-12


class TestGraphProjection:
    def test_constant_projects_to_constant(self, quadratic_graph):
        g = quadratic_graph
        grid = rf.GridFunction2D.from_callable(
            g.box, 80, 80, lambda p: np.full(p.shape[:-1], 1.7)
        )
        f = noise.project_increment(g, grid)
        for vals in f.edge_values:
            assert np.max(np.abs(vals - 1.7)) < 1e-12

    def test_linearity(self, quadratic_graph):
        g = quadratic_graph
        rng = np.random.default_rng(3)
        a = rf.GridFunction2D(g.box, rng.normal(size=(80, 80)))
        b = rf.GridFunction2D(g.box, rng.normal(size=(80, 80)))
        proj = LevelProjector(g, a)
        fa = proj.project_values(a.values)
        fb = proj.project_values(b.values)
        fab = proj.project_values(a.values + 2.0 * b.values)
        for k in range(len(g.edges)):
            assert np.allclose(
                fab.edge_values[k], fa.edge_values[k] + 2 * fb.edge_values[k]
            )

    def test_projected_variance_matches_quadrature(self, quadratic_graph):
        # var of the graph noise at a node = dt * sum over modes of the
        # squared level averages of the basis fields
        g = quadratic_graph
        grid = flat_grid(g.box, 96)
        dens = noise.band_limited_density(radius=1.5)
        s = noise.HomogeneousFieldSampler(dens, grid, K=1.5, seed=11)
        proj = LevelProjector(g, grid)

        n_modes = s.n_basis()
        fields = s.basis_fields(n_modes)
        node = 16  # an interior node of the single edge
        acc = 0.0
        for i in range(n_modes):
            fproj = proj.project_values(fields[i])
            acc += fproj.edge_values[0][node] ** 2
        dt = 0.25
        predicted = acc * dt

        stream = s.open_stream(23)
        n = 900
        vals = np.empty(n)
        for i in range(n):
            w = stream.increment(dt)
            vals[i] = proj.project_values(w.values).edge_values[0][node]
        est = vals.var()
        se_var = vals.var() * np.sqrt(2.0 / (n - 1))
        assert abs(est - predicted) < 3 * se_var
