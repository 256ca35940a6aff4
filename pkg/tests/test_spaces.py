import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reebflow as rf
from reebflow import spaces
from reebflow.errors import GridMismatchError

from conftest import make_grid


def random_plane_function(graph, rng, n=200):
    """Smooth random field: a few Gaussian bumps with random centers."""
    n_bumps = rng.integers(2, 5)
    r = min(abs(graph.box[0]), abs(graph.box[2]))
    centers = rng.uniform(-0.5 * r, 0.5 * r, size=(n_bumps, 2))
    amps = rng.uniform(-1.0, 1.0, n_bumps)
    widths = rng.uniform(0.4, 1.5, n_bumps)

    def fn(p):
        out = np.zeros(p.shape[:-1])
        for c, a, w in zip(centers, amps, widths):
            d2 = (p[..., 0] - c[0]) ** 2 + (p[..., 1] - c[1]) ** 2
            out += a * np.exp(-d2 / (2 * w**2))
        return out

    return rf.GridFunction2D.from_callable(graph.box, n, n, fn)


def random_graph_function(graph, rng):
    """Smooth random profile of z, shared across edges so vertex continuity
    holds by construction."""
    c = rng.uniform(-1, 1, 4)

    def prof(z, k):
        z = np.asarray(z, dtype=float)
        return c[0] + c[1] * np.cos(z) + c[2] * np.sin(0.7 * z) + c[3] * 0.05 * z

    return rf.GraphFunction.from_callable(graph, prof)


@pytest.fixture(scope="module")
def weight():
    return spaces.exp_weight(1.0)


class TestPlaneNorm:
    def test_zero_function(self, quadratic_graph, weight):
        u = make_grid(quadratic_graph, 100)
        assert spaces.norm_plane(u, weight, quadratic_graph.field) == 0.0

    def test_gaussian_mass(self, quadratic_graph, weight):
        # with the exponential profile and H = |x|^2 the squared norm of 1
        # is the Gaussian integral = pi
        g = quadratic_graph
        u = rf.GridFunction2D.from_callable(
            g.box, 300, 300, lambda p: np.ones(p.shape[:-1])
        )
        val = spaces.norm_plane(u, weight, g.field) ** 2
        assert val == pytest.approx(np.pi, rel=1e-3)

    def test_grid_mismatch_raises(self, quadratic_graph, weight):
        u = make_grid(quadratic_graph, 100)
        v = make_grid(quadratic_graph, 120)
        with pytest.raises(GridMismatchError):
            spaces.inner_plane(u, v, weight, quadratic_graph.field)

    def test_cauchy_schwarz(self, quartic_graph, weight):
        g = quartic_graph
        rng = np.random.default_rng(5)
        for _ in range(20):
            u = random_plane_function(g, rng, n=80)
            v = random_plane_function(g, rng, n=80)
            lhs = spaces.inner_plane(u, v, weight, g.field) ** 2
            rhs = (
                spaces.inner_plane(u, u, weight, g.field)
                * spaces.inner_plane(v, v, weight, g.field)
            )
            assert lhs <= rhs * (1 + 1e-12)


class TestGraphNorm:
    def test_zero(self, double_well_graph, weight):
        f = rf.GraphFunction.constant(double_well_graph, 0.0)
        assert spaces.norm_graph(f, weight, double_well_graph) == 0.0

    def test_admissibility(self, all_graphs, weight):
        for g in all_graphs.values():
            mass = spaces.admissibility_integral(weight, g)
            assert np.isfinite(mass) and mass > 0
            assert spaces.admissibility_tail_fraction(weight, g) < 1e-4

    def test_admissibility_tail_at_experiment_cap(self, weight):
        # the experiment caps are placed high enough that the tail beyond
        # the cap is a negligible fraction of the weighted mass
        g = rf.build_graph(rf.make_hamiltonian("quadratic"), z_max=16.0)
        assert spaces.admissibility_tail_fraction(weight, g) < 1e-6

    def test_constant_mass_matches_plane(self, quadratic_graph, weight):
        # graph mass of 1 equals plane mass of 1 (co-area at work)
        g = quadratic_graph
        u = rf.GridFunction2D.from_callable(
            g.box, 300, 300, lambda p: np.ones(p.shape[:-1])
        )
        plane = spaces.norm_plane(u, weight, g.field) ** 2
        f = rf.GraphFunction.constant(g, 1.0)
        graph_mass = spaces.norm_graph(f, weight, g) ** 2
        assert graph_mass == pytest.approx(plane, rel=2e-3)


class TestProjectionCalculus:
    """The four projection/lift relations at discretization accuracy."""

    N_GRID = 200

    def test_lift_isometry_random(self, all_graphs, weight):
        rng = np.random.default_rng(11)
        for g in all_graphs.values():
            grid = make_grid(g, self.N_GRID)
            for _ in range(5):
                f = random_graph_function(g, rng)
                lifted = rf.lift(g, f, grid)
                a = spaces.norm_plane(lifted, weight, g.field)
                b = spaces.norm_graph(f, weight, g)
                assert a == pytest.approx(b, rel=1e-2)

    def test_average_contraction_random(self, all_graphs, weight):
        rng = np.random.default_rng(12)
        for g in all_graphs.values():
            for _ in range(5):
                u = random_plane_function(g, rng, n=self.N_GRID)
                f = rf.project_function(g, u)
                a = spaces.norm_graph(f, weight, g)
                b = spaces.norm_plane(u, weight, g.field)
                assert a <= b * (1 + 1e-2)

    def test_duality_pairing_random(self, all_graphs, weight):
        rng = np.random.default_rng(13)
        for g in all_graphs.values():
            for _ in range(5):
                u = random_plane_function(g, rng, n=self.N_GRID)
                f = random_graph_function(g, rng)
                lhs, rhs = spaces.duality_check(f, u, weight, g)
                scale = max(abs(lhs), abs(rhs), 1e-12)
                assert abs(lhs - rhs) / scale < 1e-2

    def test_product_rule_random(self, all_graphs):
        # averaging the product of a lifted function with u equals the
        # product of the graph function with the average of u
        rng = np.random.default_rng(14)
        for g in all_graphs.values():
            grid = make_grid(g, self.N_GRID)
            for _ in range(3):
                u = random_plane_function(g, rng, n=self.N_GRID)
                f = random_graph_function(g, rng)
                lifted = rf.lift(g, f, grid)
                lhs = rf.project_function(g, lifted * u)
                rhs = f * rf.project_function(g, u)
                for e in g.edges:
                    sel = e.z_nodes < g.z_max - 1.0
                    diff = np.abs(lhs.edge_values[e.k] - rhs.edge_values[e.k])[sel]
                    scale = max(1e-6, np.max(np.abs(rhs.edge_values[e.k])))
                    assert np.max(diff) / scale < 2e-2

    def test_duality_of_constants_is_total_mass(self, quartic_graph, weight):
        g = quartic_graph
        u = rf.GridFunction2D.from_callable(
            g.box, 240, 240, lambda p: np.ones(p.shape[:-1])
        )
        f = rf.GraphFunction.constant(g, 1.0)
        lhs, rhs = spaces.duality_check(f, u, weight, g)
        mass = spaces.admissibility_integral(weight, g)
        assert lhs == pytest.approx(mass, rel=2e-3)
        assert rhs == pytest.approx(mass, rel=2e-3)


@settings(max_examples=25, deadline=None)
@given(
    c0=st.floats(-2, 2),
    c1=st.floats(-2, 2),
    rate=st.floats(0.3, 2.0),
)
def test_graph_norm_scales_quadratically(c0, c1, rate):
    # |a f| = |a| |f| for the graph norm, any admissible weight profile
    g = test_graph_norm_scales_quadratically.graph
    w = spaces.exp_weight(rate)
    f = rf.GraphFunction.from_callable(g, lambda z, k: c0 + 0.1 * z)
    n1 = spaces.norm_graph(f * c1, w, g)
    n2 = abs(c1) * spaces.norm_graph(f, w, g)
    assert n1 == pytest.approx(n2, rel=1e-12, abs=1e-12)


@pytest.fixture(autouse=True, scope="module")
def _attach_graph(quadratic_graph):
    test_graph_norm_scales_quadratically.graph = quadratic_graph
    yield
