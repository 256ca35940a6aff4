import numpy as np
import pytest

import reebflow as rf
from reebflow.errors import DegenerateCriticalError
from reebflow.flow import advect

BOX = (-6.0, 6.0, -6.0, 6.0)


def sample_points(rng, n=200, r=3.0):
    return rng.uniform(-r, r, size=(n, 2))


@pytest.mark.parametrize("name,params", [
    ("quadratic", {}),
    ("quartic_well", {"c": 0.5}),
    ("double_well", {}),
])
def test_gradient_orthogonal_to_rotation(name, params):
    f = rf.make_hamiltonian(name, **params)
    rng = np.random.default_rng(7)
    pts = sample_points(rng)
    dots = np.einsum("ij,ij->i", f.gradient(pts), f.perp_gradient(pts))
    assert np.all(dots == 0.0)  # exact by construction


@pytest.mark.parametrize("name,params", [
    ("quadratic", {}),
    ("quartic_well", {"c": 0.5}),
    ("double_well", {}),
])
def test_laplacian_consistent_with_finite_differences(name, params):
    f = rf.make_hamiltonian(name, **params)
    rng = np.random.default_rng(8)
    pts = sample_points(rng, n=100)
    h = 1e-4
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    fd = (
        f.value(pts + ex) + f.value(pts - ex)
        + f.value(pts + ey) + f.value(pts - ey)
        - 4 * f.value(pts)
    ) / h**2
    assert np.max(np.abs(fd - f.laplacian(pts))) < 1e-5


@pytest.mark.parametrize("name,params", [
    ("quadratic", {}),
    ("quartic_well", {"c": 0.5}),
    ("double_well", {}),
])
def test_rotation_field_is_divergence_free(name, params):
    f = rf.make_hamiltonian(name, **params)
    rng = np.random.default_rng(9)
    pts = sample_points(rng, n=100)
    h = 1e-5
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    div = (
        (f.perp_gradient(pts + ex)[:, 0] - f.perp_gradient(pts - ex)[:, 0])
        + (f.perp_gradient(pts + ey)[:, 1] - f.perp_gradient(pts - ey)[:, 1])
    ) / (2 * h)
    assert np.max(np.abs(div)) < 1e-6


def test_minimum_is_zero_on_builtins():
    for name in rf.builtin_names():
        f = rf.make_hamiltonian(name)
        rng = np.random.default_rng(3)
        pts = sample_points(rng, n=5000, r=4.0)
        vals = f.value(pts)
        assert vals.min() >= 0.0


def test_quadratic_critical_points():
    f = rf.make_hamiltonian("quadratic")
    pts = rf.find_critical_points(f, BOX)
    assert len(pts) == 1
    (p,) = pts
    assert p.kind == "minimum"
    assert p.value == pytest.approx(0.0, abs=1e-12)
    assert np.hypot(*p.location) < 1e-9


def test_double_well_critical_points():
    f = rf.make_hamiltonian("double_well")
    pts = rf.find_critical_points(f, BOX)
    assert len(pts) == 3
    minima = [p for p in pts if p.kind == "minimum"]
    saddles = [p for p in pts if p.kind == "saddle"]
    assert len(minima) == 2 and len(saddles) == 1
    locs = sorted(m.location[0] for m in minima)
    assert locs == pytest.approx([-1.0, 1.0], abs=1e-9)
    assert all(abs(m.value) < 1e-12 for m in minima)
    s = saddles[0]
    assert s.value == pytest.approx(1.0, abs=1e-12)
    # eigenvalues of the Hessian at the saddle are -4 and 2
    assert s.hessian_eigs == pytest.approx((-4.0, 2.0), abs=1e-8)


def test_quartic_single_minimum():
    f = rf.make_hamiltonian("quartic_well", c=0.5)
    pts = rf.find_critical_points(f, BOX)
    assert len(pts) == 1
    assert pts[0].kind == "minimum"
    assert np.hypot(*pts[0].location) < 1e-9


def test_degenerate_critical_point_rejected():
    # H = |x|^4 has a degenerate minimum at the origin
    def val(x):
        return (x[..., 0] ** 2 + x[..., 1] ** 2) ** 2

    def grad(x):
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        return 4.0 * r2[..., None] * x

    def lap(x):
        return 16.0 * (x[..., 0] ** 2 + x[..., 1] ** 2)

    f = rf.HamiltonianField("flat", val, grad, lap)
    with pytest.raises(DegenerateCriticalError):
        rf.find_critical_points(f, BOX)


def test_confinement_margins():
    f = rf.make_hamiltonian("quadratic")
    rep = rf.verify_confinement(f, BOX, 1.0)
    assert rep.growth_ok and rep.gradient_ok and rep.laplacian_ok
    assert rep.margin_a >= 1.0 - 1e-9

    dw = rf.make_hamiltonian("double_well")
    rep = rf.verify_confinement(dw, (-8, 8, -8, 8), 3.0)
    assert rep.growth_ok and rep.gradient_ok
    # lap H = 12 x1^2 - 2 is negative along the x2 axis at any radius, so
    # the Laplacian lower bound genuinely fails for this landscape
    assert not rep.laplacian_ok


def test_confinement_fails_for_linear_growth():
    def val(x):
        return x[..., 0]

    def grad(x):
        out = np.zeros_like(x)
        out[..., 0] = 1.0
        return out

    def lap(x):
        return np.zeros(x.shape[:-1])

    f = rf.HamiltonianField("tilt", val, grad, lap)
    rep = rf.verify_confinement(f, BOX, 1.0)
    assert not rep.growth_ok


def test_user_field_shifted_to_zero_minimum():
    f = rf.from_callables(
        "offset_bowl",
        lambda x: x[..., 0] ** 2 + x[..., 1] ** 2 + 3.0,
        lambda x: 2.0 * x,
        lambda x: np.full(x.shape[:-1], 4.0),
    )
    assert f.value(np.zeros(2)) == pytest.approx(0.0, abs=1e-12)
    assert f.offset == pytest.approx(3.0, abs=1e-6)


def test_advection_conserves_energy_over_unit_time():
    f = rf.make_hamiltonian("quadratic")
    x0 = np.array([[1.3, 0.4]])
    x1 = advect(f, x0, 1.0, max_step=0.02)
    assert abs(f.value(x1)[0] - f.value(x0)[0]) < 1e-8
