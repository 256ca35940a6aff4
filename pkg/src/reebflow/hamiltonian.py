"""Closed-form planar Hamiltonians with exact derivatives.

A field bundles the scalar value with its gradient, perpendicular gradient,
Hessian and Laplacian, all as closed-form vectorized evaluators.  Contour
tracing, stiff advection and coefficient assembly all consume these exact
derivatives; nothing in the package differentiates a black box numerically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .errors import DegenerateCriticalError

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-12
DEDUP_RADIUS = 1e-6
VALUE_SEP_TOL = 1e-9
DEGENERATE_TOL = 1e-6

Array = np.ndarray


@dataclass(frozen=True)
class HamiltonianField:
    """Energy landscape on the plane.

    ``value``, ``gradient``, ``hessian`` and ``laplacian`` accept points of
    shape (..., 2) and broadcast.  The perpendicular gradient is derived from
    ``gradient`` by exact component swap, so orthogonality holds to the last
    bit.  The global minimum is normalized to zero (``offset`` records the
    shift applied to user-supplied fields).
    """

    name: str
    value: Callable[[Array], Array]
    gradient: Callable[[Array], Array]
    laplacian: Callable[[Array], Array]
    hessian: Callable[[Array], Array] | None = None
    params: dict = dc_field(default_factory=dict)
    offset: float = 0.0

    def perp_gradient(self, x: Array) -> Array:
        g = self.gradient(x)
        out = np.empty_like(g)
        out[..., 0] = g[..., 1]
        out[..., 1] = -g[..., 0]
        return out

    def grad_norm(self, x: Array) -> Array:
        g = self.gradient(x)
        return np.sqrt(g[..., 0] ** 2 + g[..., 1] ** 2)

    def hessian_fd(self, x: Array, h: float = 1e-6) -> Array:
        """Central differences of the exact gradient; used when no
        closed-form Hessian was supplied."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (2, 2))
        for j in range(2):
            dx = np.zeros(2)
            dx[j] = h
            out[..., :, j] = (self.gradient(x + dx) - self.gradient(x - dx)) / (2 * h)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def hessian_at(self, x: Array) -> Array:
        if self.hessian is not None:
            return self.hessian(x)
        return self.hessian_fd(x)


@dataclass(frozen=True)
class CriticalPoint:
    location: tuple[float, float]
    value: float
    kind: str  # "minimum" | "maximum" | "saddle"
    hessian_eigs: tuple[float, float]


def _r2(x: Array) -> Array:
    return x[..., 0] ** 2 + x[..., 1] ** 2


def quadratic() -> HamiltonianField:
    """H = |x|^2, circular level sets, rotation period pi at every level."""

    def val(x):
        return _r2(np.asarray(x, float))

    def grad(x):
        return 2.0 * np.asarray(x, float)

    def lap(x):
        x = np.asarray(x, float)
        return np.full(x.shape[:-1], 4.0)

    def hess(x):
        x = np.asarray(x, float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 2.0
        out[..., 1, 1] = 2.0
        return out

    return HamiltonianField("quadratic", val, grad, lap, hess)


def quartic_well(c: float = 0.5) -> HamiltonianField:
    """H = |x|^2 + c|x|^4.  Radial but with a z-dependent rotation period,
    which makes it the workhorse for the strictly-monotone-period regime."""
    if c <= 0:
        raise ValueError("quartic coefficient must be positive")

    def val(x):
        r2 = _r2(np.asarray(x, float))
        return r2 + c * r2**2

    def grad(x):
        x = np.asarray(x, float)
        r2 = _r2(x)
        return (2.0 + 4.0 * c * r2)[..., None] * x

    def lap(x):
        r2 = _r2(np.asarray(x, float))
        return 4.0 + 16.0 * c * r2

    def hess(x):
        x = np.asarray(x, float)
        r2 = _r2(x)
        out = np.zeros(x.shape[:-1] + (2, 2))
        diag = 2.0 + 4.0 * c * r2
        out[..., 0, 0] = diag + 8.0 * c * x[..., 0] ** 2
        out[..., 1, 1] = diag + 8.0 * c * x[..., 1] ** 2
        out[..., 0, 1] = out[..., 1, 0] = 8.0 * c * x[..., 0] * x[..., 1]
        return out

    return HamiltonianField("quartic_well", val, grad, lap, hess, params={"c": c})


def double_well() -> HamiltonianField:
    """H = (x1^2 - 1)^2 + x2^2.  Two wells at (+-1, 0) joined through the
    saddle at the origin; the canonical three-edge graph."""

    def val(x):
        x = np.asarray(x, float)
        return (x[..., 0] ** 2 - 1.0) ** 2 + x[..., 1] ** 2

    def grad(x):
        x = np.asarray(x, float)
        out = np.empty_like(x)
        out[..., 0] = 4.0 * x[..., 0] * (x[..., 0] ** 2 - 1.0)
        out[..., 1] = 2.0 * x[..., 1]
        return out

    def lap(x):
        x = np.asarray(x, float)
        return 12.0 * x[..., 0] ** 2 - 2.0

    def hess(x):
        x = np.asarray(x, float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 12.0 * x[..., 0] ** 2 - 4.0
        out[..., 1, 1] = 2.0
        return out

    return HamiltonianField("double_well", val, grad, lap, hess)


_BUILTINS = {
    "quadratic": quadratic,
    "quartic_well": quartic_well,
    "double_well": double_well,
}


def make_hamiltonian(name: str, **params) -> HamiltonianField:
    """Builtin factory used by config files (``hamiltonian.name`` plus
    ``hamiltonian.params.*``)."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown hamiltonian {name!r}; builtins: {sorted(_BUILTINS)}")
    return factory(**params)


def builtin_names() -> list[str]:
    return sorted(_BUILTINS)


def from_callables(
    name: str,
    value: Callable[[Array], Array],
    gradient: Callable[[Array], Array],
    laplacian: Callable[[Array], Array],
    hessian: Callable[[Array], Array] | None = None,
    normalize_box: tuple[float, float, float, float] = (-4.0, 4.0, -4.0, 4.0),
    normalize_n: int = 201,
) -> HamiltonianField:
    """Wrap user evaluators, shifting the value so the sampled minimum is 0."""
    x0, x1, y0, y1 = normalize_box
    xs = np.linspace(x0, x1, normalize_n)
    ys = np.linspace(y0, y1, normalize_n)
    pts = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
    offset = float(np.min(value(pts)))

    def shifted(x):
        return value(x) - offset

    return HamiltonianField(name, shifted, gradient, laplacian, hessian, offset=offset)


def find_critical_points(
    field: HamiltonianField,
    search_box: tuple[float, float, float, float],
    seed_grid: int = 24,
    newton_tol: float = NEWTON_TOL,
    dedup_radius: float = DEDUP_RADIUS,
    max_iter: int = 60,
) -> list[CriticalPoint]:
    """Newton zeros of the gradient seeded from a regular grid.

    Converged zeros are deduplicated by ``dedup_radius`` and classified by
    Hessian signature.  Seeds that fail to converge are dropped; a Hessian
    eigenvalue below tolerance is a hard error (the whole construction
    assumes non-degenerate critical points).
    """
    x0, x1, y0, y1 = search_box
    xs = np.linspace(x0, x1, seed_grid)
    ys = np.linspace(y0, y1, seed_grid)
    seeds = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)

    pts = seeds.copy()
    active = np.ones(len(pts), dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        g = field.gradient(pts[active])
        hess = field.hessian_at(pts[active])
        # Solve 2x2 systems in closed form; singular Hessians knock the
        # seed out rather than aborting the batch.
        det = hess[:, 0, 0] * hess[:, 1, 1] - hess[:, 0, 1] * hess[:, 1, 0]
        ok = np.abs(det) > 1e-300
        step = np.zeros_like(g)
        step[ok, 0] = (hess[ok, 1, 1] * g[ok, 0] - hess[ok, 0, 1] * g[ok, 1]) / det[ok]
        step[ok, 1] = (-hess[ok, 1, 0] * g[ok, 0] + hess[ok, 0, 0] * g[ok, 1]) / det[ok]
        nrm = np.sqrt(step[:, 0] ** 2 + step[:, 1] ** 2)
        big = nrm > 0.5
        step[big] *= (0.5 / nrm[big])[:, None]
        newpts = pts[active] - step
        pts[active] = newpts
        idx = np.flatnonzero(active)
        active[idx[~ok]] = False
        still = field.grad_norm(pts[idx]) > newton_tol * 0.01
        active[idx[~still]] = False

    pad = 1e-9 + 0.05 * max(x1 - x0, y1 - y0)
    found: list[CriticalPoint] = []
    locs: list[np.ndarray] = []
    n_dropped = 0
    for p in pts:
        if not np.all(np.isfinite(p)) or field.grad_norm(p) >= newton_tol:
            n_dropped += 1
            continue
        if not (x0 - pad <= p[0] <= x1 + pad and y0 - pad <= p[1] <= y1 + pad):
            continue
        if any(np.hypot(*(p - q)) < dedup_radius for q in locs):
            continue
        hess = field.hessian_at(p)
        eigs = np.linalg.eigvalsh(hess)
        scale = max(1.0, float(np.max(np.abs(eigs))))
        if np.min(np.abs(eigs)) < DEGENERATE_TOL * scale:
            raise DegenerateCriticalError(
                f"critical point at {tuple(p)} has Hessian eigenvalues {tuple(eigs)}"
            )
        if eigs[0] > 0:
            kind = "minimum"
        elif eigs[1] < 0:
            kind = "maximum"
        else:
            kind = "saddle"
        locs.append(p.copy())
        found.append(
            CriticalPoint(
                location=(float(p[0]), float(p[1])),
                value=float(field.value(p)),
                kind=kind,
                hessian_eigs=(float(eigs[0]), float(eigs[1])),
            )
        )
    if n_dropped:
        logger.debug("%d seed(s) did not converge to a gradient zero",
                     n_dropped)
    found.sort(key=lambda c: (c.value, c.location))
    return found


@dataclass(frozen=True)
class ConfinementReport:
    """Outcome of the far-field growth checks: H >= a|x|^2, |grad H| >= a|x|,
    lap H >= a outside ``radius_far``, with the largest margin ``a`` found."""

    growth_ok: bool
    gradient_ok: bool
    laplacian_ok: bool
    margin_a: float


def verify_confinement(
    field: HamiltonianField,
    box: tuple[float, float, float, float],
    radius_far: float,
    n_samples: int = 20000,
    rng_seed: int = 0,
) -> ConfinementReport:
    """Sample the annulus ``radius_far <= |x| <= box edge`` and report the
    largest a > 0 for which all three growth inequalities hold."""
    x0, x1, y0, y1 = box
    r_out = min(abs(x0), abs(x1), abs(y0), abs(y1))
    if radius_far >= r_out:
        raise ValueError("radius_far must sit inside the box")
    rng = np.random.default_rng(rng_seed)
    r = np.sqrt(rng.uniform(radius_far**2, r_out**2, n_samples))
    th = rng.uniform(0.0, 2 * np.pi, n_samples)
    pts = np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    growth = field.value(pts) / r**2
    gradient = field.grad_norm(pts) / r
    laplacian = field.laplacian(pts)
    m_growth = float(np.min(growth))
    m_gradient = float(np.min(gradient))
    m_laplacian = float(np.min(laplacian))
    margin = min(m_growth, m_gradient, m_laplacian)
    return ConfinementReport(
        growth_ok=m_growth > 0,
        gradient_ok=m_gradient > 0,
        laplacian_ok=m_laplacian > 0,
        margin_a=margin,
    )
