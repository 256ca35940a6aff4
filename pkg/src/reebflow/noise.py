"""Spatially homogeneous Wiener fields from a spectral density.

Increments are synthesized as a truncated Fourier series on a symmetric
cell-centered frequency grid: conjugate-coupled complex coefficients make
the field exactly real, and the tensor structure of the mode grid lets one
increment cost two small matrix products.  The projection of an increment
onto the graph reuses the tabulated level-set cycles, so plane and graph
noises are coupled pathwise by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .errors import EmptyModeSetError
from .grids import GraphFunction, GridFunction2D
from .reeb import LevelProjector, ReebGraph

Array = np.ndarray


@dataclass(frozen=True)
class SpectralDensity:
    """Symmetric nonnegative density m on frequency space.

    ``atoms`` carries an optional finite part as (frequency, weight) pairs;
    each atom contributes weight * cos(xi . (x - y)) to the covariance.
    """

    fn: Callable[[Array], Array]
    p_exponent: float
    name: str = "density"
    params: dict = dc_field(default_factory=dict)
    atoms: tuple = ()

    def __call__(self, xi: Array) -> Array:
        return self.fn(np.asarray(xi, dtype=float))


def matern_density(s: float = 1.2, p: float = 2.0) -> SpectralDensity:
    def fn(xi):
        r2 = xi[..., 0] ** 2 + xi[..., 1] ** 2
        return (1.0 + r2) ** (-s)

    return SpectralDensity(fn, p, "matern", {"s": s})


def band_limited_density(radius: float = 1.0, p: float = 2.0) -> SpectralDensity:
    def fn(xi):
        r2 = xi[..., 0] ** 2 + xi[..., 1] ** 2
        return np.where(r2 <= radius**2, 1.0, 0.0)

    return SpectralDensity(fn, p, "band_limited", {"radius": radius})


def mixture_density(
    radius: float = 1.0,
    atoms=((np.array([0.7, -0.3]), 0.5),),
    p: float = 2.0,
) -> SpectralDensity:
    """Band-limited density plus a finite discrete part (regression builtin
    for the finite-spectral-measure regime)."""
    base = band_limited_density(radius, p)
    return SpectralDensity(base.fn, p, "mixture", {"radius": radius},
                           tuple((np.asarray(a, float), float(w)) for a, w in atoms))


_DENSITIES = {
    "matern": matern_density,
    "band_limited": band_limited_density,
    "mixture": mixture_density,
}


def make_density(name: str, **params) -> SpectralDensity:
    try:
        return _DENSITIES[name](**params)
    except KeyError:
        raise KeyError(f"unknown density {name!r}; builtins: {sorted(_DENSITIES)}")


def lp_norm(density: SpectralDensity, K: float, n: int = 512) -> float:
    """L^p norm of the density over the truncation box."""
    xs = (np.arange(n) + 0.5) * (2 * K / n) - K
    xi = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1)
    vals = density(xi)
    cell = (2 * K / n) ** 2
    p = density.p_exponent
    return float((np.sum(vals**p) * cell) ** (1.0 / p))


def box_mass(density: SpectralDensity, K: float, n: int = 512) -> float:
    xs = (np.arange(n) + 0.5) * (2 * K / n) - K
    xi = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1)
    return float(np.sum(density(xi)) * (2 * K / n) ** 2)


def truncation_radius(density: SpectralDensity, target: float = 1e-3,
                      K_cap: float = 64.0) -> float:
    """Smallest dyadic K whose estimated spectral tail is below ``target``.

    Heavy-tailed densities may not reach the target below ``K_cap`` (the
    grid Nyquist has to stay above K); in that case K_cap is returned and
    the truncated density is what the samplers and all oracles use, on both
    the plane and the graph side alike.
    """
    K = 2.0
    while K < K_cap:
        inner = box_mass(density, K)
        outer = box_mass(density, 2 * K)
        if 2.0 * (outer - inner) <= target * outer:
            return K
        K *= 2.0
    return K_cap


class NoiseStream:
    """Increment stream for one trajectory; owns its generator."""

    def __init__(self, sampler: "HomogeneousFieldSampler", trajectory: int):
        self.sampler = sampler
        seq = np.random.SeedSequence(entropy=sampler.seed,
                                     spawn_key=(int(trajectory),))
        self.rng = np.random.default_rng(seq)

    def increment(self, dt: float) -> GridFunction2D:
        return self.sampler._draw(self.rng, dt)

    def increment_complex(self, dt: float) -> Array:
        return self.sampler._draw_complex(self.rng, dt)


class HomogeneousFieldSampler:
    """Truncated series synthesis of the homogeneous Wiener field.

    The mode set is the cell-centered grid of ``modes_per_axis``^2
    frequencies in [-K, K]^2 (closed under negation, no zero mode) with
    amplitudes sqrt(m * dxi); increments over dt are N(0, dt) in each
    conjugate-coupled coefficient.
    """

    def __init__(
        self,
        density: SpectralDensity,
        grid_template: GridFunction2D,
        K: float | None = None,
        modes_per_axis: int | None = None,
        seed: int = 0,
    ):
        self.density = density
        self.grid = grid_template
        self.seed = int(seed)
        if K is None:
            K = truncation_radius(density)
        self.K = float(K)

        box = grid_template.box
        diam = float(np.hypot(box[1] - box[0], box[3] - box[2]))
        if modes_per_axis is None:
            modes_per_axis = int(np.ceil(2 * self.K * diam / np.pi))
            modes_per_axis += modes_per_axis % 2
            modes_per_axis = max(modes_per_axis, 8)
        if modes_per_axis < 2:
            raise EmptyModeSetError("need at least 2 modes per axis")
        if modes_per_axis % 2:
            modes_per_axis += 1  # symmetric cell-centered set needs even count
        self.modes_per_axis = modes_per_axis

        nyquist = np.pi / max(grid_template.hx, grid_template.hy)
        if self.K >= nyquist:
            raise ValueError(
                f"truncation K={self.K:g} reaches the grid Nyquist {nyquist:g}; "
                "refine the grid or lower noise.K"
            )

        dxi = 2 * self.K / modes_per_axis
        self.dxi_cell = dxi * dxi
        self.xi_1d = -self.K + (np.arange(modes_per_axis) + 0.5) * dxi
        xi = np.stack(np.meshgrid(self.xi_1d, self.xi_1d, indexing="ij"), axis=-1)
        self.mode_grid = xi
        m_vals = np.asarray(density(xi), dtype=float)
        if np.any(m_vals < 0):
            raise ValueError("spectral density must be nonnegative")
        sym_err = float(np.max(np.abs(m_vals - m_vals[::-1, ::-1])))
        if sym_err > 1e-12 * max(1.0, float(np.max(m_vals))):
            raise ValueError("spectral density must be symmetric under negation")
        self.amplitudes = np.sqrt(m_vals * self.dxi_cell)
        if not np.any(self.amplitudes > 0):
            raise EmptyModeSetError("all mode amplitudes vanish on the truncation box")

        # tensor synthesis factors e^{i x xi} for both axes
        self._E1 = np.exp(1j * np.outer(grid_template.xs, self.xi_1d))
        self._E2 = np.exp(1j * np.outer(grid_template.ys, self.xi_1d))

        self.atoms = density.atoms
        if self.atoms:
            pts = grid_template.points()
            self._atom_cos = np.stack(
                [np.cos(pts @ a) for a, _ in self.atoms], axis=0
            )
            self._atom_sin = np.stack(
                [np.sin(pts @ a) for a, _ in self.atoms], axis=0
            )
            self._atom_amps = np.array([np.sqrt(w) for _, w in self.atoms])

    # -- synthesis ---------------------------------------------------------
    def open_stream(self, trajectory: int = 0) -> NoiseStream:
        return NoiseStream(self, trajectory)

    def _hermitian_coefficients(self, rng) -> Array:
        n = self.modes_per_axis
        g = rng.standard_normal((n, n, 2))
        zc = (g[..., 0] + 1j * g[..., 1]) / np.sqrt(2.0)
        return (zc + np.conj(zc[::-1, ::-1])) / np.sqrt(2.0)

    def _draw_complex(self, rng, dt: float) -> Array:
        z = self._hermitian_coefficients(rng) * np.sqrt(dt)
        out = self._E1 @ (self.amplitudes * z) @ self._E2.T
        if self.atoms:
            ga = rng.standard_normal((len(self.atoms), 2)) * np.sqrt(dt)
            for i, amp in enumerate(self._atom_amps):
                out += amp * (self._atom_cos[i] * ga[i, 0] + self._atom_sin[i] * ga[i, 1])
        return out

    def _draw(self, rng, dt: float) -> GridFunction2D:
        return GridFunction2D(self.grid.box, self._draw_complex(rng, dt).real)

    # -- covariance --------------------------------------------------------
    def variance_at_point(self) -> float:
        """Pointwise variance rate q(0) = truncated spectral mass."""
        q0 = float(np.sum(self.amplitudes**2))
        q0 += float(sum(w for _, w in self.atoms))
        return q0

    def covariance_function(self, lags: Array) -> Array:
        """q(r) = integral of cos(xi . r) against the truncated density."""
        lags = np.asarray(lags, dtype=float)
        phase = lags @ np.stack(
            np.meshgrid(self.xi_1d, self.xi_1d, indexing="ij"), axis=-1
        ).reshape(-1, 2).T
        q = (np.cos(phase) @ (self.amplitudes.reshape(-1) ** 2))
        for a, w in self.atoms:
            q = q + w * np.cos(lags @ a)
        return q

    def fourier_coefficients(self, u: GridFunction2D) -> Array:
        """uhat(xi_j) on the mode grid (plane-integral convention)."""
        u.check_same_grid(self.grid)
        return (
            np.conj(self._E1).T @ u.values @ np.conj(self._E2)
        ) * self.grid.cell_area

    def covariance_form(self, psi: GridFunction2D, phi: GridFunction2D) -> float:
        """Q(psi, phi): spectral pairing of the two test functions."""
        ps = self.fourier_coefficients(psi)
        ph = self.fourier_coefficients(phi)
        val = float(np.real(np.sum(ps * np.conj(ph) * self.amplitudes**2 / self.dxi_cell)
                            * self.dxi_cell))
        for a, w in self.atoms:
            pts = self.grid.points()
            ca = np.cos(pts @ a)
            sa = np.sin(pts @ a)
            ia = self.grid.cell_area
            val += w * (
                np.sum(psi.values * ca) * np.sum(phi.values * ca)
                + np.sum(psi.values * sa) * np.sum(phi.values * sa)
            ) * ia * ia
        return val

    # -- reproducing-kernel basis -------------------------------------------
    def basis_order(self) -> Array:
        """Representative mode per conjugate pair (xi_1 > 0 half-plane),
        sorted by decreasing amplitude; flat indices into the mode grid."""
        xi_flat = self.mode_grid.reshape(-1, 2)
        amps = self.amplitudes.reshape(-1)
        half = np.flatnonzero(xi_flat[:, 0] > 0)
        return half[np.argsort(amps[half])[::-1]]

    def n_basis(self) -> int:
        return self.amplitudes.size  # 2 real fields per conjugate pair

    def basis_fields(self, count: int, chunk_offset: int = 0) -> Array:
        """Real expansion fields of the noise, strongest modes first.

        Each conjugate mode pair {xi, -xi} contributes
        sqrt(2) amp cos(xi . x) and sqrt(2) amp sin(xi . x), driven by
        independent scalar Brownian motions; summing the squares over the
        whole basis recovers the pointwise variance rate.
        """
        order = self.basis_order()
        fields = np.empty((count, self.grid.nx, self.grid.ny))
        xi_flat = self.mode_grid.reshape(-1, 2)
        amps = self.amplitudes.reshape(-1)
        pts = self.grid.points()
        for i in range(count):
            pair = (chunk_offset + i) // 2
            if pair >= len(order):
                raise EmptyModeSetError("requested more basis fields than modes")
            j = order[pair]
            phase = pts @ xi_flat[j]
            a = np.sqrt(2.0) * amps[j]
            fields[i] = a * (np.cos(phase) if (chunk_offset + i) % 2 == 0
                             else np.sin(phase))
        return fields


def covariance_form(
    density: SpectralDensity,
    psi: GridFunction2D,
    phi: GridFunction2D,
    K: float | None = None,
    modes_per_axis: int | None = None,
) -> float:
    sampler = HomogeneousFieldSampler(density, psi, K=K, modes_per_axis=modes_per_axis)
    return sampler.covariance_form(psi, phi)


def project_increment(
    graph: ReebGraph,
    increment: GridFunction2D,
    projector: LevelProjector | None = None,
) -> GraphFunction:
    """Level averages of a plane increment: the graph-noise increment
    coupled pathwise to the plane one."""
    if projector is None:
        projector = LevelProjector(graph, increment)
    return projector.project_values(increment.values)
