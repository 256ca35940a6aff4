"""Batched integration utilities for the advection field.

Everything here operates on point batches of shape (n, 2) and is shared by
the contour tracer, the particle SDE stepper and the semi-Lagrangian
backtracking in the grid solver.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray


def advect(field, x: Array, duration: float, max_step: float = 0.01) -> Array:
    """Integrate dx/dt = perp-grad H for ``duration`` with fixed-step RK4.

    ``max_step`` bounds the substep in flow time; the advection conserves H,
    and the caller is responsible for choosing ``max_step`` small enough for
    its energy-drift budget.  Negative durations integrate backwards.
    """
    if duration == 0.0:
        return np.array(x, dtype=float, copy=True)
    n_sub = max(1, int(np.ceil(abs(duration) / max_step)))
    h = duration / n_sub
    y = np.array(x, dtype=float, copy=True)
    f = field.perp_gradient
    for _ in range(n_sub):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def move_to_level(
    field,
    x: Array,
    z_target,
    tol: float = 1e-12,
    max_iter: int = 200,
    step_clip: float = 0.25,
) -> Array:
    """Move points along the gradient direction until H(x) = z_target.

    Damped Newton on H along grad H: dx = (z - H) grad H / |grad H|^2 with
    the displacement clipped to ``step_clip`` so the iteration stays stable
    through regions of small gradient.  ``z_target`` broadcasts over points.
    """
    y = np.atleast_2d(np.array(x, dtype=float, copy=True))
    z_target = np.broadcast_to(np.asarray(z_target, dtype=float), y.shape[:-1]).copy()
    for _ in range(max_iter):
        h = field.value(y)
        resid = z_target - h
        scale = np.maximum(np.abs(z_target), 1.0)
        active = np.abs(resid) > tol * scale
        if not active.any():
            break
        g = field.gradient(y[active])
        gn2 = np.maximum(g[:, 0] ** 2 + g[:, 1] ** 2, 1e-300)
        step = (resid[active] / gn2)[:, None] * g
        nrm = np.sqrt(step[:, 0] ** 2 + step[:, 1] ** 2)
        big = nrm > step_clip
        if big.any():
            step[big] *= (step_clip / nrm[big])[:, None]
        y[active] += step
    return y if np.asarray(x).ndim == 2 else y[0]
