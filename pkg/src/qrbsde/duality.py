"""Numerical Legendre-Fenchel conjugate of a driver concave in z.

For f concave in z the conjugate fhat(t, x, y, q) = sup_z (q*z + f(t, x, y, z))
is convex; it dominates -alpha - beta|y| + q^2/(2*gamma), inherits the
y-Lipschitz constant, and reconstructs f through
f(t, x, y, z) = inf_q (fhat(t, x, y, q) - z*q).  The supremum is taken over a
uniform z-grid with boundary-hit detection; the grid sup underestimates the
true one by at most (curvature)*step^2/8, which checks against the analytic
lower bound must allow for.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .generators import GeneratorSpec, eval_generator

__all__ = ["FenchelDual", "DualRadiusError", "fenchel_dual", "conjugacy_check"]


class DualRadiusError(ValueError):
    """Supremum attained on the z-grid boundary: radius too small."""


def _grid_sup(g: GeneratorSpec, t, x, y, q, radius: float, step: float) -> tuple:
    if g.z_shape != "concave":
        raise ValueError("Fenchel dual requires a driver concave in z")
    if radius <= 0 or step <= 0 or step > 2 * radius:
        raise ValueError("need 0 < step <= 2*radius")
    n = int(np.floor(2 * radius / step)) + 1
    z = -radius + step * np.arange(n)
    vals = q * z + eval_generator(g, t, np.asarray(x), np.asarray(y), z)
    k = int(np.argmax(vals))
    return float(vals[k]), (k == 0 or k == n - 1)


def fenchel_dual(g: GeneratorSpec, t, x, y, q, radius: float, step: float) -> float:
    """sup over the z-grid of q*z + f(t, x, y, z); argmax must be interior."""
    val, on_boundary = _grid_sup(g, t, x, y, q, radius, step)
    if on_boundary:
        raise DualRadiusError(
            f"conjugate argmax hit the z-grid boundary at q={q}; enlarge radius (got {radius})")
    return val


@dataclass(frozen=True)
class FenchelDual:
    """Grid-based conjugate of a concave-in-z driver."""

    generator: GeneratorSpec
    q_grid: np.ndarray
    z_grid_radius: float
    z_grid_step: float

    def value(self, t, x, y, q) -> float:
        return fenchel_dual(self.generator, t, x, y, q, self.z_grid_radius, self.z_grid_step)

    def value_capped(self, t, x, y, q) -> float:
        """Grid sup without the boundary check; stands in for a +inf conjugate."""
        val, _ = _grid_sup(self.generator, t, x, y, q, self.z_grid_radius, self.z_grid_step)
        return val

    def values_on_grid(self, t, x, y) -> np.ndarray:
        # capped on purpose: q-grid points whose true conjugate is infinite (or
        # out of radius) get a large finite value and drop out of the inf below
        return np.array([self.value_capped(t, x, y, q) for q in self.q_grid])

    def reconstruct(self, t, x, y, z) -> float:
        """Double conjugate: inf over the q-grid of fhat(q) - z*q."""
        vals = self.values_on_grid(t, x, y) - z * np.asarray(self.q_grid)
        return float(np.min(vals))

    def lower_bound_violation(self, samples) -> float:
        """Max violation of fhat >= -alpha - beta|y| + q^2/(2 gamma) over (t, x, y, q) samples.

        The grid sup under-reads the true conjugate by O(gamma*step^2), so a
        clean driver may show a small positive value up to that resolution.
        """
        g = self.generator
        worst = -np.inf
        for (t, x, y, q) in samples:
            fh = self.value(t, x, y, q)
            bound = -g.alpha - g.beta * abs(y) + q * q / (2.0 * g.gamma)
            worst = max(worst, bound - fh)
        return worst

    def y_lipschitz_violation(self, samples) -> float:
        """Max violation of |fhat(y) - fhat(y')| <= kappa |y - y'| over (t, x, y, y', q) samples."""
        g = self.generator
        worst = -np.inf
        for (t, x, y, y2, q) in samples:
            d = abs(self.value(t, x, y, q) - self.value(t, x, y2, q))
            worst = max(worst, d - g.kappa * abs(y - y2))
        return worst


def conjugacy_check(g: GeneratorSpec, dual: FenchelDual, samples) -> float:
    """Max over (t, x, y, z) samples of |f - inf_q(fhat(q) - z*q)| on the q-grid."""
    worst = 0.0
    for (t, x, y, z) in samples:
        direct = float(eval_generator(g, t, np.asarray(x), np.asarray(y), np.asarray(z)))
        rebuilt = dual.reconstruct(t, x, y, z)
        worst = max(worst, abs(direct - rebuilt))
    return worst


def lower_bound_check(g: GeneratorSpec, n_samples: int, radius: float, step: float,
                      seed: int = 0, q_scale: float | None = None) -> float:
    """Batched max violation of fhat >= -alpha - beta|y| + q^2/(2 gamma) over random (y, q).

    The grid supremum under-reads the true conjugate by up to
    gamma*step^2/8 where the bound is tight, so a clean driver reports at
    most that resolution term, never more.
    """
    if g.z_shape != "concave":
        raise ValueError("Fenchel dual requires a driver concave in z")
    rng = np.random.default_rng(seed)
    y = rng.uniform(-3.0, 3.0, size=n_samples)
    q_scale = q_scale if q_scale is not None else 0.5 * radius * g.gamma
    q = rng.uniform(-q_scale, q_scale, size=n_samples)
    n = int(np.floor(2 * radius / step)) + 1
    z = -radius + step * np.arange(n)
    vals = q[:, None] * z[None, :] + eval_generator(g, 0.0, np.zeros(1), y[:, None], z[None, :])
    fhat = np.max(vals, axis=1)
    argmax = np.argmax(vals, axis=1)
    if np.any(argmax == 0) or np.any(argmax == n - 1):
        raise DualRadiusError("conjugate argmax hit the z-grid boundary; enlarge radius")
    bound = -g.alpha - g.beta * np.abs(y) + q * q / (2.0 * g.gamma)
    return float(np.max(bound - fhat))
