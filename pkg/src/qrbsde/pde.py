"""Finite-difference solver for the obstacle problem of the quadratic-gradient PDE.

Backward time stepping with the linear part (implicit diffusion, upwind
convection) solved by a tridiagonal system and the nonlinearity evaluated at
the previous time level, so no nonlinear solve is needed and the diffusion
step is unconditionally stable; kappa*dt < 1 controls the explicit part.  The
obstacle is enforced either by an explicit penalization (1/eps)(l - u)^+ with
eps = dt, or by pointwise projection after each step.  Boundaries use linear
extrapolation (vanishing second derivative).

The classical parabolic margin dt <= dx^2/(sigma_*^2 + dx |b|_inf) is what
would make the z-coupling of an explicit nonlinearity provably harmless; the
solver reports it on the solution instead of enforcing it, since the
production grids run far above it and rely on the implicit linear part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .generators import MarkovModel, eval_generator

__all__ = [
    "PdeGrid",
    "PdeSolution",
    "PdeSolveError",
    "solve_obstacle_pde",
    "pde_residual",
    "growth_check",
    "scheme_comparison",
    "export_pde_csv",
]

OBSTACLE_ACTIVE_TOL = 1e-10


class PdeSolveError(RuntimeError):
    """Tridiagonal solve failed or the sweep produced non-finite values."""


@dataclass(frozen=True)
class PdeGrid:
    """Uniform truncated space-time grid for the backward obstacle problem."""

    x_min: float
    x_max: float
    n_space: int
    n_time: int
    horizon: float

    def __post_init__(self):
        if self.x_max <= self.x_min:
            raise ValueError("need x_max > x_min")
        if self.n_space < 3 or self.n_time < 1:
            raise ValueError("grid too small")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_space

    @property
    def dt(self) -> float:
        return self.horizon / self.n_time

    @property
    def xs(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_space + 1)

    @property
    def ts(self) -> np.ndarray:
        return self.dt * np.arange(self.n_time + 1)

    def parabolic_margin(self, model: MarkovModel) -> float:
        """dt divided by the classical explicit-scheme cap dx^2/(sigma_*^2 + dx |b|_inf).

        <= 1 means the grid also satisfies the explicit-scheme monotonicity
        margin; the semi-implicit solver does not require it.
        """
        xs = self.xs
        b_inf = float(np.max(np.abs(np.asarray(model.drift(0.0, xs)))))
        cap = self.dx ** 2 / (model.sigma_star ** 2 + self.dx * b_inf)
        return self.dt / cap


@dataclass(frozen=True)
class PdeSolution:
    """Grid-valued approximation of the value function and its residual field."""

    grid: PdeGrid
    u: np.ndarray               # (n_time + 1, n_space + 1)
    obstacle: np.ndarray        # obstacle sampled on the same grid
    obstacle_active: np.ndarray  # boolean mask: u pinned to the obstacle
    residuals: np.ndarray       # complementarity residual, NaN on the frame
    scheme: str
    parabolic_margin: float

    def interp(self, t: float, x: float) -> float:
        """Bilinear interpolation of u at (t, x)."""
        g = self.grid
        it = min(max(t / g.dt, 0.0), g.n_time)
        jx = min(max((x - g.x_min) / g.dx, 0.0), g.n_space)
        i0, j0 = int(np.floor(it)), int(np.floor(jx))
        i1, j1 = min(i0 + 1, g.n_time), min(j0 + 1, g.n_space)
        wt, wx = it - i0, jx - j0
        return float((1 - wt) * ((1 - wx) * self.u[i0, j0] + wx * self.u[i0, j1])
                     + wt * ((1 - wx) * self.u[i1, j0] + wx * self.u[i1, j1]))


def _linear_rows(model: MarkovModel, t: float, xs: np.ndarray, dt: float, dx: float):
    """Banded coefficients of (I - dt*A), A = implicit diffusion + upwind convection."""
    n = len(xs) - 1
    sig = np.asarray(model.diffusion(t, xs), dtype=float)
    b = np.asarray(model.drift(t, xs), dtype=float)
    s = 0.5 * sig ** 2 * dt / dx ** 2
    cp = dt * np.maximum(b, 0.0) / dx
    cm = dt * np.maximum(-b, 0.0) / dx
    sub = -(s + cm)
    diag = 1.0 + 2.0 * s + cp + cm
    sup = -(s + cp)
    # boundary rows: u_xx = 0 via linear extrapolation, one-sided convection
    diag[0], sup[0] = 1.0 + dt * b[0] / dx, -dt * b[0] / dx
    diag[n], sub[n] = 1.0 - dt * b[n] / dx, dt * b[n] / dx
    ab = np.zeros((3, n + 1))
    ab[0, 1:] = sup[:-1]
    ab[1, :] = diag
    ab[2, :-1] = sub[1:]
    return ab


def _gradient(u: np.ndarray, dx: float) -> np.ndarray:
    """Central differences, one-sided at the boundary."""
    g = np.empty_like(u)
    g[1:-1] = (u[2:] - u[:-2]) / (2.0 * dx)
    g[0] = (u[1] - u[0]) / dx
    g[-1] = (u[-1] - u[-2]) / dx
    return g


def solve_obstacle_pde(model: MarkovModel, grid: PdeGrid,
                       scheme: str = "projected") -> PdeSolution:
    """Backward sweep for min{u - l, -u_t - Lu - f(t, x, u, sigma u_x)} = 0, u(T) = h."""
    if scheme not in ("penalized", "projected"):
        raise ValueError(f"unknown scheme {scheme!r}")
    g = model.generator
    if g.kappa * grid.dt >= 1.0:
        raise PdeSolveError(f"kappa*dt = {g.kappa * grid.dt:.3g} >= 1: refuse to run")
    xs = grid.xs
    ts = grid.ts
    dt, dx = grid.dt, grid.dx
    n_time = grid.n_time

    obstacle = np.empty((n_time + 1, len(xs)))
    for m in range(n_time + 1):
        obstacle[m] = np.asarray(model.obstacle_fn(float(ts[m]), xs), dtype=float)

    u = np.empty((n_time + 1, len(xs)))
    u[n_time] = np.asarray(model.terminal_payoff(xs), dtype=float)
    if np.any(obstacle[n_time] > u[n_time] + 1e-12):
        raise ValueError("obstacle exceeds the terminal payoff on the grid (need l(T,x) <= h(x))")

    for m in range(n_time - 1, -1, -1):
        w = u[m + 1]
        z = np.asarray(model.diffusion(float(ts[m + 1]), xs), dtype=float) * _gradient(w, dx)
        fval = np.asarray(eval_generator(g, float(ts[m + 1]), xs, w, z), dtype=float)
        rhs = w + dt * fval
        if scheme == "penalized":
            rhs = rhs + np.maximum(obstacle[m] - w, 0.0)  # (1/eps)(l-u)^+ dt with eps = dt
        ab = _linear_rows(model, float(ts[m]), xs, dt, dx)
        try:
            sol = solve_banded((1, 1), ab, rhs)
        except Exception as exc:  # singular rows signal a broken grid/model pairing
            raise PdeSolveError(f"tridiagonal solve failed at step {m}: {exc}") from exc
        if not np.all(np.isfinite(sol)):
            raise PdeSolveError(f"non-finite values at step {m}: grid violation")
        if scheme == "projected":
            sol = np.maximum(sol, obstacle[m])
        u[m] = sol

    dummy = PdeSolution(grid=grid, u=u, obstacle=obstacle,
                        obstacle_active=u - obstacle <= OBSTACLE_ACTIVE_TOL,
                        residuals=np.full_like(u, np.nan), scheme=scheme,
                        parabolic_margin=grid.parabolic_margin(model))
    residuals = pde_residual(dummy, model)
    return PdeSolution(grid=grid, u=u, obstacle=obstacle,
                       obstacle_active=u - obstacle <= OBSTACLE_ACTIVE_TOL,
                       residuals=residuals, scheme=scheme,
                       parabolic_margin=dummy.parabolic_margin)


def pde_residual(sol: PdeSolution, model: MarkovModel) -> np.ndarray:
    """Signed min{u - l, -u_t - Lu - f} by independent central/upwind stencils.

    Interior cells only; the frame (boundary columns and the terminal row)
    holds NaN.  Negative values flag subsolution violations.
    """
    g = sol.grid
    u = sol.u
    dt, dx = g.dt, g.dx
    xs = g.xs
    out = np.full_like(u, np.nan)
    gen = model.generator
    for m in range(g.n_time):
        t = float(g.ts[m])
        sig = np.asarray(model.diffusion(t, xs), dtype=float)
        b = np.asarray(model.drift(t, xs), dtype=float)
        row = u[m]
        u_t = (u[m + 1] - row) / dt
        u_xx = np.empty_like(row)
        u_xx[1:-1] = (row[2:] - 2 * row[1:-1] + row[:-2]) / dx ** 2
        u_x = _gradient(row, dx)
        z = sig * u_x
        fval = np.asarray(eval_generator(gen, t, xs, row, z), dtype=float)
        pde_part = -u_t - (0.5 * sig ** 2 * u_xx + b * u_x) - fval
        out[m, 1:-1] = np.minimum((row - sol.obstacle[m])[1:-1], pde_part[1:-1])
    return out


@dataclass(frozen=True)
class GrowthReport:
    c_fit: float
    varpi: float
    worst_x: float


def growth_check(sol: PdeSolution, model: MarkovModel) -> GrowthReport:
    """Smallest c with |u| <= c (1 + |x|^varpi) on the grid."""
    xs = sol.grid.xs
    denom = 1.0 + np.abs(xs) ** model.varpi
    ratio = np.abs(sol.u) / denom
    flat = int(np.argmax(ratio))
    return GrowthReport(c_fit=float(np.max(ratio)), varpi=model.varpi,
                        worst_x=float(xs[flat % len(xs)]))


def scheme_comparison(model: MarkovModel, grid: PdeGrid,
                      u_sub: PdeSolution, u_super: PdeSolution) -> float:
    """max over the grid of u_sub - u_super; ordered data should keep this <= tol."""
    if u_sub.grid != grid or u_super.grid != grid:
        raise ValueError("both solutions must live on the given grid")
    if np.any(u_sub.u[-1] > u_super.u[-1] + 1e-12):
        raise ValueError("need u_sub(T, .) <= u_super(T, .)")
    return float(np.max(u_sub.u - u_super.u))


def export_pde_csv(sol: PdeSolution, path) -> None:
    import csv

    g = sol.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "u", "obstacle_active"])
        for m in range(g.n_time + 1):
            t = g.ts[m]
            for j, x in enumerate(g.xs):
                w.writerow([f"{t:.12g}", f"{x:.12g}", f"{sol.u[m, j]:.17g}",
                            int(sol.obstacle_active[m, j])])
