import numpy as np
import pytest

from conftest import const_model, gbm_model, custom_model
from qrbsde.generators import make_generator
from qrbsde.lattice import build_lattice
from qrbsde.pde import (
    PdeGrid,
    PdeSolution,
    PdeSolveError,
    growth_check,
    pde_residual,
    scheme_comparison,
    solve_obstacle_pde,
    export_pde_csv,
)
from qrbsde.solver import snell_envelope


def put(strike):
    return lambda x: np.maximum(strike - np.asarray(x, dtype=float), 0.0)


def _grid(n=100, x_min=-3.0, x_max=3.0, horizon=1.0):
    return PdeGrid(x_min=x_min, x_max=x_max, n_space=n, n_time=n, horizon=horizon)


def _amput_model(vol=0.2, rate=0.0):
    return gbm_model(rate=rate, vol=vol)


def test_linear_terminal_data_is_preserved():
    # b=0, sigma const, f=0, no obstacle, h(x)=x: x is harmonic for the scheme
    m = const_model(b=0.0, sigma=0.4)
    sol = solve_obstacle_pde(m, _grid(80))
    xs = sol.grid.xs
    for row in sol.u:
        assert np.max(np.abs(row - xs)) <= 1e-10


def test_terminal_row_exact_bitwise():
    m = _amput_model()
    grid = _grid(60, x_min=0.0, x_max=3.0)
    sol = solve_obstacle_pde(m, grid)
    assert np.array_equal(sol.u[-1], np.asarray(m.terminal_payoff(grid.xs)))


def test_obstacle_dominated_everywhere():
    m = _amput_model(rate=0.06)
    grid = _grid(120, x_min=0.0, x_max=3.0)
    for scheme in ("projected", "penalized"):
        sol = solve_obstacle_pde(m, grid, scheme=scheme)
        tol = 0.0 if scheme == "projected" else 10 * grid.dt
        assert np.min(sol.u - sol.obstacle) >= -tol
        assert sol.obstacle_active.any()


def test_american_put_matches_lattice_snell():
    # sigma(x) = 0.2 x, b = 0, h = l = (1 - x)^+: PDE value at (0, 1) vs the
    # 200-step lattice envelope, within 0.02 at a 400x400 grid
    m = _amput_model(vol=0.2, rate=0.0)
    grid = PdeGrid(x_min=0.0, x_max=3.0, n_space=400, n_time=400, horizon=1.0)
    sol = solve_obstacle_pde(m, grid)
    lat = build_lattice(m, 0.0, 1.0, 200)
    reward = [put(1.0)(lat.nodes[i]) for i in range(201)]
    env = snell_envelope(lat, reward)
    assert abs(sol.interp(0.0, 1.0) - env[0][0]) <= 0.02


def test_monotone_in_data_projected():
    base = _amput_model(rate=0.06)
    grid = _grid(80, x_min=0.0, x_max=3.0)
    lo = solve_obstacle_pde(base, grid)
    bumped = custom_model(
        drift=base.drift, diffusion=base.diffusion,
        terminal=lambda x: put(1.0)(x) + 0.1,
        obstacle=lambda t, x: put(1.0)(x) + 0.1,
        generator=base.generator, horizon=1.0,
        kappa_lip=base.kappa_lip, sigma_star=base.sigma_star)
    hi = solve_obstacle_pde(bumped, grid)
    assert np.min(hi.u - lo.u) >= -1e-10


def test_scheme_comparison_identical_and_ordered():
    m = _amput_model(rate=0.06)
    grid = _grid(80, x_min=0.0, x_max=3.0)
    a = solve_obstacle_pde(m, grid)
    assert scheme_comparison(m, grid, a, a) == 0.0
    bumped = custom_model(
        drift=m.drift, diffusion=m.diffusion,
        terminal=lambda x: put(1.0)(x) + 0.1,
        obstacle=lambda t, x: put(1.0)(x) + 0.1,
        generator=m.generator, horizon=1.0,
        kappa_lip=m.kappa_lip, sigma_star=m.sigma_star)
    b = solve_obstacle_pde(bumped, grid)
    assert scheme_comparison(m, grid, a, b) <= 1e-8


def test_scheme_comparison_rejects_unordered_terminal():
    m = _amput_model()
    grid = _grid(40, x_min=0.0, x_max=3.0)
    a = solve_obstacle_pde(m, grid)
    lowered = custom_model(
        drift=m.drift, diffusion=m.diffusion,
        terminal=lambda x: put(1.0)(x) - 0.1,
        obstacle=lambda t, x: put(1.0)(x) - 0.1,
        generator=m.generator, horizon=1.0,
        kappa_lip=m.kappa_lip, sigma_star=m.sigma_star)
    with pytest.raises(ValueError):
        scheme_comparison(m, grid, a, solve_obstacle_pde(lowered, grid))


def test_penalized_vs_projected_close():
    m = _amput_model(rate=0.06)
    grid = _grid(120, x_min=0.0, x_max=3.0)
    a = solve_obstacle_pde(m, grid, scheme="projected")
    b = solve_obstacle_pde(m, grid, scheme="penalized")
    assert np.max(np.abs(a.u - b.u)) <= 2 * 0.01


def test_residual_refinement_study():
    # obstacle-free linear-in-x data: residual magnitude shrinks under refinement
    m = const_model(b=0.3, sigma=0.4, terminal=lambda x: np.square(x))
    sizes = (50, 100, 200)
    worst = []
    for n in sizes:
        sol = solve_obstacle_pde(m, _grid(n))
        interior = sol.residuals[1:-1, 2:-2]
        worst.append(float(np.nanmax(np.abs(interior))))
    assert worst[1] <= worst[0] / 1.5
    assert worst[2] <= worst[1] / 1.5


def test_residual_constant_gap_is_zero():
    grid = _grid(20)
    xs = grid.xs
    l_const = 0.5
    u = np.full((grid.n_time + 1, len(xs)), l_const + 1.0)
    obstacle = np.full_like(u, l_const)
    sol = PdeSolution(grid=grid, u=u, obstacle=obstacle,
                      obstacle_active=u - obstacle <= 1e-10,
                      residuals=np.full_like(u, np.nan), scheme="projected",
                      parabolic_margin=0.0)
    res = pde_residual(sol, const_model(b=0.0, sigma=0.3))
    assert np.nanmax(np.abs(res)) == 0.0


def test_residual_flags_subsolution_violation():
    grid = _grid(20)
    xs = grid.xs
    u = np.full((grid.n_time + 1, len(xs)), -0.1)  # sits 0.1 below the obstacle
    obstacle = np.zeros_like(u)
    sol = PdeSolution(grid=grid, u=u, obstacle=obstacle,
                      obstacle_active=u - obstacle <= 1e-10,
                      residuals=np.full_like(u, np.nan), scheme="projected",
                      parabolic_margin=0.0)
    res = pde_residual(sol, const_model(b=0.0, sigma=0.3))
    assert res[5, 7] == pytest.approx(-0.1, abs=1e-12)
    assert np.nanmax(res) <= -0.1 + 1e-12


def test_complementarity_residual_bounded():
    m = _amput_model(rate=0.06)
    grid = PdeGrid(x_min=0.0, x_max=3.0, n_space=200, n_time=200, horizon=1.0)
    sol = solve_obstacle_pde(m, grid)
    comp = np.abs(np.minimum(sol.u[:-1, 1:-1] - sol.obstacle[:-1, 1:-1],
                             sol.residuals[:-1, 1:-1]))
    # away from the exercise boundary the scheme residual is O(dx^2 + dt);
    # the kink contributes an O(1)*dx band, bounded here empirically
    assert float(np.nanquantile(comp, 0.99)) <= 0.05
    assert float(np.nanmedian(comp)) <= 1e-3


def test_growth_check_zero_and_exact():
    grid = _grid(30)
    m = const_model(b=0.0, sigma=0.3, varpi=1.0)
    zero = PdeSolution(grid=grid, u=np.zeros((31, 31)), obstacle=np.full((31, 31), -1.0),
                       obstacle_active=np.zeros((31, 31), dtype=bool),
                       residuals=np.full((31, 31), np.nan), scheme="projected",
                       parabolic_margin=0.0)
    assert growth_check(zero, m).c_fit == 0.0
    kappa = 1.7
    xs = grid.xs
    u = np.tile(kappa * (1.0 + np.abs(xs)), (31, 1))
    exact = PdeSolution(grid=grid, u=u, obstacle=u.copy(),
                        obstacle_active=np.ones_like(u, dtype=bool),
                        residuals=np.full_like(u, np.nan), scheme="projected",
                        parabolic_margin=0.0)
    assert growth_check(exact, m).c_fit == pytest.approx(kappa, rel=1e-12)


def test_growth_stable_under_domain_enlargement():
    m = _amput_model(rate=0.06)
    a = solve_obstacle_pde(m, PdeGrid(x_min=0.0, x_max=3.0, n_space=200, n_time=200, horizon=1.0))
    b = solve_obstacle_pde(m, PdeGrid(x_min=0.0, x_max=3.6, n_space=240, n_time=200, horizon=1.0))
    ca, cb = growth_check(a, m).c_fit, growth_check(b, m).c_fit
    assert np.isfinite(ca) and abs(ca - cb) <= 0.2 * max(ca, cb)


def test_refinement_convergence_factor():
    m = _amput_model(rate=0.06)
    us = {}
    for n in (100, 200, 400):
        grid = PdeGrid(x_min=0.0, x_max=3.0, n_space=n, n_time=n, horizon=1.0)
        us[n] = solve_obstacle_pde(m, grid)
    def gap(coarse, fine, ratio):
        cu, fu = us[coarse].u, us[fine].u
        return float(np.max(np.abs(cu - fu[::ratio, ::ratio])))
    assert gap(100, 200, 2) >= 1.5 * gap(200, 400, 2)


def test_parabolic_margin_reported():
    m = const_model(b=0.5, sigma=1.0)
    grid = _grid(100)
    margin = grid.parabolic_margin(m)
    dx, dt = grid.dx, grid.dt
    assert margin == pytest.approx(dt / (dx ** 2 / (1.0 + dx * 0.5)), rel=1e-12)
    sol = solve_obstacle_pde(m, grid)
    assert sol.parabolic_margin == pytest.approx(margin, rel=1e-12)


def test_kappa_dt_refused():
    m = const_model(b=0.0, sigma=0.3,
                    generator=make_generator("lipschitz_quad:gamma=1,kappa=30,shape=convex"))
    with pytest.raises(PdeSolveError):
        solve_obstacle_pde(m, _grid(20))


def test_quadratic_gradient_driver_runs():
    m = const_model(b=0.0, sigma=0.3, generator=make_generator("quad:gamma=1"),
                    terminal=put(1.0), obstacle=lambda t, x: put(1.0)(x))
    sol = solve_obstacle_pde(m, _grid(100, x_min=-1.0, x_max=3.0))
    assert np.all(np.isfinite(sol.u))
    assert np.min(sol.u - sol.obstacle) >= 0.0


def test_pde_csv_export(tmp_path):
    m = _amput_model()
    grid = PdeGrid(x_min=0.0, x_max=2.0, n_space=8, n_time=4, horizon=1.0)
    sol = solve_obstacle_pde(m, grid)
    out = tmp_path / "pde.csv"
    export_pde_csv(sol, out)
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "t,x,u,obstacle_active"
    assert len(lines) == 1 + 5 * 9
