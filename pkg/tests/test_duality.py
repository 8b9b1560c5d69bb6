import numpy as np
import pytest

from qrbsde.duality import DualRadiusError, FenchelDual, conjugacy_check, fenchel_dual
from qrbsde.generators import GeneratorSpec, make_generator


def _dual(g, q_lo=-5.0, q_hi=5.0, n_q=21, radius=5.0, step=0.5):
    return FenchelDual(generator=g, q_grid=np.linspace(q_lo, q_hi, n_q),
                       z_grid_radius=radius, z_grid_step=step)


def test_conjugate_of_concave_quadratic():
    # f = -(gamma/2) z^2, gamma=2, q=2: sup_z(qz + f) = q^2/(2 gamma) = 1, at z = 1 (on-grid)
    g = make_generator("neg_quad:gamma=2")
    assert fenchel_dual(g, 0.0, 0.0, 0.0, 2.0, radius=5.0, step=0.5) == pytest.approx(1.0, abs=0)


def test_conjugate_at_zero_slope():
    g = make_generator("neg_quad:gamma=2")
    assert fenchel_dual(g, 0.0, 0.0, 0.0, 0.0, radius=5.0, step=0.5) == pytest.approx(0.0, abs=0)


def test_conjugate_with_y_term():
    # f = -z^2/2 - |y|, y=1, q=1: sup = 1/2 - 1 = -1/2 (argmax z=1 on-grid)
    g = make_generator("lipschitz_quad:gamma=1,kappa=1,shape=concave")
    got = fenchel_dual(g, 0.0, 0.0, 1.0, 1.0, radius=5.0, step=0.25)
    brute = np.max(1.0 * np.arange(-5, 5.0001, 1e-4) - 0.5 * np.arange(-5, 5.0001, 1e-4) ** 2 - 1.0)
    assert got == pytest.approx(brute, abs=1e-6)
    assert got == pytest.approx(-0.5, abs=1e-9)


def test_boundary_hit_signals_small_radius():
    g = make_generator("neg_quad:gamma=1")
    with pytest.raises(DualRadiusError):
        fenchel_dual(g, 0.0, 0.0, 0.0, q=10.0, radius=5.0, step=0.5)


def test_convex_driver_rejected():
    g = make_generator("quad:gamma=1")
    with pytest.raises(ValueError):
        fenchel_dual(g, 0.0, 0.0, 0.0, 0.0, radius=5.0, step=0.5)


def test_double_conjugate_rebuilds_driver():
    g = make_generator("neg_quad:gamma=1")
    dual = _dual(g)
    res = conjugacy_check(g, dual, [(0.0, 0.0, 0.0, 1.0)])
    # 21-point grids on [-5, 5]: residual within 2 * step^2 * gamma
    assert res <= 2 * 0.5 ** 2 * g.gamma


def test_double_conjugate_constant_driver():
    # f = -alpha constant in z: fhat(q) = -alpha + radius*|q| capped by the grid;
    # the reconstruction at z = 0 takes q = 0 and recovers -alpha exactly.
    alpha = 0.8
    g = GeneratorSpec(lambda t, x, y, z: -alpha + 0.0 * (x + y + z),
                      alpha=alpha, beta=0.0, gamma=1.0, kappa=0.0, z_shape="concave")
    dual = _dual(g)
    assert dual.reconstruct(0.0, 0.0, 0.0, 0.0) == pytest.approx(-alpha, abs=1e-12)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_quadratic_residual_bound(gamma):
    # residual <= 2 step^2 gamma measured across z samples, 21-point grids on [-5, 5]
    g = make_generator(f"neg_quad:gamma={gamma}")
    dual = _dual(g)
    samples = [(0.0, 0.0, 0.0, z) for z in np.linspace(-2, 2, 41)]
    assert conjugacy_check(g, dual, samples) <= 2 * 0.5 ** 2 * gamma


def test_lower_bound_holds_with_grid_slack():
    # fhat >= -alpha - beta|y| + q^2/(2 gamma); grid sup under-reads the true
    # conjugate by at most gamma*step^2/8, tight for the pure quadratic.
    rng = np.random.default_rng(3)
    for spec_id in ["neg_quad:gamma=1", "neg_quad:gamma=2",
                    "lipschitz_quad:gamma=1,kappa=0.5,shape=concave"]:
        g = make_generator(spec_id)
        step = 0.05
        dual = FenchelDual(generator=g, q_grid=np.linspace(-3, 3, 41),
                           z_grid_radius=8.0, z_grid_step=step)
        samples = [(0.0, 0.0, rng.uniform(-2, 2), rng.uniform(-2, 2) * g.gamma)
                   for _ in range(200)]
        slack = g.gamma * step ** 2 / 2.0
        assert dual.lower_bound_violation(samples) <= slack


def test_y_lipschitz_of_dual():
    g = make_generator("lipschitz_quad:gamma=1,kappa=0.7,shape=concave")
    dual = FenchelDual(generator=g, q_grid=np.linspace(-2, 2, 21),
                       z_grid_radius=8.0, z_grid_step=0.05)
    rng = np.random.default_rng(5)
    samples = [(0.0, 0.0, rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-1.5, 1.5))
               for _ in range(200)]
    assert dual.y_lipschitz_violation(samples) <= 1e-12
