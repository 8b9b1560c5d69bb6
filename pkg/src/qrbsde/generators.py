"""Domain vocabulary: drivers, parameter sets, Markov coefficients, explicit bound constants.

A driver f(t, x, y, z) has quadratic growth in the slope variable z,
|f| <= alpha + beta*|y| + (gamma/2)*|z|^2, is kappa-Lipschitz in y, and is
declared convex or concave in z.  Drivers are opaque vectorized callables;
the declared structural constants are trusted but spot-audited by sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "GeneratorSpec",
    "ParameterSet",
    "MarkovModel",
    "AprioriConstants",
    "GeneratorError",
    "eval_generator",
    "apriori_constants",
    "phi_ode",
    "make_generator",
    "audit_growth",
    "audit_lipschitz",
    "audit_z_shape",
]


class GeneratorError(ValueError):
    """Malformed driver rule (non-finite output or inconsistent constants)."""


@dataclass(frozen=True)
class GeneratorSpec:
    """Driver f with its structural constants.

    ``evaluate(t, x, y, z)`` must accept scalars or broadcastable numpy
    arrays in (x, y, z) and return the matching array.  ``z_shape`` declares
    the convexity of z -> f(t, x, y, z): "convex", "concave" or "none".
    """

    evaluate: Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    alpha: float
    beta: float
    gamma: float
    kappa: float
    z_shape: str = "none"
    name: str = "custom"

    def __post_init__(self):
        if not self.gamma > 0:
            raise GeneratorError(f"gamma must be > 0 (got {self.gamma})")
        if self.alpha < 0 or self.beta < 0 or self.kappa < 0:
            raise GeneratorError("alpha, beta, kappa must be >= 0")
        if self.z_shape not in ("convex", "concave", "none"):
            raise GeneratorError(f"unknown z_shape {self.z_shape!r}")

    def __call__(self, t, x, y, z):
        return eval_generator(self, t, x, y, z)

    def shifted(self, delta: float) -> "GeneratorSpec":
        """Driver f + delta, used by stability perturbations."""
        base = self.evaluate
        return GeneratorSpec(
            evaluate=lambda t, x, y, z: base(t, x, y, z) + delta,
            alpha=self.alpha + abs(delta),
            beta=self.beta,
            gamma=self.gamma,
            kappa=self.kappa,
            z_shape=self.z_shape,
            name=f"{self.name}{delta:+g}",
        )


def eval_generator(g: GeneratorSpec, t, x, y, z):
    """Evaluate the driver, rejecting non-finite output."""
    out = np.asarray(g.evaluate(t, np.asarray(x), np.asarray(y), np.asarray(z)), dtype=float)
    if not np.all(np.isfinite(out)):
        raise GeneratorError(f"driver {g.name!r} produced non-finite values at t={t}")
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ParameterSet:
    """Terminal payoff xi(x), obstacle L(t, x) and driver: the data a reflected equation is posed with."""

    terminal: Callable[[np.ndarray], np.ndarray]
    obstacle: Callable[[float, np.ndarray], np.ndarray]
    generator: GeneratorSpec

    def check_order(self, other: "ParameterSet", terminal_states, obstacle_points) -> bool:
        """Sampled check that (self, other) are ordered: xi1 <= xi2 and L1 <= L2."""
        xs = np.asarray(terminal_states, dtype=float)
        if np.any(np.asarray(self.terminal(xs)) > np.asarray(other.terminal(xs)) + 0.0):
            return False
        for t, x in obstacle_points:
            if np.any(np.asarray(self.obstacle(t, np.asarray(x))) > np.asarray(other.obstacle(t, np.asarray(x)))):
                return False
        return True

    def validate_terminal_dominates(self, horizon: float, terminal_states) -> None:
        """Obstacle at the horizon may not exceed the terminal payoff (L_T <= xi)."""
        xs = np.asarray(terminal_states, dtype=float)
        lT = np.asarray(self.obstacle(horizon, xs), dtype=float)
        xi = np.asarray(self.terminal(xs), dtype=float)
        if np.any(lT > xi + 1e-12):
            raise ValueError("obstacle at the horizon exceeds the terminal payoff (need L_T <= xi)")


@dataclass(frozen=True)
class MarkovModel:
    """Forward-diffusion coefficients plus the reward data of the obstacle problem.

    ``drift``/``diffusion`` are vectorized (t, x) -> array; ``terminal_payoff``
    is x -> array; ``obstacle_fn`` is (t, x) -> array.  ``kappa_lip`` is the
    declared joint Lipschitz constant of the coefficients and the growth
    constant of the reward data, ``varpi`` in [1, 2) the growth exponent,
    ``sigma_star`` a declared sup bound of |diffusion| on the working domain,
    ``b0`` = sup_t |drift(t, 0)|, and ``horizon`` the terminal time.
    """

    drift: Callable[[float, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray], np.ndarray]
    terminal_payoff: Callable[[np.ndarray], np.ndarray]
    obstacle_fn: Callable[[float, np.ndarray], np.ndarray]
    generator: GeneratorSpec
    kappa_lip: float
    varpi: float
    sigma_star: float
    b0: float
    horizon: float

    def __post_init__(self):
        if not (1.0 <= self.varpi < 2.0):
            raise ValueError(f"varpi must lie in [1, 2) (got {self.varpi})")
        if self.horizon <= 0:
            raise ValueError("horizon must be > 0")

    def parameter_set(self) -> ParameterSet:
        return ParameterSet(
            terminal=self.terminal_payoff,
            obstacle=self.obstacle_fn,
            generator=self.generator,
        )

    def validate(self, xs=None, rng=None) -> None:
        """Sampled audit of the structural conditions on coefficients and reward data."""
        rng = rng or np.random.default_rng(0)
        if xs is None:
            xs = rng.uniform(-5.0, 5.0, size=64)
        xs = np.asarray(xs, dtype=float)
        ts = rng.uniform(0.0, self.horizon, size=xs.shape)
        hx = np.asarray(self.terminal_payoff(xs), dtype=float)
        lTx = np.asarray(self.obstacle_fn(self.horizon, xs), dtype=float)
        if np.any(lTx > hx + 1e-12):
            raise ValueError("obstacle at the horizon exceeds the terminal payoff (need l(T,x) <= h(x))")
        growth = self.kappa_lip * (1.0 + np.abs(xs) ** self.varpi)
        ltx = np.asarray(self.obstacle_fn(ts[0], xs), dtype=float)
        if np.any(np.abs(hx) > growth + 1e-9) or np.any(np.abs(ltx) > growth + 1e-9):
            raise ValueError("reward data violate the declared polynomial growth bound")
        # Lipschitz audit on coefficient pairs
        x2 = xs + rng.uniform(-1.0, 1.0, size=xs.shape)
        for t in ts[:8]:
            db = np.abs(np.asarray(self.drift(t, xs)) - np.asarray(self.drift(t, x2)))
            ds = np.abs(np.asarray(self.diffusion(t, xs)) - np.asarray(self.diffusion(t, x2)))
            if np.any(db + ds > self.kappa_lip * np.abs(xs - x2) + 1e-9):
                raise ValueError("coefficients violate the declared Lipschitz constant")


@dataclass(frozen=True)
class AprioriConstants:
    """Explicit constants of the upper bound Y_t <= c0 + (1/gamma) ln E[exp(...) | F_t]."""

    mu: float
    varphi: Callable[[float], float] = field(repr=False)
    c0: float
    gamma: float
    beta: float
    horizon: float


def apriori_constants(g: GeneratorSpec, T: float) -> AprioriConstants:
    """Bound constants for a driver over [0, T]: mu = alpha*gamma v beta v 1, c0 = mu*phi(T)/gamma."""
    if T <= 0:
        raise ValueError("T must be > 0")
    mu = max(g.alpha * g.gamma, g.beta, 1.0)
    beta = g.beta

    def varphi(s: float) -> float:
        if beta > 0:
            return (math.exp(beta * s) - 1.0) / beta
        return s

    return AprioriConstants(
        mu=mu,
        varphi=varphi,
        c0=mu * varphi(T) / g.gamma,
        gamma=g.gamma,
        beta=beta,
        horizon=T,
    )


def phi_ode(x: float, t: float, T_tilde: float, c: AprioriConstants, gamma: float, beta: float) -> float:
    """Closed-form solution of the dominating backward ODE with terminal value exp(gamma*x).

    Case x >= 0 is a single exponential; case x < 0 splits at
    exp(gamma*x) + mu*(T_tilde - t) = 1.  Decreasing in t, increasing in
    T_tilde and x, bounded by exp(mu*varphi(T) + gamma*x^+*exp(beta*T)).
    """
    if not 0 <= t <= T_tilde <= c.horizon + 1e-12:
        raise ValueError("need 0 <= t <= T_tilde <= T")
    mu = c.mu
    s = T_tilde - t

    def varphi(r: float) -> float:
        return (math.exp(beta * r) - 1.0) / beta if beta > 0 else r

    if x >= 0:
        return math.exp(mu * varphi(s) + gamma * x * math.exp(beta * s))
    egx = math.exp(gamma * x)
    if egx + mu * s < 1.0:
        return egx + mu * s
    return math.exp(mu * varphi(s + (egx - 1.0) / mu))


# ---------------------------------------------------------------------------
# Built-in driver catalog
# ---------------------------------------------------------------------------

def _parse_kv(body: str) -> dict:
    out = {}
    if not body:
        return out
    for item in body.split(","):
        if "=" not in item:
            raise GeneratorError(f"malformed catalog parameter {item!r} (expected key=value)")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def make_generator(spec_id: str) -> GeneratorSpec:
    """Build a catalog driver from its string id.

    Grammar (all numbers are float literals):
      zero
      quad:gamma=<g>                      (g/2)*z^2, convex
      neg_quad:gamma=<g>                 -(g/2)*z^2, concave
      affine:a=<a>,b=<b>                  a + b*y, convex (trivially)
      lipschitz_quad:gamma=<g>,kappa=<k>,shape=<convex|concave>
                                          +-(g/2)*z^2 - k*|y|
    """
    head, _, body = spec_id.partition(":")
    kv = _parse_kv(body)
    try:
        if head == "zero":
            return GeneratorSpec(lambda t, x, y, z: np.zeros(np.broadcast(x, y, z).shape),
                                 alpha=0.0, beta=0.0, gamma=1.0, kappa=0.0,
                                 z_shape="convex", name="zero")
        if head == "quad":
            g = float(kv["gamma"])
            return GeneratorSpec(lambda t, x, y, z: 0.5 * g * np.square(z) + 0.0 * (x + y),
                                 alpha=0.0, beta=0.0, gamma=g, kappa=0.0,
                                 z_shape="convex", name=spec_id)
        if head == "neg_quad":
            g = float(kv["gamma"])
            return GeneratorSpec(lambda t, x, y, z: -0.5 * g * np.square(z) + 0.0 * (x + y),
                                 alpha=0.0, beta=0.0, gamma=g, kappa=0.0,
                                 z_shape="concave", name=spec_id)
        if head == "affine":
            a, b = float(kv["a"]), float(kv["b"])
            return GeneratorSpec(lambda t, x, y, z: a + b * y + 0.0 * (x + z),
                                 alpha=abs(a), beta=abs(b), gamma=1.0, kappa=abs(b),
                                 z_shape="convex", name=spec_id)
        if head == "lipschitz_quad":
            g, k = float(kv["gamma"]), float(kv["kappa"])
            shape = kv.get("shape", "convex")
            sign = 1.0 if shape == "convex" else -1.0
            if shape not in ("convex", "concave"):
                raise GeneratorError(f"lipschitz_quad shape must be convex or concave (got {shape!r})")
            return GeneratorSpec(
                lambda t, x, y, z: sign * 0.5 * g * np.square(z) - k * np.abs(y) + 0.0 * x,
                alpha=0.0, beta=k, gamma=g, kappa=k, z_shape=shape, name=spec_id)
    except KeyError as exc:
        raise GeneratorError(f"catalog id {spec_id!r} is missing parameter {exc}") from None
    raise GeneratorError(f"unknown generator id {spec_id!r}")


# ---------------------------------------------------------------------------
# Sampled audits of the structural hypotheses
# ---------------------------------------------------------------------------

def _sample_points(rng, n, t_max=1.0, scale=5.0):
    t = rng.uniform(0.0, t_max, size=n)
    x = rng.uniform(-scale, scale, size=n)
    y = rng.uniform(-scale, scale, size=n)
    z = rng.uniform(-scale, scale, size=n)
    return t, x, y, z


def audit_growth(g: GeneratorSpec, n_samples: int = 10_000, seed: int = 0) -> float:
    """Max violation of |f| <= alpha + beta|y| + (gamma/2)|z|^2 over random samples (<= 0 means clean)."""
    rng = np.random.default_rng(seed)
    t, x, y, z = _sample_points(rng, n_samples)
    worst = -np.inf
    for ti in np.unique(np.round(t, 3))[:32]:
        vals = np.abs(eval_generator(g, ti, x, y, z))
        bound = g.alpha + g.beta * np.abs(y) + 0.5 * g.gamma * np.square(z)
        worst = max(worst, float(np.max(vals - bound)))
    return worst


def audit_lipschitz(g: GeneratorSpec, n_samples: int = 10_000, seed: int = 1) -> float:
    """Max violation of the y-Lipschitz bound kappa|y1 - y2| over random samples."""
    rng = np.random.default_rng(seed)
    t, x, y1, z = _sample_points(rng, n_samples)
    y2 = rng.uniform(-5.0, 5.0, size=n_samples)
    f1 = eval_generator(g, 0.3, x, y1, z)
    f2 = eval_generator(g, 0.3, x, y2, z)
    return float(np.max(np.abs(f1 - f2) - g.kappa * np.abs(y1 - y2)))


def audit_z_shape(g: GeneratorSpec, n_samples: int = 10_000, seed: int = 2) -> float:
    """Max midpoint convexity/concavity violation in z (theta = 1/2 surrogate)."""
    if g.z_shape == "none":
        return 0.0
    rng = np.random.default_rng(seed)
    t, x, y, z1 = _sample_points(rng, n_samples)
    z2 = rng.uniform(-5.0, 5.0, size=n_samples)
    mid = eval_generator(g, 0.3, x, y, 0.5 * (z1 + z2))
    chord = 0.5 * (eval_generator(g, 0.3, x, y, z1) + eval_generator(g, 0.3, x, y, z2))
    gap = mid - chord if g.z_shape == "convex" else chord - mid
    return float(np.max(gap))
