import numpy as np

from qrbsde.generators import GeneratorSpec, MarkovModel, make_generator


def const_model(b=0.0, sigma=1.0, horizon=1.0, generator=None,
                terminal=None, obstacle=None, varpi=1.0, kappa_lip=None):
    """Arithmetic model with constant coefficients."""
    terminal = terminal or (lambda x: x)
    obstacle = obstacle or (lambda t, x: np.full_like(np.asarray(x, dtype=float), -1e9))
    return MarkovModel(
        drift=lambda t, x: np.full_like(np.asarray(x, dtype=float), b),
        diffusion=lambda t, x: np.full_like(np.asarray(x, dtype=float), sigma),
        terminal_payoff=terminal,
        obstacle_fn=obstacle,
        generator=generator or make_generator("zero"),
        kappa_lip=kappa_lip if kappa_lip is not None else max(abs(b), 1.0),
        varpi=varpi,
        sigma_star=abs(sigma),
        b0=abs(b),
        horizon=horizon,
    )


def gbm_model(rate=0.0, vol=0.2, horizon=1.0, strike=1.0, generator=None,
              obstacle_is_payoff=True):
    """Multiplicative model with the put reward (K - x)^+ as terminal and obstacle."""
    payoff = lambda x: np.maximum(strike - np.asarray(x, dtype=float), 0.0)  # noqa: E731
    if obstacle_is_payoff:
        obstacle = lambda t, x: payoff(x)  # noqa: E731
    else:
        obstacle = lambda t, x: np.full_like(np.asarray(x, dtype=float), -1e9)  # noqa: E731
    return MarkovModel(
        drift=lambda t, x: rate * np.asarray(x, dtype=float),
        diffusion=lambda t, x: vol * np.asarray(x, dtype=float),
        terminal_payoff=payoff,
        obstacle_fn=obstacle,
        generator=generator or make_generator("zero"),
        kappa_lip=max(abs(rate) + abs(vol), strike),
        varpi=1.0,
        sigma_star=3.0 * vol,
        b0=0.0,
        horizon=horizon,
    )


def custom_model(drift, diffusion, terminal, obstacle, generator=None, horizon=1.0,
                 kappa_lip=1.0, varpi=1.0, sigma_star=1.0, b0=0.0):
    return MarkovModel(
        drift=drift, diffusion=diffusion, terminal_payoff=terminal, obstacle_fn=obstacle,
        generator=generator or make_generator("zero"),
        kappa_lip=kappa_lip, varpi=varpi, sigma_star=sigma_star, b0=b0, horizon=horizon,
    )


def no_obstacle(x_like_t, x):
    return np.full_like(np.asarray(x, dtype=float), -1e9)
