"""Nonlinear evaluations along stopping rules and the optimal-stopping engine.

The evaluation operator solves the driver-cutoff backward equation: the
driver acts strictly before the stop, the value is frozen at the stopped
payoff.  Stopping rules are node-indexed flags (Markov rules suffice on a
recombining lattice for node-indexed rewards), which keeps exhaustive
enumeration tractable on small trees and doubles as the brute-force oracle
for the optimal-stopping theorem: the reflected solution dominates every
rule's evaluation and attains it at the first contact of Y with the reward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .generators import GeneratorSpec, eval_generator
from .lattice import RecombiningLattice
from .solver import _check_scheme, solve_bsde

__all__ = [
    "RewardProcess",
    "LatticeStoppingTime",
    "EnumerationCapError",
    "reward_from_data",
    "g_evaluate",
    "optimal_stop",
    "enumerate_stopping_times",
    "brute_force_optimal_value",
    "contact_time",
]

CONTACT_TOL = 1e-10
ENUMERATION_CAP = 1 << 20


class EnumerationCapError(ValueError):
    """Too many adapted rules to enumerate (cap 2^20)."""


@dataclass(frozen=True)
class RewardProcess:
    """Running reward at interior levels, final reward at the terminal level."""

    running: list   # per-level arrays, levels 0 .. N-1
    final: np.ndarray

    def at_level(self, i: int, n_steps: int) -> np.ndarray:
        return self.final if i == n_steps else self.running[i]

    def validate(self, lattice: RecombiningLattice) -> None:
        if len(self.running) != lattice.n_steps:
            raise ValueError("running rewards must cover levels 0 .. N-1")
        for i, r in enumerate(self.running):
            if len(np.asarray(r)) != lattice.level_size(i):
                raise ValueError(f"running reward size mismatch at level {i}")
        if len(self.final) != lattice.level_size(lattice.n_steps):
            raise ValueError("final reward size mismatch")
        # the running reward one step before the horizon may not beat every
        # conditional view of the final one by construction L_T <= xi; checked
        # where comparable (conditional expectation under the lattice measure)
        if lattice.n_steps >= 1:
            last = np.asarray(self.running[-1], dtype=float)
            cond = lattice.expect(lattice.n_steps - 1, np.asarray(self.final, dtype=float))
            if np.any(last > np.maximum(cond, np.max(self.final)) + 1e-9):
                raise ValueError("running reward exceeds any conditional view of the final reward")


def reward_from_data(lattice: RecombiningLattice, obstacle, terminal) -> RewardProcess:
    """Reward with the obstacle running and the terminal payoff final."""
    running = []
    for i in range(lattice.n_steps):
        x = lattice.nodes[i]
        running.append(np.broadcast_to(
            np.asarray(obstacle(float(lattice.times[i]), x), dtype=float), x.shape).copy())
    xT = lattice.nodes[-1]
    final = np.broadcast_to(np.asarray(terminal(xT), dtype=float), xT.shape).copy()
    return RewardProcess(running=running, final=final)


@dataclass(frozen=True)
class LatticeStoppingTime:
    """Adapted stopping rule as per-node flags; forced to stop at the terminal level."""

    stop_flag: list  # per-level boolean arrays

    def validate(self, lattice: RecombiningLattice) -> None:
        if len(self.stop_flag) != lattice.n_steps + 1:
            raise ValueError("stop flags must cover every level")
        for i, f in enumerate(self.stop_flag):
            if len(np.asarray(f)) != lattice.level_size(i):
                raise ValueError(f"stop flag size mismatch at level {i}")
        if not np.all(np.asarray(self.stop_flag[-1], dtype=bool)):
            raise ValueError("every path must stop by the terminal level")

    @classmethod
    def at_root(cls, lattice: RecombiningLattice) -> "LatticeStoppingTime":
        flags = [np.ones(lattice.level_size(i), dtype=bool) for i in range(lattice.n_steps + 1)]
        return cls(stop_flag=flags)

    @classmethod
    def at_level(cls, lattice: RecombiningLattice, level: int) -> "LatticeStoppingTime":
        flags = [np.full(lattice.level_size(i), i >= level, dtype=bool)
                 for i in range(lattice.n_steps + 1)]
        return cls(stop_flag=flags)

    def stops_every_path(self, lattice: RecombiningLattice) -> bool:
        """Exhaustive check that no path survives past the terminal level."""
        alive = np.array([not self.stop_flag[0][0]])
        for i in range(lattice.n_steps):
            size = lattice.level_size(i)
            nxt = np.zeros(lattice.level_size(i + 1), dtype=bool)
            for j in range(lattice.n_children):
                nxt[j:j + size] |= alive
            alive = nxt & ~np.asarray(self.stop_flag[i + 1], dtype=bool)
        return not np.any(alive)


def g_evaluate(lattice: RecombiningLattice, g: GeneratorSpec,
               tau: LatticeStoppingTime, payoff_at_tau: list) -> list:
    """Per-node evaluation of the stopped payoff under the driver-cutoff equation.

    ``payoff_at_tau`` carries the payoff on stop nodes and NaN elsewhere;
    payoff on non-stopped nodes is rejected.
    """
    tau.validate(lattice)
    Y, _ = solve_bsde(lattice, g, None, stop_flags=tau.stop_flag, stop_payoff=payoff_at_tau)
    return Y


def payoff_along(reward: RewardProcess, tau: LatticeStoppingTime,
                 lattice: RecombiningLattice) -> list:
    """Reward sampled at the rule's stop nodes, NaN elsewhere."""
    out = []
    for i in range(lattice.n_steps + 1):
        r = np.asarray(reward.at_level(i, lattice.n_steps), dtype=float)
        stop = np.asarray(tau.stop_flag[i], dtype=bool)
        out.append(np.where(stop, r, np.nan))
    return out


def contact_time(lattice: RecombiningLattice, Y: list, reward: RewardProcess,
                 tol: float = CONTACT_TOL) -> LatticeStoppingTime:
    """First contact of the value with the reward: stop where Y = R (within tol)."""
    flags = []
    for i in range(lattice.n_steps + 1):
        r = np.asarray(reward.at_level(i, lattice.n_steps), dtype=float)
        if i == lattice.n_steps:
            flags.append(np.ones(lattice.level_size(i), dtype=bool))
        else:
            flags.append(np.abs(np.asarray(Y[i]) - r) <= tol)
    return LatticeStoppingTime(stop_flag=flags)


def optimal_stop(lattice: RecombiningLattice, g: GeneratorSpec, reward: RewardProcess,
                 nu: LatticeStoppingTime | None = None) -> tuple:
    """Value of the optimal-stopping problem from nu and the first-contact rule.

    The value process is the reflected solution with the running reward as
    obstacle and the final reward as terminal data; the optimal rule stops at
    the first node (at or after nu) where the value meets the reward.
    Returns (value, tau_star): value is the root scalar when nu is the root,
    otherwise the per-node array of values masked to nu's stop nodes.
    """
    reward.validate(lattice)
    _check_scheme(g, lattice)
    N = lattice.n_steps
    dt = lattice.dt
    Y = [None] * (N + 1)
    Y[N] = np.asarray(reward.final, dtype=float).copy()
    for i in range(N - 1, -1, -1):
        x = lattice.nodes[i]
        t = float(lattice.times[i])
        ey = lattice.expect(i, Y[i + 1])
        z = lattice.zslope(i, Y[i + 1])
        cont = ey + np.asarray(eval_generator(g, t, x, ey, z)) * dt
        Y[i] = np.maximum(np.asarray(reward.running[i], dtype=float), cont)
    tau_star = contact_time(lattice, Y, reward)
    if nu is None:
        return float(Y[0][0]), tau_star
    nu.validate(lattice)
    value = [np.where(np.asarray(nu.stop_flag[i], dtype=bool), Y[i], np.nan)
             for i in range(N + 1)]
    return value, tau_star


def _interior_sizes(lattice: RecombiningLattice) -> list:
    return [lattice.level_size(i) for i in range(lattice.n_steps)]


def enumerate_stopping_times(lattice: RecombiningLattice) -> list:
    """All adapted node-flag rules on a small lattice (interior flags free, terminal forced)."""
    n_interior = sum(_interior_sizes(lattice))
    if 2 ** n_interior > ENUMERATION_CAP:
        raise EnumerationCapError(
            f"2^{n_interior} rules exceed the enumeration cap 2^20")
    sizes = _interior_sizes(lattice)
    rules = []
    for bits in range(2 ** n_interior):
        flags = []
        k = 0
        for size in sizes:
            f = np.zeros(size, dtype=bool)
            for j in range(size):
                f[j] = bool((bits >> (k + j)) & 1)
            k += size
            flags.append(f)
        flags.append(np.ones(lattice.level_size(lattice.n_steps), dtype=bool))
        rules.append(LatticeStoppingTime(stop_flag=flags))
    return rules


def brute_force_optimal_value(lattice: RecombiningLattice, g: GeneratorSpec,
                              reward: RewardProcess) -> tuple:
    """sup over every enumerable rule of its evaluation at the root.

    Semantically identical to mapping ``g_evaluate`` over
    ``enumerate_stopping_times``; the recursion is batched across rules for
    speed.  Returns (best value, index of a maximizing rule).
    """
    reward.validate(lattice)
    _check_scheme(g, lattice)
    sizes = _interior_sizes(lattice)
    n_interior = sum(sizes)
    if 2 ** n_interior > ENUMERATION_CAP:
        raise EnumerationCapError(f"2^{n_interior} rules exceed the enumeration cap 2^20")
    n_rules = 2 ** n_interior
    rule_ids = np.arange(n_rules, dtype=np.int64)
    N = lattice.n_steps
    dt = lattice.dt
    V = np.broadcast_to(np.asarray(reward.final, dtype=float),
                        (n_rules, lattice.level_size(N))).copy()
    offset = n_interior
    for i in range(N - 1, -1, -1):
        size = sizes[i]
        offset -= size
        x = lattice.nodes[i]
        t = float(lattice.times[i])
        ey = lattice.expect(i, V)
        z = lattice.zslope(i, V)
        cont = ey + np.asarray(eval_generator(g, t, x, ey, z)) * dt
        bit = (rule_ids[:, None] >> (offset + np.arange(size)[None, :])) & 1
        V = np.where(bit.astype(bool), np.asarray(reward.running[i], dtype=float), cont)
    best = int(np.argmax(V[:, 0]))
    return float(V[best, 0]), best
