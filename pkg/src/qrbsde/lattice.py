"""Recombining lattices and Monte Carlo ensembles for the forward diffusion.

The lattice marches node positions along the unit-diffusion coordinate
(dx/dpsi = sigma), which makes constant-sigma models additively spaced and
multiplicative models geometrically spaced while always recombining.  Per-node
probabilities are tilted so the one-step conditional mean equals drift*dt
exactly; the binomial matches the second moment exactly for constant
coefficients and to O(dt^2) otherwise, the trinomial matches it exactly at
every node.  Probabilities falling outside [0, 1] are a hard failure, never
silently clipped: monotonicity of the backward recursion depends on them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .generators import MarkovModel

__all__ = [
    "RecombiningLattice",
    "PathEnsemble",
    "LatticeBuildError",
    "build_lattice",
    "simulate_forward",
    "moment_check",
    "ks_distance",
]

_DEGENERATE_SIGMA = 1e-14


class LatticeBuildError(ValueError):
    """Moment matching produced an invalid probability (dt too large for the drift)."""


@dataclass(frozen=True)
class RecombiningLattice:
    """Discrete-time Markov approximation of the forward diffusion on [t0, T]."""

    t0: float
    T: float
    n_steps: int
    times: np.ndarray
    nodes: list                 # per-level state arrays
    probs: list                 # per-level (size, n_children) transition probabilities
    structure: str              # "binomial" | "trinomial"
    degenerate: bool = False    # sigma == 0 chain: one node per level
    _zweights: list = field(default_factory=list, repr=False)

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @property
    def n_children(self) -> int:
        if self.degenerate:
            return 1
        return 2 if self.structure == "binomial" else 3

    def level_size(self, i: int) -> int:
        return len(self.nodes[i])

    def child_slice(self, i: int, values_next: np.ndarray) -> np.ndarray:
        """Stack child values of every level-i node along a trailing axis.

        ``values_next`` may carry leading batch axes; the last axis indexes
        level-(i+1) nodes and the result has shape (..., size_i, n_children).
        """
        v = np.asarray(values_next)
        size = self.level_size(i)
        if self.degenerate:
            return v[..., :1][..., None]
        cols = [v[..., j:j + size] for j in range(self.n_children)]
        return np.stack(cols, axis=-1)

    def expect(self, i: int, values_next: np.ndarray) -> np.ndarray:
        """One-step conditional expectation E_i[v_{i+1}] at every level-i node."""
        return np.sum(self.probs[i] * self.child_slice(i, values_next), axis=-1)

    def zslope(self, i: int, values_next: np.ndarray) -> np.ndarray:
        """Martingale-representation regression E_i[v_{i+1} dB]/dt at every level-i node."""
        return np.sum(self._zweights[i] * self.child_slice(i, values_next), axis=-1)

    def reach_probs(self) -> list:
        """Forward measure: probability of visiting each node, level by level."""
        out = [np.array([1.0])]
        for i in range(self.n_steps):
            nxt = np.zeros(self.level_size(i + 1))
            size = self.level_size(i)
            for j in range(self.n_children):
                nxt[j:j + size] += out[i] * self.probs[i][:, j]
            out.append(nxt)
        return out

    def sublattice(self, i: int, j: int) -> "RecombiningLattice":
        """Lattice rooted at node (i, j) whose levels are views of this one's sub-tree.

        Shared arrays make backward induction on the sub-tree bit-identical to
        the corresponding portion of a full solve: this is what makes the flow
        identity exact.
        """
        w = self.n_children - 1  # per-level width growth (0 for the chain)
        nodes = [self.nodes[i + r][j:j + w * r + 1] for r in range(self.n_steps - i + 1)]
        probs = [self.probs[i + r][j:j + w * r + 1] for r in range(self.n_steps - i)]
        zw = [self._zweights[i + r][j:j + w * r + 1] for r in range(self.n_steps - i)]
        return RecombiningLattice(
            t0=float(self.times[i]), T=self.T, n_steps=self.n_steps - i,
            times=self.times[i:], nodes=nodes, probs=probs,
            structure=self.structure, degenerate=self.degenerate, _zweights=zw)

    def truncate(self, n: int) -> "RecombiningLattice":
        """First n steps of this lattice, sharing its arrays."""
        if not 1 <= n <= self.n_steps:
            raise ValueError("truncation step out of range")
        return RecombiningLattice(
            t0=self.t0, T=float(self.times[n]), n_steps=n, times=self.times[:n + 1],
            nodes=self.nodes[:n + 1], probs=self.probs[:n],
            structure=self.structure, degenerate=self.degenerate,
            _zweights=self._zweights[:n])

    def one_step_moments(self, i: int) -> tuple:
        """(E[dX], E[dX^2]) arrays at level i, from the constructed probabilities."""
        dx = self.child_slice(i, self.nodes[i + 1]) - self.nodes[i][:, None]
        m1 = np.sum(self.probs[i] * dx, axis=1)
        m2 = np.sum(self.probs[i] * dx * dx, axis=1)
        return m1, m2


def _march_positions(model: MarkovModel, t0: float, x0: float, k: float, n_offsets: int) -> np.ndarray:
    """Node states at psi-offsets -n..n: RK4 on dx/dpsi = |sigma(t0, x)|, frozen at t0."""
    def rhs(x):
        return abs(float(model.diffusion(t0, np.asarray(x))))

    pos = np.empty(2 * n_offsets + 1)
    pos[n_offsets] = x0
    for direction in (+1, -1):
        x = x0
        for step in range(1, n_offsets + 1):
            h = direction * k / 4.0
            for _ in range(4):  # RK4 substeps per offset
                k1 = rhs(x)
                k2 = rhs(x + 0.5 * h * k1)
                k3 = rhs(x + 0.5 * h * k2)
                k4 = rhs(x + h * k3)
                x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            pos[n_offsets + direction * step] = x
    return pos


def build_lattice(model: MarkovModel, t0: float, x0: float, n_steps: int,
                  structure: str = "binomial") -> RecombiningLattice:
    """Moment-matched recombining lattice rooted at (t0, x0).

    A vanishing diffusion collapses to the deterministic Euler chain.  State
    is one-dimensional; use Monte Carlo for anything else.
    """
    if n_steps < 1:
        raise LatticeBuildError("n_steps must be >= 1")
    if structure not in ("binomial", "trinomial"):
        raise LatticeBuildError(f"unknown structure {structure!r}")
    T = model.horizon
    if not t0 < T:
        raise LatticeBuildError("need t0 < horizon")
    dt = (T - t0) / n_steps
    times = t0 + dt * np.arange(n_steps + 1)

    if abs(float(model.diffusion(t0, np.asarray(x0)))) < _DEGENERATE_SIGMA:
        return _build_chain(model, t0, x0, n_steps, dt, times, structure)

    k = np.sqrt(dt) if structure == "binomial" else np.sqrt(3.0 * dt)
    pos = _march_positions(model, t0, x0, k, n_steps)
    ctr = n_steps

    nodes, probs, zweights = [], [], []
    for i in range(n_steps + 1):
        if structure == "binomial":
            offsets = np.arange(-i, i + 1, 2)
        else:
            offsets = np.arange(-i, i + 1)
        nodes.append(pos[ctr + offsets].copy())

    for i in range(n_steps):
        x = nodes[i]
        t = float(times[i])
        m1 = np.asarray(model.drift(t, x), dtype=float) * dt
        if structure == "binomial":
            x_dn, x_up = nodes[i + 1][:len(x)], nodes[i + 1][1:len(x) + 1]
            span = x_up - x_dn
            if np.any(span <= 0):
                raise LatticeBuildError("node positions not strictly increasing (degenerate sigma region)")
            p = (m1 + x - x_dn) / span
            if np.any(p < 0.0) or np.any(p > 1.0):
                raise LatticeBuildError(
                    f"binomial up-probability outside [0,1] at step {i}: dt too large for the drift")
            pr = np.stack([1.0 - p, p], axis=1)
        else:
            # middle child sits at the parent's psi-offset, so x_mid == x and
            # only (up, down) enter the two moment equations
            x_dn, x_up = nodes[i + 1][:len(x)], nodes[i + 1][2:len(x) + 2]
            a = x_up - x
            c = x - x_dn
            if np.any(a <= 0) or np.any(c <= 0):
                raise LatticeBuildError("node positions not strictly increasing (degenerate sigma region)")
            sig = np.asarray(model.diffusion(t, x), dtype=float)
            v = sig * sig * dt + m1 * m1
            p_up = (v + m1 * c) / (a * (a + c))
            p_dn = (v - m1 * a) / (c * (a + c))
            p_md = 1.0 - p_up - p_dn
            if np.any(p_up < 0) or np.any(p_dn < 0) or np.any(p_md < 0):
                raise LatticeBuildError(
                    f"trinomial probability outside [0,1] at step {i}: dt too large for the drift")
            pr = np.stack([p_dn, p_md, p_up], axis=1)
        probs.append(pr)
        zweights.append(_z_weights(nodes[i], nodes[i + 1], pr, dt))

    return RecombiningLattice(t0=t0, T=T, n_steps=n_steps, times=times,
                              nodes=nodes, probs=probs, structure=structure,
                              _zweights=zweights)


def _z_weights(x, x_next, pr, dt):
    """Per-child weights so that sum(w * v_child) = E[v dB]/dt, with E[dB]=0, E[dB^2]=dt."""
    size = len(x)
    n_children = pr.shape[1]
    dx = np.stack([x_next[j:j + size] for j in range(n_children)], axis=1) - x[:, None]
    m1 = np.sum(pr * dx, axis=1, keepdims=True)
    centered = dx - m1
    var = np.sum(pr * centered * centered, axis=1, keepdims=True)
    scale = np.where(var > 0, np.sqrt(dt / np.maximum(var, 1e-300)), 0.0)
    db = centered * scale
    return pr * db / dt


def _build_chain(model, t0, x0, n_steps, dt, times, structure):
    """Deterministic Euler chain for sigma == 0."""
    nodes = [np.array([x0])]
    x = x0
    for i in range(n_steps):
        if abs(float(model.diffusion(float(times[i]), np.asarray(x)))) > _DEGENERATE_SIGMA:
            raise LatticeBuildError(
                "diffusion vanishes at the root but not along the chain; use Monte Carlo for this model")
        x = x + float(model.drift(float(times[i]), np.asarray(x))) * dt
        nodes.append(np.array([x]))
    probs = [np.ones((1, 1)) for _ in range(n_steps)]
    zweights = [np.zeros((1, 1)) for _ in range(n_steps)]
    return RecombiningLattice(t0=t0, T=model.horizon, n_steps=n_steps, times=times,
                              nodes=nodes, probs=probs, structure=structure,
                              degenerate=True, _zweights=zweights)


# ---------------------------------------------------------------------------
# Monte Carlo ensembles
# ---------------------------------------------------------------------------

_BLOCK = 4096  # paths per counter-based stream


@dataclass(frozen=True)
class PathEnsemble:
    """Euler paths of the forward diffusion; frozen at x0 before t0."""

    t0: float
    T: float
    n_steps: int
    n_paths: int
    seed: int
    times: np.ndarray
    values: np.ndarray          # (n_paths, n_steps + 1)
    scheme: str = "euler"

    def state(self, s: float) -> np.ndarray:
        """Path states at time s, honoring the freeze convention on [0, t0]."""
        if s <= self.t0:
            return self.values[:, 0]
        idx = int(round((s - self.t0) / (self.T - self.t0) * self.n_steps))
        return self.values[:, min(idx, self.n_steps)]

    def export_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "step", "t", "x"])
            for pid in range(self.n_paths):
                for step in range(self.n_steps + 1):
                    w.writerow([pid, step, f"{self.times[step]:.12g}", f"{self.values[pid, step]:.17g}"])


def _block_normals(seed: int, block: int, shape) -> np.ndarray:
    # Philox is counter-based: (seed, block) keys give disjoint reproducible streams.
    key = np.array([seed % (1 << 64), block], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).standard_normal(shape)


def simulate_forward(model: MarkovModel, t0: float, x0: float, n_steps: int,
                     n_paths: int, seed: int) -> PathEnsemble:
    """Euler ensemble over [t0, T], merged deterministically by path index."""
    if n_paths < 1 or n_steps < 1:
        raise ValueError("n_paths and n_steps must be >= 1")
    T = model.horizon
    dt = (T - t0) / n_steps
    times = t0 + dt * np.arange(n_steps + 1)
    values = np.empty((n_paths, n_steps + 1))
    values[:, 0] = x0
    sqdt = np.sqrt(dt)
    for block_start in range(0, n_paths, _BLOCK):
        block = block_start // _BLOCK
        m = min(_BLOCK, n_paths - block_start)
        dw = _block_normals(seed, block, (m, n_steps))
        x = np.full(m, float(x0))
        for i in range(n_steps):
            t = float(times[i])
            x = x + np.asarray(model.drift(t, x)) * dt \
                  + np.asarray(model.diffusion(t, x)) * sqdt * dw[:, i]
            values[block_start:block_start + m, i + 1] = x
    return PathEnsemble(t0=t0, T=T, n_steps=n_steps, n_paths=n_paths, seed=seed,
                        times=times, values=values)


@dataclass(frozen=True)
class MomentReport:
    """Sampled exponential moment and sup-square ratio against their reference shapes."""

    exp_moment: float           # E[exp(p sup_s |X_s|^varpi)]
    exp_bound_reference: float  # exp(p 3^(varpi-1) e^(kappa varpi T) |x0|^varpi)
    c_tilde_measured: float     # ratio of the two
    sup_sq_ratio: float         # E[sup |X - x0|^2] / ((1 + |x0|^2)(T - t0))
    finite: bool
    bound_violated: bool


def moment_check(ensemble: PathEnsemble, model: MarkovModel, p: float) -> MomentReport:
    """Report the sampled exponential moment of sup |X|^varpi and the sup-square ratio."""
    if not model.varpi < 2.0:
        raise ValueError("varpi must be < 2 for the exponential moment to be finite")
    sup_abs = np.max(np.abs(ensemble.values), axis=1)
    arg = p * sup_abs ** model.varpi
    overflow = bool(np.any(arg > 700.0))
    exp_moment = float("inf") if overflow else float(np.mean(np.exp(arg)))
    x0 = float(ensemble.values[0, 0])
    ref = float(np.exp(p * 3.0 ** (model.varpi - 1.0)
                       * np.exp(model.kappa_lip * model.varpi * model.horizon)
                       * abs(x0) ** model.varpi))
    sup_sq = np.max((ensemble.values - x0) ** 2, axis=1)
    denom = (1.0 + x0 * x0) * (ensemble.T - ensemble.t0)
    return MomentReport(
        exp_moment=exp_moment,
        exp_bound_reference=ref,
        c_tilde_measured=exp_moment / ref if np.isfinite(exp_moment) else float("inf"),
        sup_sq_ratio=float(np.mean(sup_sq)) / denom,
        finite=not overflow,
        bound_violated=overflow,
    )


def ks_distance(lattice: RecombiningLattice, samples: np.ndarray) -> float:
    """Continuity-corrected Kolmogorov-Smirnov distance, terminal lattice law vs samples.

    The lattice terminal law is atomic; its CDF is compared to the empirical
    one at the atoms using the mid-jump convention F(x-) + mass/2, which is
    the appropriate comparison between a staircase and a continuous law.
    """
    atoms = lattice.nodes[-1]
    weights = lattice.reach_probs()[-1]
    order = np.argsort(atoms)
    atoms, weights = atoms[order], weights[order]
    cum = np.cumsum(weights)
    mid = cum - 0.5 * weights
    samples = np.sort(np.asarray(samples))
    emp = np.searchsorted(samples, atoms, side="right") / len(samples)
    return float(np.max(np.abs(mid - emp)))
