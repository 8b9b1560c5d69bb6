"""Run configuration: schema v1 parsing, validation and model assembly.

A run is a single JSON document (no flag soup); --seed, --experiment and
--output-dir are the only overrides.  Validation is total and failures carry
a pointer to the offending field, e.g. "model.generator: gamma must be > 0".
Coefficients and rewards are addressed by string ids from small catalogs:

  drift / diffusion:  zero | const:value=<v> | linear:rate=<r>
  terminal / reward:  identity | const:value=<v> | put:strike=<K> | call:strike=<K>
  obstacle:           any reward id | none            (none = far below, inactive)
  generator:          see qrbsde.generators.make_generator
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .generators import GeneratorError, MarkovModel, make_generator
from .pde import PdeGrid

__all__ = ["ConfigError", "RunConfig", "load_config", "config_hash"]

SCHEMA_VERSION = 1

EXPERIMENTS = (
    "solve-rbsde",
    "solve-pde",
    "optimal-stop",
    "cross-validate",
    "property-suite",
    "stability",
)


class ConfigError(ValueError):
    """Invalid configuration; message starts with the offending field path."""


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


def _parse_kv(body: str, path: str) -> dict:
    out = {}
    if not body:
        return out
    for item in body.split(","):
        if "=" not in item:
            _fail(path, f"malformed parameter {item!r} (expected key=value)")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            _fail(path, f"parameter {k.strip()!r} is not a number (got {v!r})")
    return out


def make_coefficient(spec_id: str, path: str):
    """Vectorized (t, x) -> array coefficient from its catalog id."""
    head, _, body = spec_id.partition(":")
    kv = _parse_kv(body, path)
    if head == "zero":
        return lambda t, x: np.zeros_like(np.asarray(x, dtype=float))
    if head == "const":
        if "value" not in kv:
            _fail(path, "const needs value=<v>")
        v = kv["value"]
        return lambda t, x: np.full_like(np.asarray(x, dtype=float), v)
    if head == "linear":
        if "rate" not in kv:
            _fail(path, "linear needs rate=<r>")
        r = kv["rate"]
        return lambda t, x: r * np.asarray(x, dtype=float)
    _fail(path, f"unknown coefficient id {spec_id!r}")


def make_reward(spec_id: str, path: str):
    """Vectorized x -> array reward from its catalog id."""
    head, _, body = spec_id.partition(":")
    kv = _parse_kv(body, path)
    if head == "identity":
        return lambda x: np.asarray(x, dtype=float)
    if head == "const":
        if "value" not in kv:
            _fail(path, "const needs value=<v>")
        v = kv["value"]
        return lambda x: np.full_like(np.asarray(x, dtype=float), v)
    if head == "put":
        if "strike" not in kv:
            _fail(path, "put needs strike=<K>")
        k = kv["strike"]
        return lambda x: np.maximum(k - np.asarray(x, dtype=float), 0.0)
    if head == "call":
        if "strike" not in kv:
            _fail(path, "call needs strike=<K>")
        k = kv["strike"]
        return lambda x: np.maximum(np.asarray(x, dtype=float) - k, 0.0)
    if head == "none":
        return lambda x: np.full_like(np.asarray(x, dtype=float), -1e9)
    _fail(path, f"unknown reward id {spec_id!r}")


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration plus the assembled model objects."""

    raw: dict
    experiment: str
    seed: int
    output_dir: str
    model: MarkovModel
    x0: float
    t0: float
    n_steps: int
    n_space: int
    n_time: int
    x_min: float
    x_max: float
    tolerances: dict = field(default_factory=dict)
    probes: list = field(default_factory=list)
    stability_ns: list = field(default_factory=lambda: [1, 2, 4, 8])
    stability_amplitude: float = 1e-3
    oracle: bool = False
    pde_scheme: str = "projected"

    def pde_grid(self) -> PdeGrid:
        return PdeGrid(x_min=self.x_min, x_max=self.x_max, n_space=self.n_space,
                       n_time=self.n_time, horizon=self.model.horizon)


def _get(d: dict, key: str, path: str, types, default=None, required=False):
    if key not in d:
        if required:
            _fail(f"{path}.{key}" if path else key, "missing required field")
        return default
    v = d[key]
    if not isinstance(v, types):
        tn = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        _fail(f"{path}.{key}" if path else key, f"expected {tn} (got {type(v).__name__})")
    return v


def load_config(doc: dict, overrides: dict | None = None) -> RunConfig:
    """Validate a parsed JSON document and assemble the run objects."""
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a JSON object")
    overrides = overrides or {}

    version = _get(doc, "schema_version", "", int, required=True)
    if version != SCHEMA_VERSION:
        _fail("schema_version", f"unsupported version {version} (current {SCHEMA_VERSION})")

    experiment = overrides.get("experiment") or _get(doc, "experiment", "", str, required=True)
    if experiment not in EXPERIMENTS:
        _fail("experiment", f"unknown experiment {experiment!r} (one of {', '.join(EXPERIMENTS)})")

    seed = overrides.get("seed")
    if seed is None:
        seed = _get(doc, "seed", "", int, default=0)
    if seed < 0:
        _fail("seed", f"must be >= 0 (got {seed})")

    output_dir = overrides.get("output_dir") or _get(doc, "output_dir", "", str, default="qrbsde-out")

    mdoc = _get(doc, "model", "", dict, required=True)
    horizon = _get(mdoc, "horizon", "model", (int, float), default=1.0)
    if horizon <= 0:
        _fail("model.horizon", f"must be > 0 (got {horizon})")
    x0 = float(_get(mdoc, "x0", "model", (int, float), required=True))
    t0 = float(_get(mdoc, "t0", "model", (int, float), default=0.0))
    if not 0 <= t0 < horizon:
        _fail("model.t0", f"must lie in [0, horizon) (got {t0})")

    gen_id = _get(mdoc, "generator", "model", str, required=True)
    try:
        generator = make_generator(gen_id)
    except GeneratorError as exc:
        _fail("model.generator", str(exc))
    if generator.gamma <= 0:
        _fail("model.generator", f"gamma must be > 0 (got {generator.gamma})")

    varpi = float(_get(mdoc, "varpi", "model", (int, float), default=1.0))
    if not (1.0 <= varpi < 2.0):
        _fail("model.varpi", f"must lie in [1, 2) (got {varpi})")
    kappa_lip = float(_get(mdoc, "kappa_lip", "model", (int, float), default=1.0))
    if kappa_lip < 0:
        _fail("model.kappa_lip", f"must be >= 0 (got {kappa_lip})")
    sigma_star = float(_get(mdoc, "sigma_star", "model", (int, float), default=1.0))
    b0 = float(_get(mdoc, "b0", "model", (int, float), default=0.0))

    drift = make_coefficient(_get(mdoc, "drift", "model", str, required=True), "model.drift")
    diffusion = make_coefficient(_get(mdoc, "diffusion", "model", str, required=True),
                                 "model.diffusion")
    terminal = make_reward(_get(mdoc, "terminal", "model", str, required=True), "model.terminal")
    obstacle_reward = make_reward(_get(mdoc, "obstacle", "model", str, default="none"),
                                  "model.obstacle")
    obstacle = lambda t, x: obstacle_reward(x)  # noqa: E731  obstacles are time-independent here

    try:
        model = MarkovModel(
            drift=drift, diffusion=diffusion, terminal_payoff=terminal,
            obstacle_fn=obstacle, generator=generator, kappa_lip=kappa_lip,
            varpi=varpi, sigma_star=sigma_star, b0=b0, horizon=float(horizon))
    except ValueError as exc:
        _fail("model", str(exc))

    ddoc = _get(doc, "discretization", "", dict, default={})
    n_steps = _get(ddoc, "n_steps", "discretization", int, default=100)
    if n_steps < 1:
        _fail("discretization.n_steps", f"must be >= 1 (got {n_steps})")
    n_space = _get(ddoc, "n_space", "discretization", int, default=200)
    if n_space < 3:
        _fail("discretization.n_space", f"must be >= 3 (got {n_space})")
    n_time = _get(ddoc, "n_time", "discretization", int, default=200)
    if n_time < 1:
        _fail("discretization.n_time", f"must be >= 1 (got {n_time})")

    dt = (float(horizon) - t0) / n_steps
    if generator.kappa * dt >= 1.0:
        _fail("discretization.n_steps",
              f"kappa*dt = {generator.kappa * dt:.3g} must be < 1 for the lattice scheme")
    if generator.kappa * float(horizon) / n_time >= 1.0:
        _fail("discretization.n_time",
              f"kappa*dt = {generator.kappa * float(horizon) / n_time:.3g} must be < 1 for the PDE scheme")

    if "x_min" in ddoc or "x_max" in ddoc:
        x_min = float(_get(ddoc, "x_min", "discretization", (int, float), required=True))
        x_max = float(_get(ddoc, "x_max", "discretization", (int, float), required=True))
    else:
        radius = float(_get(ddoc, "x_radius", "discretization", (int, float),
                            default=5.0 * sigma_star * math.sqrt(float(horizon))))
        if radius <= 0:
            _fail("discretization.x_radius", f"must be > 0 (got {radius})")
        x_min, x_max = x0 - radius, x0 + radius
    if x_max <= x_min:
        _fail("discretization.x_max", f"must exceed x_min (got [{x_min}, {x_max}])")
    if not (x_min <= x0 <= x_max):
        _fail("discretization.x_min", f"domain [{x_min}, {x_max}] must contain x0 = {x0}")

    tolerances = _get(doc, "tolerances", "", dict, default={})
    for k, v in tolerances.items():
        if not isinstance(v, (int, float)) or v < 0:
            _fail(f"tolerances.{k}", f"must be a nonnegative number (got {v!r})")

    probes = _get(doc, "probes", "", list, default=[])
    clean_probes = []
    for i, pt in enumerate(probes):
        if (not isinstance(pt, (list, tuple)) or len(pt) != 2
                or not all(isinstance(c, (int, float)) for c in pt)):
            _fail(f"probes[{i}]", f"expected [t, x] pair (got {pt!r})")
        if not (0 <= pt[0] < horizon):
            _fail(f"probes[{i}]", f"probe time {pt[0]} outside [0, horizon)")
        clean_probes.append((float(pt[0]), float(pt[1])))

    sdoc = _get(doc, "stability", "", dict, default={})
    ns = _get(sdoc, "ns", "stability", list, default=[1, 2, 4, 8])
    if (not ns or any(not isinstance(n, int) or n < 1 for n in ns)
            or any(b <= a for a, b in zip(ns, ns[1:]))):
        _fail("stability.ns", f"must be an increasing list of positive integers (got {ns})")
    amplitude = float(_get(sdoc, "amplitude", "stability", (int, float), default=1e-3))
    if amplitude <= 0:
        _fail("stability.amplitude", f"must be > 0 (got {amplitude})")

    oracle = _get(doc, "oracle", "", bool, default=False)
    pde_scheme = _get(doc, "pde_scheme", "", str, default="projected")
    if pde_scheme not in ("projected", "penalized"):
        _fail("pde_scheme", f"must be projected or penalized (got {pde_scheme!r})")

    return RunConfig(
        raw=doc, experiment=experiment, seed=int(seed), output_dir=output_dir,
        model=model, x0=x0, t0=t0, n_steps=n_steps, n_space=n_space, n_time=n_time,
        x_min=x_min, x_max=x_max, tolerances=dict(tolerances), probes=clean_probes,
        stability_ns=list(ns), stability_amplitude=amplitude, oracle=bool(oracle),
        pde_scheme=pde_scheme)


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()
