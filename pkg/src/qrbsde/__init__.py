"""Quadratic reflected BSDE laboratory: lattices, solvers, obstacle PDEs, theorem checks."""

from .generators import (
    AprioriConstants,
    GeneratorSpec,
    MarkovModel,
    ParameterSet,
    apriori_constants,
    eval_generator,
    make_generator,
    phi_ode,
)
from .duality import FenchelDual, conjugacy_check, fenchel_dual, lower_bound_check
from .lattice import (
    PathEnsemble,
    RecombiningLattice,
    build_lattice,
    ks_distance,
    moment_check,
    simulate_forward,
)
from .solver import (
    DiscreteSolution,
    apriori_bound_check,
    cole_hopf_oracle,
    flat_off_residual,
    snell_envelope,
    solve_bsde,
    solve_rbsde,
)
from .stopping import (
    LatticeStoppingTime,
    RewardProcess,
    brute_force_optimal_value,
    enumerate_stopping_times,
    g_evaluate,
    optimal_stop,
    reward_from_data,
)
from .pde import (
    PdeGrid,
    PdeSolution,
    growth_check,
    pde_residual,
    scheme_comparison,
    solve_obstacle_pde,
)
from .experiments import (
    PropertyReport,
    comparison_experiment,
    cross_validate,
    markov_property_check,
    property_suite,
    stability_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "AprioriConstants",
    "GeneratorSpec",
    "MarkovModel",
    "ParameterSet",
    "apriori_constants",
    "eval_generator",
    "make_generator",
    "phi_ode",
    "FenchelDual",
    "conjugacy_check",
    "fenchel_dual",
    "lower_bound_check",
    "PathEnsemble",
    "RecombiningLattice",
    "build_lattice",
    "ks_distance",
    "moment_check",
    "simulate_forward",
    "DiscreteSolution",
    "apriori_bound_check",
    "cole_hopf_oracle",
    "flat_off_residual",
    "snell_envelope",
    "solve_bsde",
    "solve_rbsde",
    "LatticeStoppingTime",
    "RewardProcess",
    "brute_force_optimal_value",
    "enumerate_stopping_times",
    "g_evaluate",
    "optimal_stop",
    "reward_from_data",
    "PdeGrid",
    "PdeSolution",
    "growth_check",
    "pde_residual",
    "scheme_comparison",
    "solve_obstacle_pde",
    "PropertyReport",
    "comparison_experiment",
    "cross_validate",
    "markov_property_check",
    "property_suite",
    "stability_experiment",
    "__version__",
]
