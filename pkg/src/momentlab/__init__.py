"""Equilibrium moment relations for one-dimensional polynomial Itô SDEs."""
from .estimates import EquilibriumEstimate
from .fpe import (Grid, GridDensity, FpeInstabilityError, build_grid, density_moments,
                  fpe_equilibrium, fpe_evolve, width_sweep)
from .mc import SimConfig, em_step, run_ensemble
from .poly import Polynomial, as_rational, gaussian_expectation, gaussian_raw_moment, poly_arith
from .relations import (ClosureInfeasible, MomentRelation, RelationClassification,
                        classify_relation, closure_estimate, critical_sigma_cubic,
                        derive_relation, find_verdict_flip, gaussian_closure_mu2,
                        paper_general_relation, relation_residual)
from .systems import (ItoSystem, cubic_attractor, em_transition_params, langevin_to_ito,
                      make_system, ornstein_uhlenbeck)

__version__ = "0.1.0"
