"""Constrained Skorokhod embedding solver for robust variance-option pricing
under insider information."""

__version__ = "0.1.0"

from .errors import (ConfigError, ConsepError, HorizonError, InfeasibleInstance,
                     MassConservationError, SolverError)
from .hedge import HedgePackage, PayoffSpec, assemble_h, build_hedge, compute_lambda
from .hedge import hedge_ratios, price, solve_phi
from .measures import (Barycenter, GridMeasure, GridSpec, Potential, barycenter,
                       build_mixture, convex_order, potential, potential_at)
from .mc import (PathConfig, SimResult, barrier_support_check, pathwise_subhedge_check,
                 primal_estimate, simulate, simulate_ay, verify_embedding)
from .noarb import (FeasibilityVerdict, check_ay, check_lambda2, check_lambda3,
                    check_root_inclusion, unconstrained_root_barrier)
from .optstop import (Barrier, ObstacleSurface, SolverParams, ValueSurface,
                      build_obstacle, extract_barrier, forward_absorb, solve_value,
                      verify_embedding_forward)
from .stopping import (StartingLaw, StoppedPotentialSurface, StoppingSpec,
                       evolve_starting_law, marginal_law, stopped_potential)
