"""Transition path analysis for jump-diffusions with finite-activity noise.

The pieces fit together in pipeline order: build a model, simulate or scan
an equilibrium path, extract its transition legs, solve the stationary
density and the two committors on a grid, sample the conditioned transition
path process against the solved committor, and cross-validate rates from
counting, level-set flux, and mean hitting times.
"""

from .errors import (ConfigError, DependencyError, EmptyResultError,
                     LevyTptError, NumericError, SimulationError)
from .fields import ExtrapolationWarning, ScalarField1D
from .models import (LevyMeasureSpec, LevyModel, Region, ValidationReport,
                     build_model, gauss_legendre, region_gap, table_measure,
                     truncated_stable_measure, uniform_measure,
                     validate_assumptions)
from .operators import (apply_generator, apply_reverse_generator,
                        evaluate_generator, evaluate_reverse_generator)
from .simulate import (HitResult, ReactiveScan, Trajectory, run_reactive_scan,
                       simulate_path, simulate_until_hit, until_hit_ensemble)
from .solvers import (FieldSolution, SolverConfig,
                      diffusion_committor_closed_form,
                      diffusion_committor_value, generator_matrix,
                      reverse_generator_matrix, solve_backward_committor_1d,
                      solve_forward_committor_1d, solve_mean_hitting_time_1d,
                      solve_stationary_density_1d, stationary_flux_matrix)
from .transitions import (RateEstimate, TransitionTrajectory,
                          empirical_boundary_distributions, empirical_rate,
                          extract_transitions, rate_from_scan,
                          scan_to_transitions, transitions_to_csv)
from .mc import (CommittorEstimate, backward_committor_from_scan,
                 density_from_scan, estimate_backward_committor_mc,
                 estimate_committor_mc, estimate_density_mc,
                 mean_hitting_time_mc)
from .tpp import (EquivalenceReport, MartingaleReport, TppConfig, TppEnsemble,
                  TppPath, build_tpp_tables, corrupted_committor,
                  effective_drift, equivalence_report, jump_rate_lambda,
                  martingale_check, sample_tpp_ensemble, sample_tpp_path,
                  thinning_sampler)
from .stats import (BoundaryDistributions, RateReport, boundary_distributions,
                    diffusion_current_1d, divergence_residual,
                    hitting_distribution, level_crossings,
                    probability_current_1d, rate_from_flux,
                    rate_from_hitting_times, rate_report, reactive_density)
from .config import RunConfig, apply_overrides, load_config

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
