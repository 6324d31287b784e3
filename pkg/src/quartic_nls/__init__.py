"""Truncated flows of the cubic fourth-order NLS on the circle with white noise data."""
from .dynamics import (FlowSpec, NonFiniteError, StepBudgetError, StepSizeError, TrajectoryRecord,
                       evolve_extended, evolve_truncated, gauge_deterministic, gauge_random,
                       linear_propagate, resonant_flow_exact, resonant_ode_oracle, resonant_series)
from .experiments import (ExperimentReport, StudySpec, benjamini_hochberg, default_spec, run_cancellation,
                          run_convergence, run_functional_tails, run_invariance, run_residual, run_study,
                          run_z1_scaling, stats_kit)
from .functionals import (EtaCutoff, FunctionalSpec, QuadratureError, RandomPhaseSpec, SpaceTimeField,
                          energy_increment, gauged_nonlin, multilinear_second_moment, nonlin_split,
                          quintic_duhamel, random_xsb_norm, resonant_duhamel, s_functional,
                          strichartz_ratio, xsb_norm)
from .randomness import (GaussianEnsemble, MollifierSpec, derive_trajectory_seed, mollify, sample_data,
                         tail_statistic)
from .spectral import (NormSpec, PhaseOverflowError, PhaseTuple, SpectralField, cubic_product,
                       cubic_product_direct, gamma_enumerate, norm, phase_factorized, phase_phi, project)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
