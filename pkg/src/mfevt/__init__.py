"""Mean-field particle systems and the extreme-value behavior of their maxima."""

from .drifts import PolynomialDrift, drift_from_name
from .errors import (ConfigError, DomainError, EnumerationBudgetError, FormatError,
                     GridExtensionError, MfevtError, ModelInvalidError,
                     NumericOverflowError, ParameterError, TailResolutionError)
from .models import (DriftInteractionModel, OUModelParams, RankBasedModelParams,
                     build_ou_model, build_rank_model, ou_correlation, ou_variance,
                     validate_assumptions)
from .sde import (ParticleEnsemble, RngSpec, SimConfig, Trajectory,
                  empirical_mean_path, run_replicates, simulate_iid_ou,
                  simulate_iid_rank_stationary, simulate_interacting, step_interacting)
from .stationary import (GridSpec, StationaryCdf, bfrak, inverse_cdf_sample,
                         solve_stationary_cdf, von_mises_limit)
from .evt import (EvtReport, MaximaSample, NormalizingConstants, gaussian_norm_constants,
                  gumbel_cdf, joint_independence_report, ks_one_sample, ks_two_sample,
                  norm_constants_from_cdf, normalize_maxima)
from .lemmas import (Alg45Result, DensityPath, GProcessSpec, IndexConfig, alg45_check,
                     condition1_holds, condition2_holds, counting_bound, density_mc,
                     enumerate_failing_configs, girsanov_consistency, iterated_lp_mc,
                     simulate_density_process, zero_expectation_mc)
from .cli import ExperimentConfig, load_config, render_svg, run_experiment, run_lemma_suite

__version__ = "0.1.0"
