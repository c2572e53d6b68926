"""Bayesian hidden semi-Markov models fitted through expanded-state hidden Markov models.

Each semi-Markov state is represented by a block of ``a`` hidden Markov
states whose transitions reproduce the dwell distribution exactly up to
``a`` and geometrically beyond it. Likelihood, posterior sampling, model
comparison and forecasting all run on the expanded model.
"""

__version__ = "0.1.0"

from .errors import (ConstructionError, ConvergenceError, DataError, DomainError, HSMMError,
                     InfeasiblePriorError, LikelihoodError, NoStationaryDistributionError,
                     OptimizationError, SamplingError, SizeGuardError)
from .model import DwellFamily, EmissionFamily, ModelSpec, ParamVector, TimeSeries
from .embedding import build_phi
from .likelihood import exact_hsmm_loglik, log_likelihood, loglik_value_and_grad
from .priors import PriorConfig, calibrate_comparable_priors, log_prior
from .inference import (ChainDiagnostics, MLEResult, PosteriorDraws, aic, bic, diagnose,
                        log_posterior_and_grad, maximize_likelihood, posterior_summary,
                        sample_posterior)
from .selection import (MarginalLikelihoodEstimate, ModelComparison, bridge_sampling,
                        bridge_sampling_logml, compare_models, kass_raftery)
from .analysis import (DwellDiagnosticConfig, DwellDiagnosticReport, ForecastDensity, StatePath,
                       dwell_threshold_diagnostic, forecast_density, forecast_logscore_bayes,
                       forecast_logscore_frequentist, posterior_predictive_simulate,
                       pseudo_residuals, viterbi)
from .harmonic import (FrequencySamplerConfig, PeriodicPosterior, periodogram,
                       sample_frequency_posterior)
from .simulate import SimOutput, simulate_embedded, simulate_hmm, simulate_hsmm
