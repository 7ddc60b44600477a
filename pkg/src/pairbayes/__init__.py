"""Bayesian paired comparison models.

Bradley-Terry and Davidson (ties) models with order effects, player
predictors, subject random effects and subject-specific predictors, fitted
with a built-in No-U-Turn sampler.
"""

from .comparison import PointwiseLogLik, compare, pointwise_loglik, psis_loo, waic
from .diagnostics import convergence_report, ebfmi, effective_sample_size, split_rhat
from .errors import PairBayesError
from .io import IngestSpec, load_dataset, load_fit, save_fit
from .model import (
    Contest, ContestDataset, ModelSpec, Outcome, Prior, bt_win_probability, build_model,
    compose_ability, davidson_probabilities, grad_log_posterior, log_posterior,
)
from .posterior import (
    Matchup, equal_tailed_interval, hpd_interval, predict, probability_table, rank_distribution, summarize, summary_text,
)
from .sampler import PosteriorFit, SamplerConfig, leapfrog, sample
from .simulate import simulate_contests

__version__ = "0.1.0"

__all__ = [
    "Contest", "ContestDataset", "IngestSpec", "Matchup", "ModelSpec", "Outcome",
    "PairBayesError", "PointwiseLogLik", "PosteriorFit", "Prior", "SamplerConfig",
    "bt_win_probability", "build_model", "compare", "compose_ability", "convergence_report",
    "davidson_probabilities", "ebfmi", "effective_sample_size", "grad_log_posterior",
    "equal_tailed_interval", "hpd_interval", "leapfrog", "load_dataset", "load_fit", "log_posterior", "pointwise_loglik",
    "predict", "probability_table", "psis_loo", "rank_distribution", "sample", "save_fit",
    "simulate_contests", "split_rhat", "summarize", "summary_text", "waic",
]
