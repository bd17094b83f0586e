"""Random-scan Gibbs sampler for Bayesian image restoration on [0, 1]^N,
with Wasserstein and total-variation mixing bounds and the couplings that
realise them."""

from .bounds import (
    BoundReport,
    contraction_rate,
    coupon_collector_M,
    normal_tv,
    per_site_noncoalescence_bound,
    truncated_mass_lower_bound,
    truncated_tv_bound,
    tv_mixing_time,
    wasserstein_mixing_time,
)
from .coupling import (
    CoupledPair,
    Mode,
    OneShotReport,
    coupled_gibbs_step,
    max_couple_site,
    one_shot_schedule,
    synchronous_couple_site,
)
from .graph import NeighborhoodGraph, build_custom_graph, build_grid_graph
from .metrics import PairSummary, metric_conversion_bounds, summarize_pairs, taxicab, weighted_l1
from .model import FullConditional, ModelParams, ThermoConstants, full_conditional, log_density_unnormalized, thermo_constants
from .oracle import coupon_collector_tail, discretized_chain_exact_tv, numeric_tv_truncated
from .rng import SeededStream
from .sampler import ChainState, degrade, gibbs_step, run_chain, sample_truncated_normal

__version__ = "0.1.0"
