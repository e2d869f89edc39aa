"""Reweighted offline evaluation of recommender algorithms."""

from .core import (
    EvalDistribution,
    InteractionLog,
    LogFormatError,
    Snapshot,
    item_marginal,
    sample_pair,
    sample_pairs,
    snapshot_at,
    weighted_conditional,
)
from .evaluator import EvalResult, evaluate_exact, evaluate_sampled, hit_matrix, quality
from .recommenders import (
    ConstantRecommender,
    CosineCF,
    NaiveCF,
    Recommendation,
    Recommender,
    constant_recommender,
    cosine_cf_scores,
    make_recommender,
    naive_cf_scores,
    profile_without,
    top_k,
)
from .reweighter import (
    OptimizerOptions,
    ReferenceMarginal,
    SupportError,
    WeightSolution,
    divergence,
    gradient_of_divergence,
    kl_divergence,
    optimize_weights,
    reference_marginal,
    select_top_p,
)
from .simulator import Campaign, ScenarioConfig, generate, seed_population

__version__ = "0.1.0"
