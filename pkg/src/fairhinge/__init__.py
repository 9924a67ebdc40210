"""Fairness-constrained hybrid recommendation via hinge-loss models.

The package grounds recommender rule families into a convex hinge-loss
model, optionally injects soft non-parity / value-unfairness constraints,
and solves the resulting MAP inference problem. Local predictors and the
top-level recommender follow the sklearn estimator API.
"""

from .errors import (
    ConfigError,
    CoverageError,
    DataError,
    DimensionError,
    FairHingeError,
    MetricUndefinedError,
    NumericError,
    ParseError,
    StructureError,
)
from .model import (
    EqualityConstraint,
    FeasibilityReport,
    GroundModel,
    HingePotential,
    LinearForm,
    Variable,
    check_feasibility,
    evaluate_objective,
    from_text,
    subgradient,
    to_text,
)
from .solver import SolverConfig, Solution, eliminate_aux, solve, solve_with_restarts
from .similarity import SimilarityGraph, cosine_similarity
from .grounding import (
    AtomTable,
    RuleWeights,
    build_atoms,
    build_base_model,
    ground_mean_centering,
    ground_prior_rules,
    ground_similarity_rules,
)
from .fairness import (
    FairnessConfig,
    GroupAssignment,
    GroupStats,
    ObservedItemEstimates,
    build_nonparity_regularizer,
    build_value_regularizer,
    group_stats,
    non_parity,
    observed_item_estimates,
    regularizer_value,
    value_unfairness,
)
from .predictors import (
    BiasedSVDRecommender,
    FactorModel,
    NMFRecommender,
    NaiveBayesRecommender,
    PredictorOutput,
    load_predictions,
    predict,
    save_predictions,
    train_biased_svd,
    train_naive_bayes,
    train_nmf,
)
from .dataio import (
    Dataset,
    FoldSplit,
    denormalize,
    derive_groups,
    make_folds,
    normalize,
    parse_movielens,
    preprocess,
)
from .recommender import FairHybridRecommender
from .experiment import (
    ExperimentConfig,
    FoldMetrics,
    MetricsReport,
    emit_report,
    load_report,
    retrofit_predictions,
    run_experiment,
    run_retrofit,
    run_sweep,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
