"""The hybrid fair recommender: an sklearn-style transductive estimator.

``fit`` trains the local predictors and similarity graphs on observed
ratings; ``predict`` grounds the rule families for the requested (user,
item) pairs, optionally appends fairness regularizers, and runs MAP
inference. Because fairness is applied at inference time, ``set_params``
can change the regularization strength between ``predict`` calls without
refitting.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .dataio import normalize
from .errors import ConfigError
from .fairness import (
    build_nonparity_regularizer,
    build_value_regularizer,
    observed_item_estimates,
)
from .grounding import RuleWeights, build_base_model
from .predictors import (
    PredictorOutput,
    predict as predict_factors,
    train_biased_svd,
    train_naive_bayes,
    train_nmf,
)
from .similarity import (
    ITEM_CONTENT,
    ITEM_RATING,
    USER_DEMOGRAPHIC,
    USER_RATING,
    cosine_similarity,
    item_content_vectors,
    item_rating_vectors,
    user_demographic_vectors,
    user_rating_vectors,
)
from .solver import SolverConfig, solve
from .validation import check_pairs, check_ratings

IN_PROCESS_VARIANTS = ("base", "np", "val", "np_val")


def make_rule_weights(spec: dict | None) -> RuleWeights:
    """Build RuleWeights from a flat config dict (missing keys default to 1)."""
    if not spec:
        return RuleWeights()
    kwargs = dict(spec)
    prior = kwargs.pop("prior", {})
    return RuleWeights(prior=dict(prior), **kwargs)


class FairHybridRecommender(BaseEstimator):
    """Hybrid recommender with optional in-inference fairness constraints.

    Parameters mirror the experiment configuration: ``variant`` selects
    which fairness families to append ("base", "np", "val", "np_val");
    ``w_f`` is the shared fairness weight, overridable per family with
    ``w_f_np`` / ``w_f_val``. ``rule_weights`` is a flat dict accepted by
    :func:`make_rule_weights`.
    """

    def __init__(
        self,
        variant="base",
        w_f=1.0,
        w_f_np=None,
        w_f_val=None,
        rule_weights=None,
        k_neighbors=25,
        min_overlap=5,
        demo_min_overlap=1,
        nmf_rank=8,
        svd_rank=8,
        factor_iters=500,
        include_observed_in_averages=False,
        tol_obj=1e-6,
        tol_feas=1e-6,
        max_iter=25000,
        step_rule="backtracking",
        step_init=1.0,
        window=50,
        seed=0,
    ):
        self.variant = variant
        self.w_f = w_f
        self.w_f_np = w_f_np
        self.w_f_val = w_f_val
        self.rule_weights = rule_weights
        self.k_neighbors = k_neighbors
        self.min_overlap = min_overlap
        self.demo_min_overlap = demo_min_overlap
        self.nmf_rank = nmf_rank
        self.svd_rank = svd_rank
        self.factor_iters = factor_iters
        self.include_observed_in_averages = include_observed_in_averages
        self.tol_obj = tol_obj
        self.tol_feas = tol_feas
        self.max_iter = max_iter
        self.step_rule = step_rule
        self.step_init = step_init
        self.window = window
        self.seed = seed

    def fit(self, X, y=None, users=None, movies=None, groups=None):
        """Train predictors and similarity graphs on raw 1-5 ratings.

        ``users`` / ``movies`` are metadata maps (as parsed from the
        dataset) enabling the demographic/content graphs and the naive
        Bayes predictor; ``groups`` is required for fairness variants.
        """
        X = check_ratings(X)
        if X.shape[0] == 0:
            raise ConfigError("cannot fit on an empty training set")
        self.groups_ = groups
        self.observed_ = {
            (int(u), int(i)): normalize(v) for u, i, v in X
        }
        self.global_mean_ = float(np.mean(list(self.observed_.values())))

        self.nmf_ = train_nmf(X, rank=self.nmf_rank, iters=self.factor_iters, seed=self.seed)
        Xn = X.copy()
        Xn[:, 2] = normalize(X[:, 2])
        self.svd_ = train_biased_svd(
            Xn, rank=self.svd_rank, iters=self.factor_iters, seed=self.seed
        )
        self._nb_train = X
        self._user_features = (
            {u: sorted(vec) for u, vec in user_demographic_vectors(users).items()}
            if users
            else None
        )
        self._item_features = (
            {m: sorted(vec) for m, vec in item_content_vectors(movies).items()}
            if movies
            else None
        )

        raw_rows = [(int(u), int(i), float(v)) for u, i, v in X]
        self.sims_ = {
            USER_RATING: cosine_similarity(
                user_rating_vectors(raw_rows), self.k_neighbors, self.min_overlap, USER_RATING
            ),
            ITEM_RATING: cosine_similarity(
                item_rating_vectors(raw_rows), self.k_neighbors, self.min_overlap, ITEM_RATING
            ),
        }
        if users:
            self.sims_[USER_DEMOGRAPHIC] = cosine_similarity(
                user_demographic_vectors(users),
                self.k_neighbors,
                self.demo_min_overlap,
                USER_DEMOGRAPHIC,
            )
        if movies:
            self.sims_[ITEM_CONTENT] = cosine_similarity(
                item_content_vectors(movies),
                self.k_neighbors,
                self.demo_min_overlap,
                ITEM_CONTENT,
            )
        if groups is not None:
            self.estimates_ = observed_item_estimates(self.observed_, groups)
        else:
            self.estimates_ = None
        return self

    def _solver_config(self) -> SolverConfig:
        return SolverConfig(
            tol_obj=self.tol_obj,
            tol_feas=self.tol_feas,
            max_iter=self.max_iter,
            step_rule=self.step_rule,
            step_init=self.step_init,
            window=self.window,
            seed=self.seed,
            init_value=self.global_mean_,
        )

    def _predictor_outputs(self, pairs) -> list[PredictorOutput]:
        outputs = [
            predict_factors(self.nmf_, pairs),
            predict_factors(self.svd_, pairs),
        ]
        if self._user_features is not None and self._item_features is not None:
            outputs.append(
                train_naive_bayes(
                    self._nb_train, self._user_features, self._item_features, pairs
                )
            )
        return outputs

    def _check_variant(self):
        if self.variant not in IN_PROCESS_VARIANTS:
            raise ConfigError(
                f"variant must be one of {IN_PROCESS_VARIANTS}, got {self.variant!r}"
            )
        if self.variant != "base" and self.groups_ is None:
            raise ConfigError(f"variant {self.variant!r} requires a group assignment")

    def build_model(self, pairs):
        """Ground the model for the given pairs without solving it."""
        self._check_variant()
        pairs = [(int(u), int(i)) for u, i in check_pairs(pairs)]
        targets = [p for p in pairs if p not in self.observed_]
        weights = make_rule_weights(self.rule_weights)
        model, atoms = build_base_model(
            self.observed_, targets, self.sims_, self._predictor_outputs(targets), weights
        )
        if self.variant in ("np", "np_val"):
            model = build_nonparity_regularizer(
                model,
                atoms,
                self.groups_,
                self.w_f if self.w_f_np is None else self.w_f_np,
                include_observed_in_averages=self.include_observed_in_averages,
            )
        if self.variant in ("val", "np_val"):
            if not self.estimates_ or not self.estimates_.per_item:
                raise ConfigError(
                    "value regularizer needs observed item estimates covering both groups"
                )
            model = build_value_regularizer(
                model,
                atoms,
                self.groups_,
                self.estimates_,
                self.w_f if self.w_f_val is None else self.w_f_val,
            )
        return model, atoms

    def predict(self, pairs) -> np.ndarray:
        """MAP predictions in [0, 1] for (user, item) pairs.

        Pairs that were observed at fit time return their observed value.
        """
        pairs = [(int(u), int(i)) for u, i in check_pairs(pairs)]
        model, atoms = self.build_model(pairs)
        solution = solve(model, self._solver_config())
        self.model_ = model
        self.atoms_ = atoms
        self.solution_ = solution
        out = np.empty(len(pairs))
        for row, pair in enumerate(pairs):
            if pair in atoms.targets:
                out[row] = solution.y[atoms.targets[pair]]
            else:
                out[row] = self.observed_[pair]
        return out

    def predict_map(self, pairs) -> dict:
        """Like predict, but as a (user, item) -> value map."""
        pairs = [(int(u), int(i)) for u, i in check_pairs(pairs)]
        values = self.predict(pairs)
        return {pair: float(v) for pair, v in zip(pairs, values)}
