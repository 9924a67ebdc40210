"""Local rating predictors feeding the hybrid model's prior rules.

Three trainable predictors (masked multiplicative-update NMF, biased SVD
trained with full-gradient Adam, and a content-based multinomial naive
Bayes), plus loading of external black-box prediction files for the
retrofit workflow. Every predictor emits values clamped to [0, 1].

Each predictor is exposed both as a plain function and as an sklearn-style
estimator (fit/predict, get_params) taking raw 1-5 ratings.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.naive_bayes import MultinomialNB

from .dataio import normalize
from .errors import ParseError
from .validation import check_pairs, check_ratings

log = logging.getLogger(__name__)

NMF = "nmf"
BIASED_SVD = "biased_svd"

_EPS = 1e-12


@dataclass(frozen=True)
class PredictorOutput:
    """Named dense map (user, item) -> prediction in [0, 1]."""

    name: str
    values: dict

    def __post_init__(self):
        for pair, v in self.values.items():
            if not math.isfinite(v) or v < 0.0 or v > 1.0:
                raise ValueError(f"prediction for {pair} out of [0, 1]: {v!r}")


@dataclass(frozen=True)
class FactorModel:
    """A trained latent-factor model.

    ``global_mean``, biases and factors live on the model's native training
    scale: raw 1-5 for NMF, normalized [0, 1] for biased SVD. ``predict``
    maps everything to [0, 1].
    """

    kind: str
    user_index: dict
    item_index: dict
    user_factors: np.ndarray
    item_factors: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray
    global_mean: float
    known_users: frozenset
    known_items: frozenset

    def __post_init__(self):
        if self.kind == NMF and (
            np.any(self.user_factors < 0) or np.any(self.item_factors < 0)
        ):
            raise ValueError("NMF factors must be nonnegative")


def _index_entities(train: np.ndarray):
    users = sorted(set(int(u) for u in train[:, 0]))
    items = sorted(set(int(i) for i in train[:, 1]))
    return (
        {u: j for j, u in enumerate(users)},
        {i: j for j, i in enumerate(items)},
    )


def train_nmf(train, rank: int = 8, iters: int = 500, seed: int = 0) -> FactorModel:
    """Masked multiplicative-update NMF on the raw (positive) rating scale.

    Updates touch observed entries only, so unobserved cells never affect
    the factors; the masked Frobenius loss is non-increasing and the
    factors stay elementwise nonnegative.
    """
    train = check_ratings(train)
    if np.any(train[:, 2] <= 0):
        raise ValueError("NMF requires positive rating values")
    user_index, item_index = _index_entities(train)
    nu, ni = len(user_index), len(item_index)
    if rank < 1 or rank > min(nu, ni):
        raise ValueError(f"rank must be in [1, {min(nu, ni)}], got {rank}")

    R = np.zeros((nu, ni))
    M = np.zeros((nu, ni))
    for u, i, v in train:
        R[user_index[int(u)], item_index[int(i)]] = v
        M[user_index[int(u)], item_index[int(i)]] = 1.0

    rng = np.random.default_rng(seed)
    scale = math.sqrt(R.sum() / M.sum() / rank)
    W = scale * (0.5 + rng.random((nu, rank)))
    H = scale * (0.5 + rng.random((ni, rank)))
    MR = M * R
    for _ in range(iters):
        W *= (MR @ H) / ((M * (W @ H.T)) @ H + _EPS)
        H *= (MR.T @ W) / ((M * (W @ H.T)).T @ W + _EPS)

    return FactorModel(
        kind=NMF,
        user_index=user_index,
        item_index=item_index,
        user_factors=W,
        item_factors=H,
        user_bias=np.zeros(nu),
        item_bias=np.zeros(ni),
        global_mean=float(R.sum() / M.sum()),
        known_users=frozenset(user_index),
        known_items=frozenset(item_index),
    )


def _svd_unpack(theta: np.ndarray, nu: int, ni: int, rank: int):
    bu = theta[:nu]
    bi = theta[nu : nu + ni]
    P = theta[nu + ni : nu + ni + nu * rank].reshape(nu, rank)
    Q = theta[nu + ni + nu * rank :].reshape(ni, rank)
    return bu, bi, P, Q


def _svd_value_and_grad(theta, uidx, iidx, r, mu, nu, ni, rank, l2):
    """Regularized squared loss and its full gradient over all parameters."""
    bu, bi, P, Q = _svd_unpack(theta, nu, ni, rank)
    pred = mu + bu[uidx] + bi[iidx] + np.einsum("ij,ij->i", P[uidx], Q[iidx])
    err = pred - r
    loss = float(err @ err) + l2 * float(theta @ theta)
    g_bu = np.bincount(uidx, weights=2.0 * err, minlength=nu)
    g_bi = np.bincount(iidx, weights=2.0 * err, minlength=ni)
    g_P = np.zeros_like(P)
    np.add.at(g_P, uidx, (2.0 * err)[:, None] * Q[iidx])
    g_Q = np.zeros_like(Q)
    np.add.at(g_Q, iidx, (2.0 * err)[:, None] * P[uidx])
    grad = np.concatenate([g_bu, g_bi, g_P.ravel(), g_Q.ravel()]) + 2.0 * l2 * theta
    return loss, grad


def train_biased_svd(
    train,
    rank: int = 8,
    iters: int = 500,
    lr: float = 0.1,
    l2: float = 1e-3,
    seed: int = 0,
) -> FactorModel:
    """Biased SVD on normalized [0, 1] ratings via full-gradient Adam.

    Minimizes ``sum (r - (mu + b_u + b_i + p_u . q_i))^2 + l2 * |theta|^2``
    with the global mean fixed at the observed training mean. Defaults
    follow the standard schedule: lr 0.1 for 500 iterations, l2 1e-3, Adam
    moments beta1=0.9, beta2=0.999, eps=1e-8.
    """
    train = check_ratings(train)
    user_index, item_index = _index_entities(train)
    nu, ni = len(user_index), len(item_index)
    if rank < 1 or rank > min(nu, ni):
        raise ValueError(f"rank must be in [1, {min(nu, ni)}], got {rank}")

    uidx = np.array([user_index[int(u)] for u in train[:, 0]])
    iidx = np.array([item_index[int(i)] for i in train[:, 1]])
    r = train[:, 2].astype(float)
    mu = float(r.mean())

    rng = np.random.default_rng(seed)
    theta = np.concatenate(
        [
            np.zeros(nu + ni),
            0.01 * rng.standard_normal(nu * rank),
            0.01 * rng.standard_normal(ni * rank),
        ]
    )
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t in range(1, iters + 1):
        _, grad = _svd_value_and_grad(theta, uidx, iidx, r, mu, nu, ni, rank, l2)
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)

    bu, bi, P, Q = _svd_unpack(theta, nu, ni, rank)
    return FactorModel(
        kind=BIASED_SVD,
        user_index=user_index,
        item_index=item_index,
        user_factors=P.copy(),
        item_factors=Q.copy(),
        user_bias=bu.copy(),
        item_bias=bi.copy(),
        global_mean=mu,
        known_users=frozenset(user_index),
        known_items=frozenset(item_index),
    )


def predict(model: FactorModel, pairs) -> PredictorOutput:
    """Score (user, item) pairs, clamped to [0, 1].

    Entities unseen at training fall back to the global mean plus whichever
    biases are known.
    """
    pairs = check_pairs(pairs)
    values = {}
    for u, i in pairs:
        u, i = int(u), int(i)
        score = model.global_mean
        uj = model.user_index.get(u) if u in model.known_users else None
        ij = model.item_index.get(i) if i in model.known_items else None
        if model.kind == BIASED_SVD:
            if uj is not None:
                score += model.user_bias[uj]
            if ij is not None:
                score += model.item_bias[ij]
        if uj is not None and ij is not None:
            if model.kind == BIASED_SVD:
                score += float(model.user_factors[uj] @ model.item_factors[ij])
            else:
                score = float(model.user_factors[uj] @ model.item_factors[ij])
        if model.kind == NMF:
            score = normalize_clamped(score)
        values[(u, i)] = float(np.clip(score, 0.0, 1.0))
    return PredictorOutput(name=model.kind, values=values)


def normalize_clamped(raw: float) -> float:
    """Map a raw-scale score onto [0, 1], clamping out-of-range values."""
    return float(np.clip((raw - 1.0) / 4.0, 0.0, 1.0))


def _feature_matrix(pairs, user_features: dict, item_features: dict, vocab: dict) -> np.ndarray:
    X = np.zeros((len(pairs), len(vocab)))
    for row, (u, i) in enumerate(pairs):
        for token in list(user_features.get(u, ())) + list(item_features.get(i, ())):
            col = vocab.get(token)
            if col is not None:  # unseen categories contribute nothing
                X[row, col] = 1.0
    return X


def train_naive_bayes(train, user_features: dict, item_features: dict, pairs) -> PredictorOutput:
    """Content-based multinomial naive Bayes over one-hot features.

    Classes are the five raw rating levels; features concatenate the user's
    demographic one-hots with the item's content one-hots, with Laplace
    smoothing alpha=1. The prediction is the posterior-expected rating
    level, normalized to [0, 1].
    """
    train = check_ratings(train)
    levels = train[:, 2]
    if np.any((levels < 1) | (levels > 5) | (levels != np.floor(levels))):
        raise ValueError("naive Bayes expects raw integer rating levels 1-5")
    vocab_tokens = sorted(
        {t for feats in user_features.values() for t in feats}
        | {t for feats in item_features.values() for t in feats}
    )
    vocab = {t: j for j, t in enumerate(vocab_tokens)}
    train_pairs = [(int(u), int(i)) for u, i in train[:, :2]]
    X = _feature_matrix(train_pairs, user_features, item_features, vocab)
    clf = MultinomialNB(alpha=1.0)
    clf.fit(X, levels.astype(int))

    pairs = [(int(u), int(i)) for u, i in check_pairs(pairs)]
    if not pairs:
        return PredictorOutput(name="naive_bayes", values={})
    Xp = _feature_matrix(pairs, user_features, item_features, vocab)
    proba = clf.predict_proba(Xp)
    expected = proba @ clf.classes_.astype(float)
    values = {
        pair: normalize_clamped(e) for pair, e in zip(pairs, expected)
    }
    return PredictorOutput(name="naive_bayes", values=values)


def load_predictions(path) -> PredictorOutput:
    """Load a ``user_id,item_id,prediction`` CSV as a [0, 1] prediction map.

    Values on the 1-5 scale are detected by range (any value above 1) and
    normalized; the decision is logged. Duplicate (user, item) rows and
    malformed rows are errors.
    """
    raw: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if lineno == 1 and row[0] in ("user_id", "user"):
                continue
            if len(row) != 3:
                raise ParseError("expected 3 columns", path=path, line=lineno)
            try:
                u, i, v = int(row[0]), int(row[1]), float(row[2])
            except ValueError as exc:
                raise ParseError(str(exc), path=path, line=lineno) from exc
            if not math.isfinite(v):
                raise ParseError(f"non-finite prediction {row[2]!r}", path=path, line=lineno)
            if (u, i) in raw:
                raise ParseError(f"duplicate prediction for ({u}, {i})", path=path, line=lineno)
            raw[(u, i)] = v
    if not raw:
        raise ParseError("no predictions in file", path=path)
    vmax = max(raw.values())
    vmin = min(raw.values())
    if vmin < 0.0 or vmax > 5.0:
        raise ParseError(
            f"prediction range [{vmin}, {vmax}] fits neither [0, 1] nor 1-5", path=path
        )
    if vmax > 1.0:
        log.info("%s: values in (1, 5] detected; normalizing from the 1-5 scale", path)
        values = {pair: normalize_clamped(v) for pair, v in raw.items()}
    else:
        values = {pair: float(v) for pair, v in raw.items()}
    return PredictorOutput(name=os.path.splitext(os.path.basename(str(path)))[0], values=values)


def save_predictions(path, output: PredictorOutput) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "item_id", "prediction"])
        for (u, i) in sorted(output.values):
            writer.writerow([u, i, repr(output.values[(u, i)])])


def save_factor_model(path, model: FactorModel) -> None:
    """Binary dump of a trained factor model (np.savez)."""
    users = np.array(sorted(model.user_index, key=model.user_index.get))
    items = np.array(sorted(model.item_index, key=model.item_index.get))
    np.savez(
        path,
        kind=model.kind,
        users=users,
        items=items,
        user_factors=model.user_factors,
        item_factors=model.item_factors,
        user_bias=model.user_bias,
        item_bias=model.item_bias,
        global_mean=model.global_mean,
    )


def load_factor_model(path) -> FactorModel:
    with np.load(path, allow_pickle=False) as data:
        users = [int(u) for u in data["users"]]
        items = [int(i) for i in data["items"]]
        return FactorModel(
            kind=str(data["kind"]),
            user_index={u: j for j, u in enumerate(users)},
            item_index={i: j for j, i in enumerate(items)},
            user_factors=data["user_factors"],
            item_factors=data["item_factors"],
            user_bias=data["user_bias"],
            item_bias=data["item_bias"],
            global_mean=float(data["global_mean"]),
            known_users=frozenset(users),
            known_items=frozenset(items),
        )


# ---------------------------------------------------------------------------
# sklearn-style estimator wrappers. All take raw 1-5 ratings of shape (n, 3)
# and predict [0, 1] values for (user, item) pairs.
# ---------------------------------------------------------------------------


class _RatingEstimator(BaseEstimator):
    def _output(self, pairs) -> PredictorOutput:
        raise NotImplementedError

    def predict(self, pairs) -> np.ndarray:
        pairs = check_pairs(pairs)
        out = self._output(pairs)
        return np.array([out.values[(int(u), int(i))] for u, i in pairs])


class NMFRecommender(_RatingEstimator):
    """Masked multiplicative-update NMF recommender."""

    def __init__(self, rank=8, iters=500, seed=0):
        self.rank = rank
        self.iters = iters
        self.seed = seed

    def fit(self, X, y=None):
        self.model_ = train_nmf(X, rank=self.rank, iters=self.iters, seed=self.seed)
        return self

    def _output(self, pairs):
        return predict(self.model_, pairs)


class BiasedSVDRecommender(_RatingEstimator):
    """Biased SVD trained with full-gradient Adam on normalized ratings."""

    def __init__(self, rank=8, iters=500, lr=0.1, l2=1e-3, seed=0):
        self.rank = rank
        self.iters = iters
        self.lr = lr
        self.l2 = l2
        self.seed = seed

    def fit(self, X, y=None):
        X = check_ratings(X)
        Xn = X.copy()
        Xn[:, 2] = normalize(X[:, 2])
        self.model_ = train_biased_svd(
            Xn, rank=self.rank, iters=self.iters, lr=self.lr, l2=self.l2, seed=self.seed
        )
        return self

    def _output(self, pairs):
        return predict(self.model_, pairs)


class NaiveBayesRecommender(_RatingEstimator):
    """Content-based multinomial naive Bayes recommender."""

    def __init__(self, user_features=None, item_features=None):
        self.user_features = user_features
        self.item_features = item_features

    def fit(self, X, y=None):
        self.train_ = check_ratings(X)
        return self

    def _output(self, pairs):
        return train_naive_bayes(
            self.train_, self.user_features or {}, self.item_features or {}, pairs
        )
