"""Grounding of recommender rule families into hinge potentials.

Rule families, instantiated against a fold's data:

* similarity implications ("a's rating of I carries over to similar b"),
  relaxed with Lukasiewicz logic into linear hinges;
* local-predictor priors, a symmetric squared pull of each target rating
  toward an external predictor's value;
* mean-centering priors, squared pulls toward the user's and the item's
  observed average rating.

Implications use exponent 1 (preserving the Lukasiewicz
distance-to-satisfaction), equality-style priors use exponent 2 (unique,
smooth pulls). Observed atoms are folded into form constants; groundings
whose head atom is observed are constant and therefore dropped (counts
logged). Grounding order is deterministic: same inputs, same model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from functools import cached_property

from .errors import CoverageError
from .model import (
    KIND_TARGET,
    GroundModel,
    HingePotential,
    LinearForm,
    Variable,
)
from .similarity import (
    ITEM_CONTENT,
    ITEM_RATING,
    USER_DEMOGRAPHIC,
    USER_RATING,
    USER_SIDE_KINDS,
    SimilarityGraph,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AtomTable:
    """Observed rating atoms and target (free) rating atoms.

    ``observed`` maps (user, item) -> value in [0, 1]; ``targets`` maps
    (user, item) -> model variable index. The key sets are disjoint.
    """

    observed: dict
    targets: dict

    def __post_init__(self):
        common = set(self.observed) & set(self.targets)
        if common:
            raise ValueError(f"{len(common)} atoms are both observed and targets")

    @cached_property
    def by_user(self) -> dict:
        """user -> {item: (is_target, value_or_index)}."""
        out: dict = {}
        for (u, i), v in self.observed.items():
            out.setdefault(u, {})[i] = (False, v)
        for (u, i), idx in self.targets.items():
            out.setdefault(u, {})[i] = (True, idx)
        return out

    @cached_property
    def by_item(self) -> dict:
        out: dict = {}
        for (u, i), v in self.observed.items():
            out.setdefault(i, {})[u] = (False, v)
        for (u, i), idx in self.targets.items():
            out.setdefault(i, {})[u] = (True, idx)
        return out

    @cached_property
    def target_items_by_user(self) -> dict:
        out: dict = {}
        for (u, i) in self.targets:
            out.setdefault(u, []).append(i)
        return {u: sorted(items) for u, items in out.items()}

    @cached_property
    def target_users_by_item(self) -> dict:
        out: dict = {}
        for (u, i) in self.targets:
            out.setdefault(i, []).append(u)
        return {i: sorted(users) for i, users in out.items()}


def build_atoms(observed: dict, target_pairs) -> AtomTable:
    """Assign dense variable indices to target pairs, sorted by (user, item)."""
    targets = {pair: idx for idx, pair in enumerate(sorted(set(target_pairs)))}
    return AtomTable(observed=dict(observed), targets=targets)


def target_variables(atoms: AtomTable) -> tuple[Variable, ...]:
    ordered = sorted(atoms.targets.items(), key=lambda kv: kv[1])
    return tuple(Variable(index=idx, kind=KIND_TARGET, key=pair) for pair, idx in ordered)


@dataclass(frozen=True)
class RuleWeights:
    """Nonnegative weights for each rule family."""

    sim_user_rating: float = 1.0
    sim_item_rating: float = 1.0
    sim_user_demo: float = 1.0
    sim_item_content: float = 1.0
    prior: dict = field(default_factory=dict)  # predictor name -> weight
    mean_user: float = 1.0
    mean_item: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "prior":
                bad = {k: v for k, v in value.items() if v < 0}
                if bad:
                    raise ValueError(f"negative prior weights: {bad}")
            elif value < 0:
                raise ValueError(f"{f.name} must be >= 0, got {value}")

    def prior_weight(self, name: str) -> float:
        return self.prior.get(name, 1.0)

    def similarity_weight(self, kind: str) -> float:
        return {
            USER_RATING: self.sim_user_rating,
            ITEM_RATING: self.sim_item_rating,
            USER_DEMOGRAPHIC: self.sim_user_demo,
            ITEM_CONTENT: self.sim_item_content,
        }[kind]


def ground_similarity_rules(sim: SimilarityGraph, atoms: AtomTable, w: float) -> list[HingePotential]:
    """Ground one similarity family into linear hinges.

    For an edge (a, b, s) and each item I where a's rating exists and b's is
    a target, the Lukasiewicz relaxation of the implication yields
    ``max(R(a,I) + s - 1 - R(b,I), 0)``; observed body atoms fold into the
    constant. Item-side graphs transpose the roles.
    """
    if w < 0:
        raise ValueError("rule weight must be >= 0")
    user_side = sim.kind in USER_SIDE_KINDS
    heads_by = atoms.target_items_by_user if user_side else atoms.target_users_by_item
    exists_by = atoms.by_user if user_side else atoms.by_item

    potentials: list[HingePotential] = []
    for a in sorted(sim.neighbors):
        body_atoms = exists_by.get(a)
        if not body_atoms:
            continue
        for b, score in sim.neighbors[a]:
            for other in heads_by.get(b, ()):  # targets of the head entity
                body = body_atoms.get(other)
                if body is None:
                    continue
                head_idx = atoms.targets[(b, other) if user_side else (other, b)]
                tag = f"sim:{sim.kind}:{a}>{b}@{other}"
                is_target, payload = body
                if is_target:
                    form = LinearForm(
                        terms=((payload, 1.0), (head_idx, -1.0)), constant=score - 1.0
                    )
                else:
                    form = LinearForm(terms=((head_idx, -1.0),), constant=payload + score - 1.0)
                potentials.append(HingePotential(weight=w, form=form, exponent=1, tag=tag))
    return potentials


def ground_prior_rules(pred, atoms: AtomTable, w: float) -> list[HingePotential]:
    """Symmetric squared pull of every target toward a predictor's value."""
    if w < 0:
        raise ValueError("rule weight must be >= 0")
    missing = [pair for pair in atoms.targets if pair not in pred.values]
    if missing:
        raise CoverageError(
            f"predictor {pred.name!r} is missing {len(missing)} target atoms",
            missing=sorted(missing),
        )
    potentials = []
    for pair, idx in sorted(atoms.targets.items()):
        p = pred.values[pair]
        tag = f"prior:{pred.name}:{pair[0]}:{pair[1]}"
        potentials.append(
            HingePotential(
                weight=w, form=LinearForm(terms=((idx, -1.0),), constant=p), exponent=2, tag=tag
            )
        )
        potentials.append(
            HingePotential(
                weight=w, form=LinearForm(terms=((idx, 1.0),), constant=-p), exponent=2, tag=tag
            )
        )
    return potentials


def ground_mean_centering(atoms: AtomTable, w_user: float, w_item: float) -> list[HingePotential]:
    """Squared pulls toward per-user and per-item observed average ratings.

    Averages use observed ratings only; cold-start users/items fall back to
    the global observed mean (0.5 when there are no observations at all).
    """
    if w_user < 0 or w_item < 0:
        raise ValueError("rule weights must be >= 0")
    user_sum: dict = {}
    item_sum: dict = {}
    for (u, i), v in atoms.observed.items():
        su, cu = user_sum.get(u, (0.0, 0))
        user_sum[u] = (su + v, cu + 1)
        si, ci = item_sum.get(i, (0.0, 0))
        item_sum[i] = (si + v, ci + 1)
    if atoms.observed:
        global_mean = sum(v for v in atoms.observed.values()) / len(atoms.observed)
    else:
        global_mean = 0.5
        log.warning("no observed ratings; mean-centering falls back to 0.5")

    def avg(table, key):
        if key in table:
            s, c = table[key]
            return s / c
        return global_mean

    potentials = []
    for (u, i), idx in sorted(atoms.targets.items()):
        for center, w, family in (
            (avg(user_sum, u), w_user, "mean_user"),
            (avg(item_sum, i), w_item, "mean_item"),
        ):
            tag = f"{family}:{u}:{i}"
            potentials.append(
                HingePotential(
                    weight=w,
                    form=LinearForm(terms=((idx, -1.0),), constant=center),
                    exponent=2,
                    tag=tag,
                )
            )
            potentials.append(
                HingePotential(
                    weight=w,
                    form=LinearForm(terms=((idx, 1.0),), constant=-center),
                    exponent=2,
                    tag=tag,
                )
            )
    return potentials


def build_base_model(
    observed: dict,
    target_pairs,
    sims: dict,
    predictors,
    weights: RuleWeights = RuleWeights(),
) -> tuple[GroundModel, AtomTable]:
    """Ground every rule family against one fold's data.

    ``observed`` maps (user, item) -> normalized value from the training
    split; ``target_pairs`` are the test pairs to predict; ``sims`` maps
    graph kind -> SimilarityGraph (missing kinds are skipped); ``predictors``
    is a list of PredictorOutput covering all targets.
    """
    atoms = build_atoms(observed, target_pairs)
    variables = target_variables(atoms)
    potentials: list[HingePotential] = []
    for kind in (USER_RATING, ITEM_RATING, USER_DEMOGRAPHIC, ITEM_CONTENT):
        graph = sims.get(kind)
        if graph is None:
            continue
        potentials.extend(
            ground_similarity_rules(graph, atoms, weights.similarity_weight(kind))
        )
    for pred in predictors:
        potentials.extend(ground_prior_rules(pred, atoms, weights.prior_weight(pred.name)))
    potentials.extend(ground_mean_centering(atoms, weights.mean_user, weights.mean_item))
    model = GroundModel(variables=variables, potentials=tuple(potentials))
    return model, atoms
