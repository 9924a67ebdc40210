"""Group-fairness metrics and their in-model soft-constraint constructions.

Two metrics over rating predictions for a protected / unprotected user
partition:

* non-parity: absolute difference of the groups' overall mean predictions;
* value unfairness: per-item average absolute difference of the groups'
  signed estimation errors.

Each metric has a matching model construction that appends auxiliary
group-average variables (tied to target-atom means by hard equality
constraints) and a mirrored pair of linear hinges whose sum equals the
metric's inner absolute value. The pair weight is the fairness
regularization strength, so MAP inference trades prediction energy against
the metric directly.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

from .errors import MetricUndefinedError, ParseError, StructureError
from .grounding import AtomTable
from .model import (
    KIND_GROUP_AVG,
    KIND_GROUP_ITEM_AVG,
    EqualityConstraint,
    GroundModel,
    HingePotential,
    LinearForm,
    Variable,
    linear_form,
)

log = logging.getLogger(__name__)

PROTECTED = "protected"
UNPROTECTED = "unprotected"

NONPARITY_TAG = "fairness:nonparity"
VALUE_TAG = "fairness:value"


@dataclass(frozen=True)
class GroupAssignment:
    """Partition of users into protected / unprotected groups."""

    membership: dict

    def __post_init__(self):
        labels = set(self.membership.values())
        bad = labels - {PROTECTED, UNPROTECTED}
        if bad:
            raise ValueError(f"unknown group labels: {sorted(bad)}")
        if PROTECTED not in labels or UNPROTECTED not in labels:
            raise ValueError("both groups must be nonempty")

    def is_protected(self, user) -> bool:
        return self.membership[user] == PROTECTED


@dataclass(frozen=True)
class GroupStats:
    mean_pred_protected: float
    mean_pred_unprotected: float
    # item -> (mean_protected, mean_unprotected, count_protected, count_unprotected);
    # a per-item mean is None when its count is 0.
    per_item: dict


@dataclass(frozen=True)
class ObservedItemEstimates:
    """Per-item group mean ratings estimated from observed (training) data.

    Entries exist only for items with at least one observed rating from
    each group.
    """

    per_item: dict  # item -> (est_protected, est_unprotected)


@dataclass(frozen=True)
class FairnessConfig:
    w_f: float = 1.0
    enable_nonparity: bool = False
    enable_value: bool = False

    def __post_init__(self):
        if self.w_f < 0:
            raise ValueError("w_f must be >= 0")


def group_stats(predictions: dict, groups: GroupAssignment) -> GroupStats:
    """Group means of a (user, item) -> value map, overall and per item."""
    sums = {PROTECTED: 0.0, UNPROTECTED: 0.0}
    counts = {PROTECTED: 0, UNPROTECTED: 0}
    per_item: dict = {}
    for (u, i), v in predictions.items():
        label = groups.membership[u]
        sums[label] += v
        counts[label] += 1
        sp, su, cp, cu = per_item.get(i, (0.0, 0.0, 0, 0))
        if label == PROTECTED:
            sp, cp = sp + v, cp + 1
        else:
            su, cu = su + v, cu + 1
        per_item[i] = (sp, su, cp, cu)
    items = {
        i: (sp / cp if cp else None, su / cu if cu else None, cp, cu)
        for i, (sp, su, cp, cu) in per_item.items()
    }
    return GroupStats(
        mean_pred_protected=sums[PROTECTED] / counts[PROTECTED] if counts[PROTECTED] else float("nan"),
        mean_pred_unprotected=sums[UNPROTECTED] / counts[UNPROTECTED] if counts[UNPROTECTED] else float("nan"),
        per_item=items,
    )


def non_parity(predictions: dict, groups: GroupAssignment) -> float:
    """Absolute difference of the groups' overall mean predictions."""
    n_p = sum(1 for (u, _) in predictions if groups.is_protected(u))
    n_u = len(predictions) - n_p
    if n_p == 0 or n_u == 0:
        raise MetricUndefinedError("non-parity needs >= 1 prediction per group")
    stats = group_stats(predictions, groups)
    return abs(stats.mean_pred_protected - stats.mean_pred_unprotected)


def value_unfairness(predictions: dict, truth: dict, groups: GroupAssignment) -> float:
    """Per-item mean absolute difference of group signed errors.

    Items lacking a prediction from either group are excluded from both the
    numerator and the denominator.
    """
    if set(predictions) != set(truth):
        raise ValueError("predictions and truth must share exactly the same keys")
    pred_stats = group_stats(predictions, groups)
    true_stats = group_stats(truth, groups)
    total = 0.0
    n = 0
    for item, (pv, uv, cp, cu) in sorted(pred_stats.per_item.items()):
        if cp == 0 or cu == 0:
            continue
        tv_p, tv_u, _, _ = true_stats.per_item[item]
        total += abs((pv - tv_p) - (uv - tv_u))
        n += 1
    if n == 0:
        raise MetricUndefinedError("no item has predictions from both groups")
    return total / n


def observed_item_estimates(observed: dict, groups: GroupAssignment) -> ObservedItemEstimates:
    """Group mean observed rating per item, for items covered by both groups."""
    stats = group_stats(observed, groups)
    per_item = {
        i: (pv, uv)
        for i, (pv, uv, cp, cu) in stats.per_item.items()
        if cp > 0 and cu > 0
    }
    return ObservedItemEstimates(per_item=per_item)


def _split_target_indices(atoms: AtomTable, groups: GroupAssignment):
    protected, unprotected = [], []
    for (u, _i), idx in sorted(atoms.targets.items()):
        (protected if groups.is_protected(u) else unprotected).append(idx)
    return protected, unprotected


def _mean_constraint(aux_idx: int, member_indices, observed_values, tag: str) -> EqualityConstraint:
    """aux - mean(members [+ observed constants]) = 0."""
    m = len(member_indices) + len(observed_values)
    terms = [(aux_idx, 1.0)] + [(idx, -1.0 / m) for idx in member_indices]
    constant = -sum(observed_values) / m if observed_values else 0.0
    return EqualityConstraint(form=linear_form(terms, constant), tag=tag)


def build_nonparity_regularizer(
    model: GroundModel,
    atoms: AtomTable,
    groups: GroupAssignment,
    w_f: float,
    include_observed_in_averages: bool = False,
) -> GroundModel:
    """Append the non-parity construction to a model.

    Adds two group-average variables tied by hard constraints to the mean
    of each group's target atoms, plus a mirrored pair of weight-``w_f``
    linear hinges whose sum equals the absolute difference of the two
    averages at every assignment.

    By default the averages range over target atoms only; setting
    ``include_observed_in_averages`` folds the fold's observed ratings into
    the constraint constants as well.
    """
    if w_f < 0:
        raise ValueError("w_f must be >= 0")
    protected, unprotected = _split_target_indices(atoms, groups)
    if not protected or not unprotected:
        raise StructureError("non-parity regularizer needs >= 1 target atom per group")

    obs_p, obs_u = [], []
    if include_observed_in_averages:
        for (u, _i), v in sorted(atoms.observed.items()):
            (obs_p if groups.is_protected(u) else obs_u).append(v)

    n = model.n_variables
    var_p = Variable(index=n, kind=KIND_GROUP_AVG, key=(PROTECTED,))
    var_u = Variable(index=n + 1, kind=KIND_GROUP_AVG, key=(UNPROTECTED,))
    con_p = _mean_constraint(n, protected, obs_p, f"{NONPARITY_TAG}:avg:{PROTECTED}")
    con_u = _mean_constraint(n + 1, unprotected, obs_u, f"{NONPARITY_TAG}:avg:{UNPROTECTED}")
    # max(1 - y_p - (1 - y_u), 0) and its mirror; their sum is |y_p - y_u|.
    pot_a = HingePotential(
        weight=w_f,
        form=LinearForm(terms=((n + 1, 1.0), (n, -1.0)), constant=0.0),
        exponent=1,
        tag=f"{NONPARITY_TAG}:le",
    )
    pot_b = HingePotential(
        weight=w_f,
        form=LinearForm(terms=((n, 1.0), (n + 1, -1.0)), constant=0.0),
        exponent=1,
        tag=f"{NONPARITY_TAG}:ge",
    )
    return GroundModel(
        variables=model.variables + (var_p, var_u),
        potentials=model.potentials + (pot_a, pot_b),
        constraints=model.constraints + (con_p, con_u),
    )


def build_value_regularizer(
    model: GroundModel,
    atoms: AtomTable,
    groups: GroupAssignment,
    est: ObservedItemEstimates,
    w_f: float,
) -> GroundModel:
    """Append the value-unfairness construction to a model.

    For each item with an observed estimate for both groups and at least
    one target from each group: two group-item-average variables with
    defining equality constraints over that item's per-group targets, and a
    mirrored hinge pair on the difference of group signed errors relative
    to the observed estimates. Each hinge gets weight ``w_f / n`` where
    ``n`` counts the regularized items, matching the metric's (1/n) scaling.
    Items failing the precondition are skipped and logged.
    """
    if w_f < 0:
        raise ValueError("w_f must be >= 0")
    if not est.per_item:
        raise ValueError("observed item estimates are empty")

    by_item = atoms.target_users_by_item
    eligible = []
    for item in sorted(est.per_item):
        users = by_item.get(item, ())
        p_idx = [atoms.targets[(u, item)] for u in users if groups.is_protected(u)]
        u_idx = [atoms.targets[(u, item)] for u in users if not groups.is_protected(u)]
        if p_idx and u_idx:
            eligible.append((item, p_idx, u_idx))
        else:
            log.debug("value regularizer: skipping item %r (one-sided targets)", item)
    if not eligible:
        log.warning("value regularizer: no eligible items; model unchanged")
        return model

    n_items = len(eligible)
    w_pair = w_f / n_items
    variables = list(model.variables)
    potentials = list(model.potentials)
    constraints = list(model.constraints)
    for item, p_idx, u_idx in eligible:
        est_p, est_u = est.per_item[item]
        ip = len(variables)
        iu = ip + 1
        variables.append(Variable(index=ip, kind=KIND_GROUP_ITEM_AVG, key=(PROTECTED, item)))
        variables.append(Variable(index=iu, kind=KIND_GROUP_ITEM_AVG, key=(UNPROTECTED, item)))
        constraints.append(
            _mean_constraint(ip, p_idx, (), f"{VALUE_TAG}:avg:{PROTECTED}:{item}")
        )
        constraints.append(
            _mean_constraint(iu, u_idx, (), f"{VALUE_TAG}:avg:{UNPROTECTED}:{item}")
        )
        # (y_p - est_p) - (y_u - est_u) and its mirror.
        potentials.append(
            HingePotential(
                weight=w_pair,
                form=LinearForm(terms=((ip, 1.0), (iu, -1.0)), constant=est_u - est_p),
                exponent=1,
                tag=f"{VALUE_TAG}:{item}:ge",
            )
        )
        potentials.append(
            HingePotential(
                weight=w_pair,
                form=LinearForm(terms=((iu, 1.0), (ip, -1.0)), constant=est_p - est_u),
                exponent=1,
                tag=f"{VALUE_TAG}:{item}:le",
            )
        )
    return GroundModel(
        variables=tuple(variables),
        potentials=tuple(potentials),
        constraints=tuple(constraints),
    )


def regularizer_value(model: GroundModel, y, family: str) -> float:
    """Unweighted metric estimate encoded by a fairness family at ``y``.

    For "nonparity" this equals the absolute difference of the two group
    averages; for "value" it is the per-item mean of the hinge pairs.
    """
    prefix = {"nonparity": NONPARITY_TAG, "value": VALUE_TAG}.get(family)
    if prefix is None:
        raise ValueError(f"unknown fairness family {family!r}")
    hinge_prefixes = (f"{prefix}:", )
    pots = [
        p
        for p in model.potentials
        if p.tag.startswith(hinge_prefixes) and ":avg:" not in p.tag
    ]
    if not pots:
        raise MetricUndefinedError(f"model was not built with the {family!r} regularizer")
    total = sum(max(p.form(y), 0.0) ** p.exponent for p in pots)
    if family == "value":
        total /= len(pots) / 2  # two hinges per regularized item
    return total


def save_groups(path, groups: GroupAssignment) -> None:
    """Persist as CSV rows ``user_id,group``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "group"])
        for user in sorted(groups.membership):
            writer.writerow([user, groups.membership[user]])


def load_groups(path) -> GroupAssignment:
    membership: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row and row[0] == "user_id":
                continue
            if len(row) != 2:
                raise ParseError("expected 2 columns", path=path, line=lineno)
            try:
                user = int(row[0])
            except ValueError as exc:
                raise ParseError(f"bad user id {row[0]!r}", path=path, line=lineno) from exc
            if row[1] not in (PROTECTED, UNPROTECTED):
                raise ParseError(f"bad group label {row[1]!r}", path=path, line=lineno)
            membership[user] = row[1]
    return GroupAssignment(membership=membership)
