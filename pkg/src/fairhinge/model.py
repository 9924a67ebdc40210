"""Hinge-loss ground models.

A ground model is a set of [0, 1]-bounded variables, weighted hinge
potentials ``w * max(l(y), 0)**p`` with ``p`` in {1, 2} over linear forms
``l``, and hard linear equality constraints. The energy ``sum_i w_i phi_i``
is convex in ``y``; minimizing it over the feasible box is MAP inference.

Models are immutable after construction and safe to share across threads.
Objective and subgradient evaluation is vectorized with a fixed reduction
order, so results do not depend on thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .errors import NumericError, ParseError, StructureError
from .validation import check_assignment, check_positive

# Variable kinds. "target" variables carry a (user, item) key; the aggregate
# kinds carry a group (and item) key and exist only to host hard-constraint
# definitions of group averages.
KIND_TARGET = "target"
KIND_GROUP_AVG = "group_avg"
KIND_GROUP_ITEM_AVG = "group_item_avg"

_KINDS = (KIND_TARGET, KIND_GROUP_AVG, KIND_GROUP_ITEM_AVG)

AUX_KINDS = (KIND_GROUP_AVG, KIND_GROUP_ITEM_AVG)


@dataclass(frozen=True)
class Variable:
    """A [0, 1]-bounded model variable."""

    index: int
    kind: str
    key: tuple = ()

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"variable index must be >= 0, got {self.index}")
        if self.kind not in _KINDS:
            raise ValueError(f"unknown variable kind {self.kind!r}")

    @property
    def is_aux(self) -> bool:
        return self.kind in AUX_KINDS

    # Bounds are fixed by construction; exposed for readability.
    lower = 0.0
    upper = 1.0


@dataclass(frozen=True)
class LinearForm:
    """A sparse linear function ``sum_j coef_j * y[idx_j] + constant``.

    Observed atom values are folded into ``constant`` at grounding time, so
    a form only ever references free variables.
    """

    terms: tuple[tuple[int, float], ...]
    constant: float = 0.0

    def __post_init__(self):
        seen = set()
        for idx, coef in self.terms:
            if idx in seen:
                raise ValueError(f"duplicate variable index {idx} in linear form")
            seen.add(idx)
            if not math.isfinite(coef):
                raise ValueError(f"non-finite coefficient for variable {idx}")
        if not math.isfinite(self.constant):
            raise ValueError("non-finite constant in linear form")

    def __call__(self, y: np.ndarray) -> float:
        total = self.constant
        for idx, coef in self.terms:
            total += coef * y[idx]
        return total

    def indices(self) -> set[int]:
        return {idx for idx, _ in self.terms}


def linear_form(terms: Iterable[tuple[int, float]], constant: float = 0.0) -> LinearForm:
    """Build a LinearForm, merging duplicate indices and dropping zeros."""
    acc: dict[int, float] = {}
    for idx, coef in terms:
        acc[idx] = acc.get(idx, 0.0) + coef
    merged = tuple((idx, coef) for idx, coef in acc.items() if coef != 0.0)
    return LinearForm(terms=merged, constant=constant)


@dataclass(frozen=True)
class HingePotential:
    """``weight * max(form(y), 0) ** exponent`` with exponent 1 or 2.

    ``tag`` records provenance (rule family and grounding substitution) for
    debugging and for locating potential families after model composition.
    """

    weight: float
    form: LinearForm
    exponent: int = 1
    tag: str = ""

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"potential weight must be >= 0, got {self.weight}")
        if self.exponent not in (1, 2):
            raise ValueError(f"exponent must be 1 or 2, got {self.exponent}")

    def value(self, y: np.ndarray) -> float:
        return self.weight * max(self.form(y), 0.0) ** self.exponent


@dataclass(frozen=True)
class EqualityConstraint:
    """Hard constraint ``form(y) = 0``."""

    form: LinearForm
    tag: str = ""

    def __post_init__(self):
        if not any(coef != 0.0 for _, coef in self.form.terms):
            raise ValueError("equality constraint has no nonzero coefficient")


@dataclass(frozen=True)
class FeasibilityReport:
    max_box_violation: float
    max_constraint_residual: float
    tol: float

    @property
    def feasible(self) -> bool:
        return (
            self.max_box_violation <= self.tol
            and self.max_constraint_residual <= self.tol
        )


@dataclass(frozen=True)
class GroundModel:
    """An immutable hinge-loss model over box-bounded variables."""

    variables: tuple[Variable, ...]
    potentials: tuple[HingePotential, ...] = ()
    constraints: tuple[EqualityConstraint, ...] = ()

    def __post_init__(self):
        indices = [v.index for v in self.variables]
        if indices != list(range(len(indices))):
            raise StructureError("variable indices must be dense 0..n-1 and unique")
        n = len(indices)
        for pot in self.potentials:
            for idx in pot.form.indices():
                if not 0 <= idx < n:
                    raise StructureError(f"potential references unknown variable {idx}")
        for con in self.constraints:
            for idx in con.form.indices():
                if not 0 <= idx < n:
                    raise StructureError(f"constraint references unknown variable {idx}")

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @cached_property
    def _compiled(self):
        """CSR matrices for vectorized evaluation: (A, b, w, p, C, d)."""
        n = self.n_variables
        rows, cols, vals = [], [], []
        b = np.zeros(len(self.potentials))
        w = np.zeros(len(self.potentials))
        p = np.zeros(len(self.potentials))
        for i, pot in enumerate(self.potentials):
            b[i] = pot.form.constant
            w[i] = pot.weight
            p[i] = pot.exponent
            for idx, coef in pot.form.terms:
                rows.append(i)
                cols.append(idx)
                vals.append(coef)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(self.potentials), n))
        rows, cols, vals = [], [], []
        d = np.zeros(len(self.constraints))
        for i, con in enumerate(self.constraints):
            d[i] = con.form.constant
            for idx, coef in con.form.terms:
                rows.append(i)
                cols.append(idx)
                vals.append(coef)
        C = sp.csr_matrix((vals, (rows, cols)), shape=(len(self.constraints), n))
        return A, b, w, p, C, d


def evaluate_objective(model: GroundModel, y) -> float:
    """Energy ``sum_i w_i * max(l_i(y), 0)**p_i`` at assignment ``y``.

    ``y`` may lie outside [0, 1]; feasibility is the caller's concern.
    """
    y = check_assignment(y, model.n_variables)
    A, b, w, p, _, _ = model._compiled
    ell = A @ y + b
    pos = np.maximum(ell, 0.0)
    obj = float(w @ (pos**p))
    if not math.isfinite(obj):
        raise NumericError("objective is not finite")
    return obj


def subgradient(model: GroundModel, y) -> np.ndarray:
    """A valid subgradient of the energy at ``y``.

    Per potential: zero when l(y) <= 0 (the zero branch at the kink), else
    ``w * p * max(l(y), 0)**(p-1)`` times the form's coefficients.
    """
    y = check_assignment(y, model.n_variables)
    if not np.all(np.isfinite(y)):
        raise NumericError("assignment is not finite")
    A, b, w, p, _, _ = model._compiled
    ell = A @ y + b
    pos = np.maximum(ell, 0.0)
    active = ell > 0.0
    coef = w * p * pos ** (p - 1.0) * active
    return np.asarray(A.T @ coef)


def check_feasibility(model: GroundModel, y, tol: float = 1e-6) -> FeasibilityReport:
    """Max distance to the box and max absolute constraint residual."""
    check_positive(tol, "tol")
    y = check_assignment(y, model.n_variables)
    if model.n_variables:
        box = float(max(np.max(y - 1.0), np.max(-y), 0.0))
    else:
        box = 0.0
    _, _, _, _, C, d = model._compiled
    if len(model.constraints):
        residual = float(np.max(np.abs(C @ y + d)))
    else:
        residual = 0.0
    return FeasibilityReport(max_box_violation=box, max_constraint_residual=residual, tol=tol)


# ---------------------------------------------------------------------------
# Line-oriented debug serialization.
#
#   VAR <idx> <kind>                      kind encoded as kind:key:parts
#   POT <w> <p> <const> <idx>:<coef> ...
#   CON <const> <idx>:<coef> ...
#
# Floats are written with repr() and round-trip losslessly. Potential and
# constraint tags are not part of the format and are dropped on round-trip.
# ---------------------------------------------------------------------------


def _encode_kind(var: Variable) -> str:
    parts = [var.kind] + [str(k) for k in var.key]
    return ":".join(parts)


def _decode_key_token(token: str):
    try:
        return int(token)
    except ValueError:
        return token


def _decode_kind(text: str) -> tuple[str, tuple]:
    parts = text.split(":")
    kind = parts[0]
    key = tuple(_decode_key_token(t) for t in parts[1:])
    return kind, key


def _encode_terms(form: LinearForm) -> str:
    toks = [repr(form.constant)]
    toks += [f"{idx}:{coef!r}" for idx, coef in form.terms]
    return " ".join(toks)


def _decode_terms(tokens: list[str], where: str) -> LinearForm:
    try:
        constant = float(tokens[0])
        terms = []
        for tok in tokens[1:]:
            idx_s, coef_s = tok.split(":")
            terms.append((int(idx_s), float(coef_s)))
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed {where} line") from exc
    return LinearForm(terms=tuple(terms), constant=constant)


def to_text(model: GroundModel) -> str:
    """Serialize a model to the line-oriented debug format."""
    lines = []
    for var in model.variables:
        lines.append(f"VAR {var.index} {_encode_kind(var)}")
    for pot in model.potentials:
        lines.append(f"POT {pot.weight!r} {pot.exponent} {_encode_terms(pot.form)}")
    for con in model.constraints:
        lines.append(f"CON {_encode_terms(con.form)}")
    return "\n".join(lines) + "\n"


def from_text(text: str) -> GroundModel:
    """Parse the line-oriented debug format back into a model."""
    variables, potentials, constraints = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        tag, rest = tokens[0], tokens[1:]
        if tag == "VAR":
            if len(rest) != 2:
                raise ParseError("malformed VAR line", line=lineno)
            kind, key = _decode_kind(rest[1])
            variables.append(Variable(index=int(rest[0]), kind=kind, key=key))
        elif tag == "POT":
            if len(rest) < 3:
                raise ParseError("malformed POT line", line=lineno)
            weight = float(rest[0])
            exponent = int(rest[1])
            form = _decode_terms(rest[2:], "POT")
            potentials.append(HingePotential(weight=weight, form=form, exponent=exponent))
        elif tag == "CON":
            if len(rest) < 1:
                raise ParseError("malformed CON line", line=lineno)
            constraints.append(EqualityConstraint(form=_decode_terms(rest, "CON")))
        else:
            raise ParseError(f"unknown record type {tag!r}", line=lineno)
    variables.sort(key=lambda v: v.index)
    return GroundModel(
        variables=tuple(variables),
        potentials=tuple(potentials),
        constraints=tuple(constraints),
    )
