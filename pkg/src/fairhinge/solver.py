"""MAP inference: minimize the hinge-loss energy over the box.

Every hard constraint produced by this package defines one auxiliary
variable as an affine average of target variables, so constraints are
eliminated exactly by substitution before optimization. The remaining
box-constrained convex problem is solved by projected subgradient descent
(backtracking by default, with a non-monotone diminishing fallback at
hinge kinks where a monotone step does not exist).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from .errors import NumericError, StructureError
from .model import (
    FeasibilityReport,
    GroundModel,
    HingePotential,
    LinearForm,
    Variable,
    check_feasibility,
    evaluate_objective,
    linear_form,
)

log = logging.getLogger(__name__)

_STEP_RULES = ("backtracking", "diminishing")

# Backtracking knobs: Armijo constant, step shrink/growth, smallest step.
_ARMIJO = 1e-4
_SHRINK = 0.5
_GROW = 2.0
_MIN_STEP = 1e-14


@dataclass(frozen=True)
class SolverConfig:
    tol_obj: float = 1e-6
    tol_feas: float = 1e-6
    max_iter: int = 25000
    step_rule: str = "backtracking"
    seed: int = 0
    init_value: float | None = None  # default: box midpoint 0.5
    step_init: float = 1.0
    window: int = 50
    trace_path: str | None = None

    def __post_init__(self):
        if not self.tol_obj > 0 or not self.tol_feas > 0:
            raise ValueError("tol_obj and tol_feas must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.step_rule not in _STEP_RULES:
            raise ValueError(f"step_rule must be one of {_STEP_RULES}")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass(frozen=True)
class Solution:
    y: np.ndarray
    objective: float
    iterations: int
    feasibility: FeasibilityReport
    converged: bool
    restart_spread: float | None = None


def _aux_definitions(model: GroundModel) -> dict[int, LinearForm]:
    """Solve each constraint for its unique auxiliary variable.

    Returns {aux index: defining form}, where ``y_aux = form(y)`` over
    non-aux variables only.
    """
    defs: dict[int, LinearForm] = {}
    for con in model.constraints:
        aux_terms = [
            (idx, coef) for idx, coef in con.form.terms if model.variables[idx].is_aux
        ]
        if len(aux_terms) != 1:
            raise StructureError(
                f"constraint {con.tag!r} must contain exactly one auxiliary "
                f"variable, found {len(aux_terms)}"
            )
        aux_idx, aux_coef = aux_terms[0]
        if abs(abs(aux_coef) - 1.0) > 1e-12:
            raise StructureError(
                f"auxiliary variable in constraint {con.tag!r} must have "
                f"coefficient +-1, got {aux_coef}"
            )
        if aux_idx in defs:
            raise StructureError(
                f"auxiliary variable {aux_idx} appears in two constraints"
            )
        scale = -1.0 / aux_coef
        rest = [(idx, coef * scale) for idx, coef in con.form.terms if idx != aux_idx]
        for idx, _ in rest:
            if model.variables[idx].is_aux:
                raise StructureError(
                    f"constraint {con.tag!r} couples two auxiliary variables"
                )
        defs[aux_idx] = linear_form(rest, con.form.constant * scale)
    return defs


def _eliminate(model: GroundModel):
    """Substitute away constraint-defined aux variables.

    Returns (reduced model, recovery) where recovery is None for the
    identity case and otherwise (kept original indices, aux definitions
    over original indices).
    """
    if not model.constraints:
        return model, None
    defs = _aux_definitions(model)
    kept = [v for v in model.variables if v.index not in defs]
    new_index = {v.index: j for j, v in enumerate(kept)}
    new_vars = tuple(Variable(index=j, kind=v.kind, key=v.key) for j, v in enumerate(kept))
    new_pots = []
    for pot in model.potentials:
        acc: dict[int, float] = {}
        constant = pot.form.constant
        for idx, coef in pot.form.terms:
            if idx in defs:
                definition = defs[idx]
                constant += coef * definition.constant
                for didx, dcoef in definition.terms:
                    acc[didx] = acc.get(didx, 0.0) + coef * dcoef
            else:
                acc[idx] = acc.get(idx, 0.0) + coef
        terms = tuple((new_index[i], c) for i, c in acc.items() if c != 0.0)
        new_pots.append(
            HingePotential(
                weight=pot.weight,
                form=LinearForm(terms=terms, constant=constant),
                exponent=pot.exponent,
                tag=pot.tag,
            )
        )
    reduced = GroundModel(variables=new_vars, potentials=tuple(new_pots))
    return reduced, ([v.index for v in kept], defs)


def eliminate_aux(model: GroundModel) -> GroundModel:
    """Equivalent model with constraint-defined aux variables substituted away.

    The optimal objective value is unchanged: each auxiliary variable is an
    average of box variables, so its own [0, 1] bound is implied.
    """
    reduced, _ = _eliminate(model)
    return reduced


def _recover(model: GroundModel, recovery, y_reduced: np.ndarray) -> np.ndarray:
    if recovery is None:
        return y_reduced
    kept, defs = recovery
    y = np.zeros(model.n_variables)
    for j, orig in enumerate(kept):
        y[orig] = y_reduced[j]
    for aux_idx, definition in defs.items():
        y[aux_idx] = definition(y)
    return y


class _Energy:
    """Evaluates the energy and its (sub)gradient, optionally with the
    exponent-1 hinges Huber-smoothed at width mu (exponent-2 terms are
    already smooth and are never altered).

    Potentials are partitioned by exponent at construction so every
    evaluation is branch-free vectorized arithmetic.
    """

    def __init__(self, model: GroundModel):
        A, b, w, p, _, _ = model._compiled
        lin = p == 1.0
        sq = ~lin
        self.A1 = A[lin].tocsr()
        self.b1, self.w1 = b[lin], w[lin]
        self.A1T = self.A1.T.tocsr()
        self.A2 = A[sq].tocsr()
        self.b2, self.w2 = b[sq], w[sq]
        self.A2T = self.A2.T.tocsr()
        self.linear = lin

    def exact(self, y):
        pos1 = np.maximum(self.A1 @ y + self.b1, 0.0)
        pos2 = np.maximum(self.A2 @ y + self.b2, 0.0)
        return float(self.w1 @ pos1 + self.w2 @ (pos2 * pos2))

    def exact_grad(self, y):
        ell1 = self.A1 @ y + self.b1
        pos2 = np.maximum(self.A2 @ y + self.b2, 0.0)
        coef1 = self.w1 * (ell1 > 0.0)
        coef2 = 2.0 * self.w2 * pos2
        return np.asarray(self.A1T @ coef1 + self.A2T @ coef2)

    def smoothed(self, y, mu):
        # hinge -> 0 below -mu, quadratic blend (t+mu)^2/(4mu) inside the
        # band, linear above
        t = self.A1 @ y + self.b1
        band = np.clip(t + mu, 0.0, 2.0 * mu)
        h = np.where(t > mu, t, band * band / (4.0 * mu))
        pos2 = np.maximum(self.A2 @ y + self.b2, 0.0)
        return float(self.w1 @ h + self.w2 @ (pos2 * pos2))

    def smoothed_grad(self, y, mu):
        t = self.A1 @ y + self.b1
        coef1 = self.w1 * np.clip((t + mu) / (2.0 * mu), 0.0, 1.0)
        pos2 = np.maximum(self.A2 @ y + self.b2, 0.0)
        coef2 = 2.0 * self.w2 * pos2
        return np.asarray(self.A1T @ coef1 + self.A2T @ coef2)


def _descend(energy: _Energy, y, cfg: SolverConfig, budget: int, trace, k0: int):
    """Projected subgradient descent on the exact energy.

    Returns (best iterate, iterations used, converged flag). When a
    backtracking line search fails at a hinge kink, falls back to
    diminishing non-monotone steps with best-iterate tracking.
    """
    fval = energy.exact
    fgrad = energy.exact_grad

    f = fval(y)
    if not math.isfinite(f):
        raise NumericError("objective not finite at the initial point")
    best_y, best_f = y.copy(), f
    best_hist: list[float] = []
    t = cfg.step_init
    stalls = 0
    converged = False
    used = 0

    for k in range(budget):
        used = k + 1
        g = fgrad(y)
        if not np.all(np.isfinite(g)):
            raise NumericError("subgradient not finite")
        gsq = float(g @ g)
        if gsq == 0.0:
            # A zero element of the subdifferential certifies optimality.
            converged = True
            if trace is not None:
                trace.append((k0 + k, energy.exact(y), 0.0, 0.0))
            break

        step_taken = 0.0
        if cfg.step_rule == "backtracking":
            t = min(t * _GROW, 1e4)
            accepted = False
            kkt = False
            # right after a stall the search is usually futile: keep it short
            halvings = 60 if stalls == 0 else 8
            while t >= _MIN_STEP and halvings > 0:
                halvings -= 1
                y_new = np.clip(y - t * g, 0.0, 1.0)
                d = y_new - y
                dsq = float(d @ d)
                if dsq == 0.0:
                    # Projection blocks every coordinate: KKT point.
                    kkt = True
                    break
                f_new = fval(y_new)
                if f_new <= f - _ARMIJO * dsq / t:
                    accepted = True
                    break
                t *= _SHRINK
            if kkt:
                converged = True
                if trace is not None:
                    trace.append((k0 + k, energy.exact(y), 0.0, 0.0))
                break
            if accepted:
                y, f = y_new, f_new
                step_taken = t
                stalls = 0
            else:
                # No monotone step exists at this kink; take a diminishing
                # non-monotone step and rely on best-iterate tracking.
                stalls += 1
                t = max(cfg.step_init * _SHRINK**20, _MIN_STEP * 1e3)
                step_taken = 0.01 * cfg.step_init / math.sqrt(stalls)
                y = np.clip(y - (step_taken / math.sqrt(gsq)) * g, 0.0, 1.0)
                f = fval(y)
        else:  # diminishing
            step_taken = cfg.step_init / math.sqrt(k + 1.0)
            y = np.clip(y - (step_taken / math.sqrt(gsq)) * g, 0.0, 1.0)
            f = fval(y)

        if not math.isfinite(f):
            raise NumericError("objective became non-finite during descent")
        if f < best_f:
            best_f = f
            best_y = y.copy()
        if trace is not None:
            trace.append((k0 + k, energy.exact(y), 0.0, step_taken))

        best_hist.append(best_f)
        if len(best_hist) > cfg.window:
            ago = best_hist[-cfg.window - 1]
            if ago - best_f <= cfg.tol_obj * max(ago, 1e-12):
                converged = True
                break

    return best_y, used, converged


# Huber widths for the graduated phases preceding the exact polish; models
# without exponent-1 potentials skip straight to the exact (smooth) phase.
_MU_SCHEDULE = (1e-3, 1e-6, 1e-9)


def _smooth_phase(energy: _Energy, y: np.ndarray, mu: float, budget: int):
    """Minimize the mu-smoothed energy with bound-constrained L-BFGS.

    Plain projected descent crawls in the narrow valleys the smoothed
    hinges create (curvature ~ w/mu across vs ~w along); a quasi-Newton
    step handles that conditioning and is still deterministic. Function
    evaluations are capped: near machine precision the line search burns
    ~20 evaluations per iteration for negligible gain.
    """
    res = _scipy_minimize(
        fun=lambda z: energy.smoothed(z, mu),
        x0=y,
        jac=lambda z: energy.smoothed_grad(z, mu),
        method="L-BFGS-B",
        bounds=[(0.0, 1.0)] * y.size,
        options={
            "maxiter": budget,
            "maxfun": max(200, 2 * budget),
            "ftol": 1e-13,
            "gtol": 1e-12,
            "maxcor": 20,
        },
    )
    return np.clip(res.x, 0.0, 1.0), int(res.nit)


def _minimize(model: GroundModel, y0: np.ndarray, cfg: SolverConfig):
    """Graduated descent over the box; returns the best iterate found.

    Kinked energies are first minimized under decreasing Huber smoothing
    and the result is polished with exact-objective projected subgradient
    steps; all-smooth energies go straight to the exact phase.
    Deterministic throughout.
    """
    energy = _Energy(model)
    trace = [] if cfg.trace_path else None

    # The first (widest) smoothing does the long-range valley walking and
    # gets the bulk of the budget; the narrower phases only sharpen kinks
    # before the exact polish and are deliberately short, since their
    # conditioning makes quasi-Newton line searches expensive.
    phases: list[tuple[float, int]] = []
    if np.any(energy.linear) and cfg.step_rule == "backtracking":
        wide = min(3000, cfg.max_iter // 2)
        narrow = min(600, cfg.max_iter // 8)
        if wide > 0 and narrow > 0:
            phases = [(_MU_SCHEDULE[0], wide)] + [(mu, narrow) for mu in _MU_SCHEDULE[1:]]
    y = np.clip(np.asarray(y0, dtype=float), 0.0, 1.0)
    iterations = 0
    candidates = [(energy.exact(y), y.copy())]

    for mu, budget in phases:
        y, used = _smooth_phase(energy, y, mu, budget)
        iterations += used
        candidates.append((energy.exact(y), y.copy()))

    y, used, converged = _descend(
        energy, y, cfg, max(1, cfg.max_iter - iterations), trace, iterations
    )
    iterations += used
    candidates.append((energy.exact(y), y.copy()))

    best_f, best_y = min(candidates, key=lambda c: c[0])

    if trace is not None:
        with open(cfg.trace_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective", "max_residual", "step_size"])
            writer.writerows(trace)

    return best_y, best_f, iterations, converged


def _solve_from(model: GroundModel, cfg: SolverConfig, y0_reduced: np.ndarray | None) -> Solution:
    reduced, recovery = _eliminate(model)
    if y0_reduced is None:
        init = 0.5 if cfg.init_value is None else float(np.clip(cfg.init_value, 0.0, 1.0))
        y0_reduced = np.full(reduced.n_variables, init)
    if reduced.n_variables == 0 or not reduced.potentials:
        y_red = np.clip(y0_reduced, 0.0, 1.0)
        iterations, converged = 0, True
    else:
        y_red, _, iterations, converged = _minimize(reduced, y0_reduced, cfg)
    y_full = _recover(model, recovery, y_red)
    objective = evaluate_objective(model, y_full)
    feasibility = check_feasibility(model, y_full, cfg.tol_feas)
    return Solution(
        y=y_full,
        objective=objective,
        iterations=iterations,
        feasibility=feasibility,
        converged=converged and feasibility.feasible,
    )


def solve(model: GroundModel, cfg: SolverConfig = SolverConfig()) -> Solution:
    """MAP inference. Deterministic given (model, cfg).

    Aux-defining constraints are eliminated first; the solution reports the
    assignment over the *original* variables, with aux values reconstructed
    exactly from their defining averages.
    """
    return _solve_from(model, cfg, None)


def solve_with_restarts(
    model: GroundModel, cfg: SolverConfig = SolverConfig(), n_starts: int = 1
) -> Solution:
    """Best solution across random feasible initializations.

    Convexity makes this a consistency check: a restart spread above
    10 * tol_obj is logged as a warning and recorded on the solution.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    solutions = [_solve_from(model, cfg, None)]
    if n_starts > 1:
        reduced, _ = _eliminate(model)
        rng = np.random.default_rng(cfg.seed)
        for _ in range(n_starts - 1):
            y0 = rng.uniform(0.0, 1.0, size=reduced.n_variables)
            solutions.append(_solve_from(model, cfg, y0))
    objectives = [s.objective for s in solutions]
    spread = max(objectives) - min(objectives)
    best = min(solutions, key=lambda s: s.objective)
    scale = max(1.0, abs(best.objective))
    if spread > 10.0 * cfg.tol_obj * scale:
        log.warning(
            "restarts disagree on objective by %.3e (> 10*tol_obj); "
            "the model may be poorly conditioned",
            spread,
        )
    return replace(best, restart_spread=spread)
