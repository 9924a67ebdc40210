import numpy as np
import pytest

from fairhinge import (
    EqualityConstraint,
    GroundModel,
    HingePotential,
    LinearForm,
    SolverConfig,
    StructureError,
    Variable,
    eliminate_aux,
    solve,
    solve_with_restarts,
)
from oracles import grid_minimize

CFG = SolverConfig()


def targets(n):
    return tuple(Variable(index=j, kind="target", key=(0, j)) for j in range(n))


def sq_pull(idx, center, weight=1.0):
    """weight * (y_idx - center)^2 as a mirrored pair of squared hinges."""
    return (
        HingePotential(weight=weight, form=LinearForm(((idx, -1.0),), center), exponent=2),
        HingePotential(weight=weight, form=LinearForm(((idx, 1.0),), -center), exponent=2),
    )


def one_d_model():
    pots = (
        HingePotential(weight=1.0, form=LinearForm(((0, -1.0),), 0.7), exponent=2),
        HingePotential(weight=1.0, form=LinearForm(((0, 1.0),), -0.3), exponent=2),
    )
    return GroundModel(variables=targets(1), potentials=pots)


def two_d_model():
    pots = (
        HingePotential(weight=1.0, form=LinearForm(((0, 1.0), (1, -1.0)), 0.0), exponent=1),
        HingePotential(weight=10.0, form=LinearForm(((0, -1.0),), 0.9), exponent=2),
        HingePotential(weight=10.0, form=LinearForm(((1, 1.0),), -0.1), exponent=2),
    )
    return GroundModel(variables=targets(2), potentials=pots)


def nonparity_toy(w_f=10.0, centers=(0.9, 0.9, 0.1)):
    """Three rating targets with squared pulls plus two constrained averages.

    Targets 0, 1 are "protected" (average held by aux var 3), target 2
    "unprotected" (aux var 4); a mirrored hinge pair penalizes the
    difference of the two averages.
    """
    variables = targets(3) + (
        Variable(index=3, kind="group_avg", key=("protected",)),
        Variable(index=4, kind="group_avg", key=("unprotected",)),
    )
    pots = []
    for j, c in enumerate(centers):
        pots.extend(sq_pull(j, c))
    pots.append(
        HingePotential(weight=w_f, form=LinearForm(((4, 1.0), (3, -1.0)), 0.0), exponent=1)
    )
    pots.append(
        HingePotential(weight=w_f, form=LinearForm(((3, 1.0), (4, -1.0)), 0.0), exponent=1)
    )
    cons = (
        EqualityConstraint(form=LinearForm(((3, 1.0), (0, -0.5), (1, -0.5)), 0.0)),
        EqualityConstraint(form=LinearForm(((4, 1.0), (2, -1.0)), 0.0)),
    )
    return GroundModel(variables=variables, potentials=tuple(pots), constraints=cons)


# --- eliminate_aux ---------------------------------------------------------


def test_eliminate_no_constraints_identity():
    model = one_d_model()
    assert eliminate_aux(model) is model


def test_eliminate_symbolic_substitution():
    variables = targets(2) + (Variable(index=2, kind="group_avg", key=("protected",)),)
    pot = HingePotential(weight=1.0, form=LinearForm(((2, 1.0),), -0.5), exponent=1)
    con = EqualityConstraint(form=LinearForm(((2, 1.0), (0, -0.5), (1, -0.5)), 0.0))
    model = GroundModel(variables=variables, potentials=(pot,), constraints=(con,))
    reduced = eliminate_aux(model)
    assert reduced.n_variables == 2
    assert not reduced.constraints
    (rpot,) = reduced.potentials
    assert dict(rpot.form.terms) == pytest.approx({0: 0.5, 1: 0.5})
    assert rpot.form.constant == pytest.approx(-0.5)


def test_eliminate_structure_errors():
    variables = targets(1) + (
        Variable(index=1, kind="group_avg", key=("p",)),
        Variable(index=2, kind="group_avg", key=("u",)),
    )
    two_aux = EqualityConstraint(form=LinearForm(((1, 1.0), (2, 1.0), (0, -1.0)), 0.0))
    model = GroundModel(variables=variables, constraints=(two_aux,))
    with pytest.raises(StructureError):
        eliminate_aux(model)

    bad_coef = EqualityConstraint(form=LinearForm(((1, 0.5), (0, -0.5)), 0.0))
    model = GroundModel(variables=variables, constraints=(bad_coef,))
    with pytest.raises(StructureError):
        eliminate_aux(model)

    c1 = EqualityConstraint(form=LinearForm(((1, 1.0), (0, -1.0)), 0.0))
    c2 = EqualityConstraint(form=LinearForm(((1, 1.0), (0, -0.5)), 0.0))
    model = GroundModel(variables=variables, constraints=(c1, c2))
    with pytest.raises(StructureError):
        eliminate_aux(model)


def test_elimination_equivalence_on_toy():
    model = nonparity_toy()
    direct = solve(model, CFG)
    reduced = solve(eliminate_aux(model), CFG)
    assert direct.objective == pytest.approx(reduced.objective, abs=1e-8)
    assert np.allclose(direct.y[:3], reduced.y, atol=1e-4)


# --- solve -----------------------------------------------------------------


def test_solve_one_d_against_refined_grid():
    model = one_d_model()
    sol = solve(model, CFG)
    oracle_obj, oracle_pt = grid_minimize(model.potentials, 1, resolution=1e-3, refine_to=1e-6)
    assert sol.converged
    assert sol.objective == pytest.approx(0.08, abs=1e-6)
    assert abs(sol.objective - oracle_obj) <= 1e-6
    assert abs(sol.y[0] - 0.5) <= 1e-4
    assert abs(oracle_pt[0] - 0.5) <= 1e-5


def test_solve_empty_model():
    sol = solve(GroundModel(variables=targets(2)), CFG)
    assert sol.objective == 0.0
    assert sol.converged
    assert sol.feasibility.feasible


def test_solve_two_d_against_grid():
    model = two_d_model()
    sol = solve(model, CFG)
    oracle_obj, _ = grid_minimize(model.potentials, 2, resolution=1e-3)
    assert abs(sol.objective - oracle_obj) <= 1e-3
    # analytic optimum: both squared pulls relax by 0.05 against the hinge
    assert np.allclose(sol.y, [0.85, 0.15], atol=1e-3)


def test_solve_diminishing_rule():
    model = two_d_model()
    cfg = SolverConfig(step_rule="diminishing", max_iter=50_000)
    sol = solve(model, cfg)
    oracle_obj, _ = grid_minimize(model.potentials, 2, resolution=1e-3)
    assert abs(sol.objective - oracle_obj) <= 1e-3


def test_solve_feasibility_of_constrained_model():
    model = nonparity_toy()
    sol = solve(model, CFG)
    assert sol.feasibility.feasible
    # aux values equal the group means exactly, by reconstruction
    assert sol.y[3] == pytest.approx((sol.y[0] + sol.y[1]) / 2, abs=1e-12)
    assert sol.y[4] == pytest.approx(sol.y[2], abs=1e-12)


def test_solve_determinism():
    model = two_d_model()
    a = solve(model, CFG)
    b = solve(model, CFG)
    assert np.array_equal(a.y, b.y)
    assert a.objective == b.objective
    assert a.iterations == b.iterations


def test_weight_scaling_argmin_invariance():
    model = two_d_model()
    scaled = GroundModel(
        variables=model.variables,
        potentials=tuple(
            HingePotential(weight=7.5 * p.weight, form=p.form, exponent=p.exponent)
            for p in model.potentials
        ),
    )
    a = solve(model, CFG)
    b = solve(scaled, CFG)
    assert np.allclose(a.y, b.y, atol=1e-4)
    assert b.objective == pytest.approx(7.5 * a.objective, rel=1e-3)


def test_max_iter_exhaustion_reports_not_converged():
    model = two_d_model()
    sol = solve(model, SolverConfig(max_iter=3))
    assert not sol.converged
    assert sol.iterations == 3


def test_trace_csv(tmp_path):
    path = tmp_path / "trace.csv"
    cfg = SolverConfig(trace_path=str(path))
    solve(two_d_model(), cfg)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "iteration,objective,max_residual,step_size"
    assert len(lines) > 1


# --- restarts ---------------------------------------------------------------


def test_restarts_agree_on_convex_model():
    model = two_d_model()
    sol = solve_with_restarts(model, CFG, n_starts=5)
    assert sol.restart_spread is not None
    assert sol.restart_spread <= 10 * CFG.tol_obj * max(1.0, abs(sol.objective))


def test_restarts_single_start_identical_to_solve():
    model = two_d_model()
    a = solve(model, CFG)
    b = solve_with_restarts(model, CFG, n_starts=1)
    assert np.array_equal(a.y, b.y)
    assert a.objective == b.objective


def test_restarts_same_argmin():
    model = two_d_model()
    sol = solve_with_restarts(model, CFG, n_starts=3)
    assert np.allclose(sol.y, [0.85, 0.15], atol=1e-3)


def test_restarts_validation():
    with pytest.raises(ValueError):
        solve_with_restarts(two_d_model(), CFG, n_starts=0)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol_obj=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(step_rule="magic")


def test_pure_hinge_flat_optimum_objective():
    # |y0 - y1| style model has a flat optimum along the diagonal; only the
    # objective value is asserted.
    pots = (
        HingePotential(weight=2.0, form=LinearForm(((0, 1.0), (1, -1.0)), 0.0), exponent=1),
        HingePotential(weight=2.0, form=LinearForm(((1, 1.0), (0, -1.0)), 0.0), exponent=1),
    )
    model = GroundModel(variables=targets(2), potentials=pots)
    sol = solve(model, CFG)
    assert sol.objective == pytest.approx(0.0, abs=1e-6)


def test_kink_optimum_reached():
    # strong absolute-value coupling with asymmetric pulls: optimum sits on
    # the kink manifold y0 == y1 at the joint pull minimum
    pots = (
        HingePotential(weight=10.0, form=LinearForm(((0, 1.0), (1, -1.0)), 0.0), exponent=1),
        HingePotential(weight=10.0, form=LinearForm(((1, 1.0), (0, -1.0)), 0.0), exponent=1),
    ) + sq_pull(0, 0.9) + sq_pull(1, 0.1)
    model = GroundModel(variables=targets(2), potentials=tuple(pots))
    sol = solve(model, CFG)
    oracle_obj, oracle_pt = grid_minimize(model.potentials, 2, resolution=1e-3)
    assert abs(sol.objective - oracle_obj) <= 1e-3
    assert abs(sol.y[0] - sol.y[1]) <= 1e-3
    assert np.allclose(oracle_pt, [0.5, 0.5], atol=2e-3)
