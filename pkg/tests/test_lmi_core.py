import numpy as np
import pytest

from lipsyn.lmi_core import (
    Constraint,
    LmiProblem,
    MatrixExpr,
    Term,
    VariableSpec,
    assemble_block,
    eig_extrema,
    solve,
    spectral_norm,
)


def test_assemble_constant_diagonal():
    expr = assemble_block([[-1.0, 0.0], [0.0, -1.0]])
    value = expr.evaluate({})
    assert value.shape == (2, 2)
    np.testing.assert_allclose(value, -np.eye(2))


def test_assemble_mirror_matches_manual_transpose():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    b = np.array([[1.0], [3.0]])
    c = np.array([[-4.0]])
    expr = assemble_block([[a, b], ["*", c]])
    expected = np.block([[a, b], [b.T, c]])
    np.testing.assert_allclose(expr.evaluate({}), expected)
    assert expr.symmetric


def test_assemble_mirror_with_variable_block():
    k_term = MatrixExpr.matrix_term("K", np.eye(1), np.eye(2))
    expr = assemble_block([[np.array([[-1.0]]), k_term], ["*", -np.eye(2)]])
    K = np.array([[0.3, -0.7]])
    value = expr.evaluate({"K": K})
    expected = np.block([[-np.ones((1, 1)), K], [K.T, -np.eye(2)]])
    np.testing.assert_allclose(value, expected)


def test_assemble_shape_mismatch_names_offending_block():
    good = np.eye(2)
    bad = np.ones((3, 2))
    with pytest.raises(ValueError, match=r"block \(1,\d\)"):
        assemble_block([[good, good], [bad, good]])


def test_assemble_rejects_star_on_diagonal():
    with pytest.raises(ValueError):
        assemble_block([[np.eye(2), np.zeros((2, 2))], [np.zeros((2, 2)), "*"]])


def test_assemble_rejects_double_star():
    a = np.eye(2)
    with pytest.raises(ValueError):
        assemble_block([[a, "*"], ["*", a]])


def test_expr_algebra_add_scale_transpose():
    rng = np.random.default_rng(3)
    L = rng.standard_normal((2, 3))
    R = rng.standard_normal((3, 2))
    V = rng.standard_normal((3, 3))
    term = MatrixExpr.matrix_term("V", L, R)
    const = MatrixExpr.constant(np.eye(2))
    combo = 2.0 * term + const - const.scale(0.5)
    got = combo.evaluate({"V": V})
    np.testing.assert_allclose(got, 2.0 * L @ V @ R + 0.5 * np.eye(2))
    np.testing.assert_allclose(combo.T.evaluate({"V": V}), got.T)


def test_scalar_term_evaluation():
    expr = MatrixExpr.scalar_term("a", np.diag([1.0, 2.0]))
    np.testing.assert_allclose(expr.evaluate({"a": 0.5}), np.diag([0.5, 1.0]))
    with pytest.raises(KeyError):
        expr.evaluate({})


def test_declared_symmetric_mismatch_rejected():
    skew = MatrixExpr(
        terms=(Term(None, np.array([[0.0, 1.0], [-1.0, 0.0]])),),
        shape=(2, 2),
        symmetric=True,
    )
    with pytest.raises(ValueError):
        skew.evaluate({})


def test_spectral_norm_oracles():
    assert spectral_norm(np.eye(3)) == pytest.approx(1.0)
    assert spectral_norm(np.diag([3.0, 4.0])) == pytest.approx(4.0)
    row = np.array([-8.7744, -4.7690])
    # For a single row the spectral norm is the Euclidean norm.
    assert spectral_norm(row) == pytest.approx(np.hypot(8.7744, 4.7690), rel=1e-12)
    assert spectral_norm(row) == pytest.approx(9.98666, abs=5e-4)


def test_spectral_norm_rejects_nonfinite():
    with pytest.raises(ValueError):
        spectral_norm(np.array([[np.nan, 0.0]]))


def test_eig_extrema_oracles():
    lo, hi = eig_extrema(np.diag([1.0, 2.0, 3.0]))
    assert (lo, hi) == pytest.approx((1.0, 3.0))

    m = np.array([[0.0015, 0.0009], [0.0009, 0.0020]])
    # Closed-form 2x2 eigenvalues: mean +/- sqrt(((a-d)/2)^2 + b^2).
    mean = 0.00175
    disc = np.sqrt(0.00025**2 + 0.0009**2)
    lo, hi = eig_extrema(m)
    assert lo == pytest.approx(mean - disc, rel=1e-12)
    assert hi == pytest.approx(mean + disc, rel=1e-12)

    lo, hi = eig_extrema(-np.eye(4))
    assert (lo, hi) == pytest.approx((-1.0, -1.0))


def test_eig_extrema_rejects_asymmetric():
    with pytest.raises(ValueError):
        eig_extrema(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        eig_extrema(np.ones((2, 3)))


def _min_trace_problem():
    # minimize t subject to Q >= I and Q <= t I; optimum t = 1.
    q = MatrixExpr.matrix_term("Q", np.eye(2), np.eye(2))
    t = MatrixExpr.scalar_term("t", np.eye(2))
    lower = q - MatrixExpr.constant(np.eye(2))
    upper = q - t
    return LmiProblem(
        variables=[
            VariableSpec("Q", "symmetric", (2, 2)),
            VariableSpec("t", "scalar"),
        ],
        constraints=[
            Constraint(lower, ">=0", margin=0.0),
            Constraint(upper, "<=0", margin=0.0),
        ],
        objective=("minimize", {"t": 1.0}),
    )


def test_solve_minimal_sdp():
    sol = solve(_min_trace_problem())
    assert sol.ok
    assert sol.status == "optimal"
    assert sol.objective_value == pytest.approx(1.0, abs=1e-6)
    Q = sol.assignment["Q"]
    lo, _ = eig_extrema(0.5 * (Q + Q.T))
    assert lo >= 1.0 - 1e-6


def test_solve_reports_infeasible():
    q = MatrixExpr.matrix_term("Q", np.eye(2), np.eye(2))
    eye = MatrixExpr.constant(np.eye(2))
    problem = LmiProblem(
        variables=[VariableSpec("Q", "symmetric", (2, 2))],
        constraints=[
            Constraint(q - eye, ">=0"),
            Constraint(q + eye, "<=0"),
        ],
    )
    sol = solve(problem)
    assert not sol.ok
    assert sol.status == "infeasible"
    assert sol.assignment == {}


def test_solve_respects_scalar_bounds():
    t = MatrixExpr.scalar_term("t", np.eye(1))
    problem = LmiProblem(
        variables=[VariableSpec("t", "scalar", lower=2.0, upper=10.0)],
        constraints=[Constraint(t - MatrixExpr.constant(np.eye(1)), ">=0")],
        objective=("minimize", {"t": 1.0}),
    )
    sol = solve(problem)
    assert sol.ok
    assert sol.assignment["t"] == pytest.approx(2.0, abs=1e-6)


def test_solve_residuals_within_tolerance():
    sol = solve(_min_trace_problem(), eps_solver=1e-7)
    assert sol.ok
    assert len(sol.residuals) == 2
    # constraint 0 is >=0 (residual is the smallest eigenvalue), constraint 1
    # is <=0 (residual is the largest); both must sit within solver slack
    assert sol.residuals[0] >= -1e-7
    assert sol.residuals[1] <= 1e-7


def test_problem_validation_rejects_unknown_variable():
    q = MatrixExpr.matrix_term("Q", np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        LmiProblem(
            variables=[VariableSpec("R", "symmetric", (2, 2))],
            constraints=[Constraint(q, "<=0")],
        )


def test_problem_validation_rejects_bad_objective():
    q = MatrixExpr.matrix_term("Q", np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        LmiProblem(
            variables=[VariableSpec("Q", "symmetric", (2, 2))],
            constraints=[Constraint(q, "<=0")],
            objective=("maximize", {"missing": 1.0}),
        )


def test_variable_spec_validation():
    with pytest.raises(ValueError):
        VariableSpec("x", "diagonal", (2, 2))
    with pytest.raises(ValueError):
        VariableSpec("Q", "symmetric", (2, 3))
    with pytest.raises(ValueError):
        VariableSpec("Q", "symmetric", (2, 2), lower=0.0)


def test_evaluate_matches_block_assembly_random():
    """Random block grids evaluate to the same matrix numpy.block builds."""
    rng = np.random.default_rng(17)
    for _ in range(50):
        n1 = int(rng.integers(1, 4))
        n2 = int(rng.integers(1, 4))
        A = rng.standard_normal((n1, n1))
        B = rng.standard_normal((n1, n2))
        D = rng.standard_normal((n2, n2))
        D = 0.5 * (D + D.T)
        expr = assemble_block([[0.5 * (A + A.T), B], ["*", D]])
        manual = np.block([[0.5 * (A + A.T), B], [B.T, D]])
        np.testing.assert_allclose(expr.evaluate({}), manual, atol=1e-12)
