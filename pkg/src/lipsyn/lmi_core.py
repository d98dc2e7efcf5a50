"""Affine matrix expressions, block assembly, and a semidefinite feasibility solver.

This module is the numerical backbone of the package.  Everything the
synthesis layer does is phrased as a linear matrix inequality (LMI): an
affine matrix-valued expression of the decision variables constrained to be
negative or positive semidefinite.  The pieces here are:

* :class:`Term` / :class:`MatrixExpr` represent affine matrix expressions
  symbolically, as sums of ``L @ V @ R`` contributions over named variables.
* :func:`assemble_block` stitches a grid of expressions into one big block
  expression, with ``"*"`` entries mirroring the transposed counterpart.
* :class:`LmiProblem` bundles variable declarations, semidefinite
  constraints and an optional linear objective; :func:`solve` lowers it to
  cvxpy, runs a conic solver and independently re-checks every constraint
  with a dense eigenvalue computation before reporting success.
* :func:`spectral_norm` and :func:`eig_extrema` are small verified helpers
  used throughout the synthesis and test code.
"""

from __future__ import annotations

import dataclasses
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

DEFAULT_EPS_SOLVER = 1e-7

Number = Union[int, float, np.floating]
ArrayLike = Union[Number, Sequence, np.ndarray]


def _as_coeff(value: ArrayLike, name: str = "coefficient") -> np.ndarray:
    """Coerce a scalar or array-like into a 2-d float matrix."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        raise ValueError(
            f"{name} must be a scalar or a 2-d array, got a 1-d array of "
            f"length {arr.shape[0]}; reshape it explicitly to avoid "
            "row/column ambiguity"
        )
    elif arr.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got {arr.ndim}-d")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclasses.dataclass(frozen=True)
class Term:
    """One affine contribution to a matrix expression.

    Three kinds of term share this container:

    * constant: ``var is None``, the value is ``left`` (``right`` unused);
    * scalar variable: ``right is None``, contributes ``value * left``;
    * matrix variable: contributes ``left @ V @ right`` (or ``left @ V.T @
      right`` when ``transpose`` is set).
    """

    var: Optional[str]
    left: np.ndarray
    right: Optional[np.ndarray] = None
    transpose: bool = False

    def output_shape(self) -> tuple[int, int]:
        if self.var is None or self.right is None:
            return self.left.shape
        return (self.left.shape[0], self.right.shape[1])

    def transposed(self) -> "Term":
        if self.var is None or self.right is None:
            return Term(self.var, self.left.T.copy(), None, False)
        return Term(self.var, self.right.T.copy(), self.left.T.copy(),
                    not self.transpose)

    def scaled(self, c: float) -> "Term":
        return Term(self.var, c * self.left, self.right, self.transpose)

    def placed(self, P_left: np.ndarray, P_right: np.ndarray) -> "Term":
        """Embed this term's block into a larger grid via selection matrices."""
        if self.var is None or self.right is None:
            return Term(self.var, P_left @ self.left @ P_right, None, False)
        return Term(self.var, P_left @ self.left, self.right @ P_right,
                    self.transpose)


class MatrixExpr:
    """An affine matrix-valued expression over named decision variables."""

    __slots__ = ("terms", "shape", "symmetric")

    def __init__(self, terms: Iterable[Term], shape: tuple[int, int],
                 symmetric: bool = False):
        terms = tuple(terms)
        for t in terms:
            got = t.output_shape()
            if got != tuple(shape):
                raise ValueError(
                    f"term for variable {t.var!r} produces shape {got}, "
                    f"expression declares {tuple(shape)}"
                )
        self.terms = terms
        self.shape = tuple(shape)
        self.symmetric = bool(symmetric)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def constant(value: ArrayLike) -> "MatrixExpr":
        M = _as_coeff(value, "constant block")
        return MatrixExpr((Term(None, M),), M.shape)

    @staticmethod
    def zeros(shape: tuple[int, int]) -> "MatrixExpr":
        return MatrixExpr.constant(np.zeros(shape))

    @staticmethod
    def scalar_term(var: str, coeff: ArrayLike) -> "MatrixExpr":
        """Expression ``value_of(var) * coeff`` for a scalar variable."""
        C = _as_coeff(coeff, f"coefficient of scalar {var!r}")
        return MatrixExpr((Term(var, C),), C.shape)

    @staticmethod
    def matrix_term(var: str, left: ArrayLike, right: ArrayLike,
                    transpose: bool = False) -> "MatrixExpr":
        """Expression ``left @ V @ right`` (``V.T`` if transpose) for matrix var."""
        L = _as_coeff(left, f"left coefficient of {var!r}")
        R = _as_coeff(right, f"right coefficient of {var!r}")
        return MatrixExpr((Term(var, L, R, transpose),),
                          (L.shape[0], R.shape[1]))

    # -- algebra -----------------------------------------------------------

    def __add__(self, other: "MatrixExpr") -> "MatrixExpr":
        if not isinstance(other, MatrixExpr):
            return NotImplemented
        if self.shape != other.shape:
            raise ValueError(
                f"cannot add expressions of shape {self.shape} and {other.shape}"
            )
        return MatrixExpr(self.terms + other.terms, self.shape,
                          self.symmetric and other.symmetric)

    def __sub__(self, other: "MatrixExpr") -> "MatrixExpr":
        return self.__add__(other.__neg__())

    def __neg__(self) -> "MatrixExpr":
        return self.scale(-1.0)

    def scale(self, c: float) -> "MatrixExpr":
        c = float(c)
        return MatrixExpr(tuple(t.scaled(c) for t in self.terms), self.shape,
                          self.symmetric)

    def __mul__(self, c: float) -> "MatrixExpr":
        return self.scale(c)

    __rmul__ = __mul__

    @property
    def T(self) -> "MatrixExpr":
        return MatrixExpr(tuple(t.transposed() for t in self.terms),
                          (self.shape[1], self.shape[0]), self.symmetric)

    # -- evaluation --------------------------------------------------------

    def variables(self) -> set[str]:
        return {t.var for t in self.terms if t.var is not None}

    def evaluate(self, assignment: Mapping[str, ArrayLike]) -> np.ndarray:
        """Numerically evaluate against a {name: value} assignment."""
        out = np.zeros(self.shape)
        for t in self.terms:
            if t.var is None:
                out += t.left
                continue
            if t.var not in assignment:
                raise KeyError(f"assignment is missing variable {t.var!r}")
            val = assignment[t.var]
            if t.right is None:
                out += float(np.asarray(val)) * t.left
            else:
                V = np.asarray(val, dtype=float)
                if V.ndim != 2:
                    raise ValueError(
                        f"variable {t.var!r} must evaluate to a matrix, "
                        f"got ndim={V.ndim}"
                    )
                V = V.T if t.transpose else V
                out += t.left @ V @ t.right
        if self.symmetric:
            scale = max(1.0, float(np.abs(out).max()))
            if np.abs(out - out.T).max() > 1e-10 * scale:
                raise ValueError(
                    "expression declared symmetric evaluated to an "
                    "asymmetric matrix (max asymmetry "
                    f"{np.abs(out - out.T).max():.3e})"
                )
        return out

    def constant_part(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for t in self.terms:
            if t.var is None:
                out += t.left
        return out

    def to_cvxpy(self, varmap: Mapping[str, object]):
        """Lower to a cvxpy expression given a {name: cvxpy variable} map."""
        import cvxpy as cp

        pieces = []
        for t in self.terms:
            if t.var is None:
                pieces.append(cp.Constant(t.left))
                continue
            v = varmap[t.var]
            if t.right is None:
                pieces.append(v * cp.Constant(t.left))
            else:
                body = v.T if t.transpose else v
                pieces.append(cp.Constant(t.left) @ body @ cp.Constant(t.right))
        expr = pieces[0]
        for p in pieces[1:]:
            expr = expr + p
        return expr


GridEntry = Union[str, ArrayLike, MatrixExpr]


def _entry_to_expr(entry: GridEntry) -> MatrixExpr:
    if isinstance(entry, MatrixExpr):
        return entry
    return MatrixExpr.constant(entry)


def assemble_block(grid: Sequence[Sequence[GridEntry]],
                   symmetric: Optional[bool] = None) -> MatrixExpr:
    """Assemble a 2-d grid of expressions into one block expression.

    Entries may be MatrixExpr instances, arrays, plain numbers (treated as
    1x1 blocks), or the string ``"*"``, which mirrors the transpose of the
    entry at the reflected position.  Row heights and column widths are
    inferred from the non-mirror entries and every block is checked against
    them; mismatches raise ValueError naming the offending position.
    """
    nrows = len(grid)
    if nrows == 0 or any(len(row) != len(grid[0]) for row in grid):
        raise ValueError("grid must be a non-empty rectangular list of lists")
    ncols = len(grid[0])

    exprs: list[list[Optional[MatrixExpr]]] = [
        [None] * ncols for _ in range(nrows)
    ]
    used_mirror = False
    for i in range(nrows):
        for j in range(ncols):
            e = grid[i][j]
            if isinstance(e, str):
                if e != "*":
                    raise ValueError(
                        f"block ({i},{j}): unknown placeholder {e!r}, "
                        "only '*' is supported"
                    )
                used_mirror = True
                continue
            exprs[i][j] = _entry_to_expr(e)
    for i in range(nrows):
        for j in range(ncols):
            if exprs[i][j] is None:
                if i == j:
                    raise ValueError(
                        f"block ({i},{i}): diagonal entries cannot be '*'"
                    )
                src = exprs[j][i]
                if src is None:
                    raise ValueError(
                        f"blocks ({i},{j}) and ({j},{i}) are both '*'"
                    )
                exprs[i][j] = src.T

    row_h = [None] * nrows
    col_w = [None] * ncols
    for i in range(nrows):
        for j in range(ncols):
            h, w = exprs[i][j].shape
            if row_h[i] is None:
                row_h[i] = h
            if col_w[j] is None:
                col_w[j] = w
    for i in range(nrows):
        for j in range(ncols):
            h, w = exprs[i][j].shape
            if (h, w) != (row_h[i], col_w[j]):
                raise ValueError(
                    f"block ({i},{j}) has shape {(h, w)}, expected "
                    f"{(row_h[i], col_w[j])} from row {i} height and "
                    f"column {j} width"
                )

    total_r = sum(row_h)
    total_c = sum(col_w)
    row_off = np.concatenate([[0], np.cumsum(row_h)])
    col_off = np.concatenate([[0], np.cumsum(col_w)])

    terms: list[Term] = []
    for i in range(nrows):
        P_left = np.zeros((total_r, row_h[i]))
        P_left[row_off[i]:row_off[i + 1], :] = np.eye(row_h[i])
        for j in range(ncols):
            P_right = np.zeros((col_w[j], total_c))
            P_right[:, col_off[j]:col_off[j + 1]] = np.eye(col_w[j])
            for t in exprs[i][j].terms:
                terms.append(t.placed(P_left, P_right))

    if symmetric is None:
        symmetric = used_mirror and total_r == total_c
    return MatrixExpr(terms, (total_r, total_c), symmetric)


# ---------------------------------------------------------------------------
# problem containers


@dataclasses.dataclass(frozen=True)
class VariableSpec:
    """Declaration of one decision variable.

    kind is "scalar", "symmetric" or "matrix".  Bounds apply to scalars
    only; shape applies to the matrix kinds (symmetric must be square).
    """

    name: str
    kind: str
    shape: tuple[int, int] = (1, 1)
    lower: Optional[float] = None
    upper: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("scalar", "symmetric", "matrix"):
            raise ValueError(
                f"variable {self.name!r}: kind must be scalar, symmetric or "
                f"matrix, got {self.kind!r}"
            )
        if self.kind == "symmetric" and self.shape[0] != self.shape[1]:
            raise ValueError(
                f"variable {self.name!r}: symmetric variables must be "
                f"square, got shape {self.shape}"
            )
        if self.kind != "scalar" and (self.lower is not None
                                      or self.upper is not None):
            raise ValueError(
                f"variable {self.name!r}: bounds are only supported for "
                "scalar variables"
            )


@dataclasses.dataclass(frozen=True)
class Constraint:
    """A one-sided semidefinite constraint on a square expression.

    sense "<=0" demands expr ⪯ -margin*I and sense ">=0" demands
    expr ⪰ margin*I.  When margin is None a default proportional to the
    size of the constant part is used at solve time.
    """

    expr: MatrixExpr
    sense: str = "<=0"
    margin: Optional[float] = None

    def __post_init__(self):
        if self.sense not in ("<=0", ">=0"):
            raise ValueError(f"sense must be '<=0' or '>=0', got {self.sense!r}")
        if self.expr.shape[0] != self.expr.shape[1]:
            raise ValueError(
                f"semidefinite constraints need square expressions, got "
                f"shape {self.expr.shape}"
            )

    def effective_margin(self) -> float:
        if self.margin is not None:
            return float(self.margin)
        const = self.expr.constant_part()
        return 1e-7 * (1.0 + float(np.abs(const).max()))


@dataclasses.dataclass(frozen=True)
class LmiProblem:
    variables: tuple[VariableSpec, ...]
    constraints: tuple[Constraint, ...]
    objective: Optional[tuple[str, dict]] = None

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(names) != len(set(names)):
            raise ValueError("duplicate variable names in problem")
        declared = set(names)
        for k, c in enumerate(self.constraints):
            missing = c.expr.variables() - declared
            if missing:
                raise ValueError(
                    f"constraint {k} references undeclared variables "
                    f"{sorted(missing)}"
                )
        if self.objective is not None:
            direction, coeffs = self.objective
            if direction not in ("minimize", "maximize"):
                raise ValueError(
                    f"objective direction must be 'minimize' or 'maximize', "
                    f"got {direction!r}"
                )
            kinds = {v.name: v.kind for v in self.variables}
            for name in coeffs:
                if kinds.get(name) != "scalar":
                    raise ValueError(
                        f"objective may only involve scalar variables, "
                        f"{name!r} is {kinds.get(name, 'undeclared')}"
                    )


@dataclasses.dataclass
class LmiSolution:
    """Solver outcome.

    status is one of "optimal", "feasible", "infeasible",
    "numerical-failure".  assignment holds the recovered variable values
    (floats for scalars, symmetrised ndarrays for matrix kinds).
    residuals[k] is the worst-side eigenvalue of constraint k evaluated at
    the assignment: lambda_max for "<=0" constraints, lambda_min for ">=0".
    """

    status: str
    assignment: dict
    objective_value: Optional[float] = None
    residuals: tuple = ()
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "feasible")


def solve(problem: LmiProblem, eps_solver: float = DEFAULT_EPS_SOLVER,
          solver: str = "CLARABEL") -> LmiSolution:
    """Solve an LmiProblem and independently verify the result.

    The conic solver's claim of success is never taken at face value: every
    constraint is re-evaluated at the returned point with a dense
    eigendecomposition, and a claimed-feasible point whose worst residual
    exceeds eps_solver downgrades the outcome to numerical-failure.
    """
    import cvxpy as cp

    varmap = {}
    for spec in problem.variables:
        if spec.kind == "scalar":
            varmap[spec.name] = cp.Variable(name=spec.name)
        elif spec.kind == "symmetric":
            varmap[spec.name] = cp.Variable(spec.shape, name=spec.name,
                                            symmetric=True)
        else:
            varmap[spec.name] = cp.Variable(spec.shape, name=spec.name)

    cons = []
    for c in problem.constraints:
        expr = c.expr.to_cvxpy(varmap)
        n = c.expr.shape[0]
        m = c.effective_margin()
        sym_body = 0.5 * (expr + expr.T)
        if c.sense == "<=0":
            cons.append(sym_body << -m * np.eye(n))
        else:
            cons.append(sym_body >> m * np.eye(n))
    for spec in problem.variables:
        if spec.kind != "scalar":
            continue
        if spec.lower is not None:
            cons.append(varmap[spec.name] >= spec.lower)
        if spec.upper is not None:
            cons.append(varmap[spec.name] <= spec.upper)

    if problem.objective is None:
        objective = cp.Minimize(0)
    else:
        direction, coeffs = problem.objective
        lin = sum(float(c) * varmap[name] for name, c in coeffs.items())
        objective = cp.Minimize(lin) if direction == "minimize" else cp.Maximize(lin)

    prob = cp.Problem(objective, cons)
    try:
        prob.solve(solver=solver)
    except (cp.error.SolverError, ArithmeticError) as exc:
        return LmiSolution("numerical-failure", {}, None, (),
                           f"solver raised: {exc}")

    status = prob.status
    if status in ("infeasible", "infeasible_inaccurate"):
        return LmiSolution("infeasible", {}, None, (),
                           f"solver status {status}")
    if status not in ("optimal", "optimal_inaccurate"):
        return LmiSolution("numerical-failure", {}, None, (),
                           f"solver status {status}")

    assignment = {}
    for spec in problem.variables:
        val = varmap[spec.name].value
        if val is None:
            return LmiSolution("numerical-failure", {}, None, (),
                               f"solver returned no value for {spec.name!r}")
        if spec.kind == "scalar":
            assignment[spec.name] = float(val)
        else:
            V = np.asarray(val, dtype=float)
            if spec.kind == "symmetric":
                V = 0.5 * (V + V.T)
            assignment[spec.name] = V

    residuals = []
    worst_desc = None
    for k, c in enumerate(problem.constraints):
        val = c.expr.evaluate(assignment)
        sym = 0.5 * (val + val.T)
        eigs = np.linalg.eigvalsh(sym)
        if c.sense == "<=0":
            r = float(eigs[-1])
            violated = r > eps_solver
        else:
            r = float(eigs[0])
            violated = r < -eps_solver
        residuals.append(r)
        if violated and worst_desc is None:
            worst_desc = (k, r)

    if worst_desc is not None:
        k, r = worst_desc
        return LmiSolution(
            "numerical-failure", assignment, None, tuple(residuals),
            f"post-solve verification failed: constraint {k} has residual "
            f"{r:.3e} beyond eps_solver={eps_solver:.1e}"
        )

    obj_val = None if problem.objective is None else float(prob.value)
    final = "optimal" if problem.objective is not None else "feasible"
    if status == "optimal_inaccurate":
        # verification passed, so accept it, but keep the solver's caveat
        return LmiSolution(final, assignment, obj_val, tuple(residuals),
                           "solver reported optimal_inaccurate; independent "
                           "eigenvalue check passed")
    return LmiSolution(final, assignment, obj_val, tuple(residuals))


# ---------------------------------------------------------------------------
# small verified linear-algebra helpers


def spectral_norm(M: ArrayLike) -> float:
    """Largest singular value of a (rectangular) matrix."""
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"spectral_norm expects a matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("spectral_norm: matrix contains non-finite entries")
    if arr.size == 0:
        return 0.0
    return float(np.linalg.norm(arr, 2))


def eig_extrema(M: ArrayLike) -> tuple[float, float]:
    """(smallest, largest) eigenvalue of a symmetric matrix.

    Raises ValueError if the input is not symmetric to within a relative
    tolerance of 1e-10, instead of silently symmetrising.
    """
    arr = np.asarray(M, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"eig_extrema expects a square matrix, got shape "
                         f"{arr.shape}")
    scale = max(1.0, float(np.abs(arr).max()))
    asym = float(np.abs(arr - arr.T).max())
    if asym > 1e-10 * scale:
        raise ValueError(
            f"eig_extrema expects a symmetric matrix; asymmetry {asym:.3e} "
            f"exceeds tolerance {1e-10 * scale:.3e}"
        )
    w = np.linalg.eigvalsh(0.5 * (arr + arr.T))
    return (float(w[0]), float(w[-1]))
