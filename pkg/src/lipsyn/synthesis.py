"""Stabilizing gain synthesis via LMI feasibility and successive convex
approximation.

The pipeline has three stages:

1. ``step1_initial_lyapunov``: with the nonlinearity ignored, find a
   Lyapunov shape X = Q^{-1} and auxiliary Z = K Q^{-1} making the linear
   part contractive at rate alpha.  This is a single convex LMI.
2. ``step2_initial_gain``: with Q frozen at Q0 = X^{-1}, recover a gain K,
   a multiplier epsilon and a fresh decay rate alpha so the full
   nonlinear feasibility conditions hold.  Also convex.
3. ``run_sca``: refine (Q, K, epsilon, alpha) jointly.  The exact
   conditions are bilinear, so each iteration solves a convex surrogate
   built from affine over-estimators of the offending squares (see
   ``linearize_H`` / ``linearize_F``), linearized at the previous iterate.
   The surrogate is conservative: anything it accepts also satisfies the
   exact conditions, which ``check_theorem1`` re-verifies at every step.

Conventions: the control law is u = -K x, and all certificates refer to
the closed-loop matrix A - B K.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Optional, Union

import numpy as np

from .lmi_core import (
    Constraint,
    LmiProblem,
    MatrixExpr,
    VariableSpec,
    assemble_block,
    eig_extrema,
    solve,
    spectral_norm,
)
from .system_model import LipschitzSystem, AugmentedSystem, effective_lipschitz

logger = logging.getLogger("lipsyn.synthesis")

ALPHA_FLOOR = 1e-12
ALPHA_CEIL = 1.0 - 1e-9


class SynthesisError(RuntimeError):
    """A synthesis stage could not produce a usable result."""


class InitializationInfeasibleError(SynthesisError):
    """Step 1 / Step 2 found no starting point over the whole retry schedule."""


@dataclasses.dataclass(frozen=True)
class SynthesisConfig:
    """Tuning knobs for the synthesis pipeline.

    q0_scale is an optional target for the smallest eigenvalue of the
    Step-2 input Q0.  The feasibility conditions are invariant under
    (Q, epsilon) -> (c Q, c epsilon), so the Step-1 result's overall scale
    is a free parameter; pinning it can move the follow-up problems into a
    better-conditioned regime.  None keeps the solver's native scale.
    """

    alpha_init: float = 1e-2
    rho: float = -20.0
    kappa0: float = 10.0
    eps_small: float = 0.01
    tol: float = 1e-6
    max_iter: int = 50
    kappa_retry_schedule: Optional[tuple[float, ...]] = None
    delta: float = 1e-7
    sigma: float = 1e-6
    eps_solver: float = 1e-7
    q0_scale: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.alpha_init < 1.0):
            raise ValueError(f"alpha_init must lie in (0,1), got {self.alpha_init}")
        if self.rho >= 0:
            raise ValueError(f"rho must be negative, got {self.rho}")
        if self.kappa0 <= 0:
            raise ValueError(f"kappa0 must be positive, got {self.kappa0}")
        if self.eps_small <= 0:
            raise ValueError(f"eps_small must be positive, got {self.eps_small}")
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if int(self.max_iter) < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        object.__setattr__(self, "max_iter", int(self.max_iter))
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.eps_solver <= 0:
            raise ValueError(f"eps_solver must be positive, got {self.eps_solver}")
        if self.q0_scale is not None and self.q0_scale <= 0:
            raise ValueError(f"q0_scale must be positive or None, got {self.q0_scale}")
        if self.kappa_retry_schedule is not None:
            sched = tuple(float(k) for k in self.kappa_retry_schedule)
            if len(sched) == 0:
                raise ValueError("kappa_retry_schedule must be nonempty when given")
            if any(k <= 0 for k in sched):
                raise ValueError("kappa_retry_schedule entries must be positive")
            object.__setattr__(self, "kappa_retry_schedule", sched)

    @property
    def schedule(self) -> tuple[float, ...]:
        if self.kappa_retry_schedule is not None:
            return self.kappa_retry_schedule
        return tuple(self.kappa0 * f for f in (1.0, 2.0, 5.0, 10.0, 40.0))

    _KEYS = ("alpha_init", "rho", "kappa0", "eps_small", "tol", "max_iter",
             "kappa_retry_schedule", "delta", "sigma", "eps_solver",
             "q0_scale")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthesisConfig":
        if not isinstance(data, dict):
            raise ValueError("config must be a JSON object")
        unknown = set(data) - set(cls._KEYS)
        if unknown:
            raise ValueError(
                f"unknown config keys {sorted(unknown)}; allowed keys are "
                f"{list(cls._KEYS)}"
            )
        kwargs = dict(data)
        if kwargs.get("kappa_retry_schedule") is not None:
            kwargs["kappa_retry_schedule"] = tuple(kwargs["kappa_retry_schedule"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["kappa_retry_schedule"] is not None:
            d["kappa_retry_schedule"] = list(d["kappa_retry_schedule"])
        return d


@dataclasses.dataclass(frozen=True)
class Step1Result:
    """Solution of the linear-part initialization LMI."""

    X: np.ndarray
    Z: np.ndarray
    nu: float

    @property
    def q0(self) -> np.ndarray:
        """The Lyapunov matrix Q0 = X^{-1} handed to Step 2."""
        Q = np.linalg.inv(self.X)
        return 0.5 * (Q + Q.T)


@dataclasses.dataclass(frozen=True)
class ScaIterate:
    """One accepted state of the SCA loop."""

    Q: np.ndarray
    K: np.ndarray
    epsilon: float
    alpha: float
    kappa: float
    w: float
    t: float

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        K = np.asarray(self.K, dtype=float)
        if K.ndim == 1:
            K = K.reshape(1, -1)
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "K", K)
        lo, hi = eig_extrema(self.Q)
        if lo <= 0:
            raise ValueError(f"iterate Q must be positive definite, "
                             f"lambda_min = {lo:.3e}")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"iterate alpha must lie in (0,1), got {self.alpha}")
        if self.epsilon < 0:
            raise ValueError(f"iterate epsilon must be >= 0, got {self.epsilon}")
        if self.kappa <= 0:
            raise ValueError(f"iterate kappa must be positive, got {self.kappa}")
        if self.w < 0:
            raise ValueError(f"iterate w must be >= 0, got {self.w}")
        if self.t <= 0:
            raise ValueError(f"iterate t must be positive, got {self.t}")
        slack = 1e-6 * (1.0 + abs(self.t))
        if hi > self.t + slack:
            raise ValueError(
                f"iterate violates Q <= t*I: lambda_max(Q) = {hi:.6e} "
                f"exceeds t = {self.t:.6e}"
            )
        nK = spectral_norm(self.K)
        if nK > self.kappa * (1.0 + 1e-6) + 1e-9:
            raise ValueError(
                f"iterate violates ||K|| <= kappa: {nK:.6e} > {self.kappa:.6e}"
            )


@dataclasses.dataclass(frozen=True)
class FeasibilityCertificate:
    """Numerical evidence for (or against) the exact feasibility conditions.

    lhs_eigs are the eigenvalues of the big feasibility block evaluated at
    the candidate tuple, norm_gap is kappa - ||K||_2, scalar_checks record
    the sign conditions on epsilon, alpha and kappa.  closed_loop_radius
    (the spectral radius of A - B K) is an extra diagnostic: any tuple
    that truly satisfies the conditions must have it below one, so it
    guards against accepting points that only pass within solver slack.
    """

    lhs_eigs: tuple[float, ...]
    norm_gap: float
    scalar_checks: dict[str, bool]
    closed_loop_radius: float
    delta: float = 0.0

    @property
    def valid(self) -> bool:
        return (max(self.lhs_eigs) < -self.delta
                and self.norm_gap >= 0.0
                and all(self.scalar_checks.values()))

    def within_tolerance(self, tol: float = 1e-7) -> bool:
        """Accept up to an absolute eigenvalue slack of tol.

        The feasibility cone is invariant under scaling of (Q, epsilon),
        so a strictly feasible point scaled small can sit within solver
        tolerance of the boundary.  This check admits those points but
        insists on the scale-free necessary condition that the closed
        loop is Schur stable.
        """
        return (max(self.lhs_eigs) <= tol
                and self.norm_gap >= -tol
                and all(self.scalar_checks.values())
                and self.closed_loop_radius < 1.0)

    def summary(self) -> dict:
        return {
            "max_lhs_eig": max(self.lhs_eigs),
            "norm_gap": self.norm_gap,
            "scalar_checks": dict(self.scalar_checks),
            "closed_loop_radius": self.closed_loop_radius,
            "valid": self.valid,
            "within_tolerance": self.within_tolerance(),
        }


def _plain_system(sys: Union[LipschitzSystem, AugmentedSystem]) -> LipschitzSystem:
    return sys.system if isinstance(sys, AugmentedSystem) else sys


def check_theorem1(sys, Q, K, epsilon: float, kappa: float, alpha: float,
                   delta: float = 0.0) -> FeasibilityCertificate:
    """Evaluate the exact feasibility conditions at a candidate tuple.

    Builds the block matrix

        [[(alpha-1)Q + eps*(gamma_x+gamma_u*kappa)^2 I,  0,      (A-BK)^T],
         [0,                                            -eps I,  G^T     ],
         [A-BK,                                          G,      -Q^{-1} ]]

    and reports its spectrum along with the gain-norm gap and the scalar
    sign conditions.  Raises ValueError when Q is singular or indefinite,
    since -Q^{-1} is then meaningless as a certificate block.
    """
    sys = _plain_system(sys)
    Q = np.asarray(Q, dtype=float)
    K = np.asarray(K, dtype=float)
    if K.ndim == 1:
        K = K.reshape(1, -1)
    n, g = sys.n, sys.g
    if Q.shape != (n, n):
        raise ValueError(f"Q must be {n}x{n}, got {Q.shape}")
    if K.shape != (sys.m, n):
        raise ValueError(f"K must be {sys.m}x{n}, got {K.shape}")
    lo, _ = eig_extrema(0.5 * (Q + Q.T))
    if lo <= 0:
        raise ValueError(
            f"Q must be positive definite to form Q^-1, lambda_min = {lo:.3e}"
        )
    Qs = 0.5 * (Q + Q.T)
    Qinv = np.linalg.inv(Qs)
    Qinv = 0.5 * (Qinv + Qinv.T)

    gk = effective_lipschitz(sys.gamma_x, sys.gamma_u, kappa)
    Acl = sys.A - sys.B @ K
    M = np.block([
        [(alpha - 1.0) * Qs + epsilon * gk ** 2 * np.eye(n),
         np.zeros((n, g)), Acl.T],
        [np.zeros((g, n)), -epsilon * np.eye(g), sys.G.T],
        [Acl, sys.G, -Qinv],
    ])
    eigs = np.linalg.eigvalsh(0.5 * (M + M.T))
    radius = float(np.max(np.abs(np.linalg.eigvals(Acl))))
    return FeasibilityCertificate(
        lhs_eigs=tuple(float(e) for e in eigs),
        norm_gap=float(kappa - spectral_norm(K)),
        scalar_checks={
            "epsilon_nonnegative": epsilon >= 0.0,
            "alpha_in_unit_interval": 0.0 < alpha < 1.0,
            "kappa_positive": kappa > 0.0,
        },
        closed_loop_radius=radius,
        delta=float(delta),
    )


# ---------------------------------------------------------------------------
# Step 1: linear-part Lyapunov initialization


def step1_initial_lyapunov(sys, alpha: float, rho: float, *,
                           delta: float = 1e-7,
                           eps_solver: float = 1e-7) -> Step1Result:
    """Find X = Q^{-1}, Z = K Q^{-1} contracting the linear part at rate alpha.

    Minimizes nu subject to

        [[(alpha-1) X,  A X - B Z],
         ["*",          -X       ]]  - nu I  <=  -delta I,    X >= delta I,

    with rho <= nu <= -delta.  Infeasibility means the linear pair (A, B)
    admits no gain achieving this decay rate, and raises SynthesisError.
    """
    sys = _plain_system(sys)
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0,1), got {alpha}")
    if rho >= 0:
        raise ValueError(f"rho must be negative, got {rho}")
    n, m = sys.n, sys.m
    A, B = sys.A, sys.B
    I_n = np.eye(n)

    x11 = MatrixExpr.matrix_term("X", (alpha - 1.0) * I_n, I_n)
    x12 = (MatrixExpr.matrix_term("X", A, I_n)
           + MatrixExpr.matrix_term("Z", -B, I_n))
    x22 = MatrixExpr.matrix_term("X", -I_n, I_n)
    block = assemble_block([[x11, x12], ["*", x22]])
    shifted = block + MatrixExpr.scalar_term("nu", -np.eye(2 * n))

    problem = LmiProblem(
        variables=(
            VariableSpec("X", "symmetric", (n, n)),
            VariableSpec("Z", "matrix", (m, n)),
            VariableSpec("nu", "scalar", lower=float(rho), upper=-float(delta)),
        ),
        constraints=(
            Constraint(shifted, "<=0", margin=float(delta)),
            Constraint(MatrixExpr.matrix_term("X", I_n, I_n), ">=0",
                       margin=float(delta)),
        ),
        objective=("minimize", {"nu": 1.0}),
    )
    sol = solve(problem, eps_solver=eps_solver)
    if sol.status == "infeasible":
        raise SynthesisError(
            f"linear-part LMI is infeasible at alpha={alpha:g}: no gain "
            "makes the linear dynamics contract at this rate"
        )
    if not sol.ok:
        raise SynthesisError(
            f"linear-part LMI solve failed (status {sol.status}): {sol.message}"
        )
    return Step1Result(X=sol.assignment["X"], Z=sol.assignment["Z"],
                       nu=sol.assignment["nu"])


# ---------------------------------------------------------------------------
# Step 2: gain recovery at a frozen Lyapunov matrix


def step2_initial_gain(sys, Q0, kappa: float, *, delta: float = 1e-7,
                       eps_solver: float = 1e-7
                       ) -> Optional[tuple[np.ndarray, float, float,
                                           FeasibilityCertificate]]:
    """Recover (K, epsilon, alpha) at a fixed Q0, or None if infeasible.

    Maximizes the semidefinite margin s of the feasibility block at Q0.
    The margin objective keeps the returned point away from the cone
    boundary whenever the geometry allows it; acceptance only requires
    s >= -eps_solver because a strictly feasible tuple scaled to a small
    Q0 can legitimately sit within solver tolerance of zero.  A returned
    point must additionally place every eigenvalue of A - B K strictly
    inside the unit circle, which filters out spurious tolerance-level
    accepts.
    """
    sys = _plain_system(sys)
    kappa = float(kappa)
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    Q0 = np.asarray(Q0, dtype=float)
    n, m, g = sys.n, sys.m, sys.g
    if Q0.shape != (n, n):
        raise ValueError(f"Q0 must be {n}x{n}, got {Q0.shape}")
    lo, _ = eig_extrema(0.5 * (Q0 + Q0.T))
    if lo <= 0:
        raise ValueError(f"Q0 must be positive definite, lambda_min = {lo:.3e}")
    Q0 = 0.5 * (Q0 + Q0.T)
    Q0inv = np.linalg.inv(Q0)
    Q0inv = 0.5 * (Q0inv + Q0inv.T)

    A, B, G = sys.A, sys.B, sys.G
    gk2 = effective_lipschitz(sys.gamma_x, sys.gamma_u, kappa) ** 2
    I_n = np.eye(n)

    m11 = (MatrixExpr.scalar_term("alpha", Q0)
           + MatrixExpr.constant(-Q0)
           + MatrixExpr.scalar_term("eps", gk2 * I_n))
    m13 = (MatrixExpr.constant(A.T)
           + MatrixExpr.matrix_term("K", -I_n, B.T, transpose=True))
    m22 = MatrixExpr.scalar_term("eps", -np.eye(g))
    block = assemble_block([
        [m11, np.zeros((n, g)), m13],
        ["*", m22, G.T],
        ["*", "*", MatrixExpr.constant(-Q0inv)],
    ])
    shifted = block + MatrixExpr.scalar_term("s", np.eye(2 * n + g))

    norm_block = assemble_block([
        [MatrixExpr.constant(-kappa * np.eye(m)),
         MatrixExpr.matrix_term("K", np.eye(m), I_n)],
        ["*", MatrixExpr.constant(-kappa * I_n)],
    ])

    problem = LmiProblem(
        variables=(
            VariableSpec("K", "matrix", (m, n)),
            VariableSpec("eps", "scalar", lower=0.0),
            VariableSpec("alpha", "scalar", lower=ALPHA_FLOOR, upper=ALPHA_CEIL),
            VariableSpec("s", "scalar", upper=1e3),
        ),
        constraints=(
            Constraint(shifted, "<=0", margin=0.0),
            Constraint(norm_block, "<=0", margin=0.0),
        ),
        objective=("maximize", {"s": 1.0}),
    )
    sol = solve(problem, eps_solver=eps_solver)
    if not sol.ok:
        logger.debug("step2 at kappa=%g: %s (%s)", kappa, sol.status, sol.message)
        return None
    s_val = sol.assignment["s"]
    if s_val < -eps_solver:
        logger.debug("step2 at kappa=%g: margin %.3e below tolerance",
                     kappa, s_val)
        return None
    K = sol.assignment["K"]
    eps_val = max(sol.assignment["eps"], 0.0)
    alpha_val = min(max(sol.assignment["alpha"], ALPHA_FLOOR), 1.0 - 1e-12)
    radius = float(np.max(np.abs(np.linalg.eigvals(A - B @ K))))
    if radius >= 1.0:
        logger.debug("step2 at kappa=%g: closed-loop radius %.7f not "
                     "contractive, rejecting", kappa, radius)
        return None
    cert = check_theorem1(sys, Q0, K, eps_val, kappa, alpha_val, 0.0)
    return (K, eps_val, alpha_val, cert)


# ---------------------------------------------------------------------------
# SCA linearizations


@dataclasses.dataclass(frozen=True)
class ScalarAffine:
    """An affine scalar expression c0 + sum coeffs[name] * value(name)."""

    constant: float
    coeffs: dict[str, float]

    def evaluate(self, assignment: dict) -> float:
        total = self.constant
        for name, c in self.coeffs.items():
            total += c * float(assignment[name])
        return total

    def times_identity(self, n: int) -> MatrixExpr:
        expr = MatrixExpr.constant(self.constant * np.eye(n))
        for name, c in self.coeffs.items():
            expr = expr + MatrixExpr.scalar_term(name, c * np.eye(n))
        return expr


def linearize_H(alpha, Q, alpha_t: float, Q_t) -> Union[np.ndarray, MatrixExpr]:
    """Affine over-estimator of H = -(alpha I - Q)^2 around (alpha_t, Q_t).

    H itself is concave in neither variable jointly, but the Taylor
    expansion of the square at the reference point dominates it:
    H_tilde - H = ((alpha I - Q) - (alpha_t I - Q_t))^2 >= 0.

    Numeric mode (alpha, Q numbers/arrays) returns the matrix value.
    Expression mode (alpha, Q given as variable-name strings) returns a
    MatrixExpr affine in those variables for use inside an LmiProblem.
    """
    Qt = np.asarray(Q_t, dtype=float)
    if Qt.ndim == 0:
        Qt = Qt.reshape(1, 1)
    n = Qt.shape[0]
    at = float(alpha_t)
    if np.abs(Qt - Qt.T).max() > 1e-10 * max(1.0, np.abs(Qt).max()):
        raise ValueError("linearization point Q_t must be symmetric")
    I_n = np.eye(n)

    symbolic = isinstance(alpha, str) or isinstance(Q, str)
    if symbolic:
        if not (isinstance(alpha, str) and isinstance(Q, str)):
            raise ValueError(
                "expression mode needs both alpha and Q as variable names"
            )
        const = at * at * I_n + Qt @ Qt - 2.0 * at * Qt
        expr = MatrixExpr.constant(const)
        expr = expr + MatrixExpr.scalar_term(alpha, 2.0 * Qt - 2.0 * at * I_n)
        expr = expr + MatrixExpr.matrix_term(Q, 2.0 * at * I_n, I_n)
        expr = expr + MatrixExpr.matrix_term(Q, -Qt, I_n)
        expr = expr + MatrixExpr.matrix_term(Q, -I_n, Qt)
        return expr

    a = float(alpha)
    Qm = np.asarray(Q, dtype=float)
    if Qm.ndim == 0:
        Qm = Qm.reshape(1, 1)
    return ((at * at - 2.0 * at * a) * I_n + 2.0 * at * Qm + 2.0 * a * Qt
            + Qt @ Qt - 2.0 * at * Qt - Qt @ Qm - Qm @ Qt)


def linearize_F(epsilon, w, eps_t: float, w_t: float) -> Union[float, ScalarAffine]:
    """Affine over-estimator of F = -(epsilon - w)^2 around (eps_t, w_t).

    F_tilde - F = ((epsilon - w) - (eps_t - w_t))^2 >= 0, with equality at
    the reference point.  Numeric arguments give a float; variable-name
    strings give a ScalarAffine for problem assembly.
    """
    et, wt = float(eps_t), float(w_t)
    const = et * et + wt * wt - 2.0 * et * wt
    ce = -2.0 * (et - wt)
    cw = -2.0 * (wt - et)
    if isinstance(epsilon, str) or isinstance(w, str):
        if not (isinstance(epsilon, str) and isinstance(w, str)):
            raise ValueError(
                "expression mode needs both epsilon and w as variable names"
            )
        return ScalarAffine(constant=const, coeffs={epsilon: ce, w: cw})
    return const + ce * float(epsilon) + cw * float(w)


# ---------------------------------------------------------------------------
# the SCA subproblem


def build_sca_lmi(sys, prev: ScaIterate, delta: float,
                  sigma: float = 1e-6) -> LmiProblem:
    """Assemble the convex surrogate solved at each SCA iteration.

    Decision variables are Q, K, epsilon, alpha, w and the conditioning
    bound t with objective minimize t.  The main block couples them
    through the over-estimators from ``linearize_H`` / ``linearize_F``
    evaluated at ``prev`` and through the bound -Q^{-1} <= -2 Q_t^{-1}
    + Q_t^{-1} Q Q_t^{-1} (congruence-transformed so no inverse of a
    variable appears).  Q >= sigma I keeps the iterates away from the
    singular boundary that the pure minimize-t objective would otherwise
    drift toward.
    """
    sys = _plain_system(sys)
    Qt = np.asarray(prev.Q, dtype=float)
    lo, _ = eig_extrema(Qt)
    if lo <= 0:
        raise ValueError(
            f"linearization point Q must be positive definite, "
            f"lambda_min = {lo:.3e}"
        )
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")

    n, m, g = sys.n, sys.m, sys.g
    A, B, G = sys.A, sys.B, sys.G
    I_n = np.eye(n)
    kappa = prev.kappa
    gk = effective_lipschitz(sys.gamma_x, sys.gamma_u, kappa)

    Htil = linearize_H("alpha", "Q", prev.alpha, Qt)
    Ftil = linearize_F("eps", "w", prev.epsilon, prev.w)

    m11 = (MatrixExpr.matrix_term("Q", -I_n, I_n)
           + Htil.scale(0.25)
           + Ftil.times_identity(n).scale(0.25))
    m31 = (MatrixExpr.constant(Qt @ A)
           + MatrixExpr.matrix_term("K", -(Qt @ B), I_n))
    m32 = MatrixExpr.constant(Qt @ G)
    m33 = (MatrixExpr.constant(-2.0 * Qt)
           + MatrixExpr.matrix_term("Q", I_n, I_n))
    m41 = (MatrixExpr.scalar_term("alpha", 0.5 * I_n)
           + MatrixExpr.matrix_term("Q", 0.5 * I_n, I_n))
    m51 = (MatrixExpr.scalar_term("eps", 0.5 * I_n)
           + MatrixExpr.scalar_term("w", 0.5 * I_n))

    main = assemble_block([
        [m11, "*", "*", "*", "*"],
        [np.zeros((g, n)), MatrixExpr.scalar_term("eps", -np.eye(g)),
         "*", "*", "*"],
        [m31, m32, m33, "*", "*"],
        [m41, np.zeros((n, g)), np.zeros((n, n)),
         MatrixExpr.constant(-I_n), "*"],
        [m51, np.zeros((n, g)), np.zeros((n, n)), np.zeros((n, n)),
         MatrixExpr.constant(-I_n)],
    ])

    w_dom = assemble_block([
        [MatrixExpr.scalar_term("w", -np.ones((1, 1))),
         MatrixExpr.constant(gk * np.ones((1, 1)))],
        ["*", MatrixExpr.constant(-np.ones((1, 1)))],
    ])

    norm_block = assemble_block([
        [MatrixExpr.constant(-kappa * np.eye(m)),
         MatrixExpr.matrix_term("K", np.eye(m), I_n)],
        ["*", MatrixExpr.constant(-kappa * I_n)],
    ])

    q_expr = MatrixExpr.matrix_term("Q", I_n, I_n)
    q_cap = q_expr + MatrixExpr.scalar_term("t", -I_n)

    return LmiProblem(
        variables=(
            VariableSpec("Q", "symmetric", (n, n)),
            VariableSpec("K", "matrix", (m, n)),
            VariableSpec("eps", "scalar", lower=0.0),
            VariableSpec("alpha", "scalar", lower=ALPHA_FLOOR, upper=ALPHA_CEIL),
            VariableSpec("w", "scalar", lower=0.0),
            VariableSpec("t", "scalar", lower=0.0),
        ),
        constraints=(
            Constraint(main, "<=0", margin=float(delta)),
            Constraint(w_dom, "<=0", margin=0.0),
            Constraint(norm_block, "<=0", margin=0.0),
            Constraint(q_expr, ">=0", margin=float(sigma)),
            Constraint(q_cap, "<=0", margin=0.0),
        ),
        objective=("minimize", {"t": 1.0}),
    )


# ---------------------------------------------------------------------------
# Algorithm driver


@dataclasses.dataclass
class SynthesisOutcome:
    """Full record of a synthesis run (run_sca exposes the (K, history) view)."""

    K: np.ndarray
    history: tuple[ScaIterate, ...]
    certificate: FeasibilityCertificate
    converged: bool
    stop_reason: str

    @property
    def kappa(self) -> float:
        return self.history[-1].kappa

    @property
    def iterations(self) -> int:
        return len(self.history) - 1


def _find_initial_iterate(sys: LipschitzSystem,
                          config: SynthesisConfig) -> ScaIterate:
    tried = []
    for alpha in (config.alpha_init, config.alpha_init / 10.0):
        try:
            s1 = step1_initial_lyapunov(sys, alpha, config.rho,
                                        delta=config.delta,
                                        eps_solver=config.eps_solver)
        except SynthesisError as exc:
            logger.debug("step1 at alpha=%g failed: %s", alpha, exc)
            tried.append(f"alpha={alpha:g}: step1 infeasible")
            continue
        Q0 = s1.q0
        if config.q0_scale is not None:
            lo, _ = eig_extrema(Q0)
            Q0 = Q0 * (config.q0_scale / lo)
        for kappa in config.schedule:
            got = step2_initial_gain(sys, Q0, kappa, delta=config.delta,
                                     eps_solver=config.eps_solver)
            if got is None:
                tried.append(f"alpha={alpha:g}, kappa={kappa:g}")
                continue
            K0, eps0, alpha0, cert = got
            if not cert.within_tolerance(config.eps_solver):
                tried.append(f"alpha={alpha:g}, kappa={kappa:g} "
                             "(certificate rejected)")
                continue
            w0 = effective_lipschitz(sys.gamma_x, sys.gamma_u,
                                     kappa) ** 2 + config.eps_small
            _, t0 = eig_extrema(Q0)
            logger.info("initialization accepted at alpha=%g, kappa=%g "
                        "(max certificate eig %.3e)", alpha, kappa,
                        max(cert.lhs_eigs))
            return ScaIterate(Q=Q0, K=K0, epsilon=eps0, alpha=alpha0,
                              kappa=kappa, w=w0, t=t0)
    raise InitializationInfeasibleError(
        "no feasible starting point found; attempts: " + "; ".join(tried)
    )


def synthesize_gain(sys, config: SynthesisConfig) -> SynthesisOutcome:
    """Run initialization plus the SCA refinement loop, returning the
    iterate with the best verified conditioning bound.

    The loop keeps the last iterate that passed the exact feasibility
    check.  A solver failure or a rejected iterate ends the loop early
    with the best-so-far result and a warning, which is legitimate
    behaviour for a conservative surrogate: the over-approximation can
    cut away the very point it was linearized at.
    """
    plant = _plain_system(sys)
    init = _find_initial_iterate(plant, config)
    history = [init]
    prev = init
    converged = False
    reason = ""

    for k in range(1, config.max_iter + 1):
        problem = build_sca_lmi(plant, prev, config.delta, sigma=config.sigma)
        sol = solve(problem, eps_solver=config.eps_solver)
        if not sol.ok:
            reason = (f"surrogate solve failed at iteration {k} "
                      f"({sol.status}); keeping best iterate so far")
            logger.warning(reason)
            break
        eps_k = max(sol.assignment["eps"], 0.0)
        alpha_k = min(max(sol.assignment["alpha"], ALPHA_FLOOR), 1.0 - 1e-12)
        w_k = max(sol.assignment["w"], 0.0)
        cert_k = check_theorem1(plant, sol.assignment["Q"],
                                sol.assignment["K"], eps_k, prev.kappa,
                                alpha_k, 0.0)
        if not cert_k.within_tolerance(config.eps_solver):
            reason = (f"iterate {k} failed exact-condition verification "
                      f"(max eig {max(cert_k.lhs_eigs):.3e}); keeping best "
                      "iterate so far")
            logger.warning(reason)
            break
        it = ScaIterate(Q=sol.assignment["Q"], K=sol.assignment["K"],
                        epsilon=eps_k, alpha=alpha_k, kappa=prev.kappa,
                        w=w_k, t=sol.assignment["t"])
        history.append(it)
        logger.info("iteration %d: t=%.6e alpha=%.3e", k, it.t, it.alpha)
        if abs(it.t - prev.t) < config.tol:
            converged = True
            reason = f"objective settled after {k} iterations"
            break
        prev = it
    else:
        reason = f"iteration cap {config.max_iter} reached"

    final = history[-1]
    final_cert = check_theorem1(plant, final.Q, final.K, final.epsilon,
                                final.kappa, final.alpha, 0.0)
    return SynthesisOutcome(K=final.K, history=tuple(history),
                            certificate=final_cert, converged=converged,
                            stop_reason=reason)


def run_sca(sys, config: SynthesisConfig) -> tuple[np.ndarray, list[ScaIterate]]:
    """Synthesize a gain; returns (K, history of accepted iterates)."""
    outcome = synthesize_gain(sys, config)
    return outcome.K, list(outcome.history)
