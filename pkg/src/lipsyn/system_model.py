"""System containers: Lipschitz nonlinear plants, discretization, tracking.

The plant family handled by this package is

    x[k+1] = A x[k] + B u[k] + G f(x[k], u[k])

with f Lipschitz in both arguments (constants gamma_x, gamma_u).
Continuous-time models are brought into this form by forward-Euler
discretization.  Output tracking is handled by augmenting the plant with a
discrete integrator on the output error, which produces another system of
the same shape so the synthesis machinery applies unchanged.
"""

from __future__ import annotations

import dataclasses
import json
from typing import Callable, Optional, Union

import numpy as np

Nonlinearity = Callable[[np.ndarray, np.ndarray], np.ndarray]

_NONLINEARITIES: dict[str, Nonlinearity] = {}


def register_nonlinearity(name: str, fn: Nonlinearity) -> None:
    """Add a named nonlinearity so system files can reference it."""
    if not name or not isinstance(name, str):
        raise ValueError("nonlinearity name must be a non-empty string")
    _NONLINEARITIES[name] = fn


def get_nonlinearity(name: str) -> Nonlinearity:
    try:
        return _NONLINEARITIES[name]
    except KeyError:
        known = ", ".join(sorted(_NONLINEARITIES))
        raise ValueError(
            f"unknown nonlinearity {name!r}; registered names are: {known}"
        ) from None


def registered_nonlinearities() -> tuple[str, ...]:
    return tuple(sorted(_NONLINEARITIES))


def _zero(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    # All-zero vector of state dimension, for plants with no nonlinearity.
    return np.zeros(np.asarray(x).shape[0])


def _example1_cosine(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.array([0.0, np.cos(x[0] - 0.1 * u[0])])


def _example2_sine(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.array([0.0, 0.0, 0.0, -0.25 * np.sin(x[2])])


register_nonlinearity("zero", _zero)
register_nonlinearity("example1_cosine", _example1_cosine)
register_nonlinearity("example2_sine", _example2_sine)


def _coerce_matrix(value, name: str, allow_vector: str = "") -> np.ndarray:
    """Coerce to a 2-d float array.  allow_vector: '' | 'column' | 'row'."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1 and allow_vector == "column":
        arr = arr.reshape(-1, 1)
    elif arr.ndim == 1 and allow_vector == "row":
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-d matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclasses.dataclass(frozen=True)
class LipschitzSystem:
    """Discrete-time plant x+ = A x + B u + G f(x, u).

    gamma_x and gamma_u bound the increments of f:
    ||f(x1,u) - f(x2,u)|| <= gamma_x ||x1 - x2|| and
    ||f(x,u1) - f(x,u2)|| <= gamma_u ||u1 - u2||.
    """

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    C: np.ndarray
    f: Nonlinearity
    gamma_x: float
    gamma_u: float
    f_name: str = "custom"

    def __post_init__(self):
        A = _coerce_matrix(self.A, "A")
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        B = _coerce_matrix(self.B, "B", allow_vector="column")
        G = _coerce_matrix(self.G, "G", allow_vector="column")
        C = _coerce_matrix(self.C, "C", allow_vector="row")
        if B.shape[0] != n:
            raise ValueError(f"B has {B.shape[0]} rows, state dimension is {n}")
        if G.shape[0] != n:
            raise ValueError(f"G has {G.shape[0]} rows, state dimension is {n}")
        if C.shape[1] != n:
            raise ValueError(f"C has {C.shape[1]} columns, state dimension is {n}")
        if not callable(self.f):
            raise ValueError("f must be callable as f(x, u) -> vector")
        gx, gu = float(self.gamma_x), float(self.gamma_u)
        if not (np.isfinite(gx) and gx >= 0):
            raise ValueError(f"gamma_x must be finite and >= 0, got {gx}")
        if not (np.isfinite(gu) and gu >= 0):
            raise ValueError(f"gamma_u must be finite and >= 0, got {gu}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "gamma_x", gx)
        object.__setattr__(self, "gamma_u", gu)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def g(self) -> int:
        return self.G.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """One application of the plant map."""
        x = np.asarray(x, dtype=float).reshape(self.n)
        u = np.asarray(u, dtype=float).reshape(self.m)
        w = np.asarray(self.f(x, u), dtype=float).reshape(self.g)
        return self.A @ x + self.B @ u + self.G @ w


@dataclasses.dataclass(frozen=True)
class ContinuousSystem:
    """Continuous-time counterpart, dx/dt = A x + B u + G f(x, u)."""

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    C: np.ndarray
    f: Nonlinearity
    gamma_x: float
    gamma_u: float
    f_name: str = "custom"

    def __post_init__(self):
        A = _coerce_matrix(self.A, "A")
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        B = _coerce_matrix(self.B, "B", allow_vector="column")
        G = _coerce_matrix(self.G, "G", allow_vector="column")
        C = _coerce_matrix(self.C, "C", allow_vector="row")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "C", C)


def euler_discretize(sys: ContinuousSystem, T: float) -> LipschitzSystem:
    """Forward-Euler discretization with sampling period T.

    A_d = I + T A, B_d = T B, G_d = T G; the output map, nonlinearity and
    Lipschitz constants carry over unchanged.
    """
    T = float(T)
    if T <= 0:
        raise ValueError(f"sampling period must be positive, got {T}")
    n = sys.A.shape[0]
    return LipschitzSystem(
        A=np.eye(n) + T * sys.A,
        B=T * sys.B,
        G=T * sys.G,
        C=sys.C,
        f=sys.f,
        gamma_x=sys.gamma_x,
        gamma_u=sys.gamma_u,
        f_name=sys.f_name,
    )


@dataclasses.dataclass(frozen=True)
class EquilibriumInfo:
    """An estimated operating point with its defect under the plant map."""

    x_eq: np.ndarray
    u_eq: np.ndarray
    residual: Optional[float] = None


@dataclasses.dataclass(frozen=True)
class AugmentedSystem:
    """A plant extended with an integrator on the output tracking error.

    The augmented state is (x, z) with z[k+1] = z[k] + E (C x[k] - r).
    The result is again a LipschitzSystem (field ``system``), so gain
    synthesis and simulation treat it like any other plant.
    """

    base: LipschitzSystem
    E: np.ndarray
    reference: np.ndarray
    system: LipschitzSystem = dataclasses.field(init=False)

    def __post_init__(self):
        base = self.base
        p = base.p
        E = np.asarray(self.E, dtype=float)
        if E.ndim == 0:
            E = E.reshape(1, 1) * np.eye(p)
        E = _coerce_matrix(E, "E")
        if E.shape != (p, p):
            raise ValueError(
                f"E must be {p}x{p} to match the output dimension, got "
                f"shape {E.shape}"
            )
        r = np.asarray(self.reference, dtype=float).reshape(-1)
        if r.shape[0] != p:
            raise ValueError(
                f"reference must have length {p} (one entry per output), "
                f"got {r.shape[0]}"
            )
        n, g = base.n, base.g

        A_aug = np.block([
            [base.A, np.zeros((n, p))],
            [E @ base.C, np.eye(p)],
        ])
        B_aug = np.vstack([base.B, np.zeros((p, base.m))])
        G_aug = np.block([
            [base.G, np.zeros((n, p))],
            [np.zeros((p, g)), E],
        ])
        C_aug = np.hstack([base.C, np.zeros((p, p))])

        base_f = base.f
        r_frozen = r.copy()

        def f_aug(xt: np.ndarray, u: np.ndarray) -> np.ndarray:
            return np.concatenate([
                np.asarray(base_f(xt[:n], u), dtype=float).reshape(g),
                -r_frozen,
            ])

        system = LipschitzSystem(
            A=A_aug, B=B_aug, G=G_aug, C=C_aug, f=f_aug,
            gamma_x=base.gamma_x, gamma_u=base.gamma_u,
            f_name=f"{base.f_name}+integrator",
        )
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "reference", r)
        object.__setattr__(self, "system", system)


def augment_for_tracking(sys: LipschitzSystem, E, reference) -> AugmentedSystem:
    """Wrap a plant with an output-error integrator for setpoint tracking."""
    return AugmentedSystem(base=sys, E=E, reference=reference)


def effective_lipschitz(gamma_x: float, gamma_u: float, kappa: float) -> float:
    """Closed-loop Lipschitz constant gamma_x + gamma_u * kappa.

    Under u = -K x with ||K|| <= kappa, the nonlinearity seen along closed
    loop trajectories is Lipschitz in x with this constant.
    """
    gx, gu, k = float(gamma_x), float(gamma_u), float(kappa)
    if gx < 0 or gu < 0:
        raise ValueError(f"Lipschitz constants must be >= 0, got ({gx}, {gu})")
    if k <= 0:
        raise ValueError(f"gain bound kappa must be positive, got {k}")
    return gx + gu * k


def sample_lipschitz_estimate(sys: LipschitzSystem, n_samples: int = 1000,
                              seed: int = 0, box: float = 5.0
                              ) -> tuple[float, float]:
    """Monte-Carlo lower estimates of the Lipschitz constants of sys.f.

    Draws point pairs inside [-box, box] and returns the largest observed
    increment ratios (in x with u fixed, and in u with x fixed).  Both
    values must come out <= the declared constants for a correctly
    specified system.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    n, m = sys.n, sys.m
    worst_x = 0.0
    worst_u = 0.0
    for _ in range(n_samples):
        x1 = rng.uniform(-box, box, size=n)
        x2 = rng.uniform(-box, box, size=n)
        u = rng.uniform(-box, box, size=m)
        dx = np.linalg.norm(x1 - x2)
        if dx > 1e-12:
            df = np.linalg.norm(np.asarray(sys.f(x1, u), dtype=float)
                                - np.asarray(sys.f(x2, u), dtype=float))
            worst_x = max(worst_x, df / dx)
        x = rng.uniform(-box, box, size=n)
        u1 = rng.uniform(-box, box, size=m)
        u2 = rng.uniform(-box, box, size=m)
        du = np.linalg.norm(u1 - u2)
        if du > 1e-12:
            df = np.linalg.norm(np.asarray(sys.f(x, u1), dtype=float)
                                - np.asarray(sys.f(x, u2), dtype=float))
            worst_u = max(worst_u, df / du)
    return (worst_x, worst_u)


def load_system_file(path: str) -> Union[LipschitzSystem, AugmentedSystem]:
    """Read a plant description from JSON.

    Required keys: A, B, G, C (row-major nested lists), gamma_x, gamma_u,
    f_name (a registered nonlinearity).  Optional: "continuous": true with
    "T" for forward-Euler discretization of the given matrices, and a
    "tracking" object {"E": ..., "r": ...} to return the integrator-
    augmented plant.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"could not parse system file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValueError(f"system file {path} must contain a JSON object")

    for key in ("A", "B", "G", "C", "gamma_x", "gamma_u", "f_name"):
        if key not in data:
            raise ValueError(f"system file {path} is missing key {key!r}")

    f = get_nonlinearity(data["f_name"])
    common = dict(
        A=data["A"], B=data["B"], G=data["G"], C=data["C"], f=f,
        gamma_x=data["gamma_x"], gamma_u=data["gamma_u"],
        f_name=data["f_name"],
    )
    if data.get("continuous", False):
        if "T" not in data:
            raise ValueError(
                f"system file {path} sets continuous=true but has no "
                "sampling period 'T'"
            )
        sys = euler_discretize(ContinuousSystem(**common), data["T"])
    else:
        sys = LipschitzSystem(**common)

    if "tracking" in data:
        tr = data["tracking"]
        if not isinstance(tr, dict) or "E" not in tr or "r" not in tr:
            raise ValueError(
                f"system file {path}: 'tracking' must be an object with "
                "keys 'E' and 'r'"
            )
        return augment_for_tracking(sys, tr["E"], tr["r"])
    return sys
