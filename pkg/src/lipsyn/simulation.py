"""Closed-loop rollouts and convergence diagnostics.

Trajectories are produced by iterating the plant map under u = -K x.
The helpers here quantify what a stabilizing gain promises: a Lyapunov
sequence that contracts geometrically, an equilibrium the state settles
onto, and an exponential envelope over the error norms.
"""

from __future__ import annotations

import dataclasses
from typing import Optional, Union

import numpy as np

from .system_model import AugmentedSystem, EquilibriumInfo, LipschitzSystem

DIVERGENCE_LIMIT = 1e9


@dataclasses.dataclass(frozen=True)
class Trajectory:
    """A closed-loop rollout: states (N+1, n), inputs (N, m), outputs (N+1, p)."""

    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        st = np.asarray(self.states, dtype=float)
        inp = np.asarray(self.inputs, dtype=float)
        out = np.asarray(self.outputs, dtype=float)
        if st.ndim != 2 or inp.ndim != 2 or out.ndim != 2:
            raise ValueError("states, inputs and outputs must be 2-d arrays")
        if inp.shape[0] != st.shape[0] - 1:
            raise ValueError(
                f"inputs must have one row fewer than states, got "
                f"{inp.shape[0]} vs {st.shape[0]}"
            )
        if out.shape[0] != st.shape[0]:
            raise ValueError(
                f"outputs must have as many rows as states, got "
                f"{out.shape[0]} vs {st.shape[0]}"
            )
        object.__setattr__(self, "states", st)
        object.__setattr__(self, "inputs", inp)
        object.__setattr__(self, "outputs", out)

    @property
    def n_steps(self) -> int:
        return self.inputs.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    @property
    def p(self) -> int:
        return self.outputs.shape[1]


@dataclasses.dataclass(frozen=True)
class DecayFit:
    """Exponential envelope fitted to an error-norm sequence.

    The fitted model is ||e[k]|| ~= prefactor * rate**k * ||e[0]||.
    max_violation is the largest amount (in absolute error units) by which
    a fitted sample exceeds that envelope, so
    ||e[k]|| <= prefactor * rate**k * ||e[0]|| + max_violation holds on
    the fitted segment.  degenerate marks an all-(near-)zero sequence,
    reported as rate 0 by convention.
    """

    rate: float
    prefactor: float
    max_violation: float
    degenerate: bool = False


def _coerce_gain(K, m: int, n: int) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim == 1:
        K = K.reshape(1, -1)
    if K.shape != (m, n):
        raise ValueError(
            f"gain must have shape ({m}, {n}) for this system, got {K.shape}"
        )
    return K


def simulate_closed_loop(sys: LipschitzSystem, K, x0, N: int) -> Trajectory:
    """Roll out x[k+1] = A x + B u + G f(x, u) with u = -K x for N steps.

    Raises RuntimeError naming the first bad step if the state overflows
    the divergence guard or turns non-finite.
    """
    N = int(N)
    if N < 1:
        raise ValueError(f"step count must be at least 1, got {N}")
    n, m, p = sys.n, sys.m, sys.p
    K = _coerce_gain(K, m, n)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != n:
        raise ValueError(f"x0 must have length {n}, got {x0.shape[0]}")

    states = np.empty((N + 1, n))
    inputs = np.empty((N, m))
    states[0] = x0
    for k in range(N):
        u = -K @ states[k]
        inputs[k] = u
        x_next = sys.step(states[k], u)
        if not np.all(np.isfinite(x_next)) or np.linalg.norm(x_next) > DIVERGENCE_LIMIT:
            raise RuntimeError(
                f"trajectory diverged at step {k + 1}: "
                f"||x|| = {np.linalg.norm(x_next):.3e} exceeds the "
                f"{DIVERGENCE_LIMIT:.0e} guard"
            )
        states[k + 1] = x_next
    outputs = states @ sys.C.T
    return Trajectory(states=states, inputs=inputs, outputs=outputs)


def simulate_tracking(aug: AugmentedSystem, K, x0, N: int) -> Trajectory:
    """Roll out the integrator-augmented loop.

    x0 may be given in base-plant coordinates (integrator states start at
    zero) or as a full augmented state vector.
    """
    if not isinstance(aug, AugmentedSystem):
        raise ValueError("simulate_tracking needs an AugmentedSystem")
    sys = aug.system
    nb, p = aug.base.n, aug.base.p
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] == nb:
        x0 = np.concatenate([x0, np.zeros(p)])
    elif x0.shape[0] != nb + p:
        raise ValueError(
            f"x0 must have length {nb} (base state) or {nb + p} "
            f"(augmented state), got {x0.shape[0]}"
        )
    return simulate_closed_loop(sys, K, x0, N)


def lyapunov_sequence(traj: Trajectory, Q, x_eq=None) -> np.ndarray:
    """V[k] = (x[k] - x_eq)^T Q (x[k] - x_eq) along the trajectory."""
    Q = np.asarray(Q, dtype=float)
    n = traj.n
    if Q.shape != (n, n):
        raise ValueError(f"Q must be {n}x{n}, got {Q.shape}")
    scale = max(1.0, float(np.abs(Q).max()))
    if np.abs(Q - Q.T).max() > 1e-10 * scale:
        raise ValueError("Q must be symmetric for a Lyapunov sequence")
    if x_eq is None:
        x_eq = np.zeros(n)
    x_eq = np.asarray(x_eq, dtype=float).reshape(n)
    E = traj.states - x_eq
    return np.einsum("ki,ij,kj->k", E, Q, E)


def estimate_equilibrium(traj: Trajectory, tail_fraction: float = 0.1,
                         sys: Optional[LipschitzSystem] = None
                         ) -> EquilibriumInfo:
    """Average the trajectory tail into an equilibrium estimate.

    The final tail_fraction of samples must have settled: if any state
    channel's variance over the tail exceeds 1e-10 the trajectory has not
    converged and a ValueError carrying that variance is raised.  When the
    plant is supplied, the fixed-point defect
    ||A x_eq + B u_eq + G f(x_eq, u_eq) - x_eq|| is stored as residual.
    """
    if not (0.0 < tail_fraction <= 1.0):
        raise ValueError(f"tail_fraction must lie in (0, 1], got {tail_fraction}")
    n_rows = traj.states.shape[0]
    start = min(n_rows - 1, int(np.floor(n_rows * (1.0 - tail_fraction))))
    tail = traj.states[start:]
    variances = tail.var(axis=0)
    worst = float(np.max(variances))
    if worst > 1e-10:
        ch = int(np.argmax(variances))
        raise ValueError(
            f"trajectory has not settled: state channel {ch + 1} has tail "
            f"variance {worst:.3e} (threshold 1e-10)"
        )
    x_eq = tail.mean(axis=0)
    in_start = min(traj.inputs.shape[0] - 1,
                   int(np.floor(traj.inputs.shape[0] * (1.0 - tail_fraction))))
    u_eq = traj.inputs[in_start:].mean(axis=0)
    residual = None
    if sys is not None:
        residual = float(np.linalg.norm(sys.step(x_eq, u_eq) - x_eq))
    return EquilibriumInfo(x_eq=x_eq, u_eq=u_eq, residual=residual)


def fit_exponential_decay(traj: Trajectory, x_eq=None) -> DecayFit:
    """Least-squares exponential envelope over the error norms.

    Fits log||e[k]|| against k on the samples where ||e[k]|| > 1e-9 and
    reports rate = exp(slope).  A sequence with fewer than two usable
    samples is flagged degenerate.
    """
    n = traj.n
    if x_eq is None:
        x_eq = np.zeros(n)
    x_eq = np.asarray(x_eq, dtype=float).reshape(n)
    errs = np.linalg.norm(traj.states - x_eq, axis=1)
    ks = np.flatnonzero(errs > 1e-9)
    if ks.size < 2:
        return DecayFit(rate=0.0, prefactor=0.0, max_violation=0.0,
                        degenerate=True)
    log_e = np.log(errs[ks])
    slope, intercept = np.polyfit(ks.astype(float), log_e, 1)
    rate = float(np.exp(slope))
    e0 = errs[0] if errs[0] > 1e-9 else float(np.exp(intercept))
    prefactor = float(np.exp(intercept) / e0)
    envelope = prefactor * rate ** ks.astype(float) * e0
    max_violation = float(max(0.0, np.max(errs[ks] - envelope)))
    return DecayFit(rate=rate, prefactor=prefactor,
                    max_violation=max_violation, degenerate=False)


def monotone_enveloped(values, start: int = 0, window: int = 100,
                       rel_slack: float = 1e-6,
                       abs_slack: float = 1e-12) -> list[int]:
    """Check that windowed peaks of |values| decay monotonically.

    Splits values[start:] into consecutive windows, takes the peak of
    each, and returns the indices (into the peak sequence) where a peak
    exceeds its predecessor beyond the slack.  An empty list means the
    signal's envelope is non-increasing, the discrete analogue of the
    decaying bound a stabilizing gain guarantees.
    """
    v = np.abs(np.asarray(values, dtype=float).reshape(-1))
    if window < 1:
        raise ValueError(f"window must be at least 1, got {window}")
    seg = v[start:]
    if seg.size == 0:
        raise ValueError("start is beyond the end of the sequence")
    peaks = [float(np.max(seg[i:i + window]))
             for i in range(0, seg.size, window)]
    bad = []
    for i in range(1, len(peaks)):
        if peaks[i] > peaks[i - 1] * (1.0 + rel_slack) + abs_slack:
            bad.append(i)
    return bad


def write_trajectory_csv(traj: Trajectory, path: str) -> None:
    """Write the rollout as CSV with 12-significant-digit decimal text.

    Header is k,x1..xn,u1..um,y1..yp.  One row per sample k = 0..N-1,
    the range on which all three of state, input and output are defined.
    """
    n, m, p = traj.n, traj.m, traj.p
    cols = (["k"]
            + [f"x{i + 1}" for i in range(n)]
            + [f"u{i + 1}" for i in range(m)]
            + [f"y{i + 1}" for i in range(p)])
    N = traj.n_steps
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(N):
            row = [str(k)]
            row += [f"{v:.12g}" for v in traj.states[k]]
            row += [f"{v:.12g}" for v in traj.inputs[k]]
            row += [f"{v:.12g}" for v in traj.outputs[k]]
            fh.write(",".join(row) + "\n")
