"""LMI-based state-feedback synthesis for discrete-time Lipschitz systems."""

from .lmi_core import (
    Constraint,
    LmiProblem,
    LmiSolution,
    MatrixExpr,
    Term,
    VariableSpec,
    assemble_block,
    eig_extrema,
    solve,
    spectral_norm,
)
from .simulation import (
    DecayFit,
    Trajectory,
    estimate_equilibrium,
    fit_exponential_decay,
    lyapunov_sequence,
    monotone_enveloped,
    simulate_closed_loop,
    simulate_tracking,
    write_trajectory_csv,
)
from .synthesis import (
    FeasibilityCertificate,
    InitializationInfeasibleError,
    ScaIterate,
    Step1Result,
    SynthesisConfig,
    SynthesisError,
    SynthesisOutcome,
    build_sca_lmi,
    check_theorem1,
    linearize_F,
    linearize_H,
    run_sca,
    step1_initial_lyapunov,
    step2_initial_gain,
    synthesize_gain,
)
from .system_model import (
    AugmentedSystem,
    ContinuousSystem,
    EquilibriumInfo,
    LipschitzSystem,
    augment_for_tracking,
    effective_lipschitz,
    euler_discretize,
    get_nonlinearity,
    load_system_file,
    register_nonlinearity,
    registered_nonlinearities,
    sample_lipschitz_estimate,
)

__version__ = "0.1.0"

__all__ = [
    "Constraint", "LmiProblem", "LmiSolution", "MatrixExpr", "Term",
    "VariableSpec", "assemble_block", "eig_extrema", "solve",
    "spectral_norm",
    "DecayFit", "Trajectory", "estimate_equilibrium",
    "fit_exponential_decay", "lyapunov_sequence", "monotone_enveloped",
    "simulate_closed_loop", "simulate_tracking", "write_trajectory_csv",
    "FeasibilityCertificate", "InitializationInfeasibleError", "ScaIterate",
    "Step1Result", "SynthesisConfig", "SynthesisError", "SynthesisOutcome",
    "build_sca_lmi", "check_theorem1", "linearize_F", "linearize_H",
    "run_sca", "step1_initial_lyapunov", "step2_initial_gain",
    "synthesize_gain",
    "AugmentedSystem", "ContinuousSystem", "EquilibriumInfo",
    "LipschitzSystem", "augment_for_tracking", "effective_lipschitz",
    "euler_discretize", "get_nonlinearity", "load_system_file",
    "register_nonlinearity", "registered_nonlinearities",
    "sample_lipschitz_estimate",
    "__version__",
]
