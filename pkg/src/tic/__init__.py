"""Nash and strong equilibrium policies for time-inconsistent control
problems whose objective depends on higher-order central moments of a
linear controlled SDE."""

__version__ = "0.1.0"

from tic.errors import (
    ConfigError,
    ContractError,
    DegenerateFOCError,
    DomainError,
    NumericalError,
    TicError,
)
from tic.dynamics import (
    AffinePolicy,
    CoefficientSet,
    Curve,
    PathSample,
    SpikePolicy,
    eval_coefficients,
    policy_drift_diffusion,
    sample_central_moments,
    simulate_terminal,
)
from tic.moments import (
    MomentPolynomials,
    MomentTransition,
    conditional_central_moments,
    generator_matrix,
    moment_polynomials,
    propagate_transition,
    raw_to_central,
)
from tic.objective import PsiSpec, adjoint_weights, evaluate_J, psi_eval
from tic.equilibrium import (
    EquilibriumSolution,
    closed_form_mv,
    foc_solve_pointwise,
    gamma1,
    solve_equilibrium_backward,
)
from tic.verifier import (
    ExpansionReport,
    SweepResult,
    classify_deviation,
    exact_spike_gain,
    fit_expansion,
    mc_cross_check,
    strong_equilibrium_sweep,
)
