"""Flow-equation diagonalization of disordered fermion lattices.

Approximately diagonalizes quartic lattice Hamiltonians by integrating
continuous unitary flows over normal-ordered operator polynomials, with
scrambling rotations for near-degenerate modes, co-flowed creation
operators, closed-form Heisenberg dynamics in the fixed-point basis and
exact small-system oracles for validation.
"""

from .errors import (
    CapacityError,
    ConfigurationError,
    EmptyEnsembleError,
    FlowDivergenceError,
)
from .lattice import ModelSpec, build_hamiltonian, sample_potential
from .flow import (
    DiagonalHamiltonian,
    ErrorLedger,
    FlowParams,
    initial_state,
    integrate_flow,
)
from .opflow import FlowedCreationOperator, complexity, localization_profile
from .dynamics import (
    CorrelationTrace,
    correlation_trace,
    infinite_T_correlation,
    long_time_average,
    reconstruct_number_operator,
    rescale_trace,
)
from .harness import (
    EnsembleSummary,
    ExperimentConfig,
    finite_size_fit,
    fit_localization_length,
    run_experiment,
    time_average,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConfigurationError",
    "EmptyEnsembleError",
    "FlowDivergenceError",
    "ModelSpec",
    "build_hamiltonian",
    "sample_potential",
    "DiagonalHamiltonian",
    "ErrorLedger",
    "FlowParams",
    "initial_state",
    "integrate_flow",
    "FlowedCreationOperator",
    "complexity",
    "localization_profile",
    "CorrelationTrace",
    "correlation_trace",
    "infinite_T_correlation",
    "long_time_average",
    "reconstruct_number_operator",
    "rescale_trace",
    "EnsembleSummary",
    "ExperimentConfig",
    "finite_size_fit",
    "fit_localization_length",
    "run_experiment",
    "time_average",
    "__version__",
]
