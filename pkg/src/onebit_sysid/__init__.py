"""Recursive ARX identification over a one-bit channel.

The sensor runs recursive least squares on the raw data and sends one sign bit
per step; the remote side rebuilds the estimate by stochastic approximation.
"""

from .analysis import (
    CovarianceFunctionSet,
    CrlbResult,
    MseAggregate,
    OmegaTrace,
    aggregate,
    assemble_excitation_matrix,
    crlb,
    empirical_covariance,
    normality_stat,
    omega_trace,
    sign_fisher_factor,
)
from .config import ExperimentConfig, load_config
from .errors import (
    ConfigMismatch,
    DimensionMismatch,
    IndexOutOfRange,
    InsufficientData,
    InsufficientHorizon,
    NonFiniteInput,
    NotPositiveDefinite,
    OnebitSysidError,
    ParseError,
    UnstablePolynomial,
    ValidationError,
)
from .estimators import (
    OneBitSymbol,
    RemoteState,
    RlsState,
    RunRecord,
    StepSchedule,
    encode,
    rls_update,
    run_rls_sa,
    run_rls_sa_batch,
    sa_update,
    selector,
)
from .harness import run_experiment
from .signal_model import ArxSystem, SignalGenerator, Trajectory, input_at, make_arx, regressor_at, simulate

__version__ = "0.1.0"
