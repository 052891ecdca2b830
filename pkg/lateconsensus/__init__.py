"""
lateconsensus - consensus protocols under a late, budget-bounded blocking adversary

A simulation package providing:
- Deterministic round engine for the (k,ℓ)-majority, multi-value and median protocols
- Blocking strategies from a random blocker to a current-round balancer
- Concurrent experiment grids with CSV results and figure data
- Closed-form probability oracle and Monte Carlo verification of the round dynamics
- CLI with rich terminal output

Usage:
    # As a library
    from lateconsensus import TrialConfig, run_trial

    result, trajectory = run_trial(TrialConfig(n=128, epsilon="1/17"))
    print(result.outcome, result.rounds)

    # CLI
    $ sim run --n 128 --epsilon 1/17 --trials 1000 --out results.csv
    $ sim summarize --in results.csv
"""

from lateconsensus.adversary import AdversaryObservation, BlockSet, get_strategy
from lateconsensus.config import Settings, get_settings, load_trial_config
from lateconsensus.engine import Simulation, check_termination, run_trial
from lateconsensus.exceptions import (
    BudgetExceededError,
    ConfigError,
    LateConsensusError,
    MalformedResultsError,
    MissingCellsError,
    OracleDomainError,
    OutputError,
    VerificationError,
)
from lateconsensus.farm import TrialFarm, TrialJob
from lateconsensus.harness import ExperimentGrid, emit_figure_data, run_experiment, summarize
from lateconsensus.models import (
    AdversaryKind,
    BinaryValue,
    BlockingModel,
    Outcome,
    OutcomeKind,
    ProtocolKind,
    SystemSnapshot,
    Trajectory,
    TrialConfig,
    TrialResult,
    epsilon_for_budget,
    validate_config,
)

__version__ = "1.0.0"
__author__ = "lateconsensus developers"
__all__ = [
    # Engine
    "Simulation",
    "run_trial",
    "check_termination",
    # Models
    "TrialConfig",
    "TrialResult",
    "Trajectory",
    "SystemSnapshot",
    "Outcome",
    "OutcomeKind",
    "BinaryValue",
    "ProtocolKind",
    "AdversaryKind",
    "BlockingModel",
    "validate_config",
    "epsilon_for_budget",
    # Adversary
    "AdversaryObservation",
    "BlockSet",
    "get_strategy",
    # Experiments
    "ExperimentGrid",
    "TrialFarm",
    "TrialJob",
    "run_experiment",
    "summarize",
    "emit_figure_data",
    # Exceptions
    "LateConsensusError",
    "ConfigError",
    "BudgetExceededError",
    "OracleDomainError",
    "MalformedResultsError",
    "MissingCellsError",
    "OutputError",
    "VerificationError",
    # Config
    "Settings",
    "get_settings",
    "load_trial_config",
]
