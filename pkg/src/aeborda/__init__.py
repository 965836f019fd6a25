"""Active exploration for contextual dueling bandits via Borda functions."""

from .bandit import BetaSchedule, StrategyState, extract_policy, new_state, step, warmup
from .environment import Environment, LinkFunction, borda_oracle, duel, make_environment, suboptimality
from .errors import ConfigError, NumericalError, OracleError, OutputError, StateError
from .kernels import KernelSpec, RffBasis, eval_kernel, eval_reward, sample_reward
from .posterior import PosteriorModel, PreferenceObservation, estimate_info_gain, fit, predict, update

__version__ = "0.1.0"

__all__ = [
    "BetaSchedule",
    "ConfigError",
    "Environment",
    "KernelSpec",
    "LinkFunction",
    "NumericalError",
    "OracleError",
    "OutputError",
    "PosteriorModel",
    "PreferenceObservation",
    "RffBasis",
    "StateError",
    "StrategyState",
    "borda_oracle",
    "duel",
    "estimate_info_gain",
    "eval_kernel",
    "eval_reward",
    "extract_policy",
    "fit",
    "make_environment",
    "new_state",
    "predict",
    "sample_reward",
    "step",
    "suboptimality",
    "update",
    "warmup",
]
