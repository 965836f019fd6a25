"""Seeded multi-trial campaigns: bandit simulation, norm study, toy active DPO.

Every trial draws its randomness from ``SeedSequence(seed)`` children indexed
by the canonical position of its strategy or arm, so a trial's results do not
depend on which other strategies run, on the worker count or on the order of
execution.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .acquisition import ARMS, ActiveDpoConfig, FileOracle, SyntheticOracle, active_dpo_round
from .bandit import STRATEGIES, BetaSchedule, extract_policy, new_state, step, warmup
from .config import ExperimentConfig, config_from_dict
from .environment import LinkFunction, make_environment, make_grid, suboptimality
from .errors import NumericalError, OracleError
from .kernels import KernelSpec
from .norm_study import run_norm_study as _norm_study
from .policy import END_TOKEN, ToyPolicy, greedy_decode
from .posterior import estimate_info_gain, fit, predict, update


@dataclass(frozen=True)
class TrialRecord:
    seed: int
    strategy: str
    t: int
    max_suboptimality: float
    median_suboptimality: float
    acquisition: float
    wall_time: float


@dataclass(frozen=True)
class TrialDiagnostics:
    """Per-trial totals for the variance-sum check.

    ``variance_sum`` adds the posterior variance at each query (warmup duels
    included) just before it was observed. ``bound`` is ``2 / log(1 + noise_scale**-2)``
    times the greedy information-gain estimate over the visited design
    points, with as many picks as there are observations.
    """

    seed: int
    strategy: str
    queries: int
    variance_sum: float
    info_gain: float
    bound: float
    completed: bool
    error: str = ""


@dataclass(frozen=True)
class NormRecord:
    seed: int
    context_dim: int
    action_dim: int
    num_functions: int
    win_rate: float
    win_margin: float
    ties: int


@dataclass(frozen=True)
class NormFunctionRecord:
    seed: int
    context_dim: int
    action_dim: int
    index: int
    reward_seed: int
    reward_norm: float
    borda_norm: float


@dataclass(frozen=True)
class RoundRecord:
    seed: int
    arm: str
    round: int
    win_rate: float
    win_rate_se: float
    mean_length: float
    mean_alpha: float
    labels: int
    wall_time: float


@dataclass(frozen=True)
class PlotRow:
    step: int
    metric: str
    strategy: str
    seed: int
    value: float


def columns(record_type) -> tuple[str, ...]:
    return tuple(f.name for f in fields(record_type))


@dataclass
class CampaignResult:
    """Records of one campaign plus side tables, plot rows and failures."""

    config: ExperimentConfig
    record_type: type
    records: list
    tables: dict = field(default_factory=dict)
    plot_rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def _map(fn, tasks, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*task) for task in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, *zip(*tasks)))


def _trial_rngs(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def bandit_environment(config: ExperimentConfig, seed: int):
    return make_environment(config.context_dim, config.action_dim, seed=seed,
                            num_features=config.reward_features,
                            lengthscale=config.reward_lengthscale,
                            target_std=config.reward_std,
                            link=LinkFunction(config.link, config.link_scale))


def _path_variances(kernel: KernelSpec, regularization: float, data, dim: int) -> list[float]:
    """Posterior variance at each observation given only the ones before it."""
    model = fit(kernel, regularization, [], dim=dim)
    out = []
    for obs in data:
        out.append(predict(model, obs.joint)[1] ** 2)
        model = update(model, obs)
    return out


def simulate_trial(cfg: dict, seed: int, strategy: str) -> tuple[list[TrialRecord], TrialDiagnostics]:
    """Warm up, run to ``T`` and evaluate the pessimistic policy on the grids."""
    config = config_from_dict(cfg)
    env = bandit_environment(config, seed)
    warm_rng, *strategy_rngs = _trial_rngs(seed, 1 + len(STRATEGIES))
    rng = strategy_rngs[STRATEGIES.index(strategy)]
    cg = make_grid(config.context_dim, config.context_points)
    ag = make_grid(config.action_dim, config.action_points)
    kernel = KernelSpec(config.kernel, config.lengthscale, config.kernel_variance)
    beta = BetaSchedule(config.beta_mode, config.beta_B, config.beta_delta, config.beta_fixed)
    records: list[TrialRecord] = []
    state = None
    error = ""
    warm_variances: list[float] = []
    try:
        data = warmup(env, config.n0, warm_rng)
        warm_variances = _path_variances(kernel, config.regularization, data,
                                         config.context_dim + config.action_dim)
        state = new_state(strategy, kernel, data, cg, ag, beta, config.regularization,
                          config.noise_scale, config.snapshot_every, config.info_gain_probes)

        def evaluate(t, acquisition, wall):
            worst, median = suboptimality(env, extract_policy(state), cg, ag)
            records.append(TrialRecord(seed, strategy, t, worst, median, acquisition, wall))

        evaluate(config.n0, math.nan, 0.0)
        for t in range(config.n0 + 1, config.T + 1):
            start = time.perf_counter()
            step(state, env, rng)
            wall = time.perf_counter() - start if config.record_timing else 0.0
            if (t - config.n0) % config.eval_every == 0 or t == config.T:
                evaluate(t, state.last_acquisition, wall)
    except NumericalError as exc:
        error = str(exc)
    variances = warm_variances + (state.query_variances if state is not None else [])
    phi = 0.0
    if state is not None and state.posterior.num_observations:
        model = state.posterior
        phi = estimate_info_gain(model, model.num_observations, probe=model.points)
    bound = 2.0 / math.log1p(config.noise_scale**-2) * phi
    diag = TrialDiagnostics(seed, strategy, len(variances), math.fsum(variances), phi, bound,
                            not error, error)
    return records, diag


def _long_format(records, metrics: dict, step_field: str, label_field: str) -> list[PlotRow]:
    rows = []
    for rec in records:
        for metric, attr in metrics.items():
            rows.append(PlotRow(getattr(rec, step_field), metric, getattr(rec, label_field),
                                rec.seed, getattr(rec, attr)))
    return rows


def run_simulate(config: ExperimentConfig) -> CampaignResult:
    """Every (seed, strategy) trial, merged in that order."""
    cfg = config.to_dict()
    tasks = [(cfg, s, name) for s in config.seeds for name in config.strategies]
    outputs = _map(simulate_trial, tasks, config.workers)
    records = [r for recs, _ in outputs for r in recs]
    diagnostics = [d for _, d in outputs]
    plot = _long_format(records, {"max_suboptimality": "max_suboptimality",
                                  "median_suboptimality": "median_suboptimality"}, "t", "strategy")
    failures = [{"seed": d.seed, "strategy": d.strategy, "error": d.error, "kind": "numerical"}
                for d in diagnostics if not d.completed]
    return CampaignResult(config, TrialRecord, records, {"diagnostics": diagnostics}, plot, failures)


def norm_cell(cfg: dict, seed: int, context_dim: int, action_dim: int):
    config = config_from_dict(cfg)
    n = config.norm_functions if context_dim + action_dim <= 6 else config.norm_functions_high_dim
    result = _norm_study(context_dim, action_dim, n, seed, num_points=config.norm_points,
                         quadrature_points=config.norm_quadrature,
                         lengthscale=config.norm_lengthscale,
                         num_features=config.reward_features, target_std=config.reward_std,
                         regularization=config.norm_regularization)
    summary = NormRecord(seed, context_dim, action_dim, result.num_functions, result.win_rate,
                         result.win_margin, result.ties)
    per_function = [NormFunctionRecord(seed, context_dim, action_dim, f.index, f.reward_seed,
                                       f.reward_norm, f.borda_norm) for f in result.functions]
    return summary, per_function


def run_norm_study(config: ExperimentConfig) -> CampaignResult:
    """One summary record per (seed, dims) cell, plus per-function norms."""
    cfg = config.to_dict()
    tasks = [(cfg, s, int(dx), int(da)) for s in config.seeds for dx, da in config.norm_dims]
    outputs = _map(norm_cell, tasks, config.workers)
    summaries = [s for s, _ in outputs]
    functions = [f for _, fs in outputs for f in fs]
    plot = [PlotRow(f.index, metric, f"{f.context_dim}-{f.action_dim}", f.seed, getattr(f, metric))
            for f in functions for metric in ("reward_norm", "borda_norm")]
    return CampaignResult(config, NormRecord, summaries, {"functions": functions}, plot)


def _prompts(rng: np.random.Generator, count: int, length: int, vocab: int) -> list[tuple[int, ...]]:
    return [tuple(int(t) for t in rng.integers(1, vocab, size=length)) for _ in range(count)]


def win_rate(policy: ToyPolicy, reference: ToyPolicy, prompts, oracle, max_len: int) -> tuple[float, float, float]:
    """Oracle win rate of greedy decodes of ``policy`` against the reference.

    The policy decodes with dropout off. Identical completions count as a
    half win; the synthetic oracle contributes exact win probabilities.
    Returns the mean, its standard error and the mean completion length.
    """
    deterministic = policy.as_reference()
    wins, lengths = [], []
    for p in prompts:
        a = greedy_decode(deterministic, p, max_len).tokens
        b = greedy_decode(reference, p, max_len).tokens
        lengths.append(sum(t != END_TOKEN for t in a))
        if a == b:
            wins.append(0.5)
        elif isinstance(oracle, SyntheticOracle):
            wins.append(oracle.probability(p, a, b))
        else:
            wins.append(float(oracle(p, a, b)))
    wins = np.asarray(wins)
    se = float(wins.std(ddof=1) / np.sqrt(len(wins))) if len(wins) > 1 else 0.0
    return float(wins.mean()), se, float(np.mean(lengths))


def toy_world(config: ExperimentConfig, seed: int):
    """Reference policy, prompt pool and evaluation prompts for one seed."""
    reference = ToyPolicy.random(config.vocab_size, seed=seed, num_masks=1, dropout=0.0,
                                 scale=config.init_scale)
    world_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD90]))
    pool = _prompts(world_rng, config.pool_size, config.prompt_len, config.vocab_size)
    evals = _prompts(world_rng, config.eval_prompts, config.prompt_len, config.vocab_size)
    return reference, pool, evals


def toy_dpo_trial(cfg: dict, seed: int, arm: str) -> tuple[list[RoundRecord], str, str]:
    config = config_from_dict(cfg)
    reference, pool, evals = toy_world(config, seed)
    policy = reference.with_ensemble(config.num_masks, config.dropout)
    round_rngs = _trial_rngs(seed, 2 * len(ARMS))
    rng = round_rngs[ARMS.index(arm)]
    oracle_rng = round_rngs[len(ARMS) + ARMS.index(arm)]
    adc = ActiveDpoConfig(arm, config.pool_sample, config.batch_size, config.num_candidates,
                          config.num_comparators, config.gamma, config.dpo_beta,
                          config.learning_rate, config.max_len, config.temperature)
    records: list[RoundRecord] = []
    try:
        if config.oracle_file:
            oracle = FileOracle(config.oracle_file)
        else:
            oracle = SyntheticOracle(oracle_rng, scale=config.oracle_scale)
        rate, se, length = win_rate(policy, reference, evals, oracle, config.max_len)
        records.append(RoundRecord(seed, arm, 0, rate, se, length, math.nan, 0, 0.0))
        for r in range(1, config.rounds + 1):
            start = time.perf_counter()
            result = active_dpo_round(policy, reference, pool, adc, oracle, rng)
            wall = time.perf_counter() - start if config.record_timing else 0.0
            policy = result.policy
            rate, se, length = win_rate(policy, reference, evals, oracle, config.max_len)
            alpha = math.fsum(result.scores) / len(result.scores)
            records.append(RoundRecord(seed, arm, r, rate, se, length, alpha,
                                       len(result.examples), wall))
    except OracleError as exc:
        return records, str(exc), "oracle"
    except NumericalError as exc:
        return records, str(exc), "numerical"
    return records, "", ""


def run_toy_dpo(config: ExperimentConfig) -> CampaignResult:
    """Every (seed, arm) trial of active DPO rounds against a preference oracle."""
    cfg = config.to_dict()
    tasks = [(cfg, s, arm) for s in config.seeds for arm in config.arms]
    outputs = _map(toy_dpo_trial, tasks, config.workers)
    records = [r for recs, _, _ in outputs for r in recs]
    failures = [{"seed": s, "strategy": arm, "error": err, "kind": kind}
                for (_, s, arm), (_, err, kind) in zip(tasks, outputs) if err]
    plot = _long_format(records, {"win_rate": "win_rate", "mean_length": "mean_length"}, "round", "arm")
    return CampaignResult(config, RoundRecord, records, {}, plot, failures)


RUNNERS = {"simulate": run_simulate, "norm-study": run_norm_study, "toy-dpo": run_toy_dpo}


def run_campaign(config: ExperimentConfig) -> CampaignResult:
    return RUNNERS[config.experiment](config)
