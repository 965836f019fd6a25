"""Prompt acquisition for active preference fine-tuning of toy policies.

The implicit reward of a completion is ``gamma * log(pi(a|x) / pi_ref(a|x))``.
Its optimistic and pessimistic versions use the dropout-ensemble bounds of
``sequence_bounds``; the generalized Borda bounds push them through a
logistic link and average over comparators sampled from the reference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .environment import LinkFunction
from .errors import OracleError
from .policy import (
    PolicyEnsemble,
    ToyPolicy,
    as_tokens,
    dpo_step,
    sample_completion,
    sequence_bounds,
)

ARMS = ("ae-borda-dpo", "ae-dpo", "uniform")


@dataclass(frozen=True, eq=False)
class GeneralizedBordaEstimate:
    """Bounds on the generalized Borda value of each candidate completion.

    ``ucb_terms[i, j]`` is the optimistic win probability of candidate ``i``
    against comparator ``j``; ``ucb`` and ``lcb`` are the row means.
    """

    prompt: tuple[int, ...]
    candidates: tuple[tuple[int, ...], ...]
    ucb_terms: np.ndarray
    lcb_terms: np.ndarray

    @property
    def ucb(self) -> np.ndarray:
        return self.ucb_terms.mean(axis=1)

    @property
    def lcb(self) -> np.ndarray:
        return self.lcb_terms.mean(axis=1)

    @property
    def num_comparators(self) -> int:
        return self.ucb_terms.shape[1]


@dataclass(frozen=True)
class AcquisitionScore:
    prompt: tuple[int, ...]
    alpha: float


def implicit_reward_bounds(policy: PolicyEnsemble, reference: PolicyEnsemble, prompt,
                           completions, gamma: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Upper and lower implicit rewards, one entry per completion."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    memo: dict = {}
    upper, lower = [], []
    for c in completions:
        c = as_tokens(c)
        if c not in memo:
            hi, lo = sequence_bounds(policy, prompt, c, beta)
            ref = reference.sequence_log_prob(prompt, c)
            memo[c] = (gamma * (hi - ref), gamma * (lo - ref))
        upper.append(memo[c][0])
        lower.append(memo[c][1])
    return np.array(upper), np.array(lower)


def generalized_borda_bounds(policy: PolicyEnsemble, reference: PolicyEnsemble, prompt,
                             candidates: Sequence, comparators: Sequence,
                             gamma: float, beta: float) -> GeneralizedBordaEstimate:
    """Optimistic and pessimistic win rates of candidates against comparators.

    The optimistic value pits the candidate's upper implicit reward against
    the comparator's lower one (and conversely for the pessimistic value).
    """
    if not candidates or not comparators:
        raise ValueError("need at least one candidate and one comparator")
    prompt = as_tokens(prompt)
    cands = tuple(as_tokens(c) for c in candidates)
    comps = tuple(as_tokens(c) for c in comparators)
    hi, lo = implicit_reward_bounds(policy, reference, prompt, cands + comps, gamma, beta)
    m = len(cands)
    ucb_terms = expit(hi[:m, None] - lo[None, m:])
    lcb_terms = expit(lo[:m, None] - hi[None, m:])
    return GeneralizedBordaEstimate(prompt, cands, ucb_terms, lcb_terms)


def acquisition_alpha(estimate: GeneralizedBordaEstimate) -> AcquisitionScore:
    """Gap between the best optimistic and the best pessimistic candidate value."""
    return AcquisitionScore(estimate.prompt, float(estimate.ucb.max() - estimate.lcb.max()))


def reward_alpha(policy: PolicyEnsemble, reference: PolicyEnsemble, prompt, candidates,
                 gamma: float, beta: float) -> AcquisitionScore:
    """Same gap on the implicit-reward scale, without comparators."""
    if not candidates:
        raise ValueError("need at least one candidate")
    hi, lo = implicit_reward_bounds(policy, reference, prompt, candidates, gamma, beta)
    return AcquisitionScore(as_tokens(prompt), float(hi.max() - lo.max()))


def select_batch(prompts: Sequence, scorer: Callable, batch_size: int) -> list:
    """The ``batch_size`` prompts of largest score; earlier prompts win ties."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    prompts = list(prompts)
    if batch_size > len(prompts):
        raise ValueError(f"batch_size {batch_size} exceeds pool size {len(prompts)}")
    scores = []
    for p in prompts:
        s = scorer(p)
        scores.append(s.alpha if isinstance(s, AcquisitionScore) else float(s))
    order = np.argsort(-np.asarray(scores), kind="stable")
    return [prompts[i] for i in order[:batch_size]]


class PreferenceOracle:
    """Labels a duel: 1 when ``completion`` is preferred to ``comparator``."""

    def __call__(self, prompt, completion, comparator) -> int:
        raise NotImplementedError


@dataclass
class SyntheticOracle(PreferenceOracle):
    """Bradley-Terry labels from a known completion reward.

    The default reward counts non-end tokens, times ``scale``.
    """

    rng: np.random.Generator
    reward: Callable | None = None
    link: LinkFunction = field(default_factory=LinkFunction)
    end_token: int = 0
    scale: float = 1.0

    def score(self, prompt, completion) -> float:
        completion = as_tokens(completion)
        if self.reward is not None:
            return float(self.reward(as_tokens(prompt), completion))
        return self.scale * sum(t != self.end_token for t in completion)

    def probability(self, prompt, completion, comparator) -> float:
        return float(self.link(self.score(prompt, completion) - self.score(prompt, comparator)))

    def __call__(self, prompt, completion, comparator) -> int:
        return int(self.rng.random() < self.probability(prompt, completion, comparator))


class FileOracle(PreferenceOracle):
    """Replays labels from a JSON-lines file.

    Each line holds ``prompt``, ``completion``, ``comparator`` (token lists)
    and ``outcome`` (0 or 1). A duel stored in the opposite order is answered
    with the flipped outcome.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.labels: dict = {}
        try:
            lines = self.path.read_text().splitlines()
        except OSError as exc:
            raise OracleError(f"cannot read labels from {self.path}: {exc}") from exc
        for n, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = (as_tokens(rec["prompt"]), as_tokens(rec["completion"]), as_tokens(rec["comparator"]))
                outcome = int(rec["outcome"])
            except (ValueError, KeyError, TypeError) as exc:
                raise OracleError(f"{self.path}:{n}: malformed label record") from exc
            if outcome not in (0, 1):
                raise OracleError(f"{self.path}:{n}: outcome must be 0 or 1")
            self.labels[key] = outcome

    def __call__(self, prompt, completion, comparator) -> int:
        prompt, a, b = as_tokens(prompt), as_tokens(completion), as_tokens(comparator)
        if (prompt, a, b) in self.labels:
            return self.labels[(prompt, a, b)]
        if (prompt, b, a) in self.labels:
            return 1 - self.labels[(prompt, b, a)]
        raise OracleError(f"no label for prompt {list(prompt)} and pair {list(a)} / {list(b)}")


def write_labels(path, examples) -> None:
    """Write ``(prompt, completion, comparator, outcome)`` tuples as JSON lines."""
    with open(path, "w") as fh:
        for prompt, a, b, w in examples:
            fh.write(json.dumps({"prompt": list(as_tokens(prompt)), "completion": list(as_tokens(a)),
                                 "comparator": list(as_tokens(b)), "outcome": int(w)}) + "\n")


@dataclass(frozen=True)
class ActiveDpoConfig:
    arm: str = "ae-borda-dpo"
    pool_sample: int = 32
    batch_size: int = 8
    num_candidates: int = 4
    num_comparators: int = 8
    gamma: float = 1.0
    beta: float = 1.0
    learning_rate: float = 0.5
    max_len: int = 4
    temperature: float = 1.0

    def __post_init__(self):
        if self.arm not in ARMS:
            raise ValueError(f"unknown arm {self.arm!r}")
        if not 1 <= self.batch_size <= self.pool_sample:
            raise ValueError("need 1 <= batch_size <= pool_sample")
        if self.num_candidates < 1 or self.num_comparators < 1 or self.max_len < 1:
            raise ValueError("num_candidates, num_comparators and max_len must be >= 1")
        if not self.gamma > 0 or self.beta < 0 or self.learning_rate < 0:
            raise ValueError("need gamma > 0, beta >= 0 and learning_rate >= 0")


@dataclass(frozen=True, eq=False)
class RoundResult:
    policy: ToyPolicy
    examples: tuple
    scores: tuple[float, ...]


def _draws(ensemble, prompt, n, config: ActiveDpoConfig, rng) -> list[tuple[int, ...]]:
    return [sample_completion(ensemble, prompt, config.max_len, config.temperature, rng).tokens
            for _ in range(n)]


def score_prompt(policy: PolicyEnsemble, reference: PolicyEnsemble, prompt,
                 config: ActiveDpoConfig, rng: np.random.Generator) -> tuple[float, tuple, tuple]:
    """Acquisition value of one prompt and the duel it would be labeled with.

    Candidates are policy samples and comparators are reference samples.
    The duel pairs the best optimistic candidate with a comparator drawn
    uniformly among the reference samples. Under the ``uniform`` arm the
    score is 0 and the first candidate is used.
    """
    prompt = as_tokens(prompt)
    cands = _draws(policy, prompt, config.num_candidates, config, rng)
    comps = _draws(reference, prompt, config.num_comparators, config, rng)
    if config.arm == "ae-borda-dpo":
        est = generalized_borda_bounds(policy, reference, prompt, cands, comps, config.gamma, config.beta)
        alpha, best = acquisition_alpha(est).alpha, int(np.argmax(est.ucb))
    elif config.arm == "ae-dpo":
        hi, lo = implicit_reward_bounds(policy, reference, prompt, cands, config.gamma, config.beta)
        alpha, best = float(hi.max() - lo.max()), int(np.argmax(hi))
    else:
        alpha, best = 0.0, 0
    return alpha, cands[best], comps[int(rng.integers(len(comps)))]


def active_dpo_round(policy: ToyPolicy, reference: PolicyEnsemble, pool: Sequence,
                     config: ActiveDpoConfig, oracle: PreferenceOracle,
                     rng: np.random.Generator) -> RoundResult:
    """Score a random subset of the pool, label the top batch, take one DPO step.

    If the oracle fails, the error propagates and no update is made.
    """
    if len(pool) < config.pool_sample:
        raise ValueError(f"pool has {len(pool)} prompts, need {config.pool_sample}")
    idx = rng.choice(len(pool), size=config.pool_sample, replace=False)
    sample = [as_tokens(pool[i]) for i in idx]
    scored = [score_prompt(policy, reference, p, config, rng) for p in sample]
    order = select_batch(range(len(sample)), lambda i: scored[i][0], config.batch_size)
    examples = []
    for i in order:
        _, a, b = scored[i]
        examples.append((sample[i], a, b, int(oracle(sample[i], a, b))))
    new_policy = dpo_step(policy, reference, examples, config.gamma, config.learning_rate)
    return RoundResult(new_policy, tuple(examples), tuple(scored[i][0] for i in order))
