"""Token-level policies with dropout ensembles, and the DPO objective.

``ToyPolicy`` is a linear softmax over a small vocabulary whose input is a
bag of features of the prompt and the completion prefix. Dropout masks are
fixed per mask index (seeded), so an ensemble of ``num_masks`` passes is a
finite, reproducible set of policies.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, log_softmax, logsumexp

END_TOKEN = 0


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    role: str = "completion"

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if self.role not in ("prompt", "completion"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == "prompt" and not self.tokens:
            raise ValueError("prompts must be non-empty")

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


def as_tokens(seq) -> tuple[int, ...]:
    if isinstance(seq, TokenSequence):
        return seq.tokens
    return tuple(int(t) for t in seq)


class PolicyEnsemble(ABC):
    """Autoregressive policy whose forward pass is indexed by a dropout mask.

    ``mask=None`` is the deterministic pass (no dropout). Reference policies
    have a single mask that equals the deterministic pass.
    """

    vocab_size: int
    end_token: int = END_TOKEN

    @property
    @abstractmethod
    def num_masks(self) -> int: ...

    @abstractmethod
    def token_log_probs(self, prompt, prefix, mask: int | None = None) -> np.ndarray:
        """Log-probabilities over the vocabulary for the next token."""

    def mask_log_probs(self, prompt, prefix) -> np.ndarray:
        """Shape ``(num_masks, vocab_size)``."""
        return np.stack([self.token_log_probs(prompt, prefix, j) for j in range(self.num_masks)])

    def sequence_log_prob(self, prompt, completion, mask: int | None = None) -> float:
        tokens = as_tokens(completion)
        return float(sum(
            self.token_log_probs(prompt, tokens[:i], mask)[t] for i, t in enumerate(tokens)
        ))


def token_stats(ensemble: PolicyEnsemble, prompt, prefix, token: int) -> tuple[float, float]:
    """Ensemble mean and sample standard deviation (ddof 1) of one token's log-prob."""
    if ensemble.num_masks < 2:
        raise ValueError("token_stats needs at least two masks")
    lp = ensemble.mask_log_probs(prompt, as_tokens(prefix))[:, int(token)]
    return float(lp.mean()), float(lp.std(ddof=1))


def _position_stats(ensemble: PolicyEnsemble, prompt, completion) -> tuple[np.ndarray, np.ndarray]:
    tokens = as_tokens(completion)
    mu = np.empty(len(tokens))
    sd = np.zeros(len(tokens))
    for i, t in enumerate(tokens):
        lp = ensemble.mask_log_probs(prompt, tokens[:i])[:, t]
        mu[i] = lp.mean()
        if len(lp) > 1:
            sd[i] = lp.std(ddof=1)
    return mu, sd


def sequence_bounds(ensemble: PolicyEnsemble, prompt, completion, beta: float) -> tuple[float, float]:
    """Optimistic and pessimistic sequence log-prob: sum of ``mu +/- beta * sigma``."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    mu, sd = _position_stats(ensemble, prompt, completion)
    centre, spread = float(mu.sum()), beta * float(sd.sum())
    return centre + spread, centre - spread


def mean_next_token_probs(ensemble: PolicyEnsemble, prompt, prefix) -> np.ndarray:
    """Next-token distribution averaged over masks (in probability space)."""
    lp = ensemble.mask_log_probs(prompt, prefix)
    return np.exp(logsumexp(lp, axis=0) - np.log(len(lp)))


def sample_completion(
    ensemble: PolicyEnsemble,
    prompt,
    max_len: int,
    temperature: float = 1.0,
    rng: np.random.Generator | None = None,
) -> TokenSequence:
    """Sample until the end token or ``max_len`` tokens; ``temperature == 0`` is greedy."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    if temperature > 0 and rng is None:
        raise ValueError("sampling needs an rng")
    tokens: list[int] = []
    while len(tokens) < max_len:
        p = mean_next_token_probs(ensemble, prompt, tuple(tokens))
        if temperature == 0:
            t = int(np.argmax(p))
        else:
            logits = np.log(np.maximum(p, 1e-300)) / temperature
            q = np.exp(logits - logsumexp(logits))
            t = int(rng.choice(len(q), p=q / q.sum()))
        tokens.append(t)
        if t == ensemble.end_token:
            break
    return TokenSequence(tuple(tokens))


def greedy_decode(ensemble: PolicyEnsemble, prompt, max_len: int) -> TokenSequence:
    return sample_completion(ensemble, prompt, max_len, temperature=0.0)


@dataclass(frozen=True, eq=False)
class ToyPolicy(PolicyEnsemble):
    """Linear softmax over ``vocab_size`` tokens.

    Features of ``(prompt, prefix)``: a bias, the prompt's normalized token
    histogram, the prefix's token counts and a one-hot of the last prefix
    token. Dropout zeroes a fraction ``dropout`` of ``weights`` per mask
    (inverted scaling); the output ``bias`` is never dropped.
    """

    weights: np.ndarray
    bias: np.ndarray
    num_masks_: int = 4
    dropout: float = 0.1
    seed: int = 0
    _masks: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        V = len(self.bias)
        if self.weights.shape != (self.feature_dim_for(V), V):
            raise ValueError(f"weights must have shape {(self.feature_dim_for(V), V)}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.num_masks_ < 1:
            raise ValueError("num_masks must be >= 1")

    @staticmethod
    def feature_dim_for(vocab_size: int) -> int:
        return 1 + 3 * vocab_size

    @classmethod
    def random(cls, vocab_size: int, seed: int = 0, num_masks: int = 4,
               dropout: float = 0.1, scale: float = 0.5) -> "ToyPolicy":
        rng = np.random.default_rng([seed, 7919])
        W = scale * rng.standard_normal((cls.feature_dim_for(vocab_size), vocab_size))
        b = scale * rng.standard_normal(vocab_size)
        return cls(W, b, num_masks, dropout, seed)

    @property
    def vocab_size(self) -> int:
        return len(self.bias)

    @property
    def num_masks(self) -> int:
        return self.num_masks_

    @property
    def is_reference(self) -> bool:
        return self.num_masks_ == 1 and self.dropout == 0

    def as_reference(self) -> "ToyPolicy":
        return ToyPolicy(self.weights.copy(), self.bias.copy(), 1, 0.0, self.seed)

    def with_ensemble(self, num_masks: int, dropout: float) -> "ToyPolicy":
        return ToyPolicy(self.weights.copy(), self.bias.copy(), num_masks, dropout, self.seed)

    def with_params(self, weights: np.ndarray, bias: np.ndarray) -> "ToyPolicy":
        return ToyPolicy(weights, bias, self.num_masks_, self.dropout, self.seed)

    def mask(self, j: int) -> np.ndarray:
        """Multiplicative weight mask for mask index ``j`` (cached)."""
        if not 0 <= j < self.num_masks_:
            raise IndexError(f"mask index {j} out of range for {self.num_masks_} masks")
        m = self._masks.get(j)
        if m is None:
            if self.dropout == 0:
                m = np.ones_like(self.weights)
            else:
                keep = np.random.default_rng([self.seed, j]).random(self.weights.shape) >= self.dropout
                m = keep / (1.0 - self.dropout)
            self._masks[j] = m
        return m

    def features(self, prompt, prefix) -> np.ndarray:
        V = self.vocab_size
        prompt = as_tokens(prompt)
        prefix = as_tokens(prefix)
        phi = np.zeros(self.feature_dim_for(V))
        phi[0] = 1.0
        if prompt:
            np.add.at(phi, 1 + np.asarray(prompt), 1.0 / len(prompt))
        if prefix:
            np.add.at(phi, 1 + V + np.asarray(prefix), 1.0)
            phi[1 + 2 * V + prefix[-1]] = 1.0
        return phi

    def token_log_probs(self, prompt, prefix, mask: int | None = None) -> np.ndarray:
        W = self.weights if mask is None or self.is_reference else self.weights * self.mask(mask)
        return log_softmax(self.features(prompt, prefix) @ W + self.bias)

    def mask_log_probs(self, prompt, prefix) -> np.ndarray:
        phi = self.features(prompt, prefix)
        if self.is_reference:
            return log_softmax(phi @ self.weights + self.bias)[None, :]
        logits = np.stack([phi @ (self.weights * self.mask(j)) for j in range(self.num_masks_)])
        return log_softmax(logits + self.bias, axis=1)

    def sequence_log_prob_grad(self, prompt, completion) -> tuple[float, np.ndarray, np.ndarray]:
        """Deterministic-pass log-prob and its gradient w.r.t. ``weights`` and ``bias``."""
        tokens = as_tokens(completion)
        gW = np.zeros_like(self.weights)
        gb = np.zeros_like(self.bias)
        total = 0.0
        for i, t in enumerate(tokens):
            phi = self.features(prompt, tokens[:i])
            lp = log_softmax(phi @ self.weights + self.bias)
            total += lp[t]
            resid = -np.exp(lp)
            resid[t] += 1.0
            gW += np.outer(phi, resid)
            gb += resid
        return total, gW, gb

    def to_record(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "num_masks": self.num_masks_,
            "dropout": self.dropout,
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ToyPolicy":
        return cls(np.asarray(record["weights"], dtype=float), np.asarray(record["bias"], dtype=float),
                   int(record["num_masks"]), float(record["dropout"]), int(record["seed"]))


Example = tuple  # (prompt, completion, comparator, outcome)


def _check_batch(batch: Sequence[Example], gamma: float):
    if not batch:
        raise ValueError("batch must be non-empty")
    if not gamma > 0:
        raise ValueError("gamma must be positive")


def dpo_logits(policy_a, policy_b, ref_a, ref_b, outcome, gamma: float) -> np.ndarray:
    """Signed, scaled log-ratio margins ``u`` from per-example sequence log-probs."""
    sign = 2.0 * np.asarray(outcome, dtype=float) - 1.0
    margin = (np.asarray(policy_a) - np.asarray(ref_a)) - (np.asarray(policy_b) - np.asarray(ref_b))
    return gamma * sign * margin


def dpo_loss_from_logps(policy_a, policy_b, ref_a, ref_b, outcome, gamma: float) -> float:
    u = dpo_logits(policy_a, policy_b, ref_a, ref_b, outcome, gamma)
    return float(np.mean(np.logaddexp(0.0, -u)))


def dpo_loss(policy: ToyPolicy, reference: PolicyEnsemble, batch: Iterable[Example], gamma: float) -> float:
    """Mean ``-log sigmoid(u)`` over ``(prompt, a, a', w)`` examples."""
    batch = list(batch)
    _check_batch(batch, gamma)
    cols = [[], [], [], [], []]
    for prompt, a, b, w in batch:
        cols[0].append(policy.sequence_log_prob(prompt, a))
        cols[1].append(policy.sequence_log_prob(prompt, b))
        cols[2].append(reference.sequence_log_prob(prompt, a))
        cols[3].append(reference.sequence_log_prob(prompt, b))
        cols[4].append(w)
    return dpo_loss_from_logps(*cols, gamma)


def dpo_grad(policy: ToyPolicy, reference: PolicyEnsemble, batch: Iterable[Example],
             gamma: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and its gradient w.r.t. the policy's ``weights`` and ``bias``."""
    batch = list(batch)
    _check_batch(batch, gamma)
    gW = np.zeros_like(policy.weights)
    gb = np.zeros_like(policy.bias)
    losses = []
    for prompt, a, b, w in batch:
        lp_a, gW_a, gb_a = policy.sequence_log_prob_grad(prompt, a)
        lp_b, gW_b, gb_b = policy.sequence_log_prob_grad(prompt, b)
        sign = 2.0 * w - 1.0
        u = gamma * sign * ((lp_a - reference.sequence_log_prob(prompt, a))
                            - (lp_b - reference.sequence_log_prob(prompt, b)))
        losses.append(np.logaddexp(0.0, -u))
        # d/du of -log sigmoid(u) is -sigmoid(-u)
        scale = -expit(-u) * gamma * sign / len(batch)
        gW += scale * (gW_a - gW_b)
        gb += scale * (gb_a - gb_b)
    return float(np.mean(losses)), gW, gb


def dpo_step(policy: ToyPolicy, reference: PolicyEnsemble, batch: Iterable[Example],
             gamma: float, learning_rate: float) -> ToyPolicy:
    """One gradient-descent step on the DPO loss; returns a new policy."""
    if learning_rate < 0:
        raise ValueError("learning_rate must be non-negative")
    _, gW, gb = dpo_grad(policy, reference, batch, gamma)
    return policy.with_params(policy.weights - learning_rate * gW, policy.bias - learning_rate * gb)
