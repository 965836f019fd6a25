"""Acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (shown even when
output capture is on) before asserting. Run with

    pytest tests/test_acceptance.py -v

The full norm study makes this module take roughly a quarter of an hour.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest
from scipy.special import expit, log_softmax

from aeborda.acquisition import acquisition_alpha, generalized_borda_bounds
from aeborda.bandit import BetaSchedule, context_acquisition, new_state, step, warmup
from aeborda.campaigns import _trial_rngs, bandit_environment, run_campaign
from aeborda.cli import main
from aeborda.config import NORM_STUDY_DIMS, ExperimentConfig
from aeborda.environment import LINK_FAMILIES, LinkFunction, borda_values, joint_grid, make_grid
from aeborda.kernels import KERNEL_FAMILIES, KernelSpec
from aeborda.norm_study import estimate_rkhs_norm
from aeborda.outputs import emit_outputs
from aeborda.policy import ToyPolicy, dpo_grad, dpo_loss, sample_completion
from aeborda.posterior import PreferenceObservation, fit, update

REFERENCE_NORMS = {(0, 1): (0.16, -6.3), (1, 1): (0.89, 5.1), (1, 3): (1.0, 21.4),
          (3, 1): (1.0, 21.5), (3, 3): (1.0, 38.7), (10, 10): (1.0, 19.6)}


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok

    return emit


@pytest.fixture(scope="module")
def default_simulate():
    start = time.perf_counter()
    result = run_campaign(ExperimentConfig().validate())
    return result, time.perf_counter() - start


def test_criterion_1_strategy_ordering(default_simulate, report):
    result, elapsed = default_simulate
    final = {}
    for name in ("ae-borda", "ucb-borda", "uniform-borda"):
        rows = [r for r in result.records if r.strategy == name and r.t == 500]
        assert len(rows) == 10
        final[name] = (np.mean([r.max_suboptimality for r in rows]), np.mean([r.median_suboptimality for r in rows]))
    ae, ucb, uni = final["ae-borda"], final["ucb-borda"], final["uniform-borda"]
    ok = (not result.partial and elapsed <= 1800 and ae[0] <= uni[0] and ae[0] <= ucb[0] and ae[1] <= uni[1])
    detail = ", ".join(f"{k} max {v[0]:.3f} median {v[1]:.3f}" for k, v in final.items())
    assert report(1, ok, f"{detail}; {elapsed:.0f}s")


def test_criterion_2_norm_table(tmp_path, report):
    config = ExperimentConfig(experiment="norm-study", seeds=[0]).validate()
    assert [tuple(d) for d in config.norm_dims] == list(NORM_STUDY_DIMS)
    start = time.perf_counter()
    up_to_3_3 = [list(d) for d in NORM_STUDY_DIMS[:5]]
    low = run_campaign(ExperimentConfig(**{**config.to_dict(), "norm_dims": up_to_3_3}))
    elapsed = time.perf_counter() - start
    high = run_campaign(ExperimentConfig(**{**config.to_dict(), "norm_dims": [[10, 10]]}))
    rows = {(r.context_dim, r.action_dim): r for r in low.records + high.records}
    checks = {
        "(1,1) win rate": abs(rows[1, 1].win_rate - 0.89) <= 0.10,
        "(3,3) win rate": abs(rows[3, 3].win_rate - 1.0) <= 0.10,
        "(0,1) win rate": rows[0, 1].win_rate < 0.5,
        "margin signs": all(np.sign(rows[d].win_margin) == np.sign(margin)
                            for d, (_, margin) in REFERENCE_NORMS.items()),
        "runtime": elapsed <= 1200,
        "function counts": [rows[d].num_functions for d in REFERENCE_NORMS] == [1000] * 5 + [200],
    }
    table = "; ".join(f"{d}: {rows[d].win_rate:.3f}/{rows[d].win_margin:+.2f}" for d in REFERENCE_NORMS)
    failed = [k for k, v in checks.items() if not v]
    assert report(2, not failed, f"{table}; {elapsed:.0f}s up to (3,3)"
                  + (f"; failed: {', '.join(failed)}" if failed else ""))


def test_criterion_3_confidence_coverage(report):
    config = ExperimentConfig().validate()
    kernel = KernelSpec(config.kernel, config.lengthscale, config.kernel_variance)
    cg, ag = make_grid(1, 101), make_grid(1, 101)
    covered = []
    for seed in range(20):
        env = bandit_environment(config, seed)
        truth = borda_values(env, joint_grid(cg, ag), 1024).reshape(101, 101)
        norm = estimate_rkhs_norm(lambda Z: borda_values(env, Z, 1024), kernel, 1000,
                                  np.random.default_rng([seed, 3]), 2)
        beta = BetaSchedule("theoretical", 1.5 * norm, 0.05)
        warm_rng, rng = _trial_rngs(seed, 2)
        state = new_state("ae-borda", kernel, warmup(env, config.n0, warm_rng), cg, ag, beta,
                          config.regularization, config.noise_scale)
        inside = True
        for t in range(config.n0, config.T + 1):
            if t > config.n0:
                step(state, env, rng)
            if (t - config.n0) % config.eval_every == 0 or t == config.T:
                ucb, lcb = state.grid_bounds()
                inside &= bool(np.all(lcb <= truth) and np.all(truth <= ucb))
        covered.append(inside)
    rate = float(np.mean(covered))
    assert report(3, rate >= 0.95, f"{sum(covered)}/20 trials covered at every checkpoint")


def test_criterion_4_variance_sum(default_simulate, report):
    result, _ = default_simulate
    diags = result.tables["diagnostics"]
    ratios = [d.variance_sum / d.bound for d in diags]
    ok = len(diags) == 30 and all(d.completed for d in diags) and max(ratios) <= 1.05
    assert report(4, ok, f"{len(diags)} trials, largest sum/bound ratio {max(ratios):.3f}")


def dense_posterior(kernel, lam, Z, w, probes):
    A = kernel.gram(Z, Z) + lam * np.eye(len(Z))
    k = kernel.gram(Z, probes)
    mean = k.T @ np.linalg.solve(A, w)
    var = kernel.diag(probes) - np.sum(k * np.linalg.solve(A, k), axis=0)
    return mean, np.sqrt(np.clip(var, 0.0, None))


def test_criterion_5_incremental_posterior(report):
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(20):
        kernel = KernelSpec(KERNEL_FAMILIES[i % len(KERNEL_FAMILIES)], float(rng.uniform(0.2, 1.0)), 1.0)
        dx, da = int(rng.integers(0, 3)), int(rng.integers(1, 3))
        n = int(rng.integers(1, 201))
        data = [PreferenceObservation(rng.random(dx), rng.random(da), rng.random(da), int(rng.integers(2)))
                for _ in range(n)]
        model = fit(kernel, 0.1, [], dim=dx + da)
        for obs in data:
            model = update(model, obs)
        probes = rng.random((50, dx + da))
        mean, std = model.predict_many(probes)
        m, s = dense_posterior(kernel, 0.1, np.array([o.joint for o in data]),
                               np.array([o.outcome for o in data], dtype=float), probes)
        worst = max(worst, np.abs(mean - m).max(), np.abs(std - s).max())
    assert report(5, worst <= 1e-8, f"largest deviation {worst:.2e} over 20 datasets")


def test_criterion_6_dpo_gradient(report):
    V = 5
    reference = ToyPolicy.random(V, seed=21).as_reference()
    rng = np.random.default_rng(6)
    worst, h = 0.0, 1e-5
    for _ in range(20):
        policy = reference.with_params(reference.weights + 0.5 * rng.standard_normal(reference.weights.shape),
                                       reference.bias + 0.5 * rng.standard_normal(V))
        batch = [(tuple(rng.integers(1, V, 3)), tuple(rng.integers(0, V, rng.integers(1, 5))),
                  tuple(rng.integers(0, V, rng.integers(1, 5))), int(rng.integers(2))) for _ in range(6)]
        gamma = float(rng.uniform(0.2, 2.0))
        _, gW, gb = dpo_grad(policy, reference, batch, gamma)
        theta = np.concatenate([policy.weights.ravel(), policy.bias])
        fd = np.empty_like(theta)
        for j in range(len(theta)):
            vals = []
            for sign in (1, -1):
                q = theta.copy()
                q[j] += sign * h
                vals.append(dpo_loss(policy.with_params(q[:-V].reshape(policy.weights.shape), q[-V:]),
                                     reference, batch, gamma))
            fd[j] = (vals[0] - vals[1]) / (2 * h)
        g = np.concatenate([gW.ravel(), gb])
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(g))
    batch = [((1, 2), (3, 0), (4, 4), 1), ((2,), (1,), (0,), 0)]
    gap = abs(dpo_loss(reference, reference, batch, 0.8) - math.log(2))
    assert report(6, worst <= 1e-5 and gap <= 1e-10,
                  f"largest relative gradient error {worst:.2e}, |loss - log 2| = {gap:.1e}")


def completions(vocab, max_len):
    """Every completion: stops at the end token or at ``max_len``."""
    out = [(0,)] if max_len >= 1 else []
    for length in range(1, max_len + 1):
        for body in itertools.product(range(1, vocab), repeat=length - 1):
            if length == max_len:
                out.extend(body + (t,) for t in range(vocab))
            else:
                out.append(body + (0,))
    return sorted(set(out))


def masked_log_prob(policy, prompt, completion, mask):
    total = 0.0
    for i, t in enumerate(completion):
        phi = policy.features(prompt, completion[:i])
        total += log_softmax(phi @ (policy.weights * mask) + policy.bias)[t]
    return total


def test_criterion_7_generalized_borda_oracle(report):
    vocab, max_len, n, gamma = 3, 2, 2000, 1.0
    space = completions(vocab, max_len)
    misses = []
    for pair in range(50):
        reference = ToyPolicy.random(vocab, seed=1000 + pair, scale=1.0).as_reference()
        rng = np.random.default_rng(pair)
        policy = reference.with_ensemble(4, 0.3).with_params(
            reference.weights + rng.standard_normal(reference.weights.shape), reference.bias)
        prompt = tuple(int(t) for t in rng.integers(1, vocab, 2))
        candidate = space[int(rng.integers(len(space)))]

        def implicit(c):
            mu = np.mean([masked_log_prob(policy, prompt, c, policy.mask(j)) for j in range(policy.num_masks)])
            return gamma * (mu - masked_log_prob(reference, prompt, c, np.ones_like(reference.weights)))

        ref_probs = np.array([math.exp(masked_log_prob(reference, prompt, c, np.ones_like(reference.weights)))
                              for c in space])
        assert ref_probs.sum() == pytest.approx(1.0, abs=1e-12)
        exact = float(ref_probs @ expit(implicit(candidate) - np.array([implicit(c) for c in space])))
        comps = [sample_completion(reference, prompt, max_len, 1.0, rng).tokens for _ in range(n)]
        est = generalized_borda_bounds(policy, reference, prompt, [candidate], comps, gamma, 0.0)
        terms = est.ucb_terms[0]
        se = terms.std(ddof=1) / math.sqrt(n)
        if not abs(est.ucb[0] - exact) <= 3 * se + 1e-12:
            misses.append(pair)
    assert report(7, not misses, f"{50 - len(misses)}/50 pairs within 3 standard errors")


def test_criterion_8_properties(report):
    rng = np.random.default_rng(8)
    per_property = 2500
    violations = {"link": 0, "variance": 0, "bandit bounds": 0, "borda bounds": 0}

    for _ in range(per_property):
        rho = LinkFunction(LINK_FAMILIES[int(rng.integers(2))], float(rng.uniform(0.1, 5.0)))
        u = float(rng.normal(scale=10.0))
        violations["link"] += abs(float(rho(u) + rho(-u)) - 1.0) > 1e-12

    for _ in range(per_property):
        kernel = KernelSpec(KERNEL_FAMILIES[int(rng.integers(3))], float(rng.uniform(0.1, 1.0)), 1.0)
        data = [PreferenceObservation(rng.random(1), rng.random(1), rng.random(1), int(rng.integers(2)))
                for _ in range(int(rng.integers(0, 8)))]
        model = fit(kernel, float(rng.uniform(0.01, 1.0)), data, dim=2)
        probes = rng.random((8, 2))
        before = model.predict_many(probes)[1]
        after = update(model, PreferenceObservation(rng.random(1), rng.random(1), rng.random(1), 1)
                       ).predict_many(probes)[1]
        violations["variance"] += int(np.any(after > before + 1e-12))

    cg, ag = make_grid(1, 6), make_grid(1, 6)
    for _ in range(per_property):
        kernel = KernelSpec("matern-5/2", float(rng.uniform(0.1, 1.0)), 1.0)
        data = [PreferenceObservation(rng.random(1), rng.random(1), rng.random(1), int(rng.integers(2)))
                for _ in range(int(rng.integers(0, 10)))]
        state = new_state("ae-borda", kernel, data, cg, ag, BetaSchedule("fixed", fixed_value=float(rng.uniform(0, 5))))
        ucb, lcb = state.grid_bounds()
        alpha = context_acquisition(state, cg, ag)
        violations["bandit bounds"] += int(np.any(ucb < lcb) or np.any(alpha < 0))

    reference = ToyPolicy.random(4, seed=8).as_reference()
    for _ in range(per_property):
        policy = reference.with_ensemble(3, 0.3).with_params(
            reference.weights + rng.standard_normal(reference.weights.shape), reference.bias)
        cands = [tuple(rng.integers(0, 4, rng.integers(1, 3))) for _ in range(2)]
        comps = [tuple(rng.integers(0, 4, rng.integers(1, 3))) for _ in range(2)]
        est = generalized_borda_bounds(policy, reference, (1,), cands, comps, float(rng.uniform(0.1, 2.0)),
                                       float(rng.uniform(0, 3)))
        violations["borda bounds"] += int(np.any(est.ucb_terms < est.lcb_terms)
                                          or acquisition_alpha(est).alpha < 0)

    total = sum(violations.values())
    assert report(8, total == 0, f"{4 * per_property} cases, violations {violations}")


@pytest.mark.parametrize("experiment", ["simulate", "norm-study", "toy-dpo"])
def test_criterion_9_rerun_from_metadata(default_simulate, experiment, tmp_path, report):
    first = tmp_path / "first"
    if experiment == "simulate":
        result, _ = default_simulate
        emit_outputs(result, first)
    else:
        small = {"norm-study": {"norm_dims": [[0, 1], [1, 1]], "norm_functions": 20},
                 "toy-dpo": {"rounds": 5, "seeds": [0, 1]}}[experiment]
        emit_outputs(run_campaign(ExperimentConfig(experiment=experiment, **small).validate()), first)
    second = tmp_path / "second"
    assert main([experiment, "--config", str(first / "metadata.json"), "--out", str(second)]) == 0
    tables = json.loads((first / "metadata.json").read_text())["tables"].values()
    same = all((first / name).read_bytes() == (second / name).read_bytes() for name in tables)
    assert report(9, same, f"{experiment}: {len(tables)} tables byte-identical" if same
                  else f"{experiment}: tables differ")
