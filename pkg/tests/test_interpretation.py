import itertools
import math

import numpy as np
import pytest

from priorsurv import autodiff as ad
from priorsurv.aggregation import LinearHead, subset_fuse
from priorsurv.interpretation import coalition_risk, shapley_exact, top_instances
from priorsurv.prediction import incidence, risk_score

rng = np.random.default_rng(61)


def make_problem(m=3, d=5, c=4, seed=0):
    r = np.random.default_rng(seed)
    pooled = r.standard_normal((m, d))
    head = LinearHead(
        weight=ad.Tensor(r.standard_normal((d, d))),
        bias=ad.Tensor(r.standard_normal(d)),
    )
    prompts = r.standard_normal((c, d))
    prompts /= np.linalg.norm(prompts, axis=1, keepdims=True)
    return pooled, head, prompts, 4.0


def shapley_direct_enumeration(pooled, head, prompts, tau):
    """Independent oracle: permutation-average definition of the Shapley value."""
    m = pooled.shape[0]
    values = {}
    for mask_size in range(m + 1):
        for subset in itertools.combinations(range(m), mask_size):
            values[frozenset(subset)] = coalition_risk(pooled, list(subset), head, prompts, tau)
    phi = np.zeros(m)
    for perm in itertools.permutations(range(m)):
        acc = []
        for player in perm:
            before = frozenset(acc)
            after = frozenset(acc + [player])
            phi[player] += values[after] - values[before]
            acc.append(player)
    return phi / math.factorial(m)


def test_single_prior_contribution():
    pooled, head, prompts, tau = make_problem(m=1)
    report = shapley_exact(pooled, head, prompts, tau)
    v1 = coalition_risk(pooled, [0], head, prompts, tau)
    v0 = coalition_risk(pooled, [], head, prompts, tau)
    assert report.contributions[0] == pytest.approx(v1 - v0, abs=1e-12)
    assert report.baseline_risk == pytest.approx(v0)
    assert report.full_risk == pytest.approx(v1)


def test_symmetry_identical_rows():
    pooled, head, prompts, tau = make_problem(m=2)
    pooled[1] = pooled[0]
    report = shapley_exact(pooled, head, prompts, tau)
    assert report.contributions[0] == pytest.approx(report.contributions[1], abs=1e-12)


def test_efficiency_and_oracle_cross_check():
    for seed in range(5):
        pooled, head, prompts, tau = make_problem(m=3, seed=seed)
        report = shapley_exact(pooled, head, prompts, tau)
        assert report.total == pytest.approx(
            report.full_risk - report.baseline_risk, abs=1e-10
        )
        oracle = shapley_direct_enumeration(pooled, head, prompts, tau)
        assert np.allclose(report.contributions, oracle, atol=1e-10)


def test_empty_coalition_uniform_risk():
    pooled, head, prompts, tau = make_problem(c=8)
    assert coalition_risk(pooled, [], head, prompts, tau) == pytest.approx(4.5, abs=1e-10)


def test_dummy_player_zero():
    # prompts built with identical cosine to the first axis; pooled rows all
    # lie on that axis, so every coalition (empty included) yields the uniform
    # risk and every player's marginal contribution is exactly zero
    d = 4
    s = np.sqrt(0.75)
    prompts = np.array(
        [[0.5, s, 0.0, 0.0], [0.5, 0.0, s, 0.0], [0.5, 0.0, 0.0, s]]
    )
    pooled = np.outer([2.0, -1.5, 0.7], np.eye(d)[0])
    head = LinearHead(weight=ad.Tensor(np.eye(d)), bias=ad.Tensor(np.zeros(d)))
    report = shapley_exact(pooled, head, prompts, 2.0)
    assert np.all(np.abs(report.contributions) < 1e-10)
    assert report.full_risk == pytest.approx(report.baseline_risk, abs=1e-12)


def test_permutation_consistency():
    pooled, head, prompts, tau = make_problem(m=4)
    report = shapley_exact(pooled, head, prompts, tau)
    perm = [2, 0, 3, 1]
    permuted = shapley_exact(pooled[perm], head, prompts, tau)
    assert np.allclose(permuted.contributions, report.contributions[perm], atol=1e-10)


def test_enumeration_refuses_large_m():
    pooled = rng.standard_normal((21, 3))
    head = LinearHead(weight=ad.Tensor(np.eye(3)), bias=ad.Tensor(np.zeros(3)))
    prompts = rng.standard_normal((2, 3))
    with pytest.raises(ValueError, match="too large"):
        shapley_exact(pooled, head, prompts, 1.0)


# -- top instances ----------------------------------------------------------------

def test_top_instances_single():
    bag = rng.standard_normal((1, 4))
    priors = rng.standard_normal((2, 4))
    idx, w = top_instances(priors, bag, 5.0, prior_index=0, top_k=1)
    assert idx.tolist() == [0]
    assert w[0] == pytest.approx(1.0)


def test_top_instances_uniform_alpha_index_order():
    bag = rng.standard_normal((5, 4))
    priors = rng.standard_normal((1, 4))
    idx, w = top_instances(priors, bag, 0.0, prior_index=0, top_k=5)
    assert idx.tolist() == [0, 1, 2, 3, 4]
    assert np.allclose(w, 0.2, atol=1e-15)


def test_top_instances_sort_oracle():
    bag = rng.standard_normal((5, 6))
    priors = rng.standard_normal((3, 6))
    from priorsurv.aggregation import pooling_weights

    weights = pooling_weights(priors, bag, 4.0)
    idx, w = top_instances(priors, bag, 4.0, prior_index=2, top_k=5)
    expected = np.argsort(-weights[2], kind="stable")
    assert idx.tolist() == expected.tolist()
    assert np.allclose(w, weights[2][expected])


def test_top_instances_validation():
    bag = rng.standard_normal((3, 4))
    priors = rng.standard_normal((2, 4))
    with pytest.raises(ValueError):
        top_instances(priors, bag, 1.0, prior_index=5, top_k=1)
    with pytest.raises(ValueError):
        top_instances(priors, bag, 1.0, prior_index=0, top_k=9)
