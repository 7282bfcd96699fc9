import numpy as np
import pytest

from priorsurv import autodiff as ad
from priorsurv.aggregation import (
    AggregatorConfig,
    AttentionScorer,
    LinearHead,
    PriorSet,
    attention_pool,
    effective_priors,
    fuse,
    prior_guided_pool,
    subset_fuse,
)

rng = np.random.default_rng(10)


def make_head(d, identity=False):
    w = np.eye(d) if identity else rng.standard_normal((d, d))
    b = np.zeros(d) if identity else rng.standard_normal(d)
    return LinearHead(
        weight=ad.Tensor(w, requires_grad=True), bias=ad.Tensor(b, requires_grad=True)
    )


def test_config_validation():
    with pytest.raises(ValueError):
        AggregatorConfig(kind="nope")
    with pytest.raises(ValueError):
        AggregatorConfig(alpha=0.0)


def test_effective_priors_identity_and_oracle():
    base = rng.standard_normal((3, 4))
    zero_off = PriorSet(base, ad.Tensor(np.zeros((3, 4)), requires_grad=True))
    assert np.allclose(effective_priors(zero_off).value, base)
    offs = rng.standard_normal((3, 4))
    ps = PriorSet(np.zeros((3, 4)), ad.Tensor(offs, requires_grad=True))
    assert np.allclose(effective_priors(ps).value, offs)
    ps2 = PriorSet(base, ad.Tensor(offs, requires_grad=True))
    assert np.allclose(effective_priors(ps2).value, base + offs, atol=1e-15)


def test_effective_priors_gradient_only_to_offsets():
    base = rng.standard_normal((2, 3))
    offsets = ad.Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    ps = PriorSet(base, offsets)
    ad.sum_(effective_priors(ps)).backward()
    assert np.allclose(offsets.grad, np.ones((2, 3)))


def test_prior_pool_single_instance():
    bag = rng.standard_normal((1, 4))
    priors = rng.standard_normal((3, 4))
    out = prior_guided_pool(priors, bag, alpha=57.0)
    assert np.allclose(out.value, np.repeat(bag, 3, axis=0), atol=1e-12)


def test_prior_pool_alpha_zero_is_mean():
    bag = rng.standard_normal((6, 4))
    priors = rng.standard_normal((2, 4))
    out = prior_guided_pool(priors, bag, alpha=1e-300)  # alpha must be > 0
    assert np.allclose(out.value, np.repeat(bag.mean(0, keepdims=True), 2, axis=0), atol=1e-9)


def test_prior_pool_direct_summation_oracle():
    bag = rng.standard_normal((3, 5))
    prior = rng.standard_normal((1, 5))
    alpha = 2.5
    cos = np.array(
        [
            prior[0] @ x / (np.linalg.norm(prior[0]) * np.linalg.norm(x))
            for x in bag
        ]
    )
    w = np.exp(alpha * cos)
    w /= w.sum()
    expected = (w[:, None] * bag).sum(axis=0)
    out = prior_guided_pool(prior, bag, alpha).value
    assert np.linalg.norm(out[0] - expected) / np.linalg.norm(expected) < 1e-12


def test_prior_pool_rows_in_convex_hull_and_permutation_invariant():
    bag = rng.standard_normal((8, 4))
    priors = rng.standard_normal((3, 4))
    from priorsurv.aggregation import pooling_weights

    w = pooling_weights(priors, bag, 7.0)
    assert np.all(w >= 0)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)
    perm = rng.permutation(8)
    a = prior_guided_pool(priors, bag, 7.0).value
    b = prior_guided_pool(priors, bag[perm], 7.0).value
    assert np.allclose(a, b, atol=1e-12)


def test_prior_pool_large_alpha_max_pool_limit():
    bag = rng.standard_normal((5, 4))
    prior = bag[2:3] * 3.0  # best match is instance 2 by construction
    out = prior_guided_pool(prior, bag, alpha=1e4).value
    assert np.allclose(out[0], bag[2], atol=1e-8)


def test_prior_pool_zero_row_errors():
    bag = np.vstack([np.zeros(4), rng.standard_normal(4)])
    with pytest.raises(ValueError, match="zero vector in cosine"):
        prior_guided_pool(rng.standard_normal((2, 4)), bag, 1.0)
    with pytest.raises(ValueError, match="zero vector in cosine"):
        prior_guided_pool(np.zeros((1, 4)), rng.standard_normal((3, 4)), 1.0)


def test_fuse_identity_and_affine_oracle():
    pooled = rng.standard_normal((1, 4))
    head = make_head(4, identity=True)
    assert np.allclose(fuse(pooled, head).value, pooled[0], atol=1e-15)
    pooled = rng.standard_normal((5, 4))
    head = make_head(4)
    expected = head.weight.value @ pooled.mean(axis=0) + head.bias.value
    assert np.allclose(fuse(pooled, head).value, expected, atol=1e-12)


def test_fuse_identical_rows():
    v = rng.standard_normal(4)
    pooled = np.tile(v, (3, 1))
    head = make_head(4)
    expected = head.weight.value @ v + head.bias.value
    assert np.allclose(fuse(pooled, head).value, expected, atol=1e-12)


def test_attention_pool_constant_scorer_is_mean():
    d, h = 4, 3
    bag = rng.standard_normal((6, d))
    scorer = AttentionScorer(
        v_weight=ad.Tensor(np.zeros((h, d))),
        v_bias=ad.Tensor(np.ones(h)),
        w_weight=ad.Tensor(rng.standard_normal(h)),
    )
    assert np.allclose(attention_pool(bag, scorer).value, bag.mean(axis=0), atol=1e-12)


def test_attention_pool_single_instance():
    bag = rng.standard_normal((1, 4))
    scorer = AttentionScorer(
        v_weight=ad.Tensor(rng.standard_normal((3, 4))),
        v_bias=ad.Tensor(np.zeros(3)),
        w_weight=ad.Tensor(rng.standard_normal(3)),
    )
    assert np.allclose(attention_pool(bag, scorer).value, bag[0], atol=1e-12)


def test_attention_pool_hand_score_weights():
    # construct scores exactly ln1, ln2, ln3 -> weights 1/6, 2/6, 3/6;
    # with bag = eye(3) the pooled vector equals the weight vector
    bag = np.eye(3)
    scores = np.log([1.0, 2.0, 3.0])
    scorer = AttentionScorer(
        v_weight=ad.Tensor(np.diag(np.arctanh(scores / 2.0))),
        v_bias=ad.Tensor(np.zeros(3)),
        w_weight=ad.Tensor(2.0 * np.ones(3)),
    )
    out = attention_pool(bag, scorer).value
    assert np.allclose(out, [1 / 6, 2 / 6, 3 / 6], atol=1e-12)


def test_attention_pool_permutation_invariant():
    bag = rng.standard_normal((7, 4))
    scorer = AttentionScorer(
        v_weight=ad.Tensor(rng.standard_normal((3, 4))),
        v_bias=ad.Tensor(rng.standard_normal(3)),
        w_weight=ad.Tensor(rng.standard_normal(3)),
    )
    perm = rng.permutation(7)
    assert np.allclose(
        attention_pool(bag, scorer).value,
        attention_pool(bag[perm], scorer).value,
        atol=1e-12,
    )


def test_subset_fuse_full_singleton_pair_empty():
    pooled = rng.standard_normal((3, 4))
    head = make_head(4)
    full = subset_fuse(pooled, [0, 1, 2], head).value
    assert np.allclose(full, fuse(pooled, head).value, atol=1e-12)
    single = subset_fuse(pooled, [1], head).value
    assert np.allclose(single, head.weight.value @ pooled[1] + head.bias.value, atol=1e-12)
    pair = subset_fuse(pooled, [0, 2], head).value
    expected = head.weight.value @ pooled[[0, 2]].mean(axis=0) + head.bias.value
    assert np.allclose(pair, expected, atol=1e-12)
    empty = subset_fuse(pooled, [], head).value
    assert np.array_equal(empty, np.zeros(4))


def test_pooled_gradients_match_finite_differences():
    d = 4
    bag = rng.standard_normal((5, d))
    base = rng.standard_normal((2, d))
    offsets = ad.Tensor(np.zeros((2, d)), requires_grad=True)
    ps = PriorSet(base, offsets)
    head = make_head(d)
    probe = rng.standard_normal(d)

    def forward():
        return ad.matmul(
            fuse(prior_guided_pool(effective_priors(ps), bag, 3.0), head),
            ad.Tensor(probe),
        )

    forward().backward()
    h = 1e-6
    for tensor in (offsets, head.weight):
        analytic = tensor.grad.copy()
        fd = np.zeros_like(tensor.value)
        flat, fd_flat = tensor.value.reshape(-1), fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(forward().value)
            flat[i] = orig - h
            down = float(forward().value)
            flat[i] = orig
            fd_flat[i] = (up - down) / (2 * h)
        assert np.linalg.norm(analytic - fd) / np.linalg.norm(fd) < 1e-4
