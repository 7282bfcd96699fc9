"""Model state and the end-to-end differentiable forward pass.

All learnable parameters live in a :class:`ModelState`: prior offsets (or
the prototype matrix), the prompt context and base class tokens, the linear
head, the log-temperature, and (for the attention ablation) the scorer MLP.
Frozen constants (prior base embeddings, the pseudo-encoder projection) are
plain numpy arrays and never receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .aggregation import (
    ATTENTION,
    PRIOR_GUIDED,
    PROTOTYPES,
    AggregatorConfig,
    AttentionScorer,
    LinearHead,
    PriorSet,
    attention_pool,
    effective_priors,
    fuse,
    prior_guided_pool,
)
from .labels import DiscreteLabel
from .losses import HAZARD, LossConfig, total_loss
from .prediction import TAU_MAX, hazard_probs, incidence_distribution
from .prompts import PromptParams, survival_prompts
from .embeddings import PseudoEncoder

TAU_INIT = 1.0 / 0.07  # CLIP-family convention; clamped to TAU_MAX in use


@dataclass
class PromptSpec:
    """Shape settings for the prompt parameters."""

    context_length: int = 5
    class_length: int = 4
    num_bases: int = 4
    token_dim: int = 768
    ordinal: bool = True


@dataclass
class ModelState:
    aggregator: AggregatorConfig
    head: LinearHead
    prompt_params: PromptParams
    encoder: PseudoEncoder
    log_tau: ad.Tensor
    priors: PriorSet | None = None
    attention: AttentionScorer | None = None

    def parameters(self) -> dict:
        """Learnable tensors in a fixed, documented order."""
        params: dict[str, ad.Tensor] = {}
        if self.priors is not None:
            params["prior_offsets"] = self.priors.offsets
        params["context_tokens"] = self.prompt_params.context_tokens
        for i, tok in enumerate(self.prompt_params.class_tokens):
            params[f"class_tokens_{i}"] = tok
        params["head_weight"] = self.head.weight
        params["head_bias"] = self.head.bias
        params["log_tau"] = self.log_tau
        if self.attention is not None:
            params["attn_v_weight"] = self.attention.v_weight
            params["attn_v_bias"] = self.attention.v_bias
            params["attn_w_weight"] = self.attention.w_weight
        return params

    def frozen_arrays(self) -> dict:
        out = {"encoder_projection": self.encoder.projection}
        if self.priors is not None:
            out["prior_base"] = self.priors.base_embeddings
        return out

    def tau(self) -> ad.Tensor:
        return ad.clamp_max(ad.exp(self.log_tau), TAU_MAX)

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()


def _param(rng, shape):
    return ad.Tensor(rng.standard_normal(shape), requires_grad=True)


def init_model_state(
    feature_dim: int,
    num_classes: int,
    aggregator: AggregatorConfig,
    prompt_spec: PromptSpec,
    prior_base: np.ndarray | None = None,
    prior_texts: list | None = None,
    num_prototypes: int | None = None,
    seed: int = 0,
    encoder_seed: int | None = None,
) -> ModelState:
    """Build a model with seeded parameter initialization.

    Prior-guided aggregation needs `prior_base` (the frozen M x D prior
    embeddings); the prototype ablation draws a fully learnable matrix of
    `num_prototypes` rows instead; attention needs neither.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    priors = None
    attention = None
    if aggregator.kind == PRIOR_GUIDED:
        if prior_base is None:
            raise ValueError("prior-guided aggregation requires prior_base")
        base = np.asarray(prior_base, dtype=np.float64)
        offsets = ad.Tensor(np.zeros_like(base), requires_grad=True)
        priors = PriorSet(base, offsets, texts=list(prior_texts or []))
    elif aggregator.kind == PROTOTYPES:
        m = num_prototypes or (prior_base.shape[0] if prior_base is not None else None)
        if m is None:
            raise ValueError("prototype ablation requires num_prototypes")
        base = np.zeros((m, feature_dim))
        offsets = _param(rng, (m, feature_dim))
        priors = PriorSet(base, offsets, texts=[f"prototype_{i}" for i in range(m)])
    elif aggregator.kind == ATTENTION:
        h = aggregator.attention_hidden
        attention = AttentionScorer(
            v_weight=ad.Tensor(
                rng.standard_normal((h, feature_dim)) / np.sqrt(feature_dim),
                requires_grad=True,
            ),
            v_bias=ad.Tensor(np.zeros(h), requires_grad=True),
            w_weight=ad.Tensor(rng.standard_normal(h) / np.sqrt(h), requires_grad=True),
        )
    else:
        raise ValueError(f"unknown aggregator kind {aggregator.kind!r}")

    context = _param(rng, (prompt_spec.context_length, prompt_spec.token_dim))
    n_tensors = prompt_spec.num_bases if prompt_spec.ordinal else num_classes
    class_tokens = [
        _param(rng, (prompt_spec.class_length, prompt_spec.token_dim))
        for _ in range(n_tensors)
    ]
    prompt_params = PromptParams(
        context_tokens=context,
        class_tokens=class_tokens,
        num_classes=num_classes,
        ordinal=prompt_spec.ordinal,
        phrases={
            "context": "a histopathology image suggesting",
            "bases": [
                "a very poor prognosis",
                "a poor prognosis",
                "a good prognosis",
                "a very good prognosis",
            ][: prompt_spec.num_bases],
        },
    )
    # identity-initialized head keeps the pooled representation at step 0
    head = LinearHead(
        weight=ad.Tensor(np.eye(feature_dim), requires_grad=True),
        bias=ad.Tensor(np.zeros(feature_dim), requires_grad=True),
    )
    encoder = PseudoEncoder(
        seed=encoder_seed if encoder_seed is not None else seed + 1,
        token_dim=prompt_spec.token_dim,
        out_dim=feature_dim,
    )
    log_tau = ad.Tensor(np.log(TAU_INIT), requires_grad=True)
    return ModelState(
        aggregator=aggregator,
        head=head,
        prompt_params=prompt_params,
        encoder=encoder,
        log_tau=log_tau,
        priors=priors,
        attention=attention,
    )


def image_representation(state: ModelState, bag) -> tuple:
    """(f_image, pooled) for one bag; pooled is None for attention pooling."""
    if state.aggregator.kind == ATTENTION:
        pooled_vec = attention_pool(bag, state.attention)
        return state.head.apply(pooled_vec), None
    pooled = prior_guided_pool(effective_priors(state.priors), bag, state.aggregator.alpha)
    return fuse(pooled, state.head), pooled


def forward(state: ModelState, bag) -> dict:
    """Full differentiable forward pass for one bag."""
    f_image, pooled = image_representation(state, bag)
    prompt_matrix = survival_prompts(state.prompt_params, state.encoder)
    tau = state.tau()
    out = {
        "f_image": f_image,
        "pooled": pooled,
        "prompts": prompt_matrix,
        "tau": tau,
    }
    return out


def bag_loss(state: ModelState, bag, label: DiscreteLabel, loss_config: LossConfig,
             tau_prime: float) -> ad.Tensor:
    """Loss for one bag.  `tau_prime` is the detached temperature snapshot
    used to build the EMD target; it carries no gradient by construction."""
    parts = forward(state, bag)
    if loss_config.head == HAZARD:
        pred = hazard_probs(parts["f_image"], parts["prompts"], parts["tau"])
    else:
        pred = incidence_distribution(parts["f_image"], parts["prompts"], parts["tau"])
    return total_loss(pred, label, loss_config, tau_prime)


def loss_backward(loss: ad.Tensor, state: ModelState) -> dict:
    """Gradients for every learnable parameter (zeros where unreached)."""
    state.zero_grad()
    loss.backward()
    grads = {}
    for name, p in state.parameters().items():
        grads[name] = (
            np.zeros_like(p.value) if p.grad is None else np.asarray(p.grad, dtype=np.float64)
        )
    return grads


def tau_snapshot(state: ModelState) -> float:
    """Current clamped temperature as a plain float (for EMD targets)."""
    return float(min(np.exp(state.log_tau.value), TAU_MAX))
