"""Finite-difference validation of the analytic gradients.

Builds a tiny problem (a few instances, priors, classes) and compares the
backward-pass gradient of every learnable parameter group against central
finite differences of the total loss.  The temperature snapshot used by the
EMD target is computed once and held fixed, matching its no-gradient
contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import AggregatorConfig
from .labels import DiscreteLabel
from .losses import LossConfig
from .model import (
    ModelState,
    PromptSpec,
    bag_loss,
    init_model_state,
    loss_backward,
    tau_snapshot,
)

DEFAULT_TOLERANCE = 1e-4


@dataclass
class GroupResult:
    name: str
    rel_error: float
    passed: bool


def build_tiny_problem(k=5, m=2, c=3, d=8, token_dim=12, kind="prior", seed=123):
    """A small model, bag, and label pair (one event, one censored)."""
    rng = np.random.Generator(np.random.Philox(seed))
    prior_base = rng.standard_normal((m, d))
    bag = rng.standard_normal((k, d))
    state = init_model_state(
        feature_dim=d,
        num_classes=c,
        aggregator=AggregatorConfig(kind=kind, alpha=3.0, attention_hidden=4),
        prompt_spec=PromptSpec(context_length=2, class_length=2, num_bases=2,
                               token_dim=token_dim, ordinal=True),
        prior_base=prior_base if kind == "prior" else None,
        num_prototypes=m,
        seed=seed,
    )
    labels = [DiscreteLabel(klass=2, event=1), DiscreteLabel(klass=2, event=0)]
    return state, bag, labels


def _total_loss_value(state, bag, labels, loss_cfg, tau_prime) -> float:
    total = 0.0
    for label in labels:
        total += float(bag_loss(state, bag, label, loss_cfg, tau_prime).value)
    return total


def run_gradcheck(state: ModelState, bag, labels, loss_cfg=None, h=1e-6,
                  tolerance=DEFAULT_TOLERANCE, break_group=None) -> list:
    """Per-group relative error between analytic and central-difference grads.

    `break_group` perturbs that group's analytic gradient (negative control:
    the comparison must then fail for exactly that group).
    """
    loss_cfg = loss_cfg or LossConfig(beta=1.0)
    tau_prime = tau_snapshot(state)

    analytic = {}
    for label in labels:
        loss = bag_loss(state, bag, label, loss_cfg, tau_prime)
        grads = loss_backward(loss, state)
        for name, g in grads.items():
            analytic[name] = analytic.get(name, 0.0) + g

    results = []
    for name, p in state.parameters().items():
        flat = p.value.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _total_loss_value(state, bag, labels, loss_cfg, tau_prime)
            flat[i] = orig - h
            down = _total_loss_value(state, bag, labels, loss_cfg, tau_prime)
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * h)
        a = np.asarray(analytic[name]).reshape(-1)
        if name == break_group:
            a = a * 1.05 + 1e-3
        denom = max(np.linalg.norm(fd), np.linalg.norm(a), 1e-12)
        rel = float(np.linalg.norm(a - fd) / denom)
        results.append(GroupResult(name=name, rel_error=rel, passed=rel < tolerance))
    return results
