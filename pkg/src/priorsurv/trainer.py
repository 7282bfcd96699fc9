"""Training loop: Adam with decoupled weight decay and gradient accumulation.

One bag per step; gradients are averaged over each accumulation window and
applied in a single update.  Everything is float64 and deterministic under
the config seed (fixed shuffle order, fixed reduction order).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregation import AggregatorConfig
from .labels import DiscreteLabel, SurvivalRecord, TimeGrid, assign_class, build_time_grid
from .losses import LossConfig
from .model import ModelState, PromptSpec, bag_loss, init_model_state, loss_backward, tau_snapshot

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 2e-4
    weight_decay: float = 1e-5
    accumulation_steps: int = 32
    seed: int = 0
    beta: float = 1.0
    use_emd: bool = True
    head: str = "incidence"
    scheme: str = "uniform"
    num_bins: int | None = None
    aggregator: str = "prior"
    alpha: float = 100.0
    attention_hidden: int = 128
    ordinal_prompts: bool = True
    context_length: int = 5
    class_length: int = 4
    num_base_prompts: int = 4
    token_dim: int = 768

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.accumulation_steps < 1:
            raise ValueError("accumulation_steps must be >= 1")

    def loss_config(self) -> LossConfig:
        return LossConfig(beta=self.beta, use_emd=self.use_emd, head=self.head)

    def aggregator_config(self) -> AggregatorConfig:
        return AggregatorConfig(
            kind=self.aggregator,
            alpha=self.alpha,
            attention_hidden=self.attention_hidden,
        )

    def prompt_spec(self) -> PromptSpec:
        return PromptSpec(
            context_length=self.context_length,
            class_length=self.class_length,
            num_bases=self.num_base_prompts,
            token_dim=self.token_dim,
            ordinal=self.ordinal_prompts,
        )


@dataclass
class OptimizerState:
    """Adam moment accumulators, one pair per parameter."""

    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, opt: OptimizerState, lr: float, wd: float):
    """One Adam update with decoupled weight decay (applied before the step)."""
    opt.step += 1
    t = opt.step
    for name, p in params.items():
        g = grads[name]
        if name not in opt.first:
            opt.first[name] = np.zeros_like(p.value)
            opt.second[name] = np.zeros_like(p.value)
        if wd:
            p.value = p.value - lr * wd * p.value
        m = opt.first[name] = ADAM_BETA1 * opt.first[name] + (1 - ADAM_BETA1) * g
        v = opt.second[name] = ADAM_BETA2 * opt.second[name] + (1 - ADAM_BETA2) * g * g
        m_hat = m / (1 - ADAM_BETA1**t)
        v_hat = v / (1 - ADAM_BETA2**t)
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


@dataclass
class TrainResult:
    state: ModelState
    grid: TimeGrid
    history: list  # one dict per epoch: {"epoch", "mean_loss", ...}


class Dataset:
    """Training cohort: records plus a bag loader.

    `bags` maps patient_id to a (K, D) float array, or `loader` is a
    callable patient_id -> array (for file-backed bags).
    """

    def __init__(self, records, bags=None, loader=None):
        self.records = list(records)
        if not self.records:
            raise ValueError("empty dataset")
        if (bags is None) == (loader is None):
            raise ValueError("provide exactly one of bags or loader")
        self._bags = bags
        self._loader = loader

    def bag(self, patient_id: str) -> np.ndarray:
        if self._bags is not None:
            return np.asarray(self._bags[patient_id], dtype=np.float64)
        return np.asarray(self._loader(patient_id), dtype=np.float64)

    def feature_dim(self) -> int:
        return self.bag(self.records[0].patient_id).shape[1]


def train(
    dataset: Dataset,
    config: TrainConfig,
    prior_base: np.ndarray | None = None,
    prior_texts: list | None = None,
    num_prototypes: int | None = None,
    grid: TimeGrid | None = None,
    state: ModelState | None = None,
    epoch_callback=None,
) -> TrainResult:
    """Optimize a model over the dataset.

    The time grid is built from the provided records when not given (train
    split only, to avoid leakage).  `epoch_callback(epoch, state, grid)` may
    return a dict merged into the history row (e.g. validation metrics).
    """
    if not any(r.event == 1 for r in dataset.records):
        raise ValueError("training requires at least one uncensored record")
    if grid is None:
        grid = build_time_grid(dataset.records, scheme=config.scheme, num_bins=config.num_bins)
    if state is None:
        m = None
        if config.aggregator == "prototypes":
            m = num_prototypes or (prior_base.shape[0] if prior_base is not None else 8)
        state = init_model_state(
            feature_dim=dataset.feature_dim(),
            num_classes=grid.num_classes,
            aggregator=config.aggregator_config(),
            prompt_spec=config.prompt_spec(),
            prior_base=prior_base,
            prior_texts=prior_texts,
            num_prototypes=m,
            seed=config.seed,
        )
    loss_cfg = config.loss_config()
    labels = {r.patient_id: assign_class(r, grid) for r in dataset.records}
    params = state.parameters()
    opt = OptimizerState()
    rng = np.random.default_rng(config.seed)
    history = []
    n = len(dataset.records)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        acc = {name: np.zeros_like(p.value) for name, p in params.items()}
        window = 0
        losses = []
        for step, idx in enumerate(order):
            record = dataset.records[int(idx)]
            bag = dataset.bag(record.patient_id)
            loss = bag_loss(state, bag, labels[record.patient_id], loss_cfg, tau_snapshot(state))
            value = float(loss.value)
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss {value} at epoch {epoch}, step {step}, "
                    f"patient {record.patient_id}"
                )
            losses.append(value)
            grads = loss_backward(loss, state)
            for name in acc:
                acc[name] += grads[name]
            window += 1
            if window == config.accumulation_steps:
                _apply(params, acc, window, opt, config)
                window = 0
        if window:
            _apply(params, acc, window, opt, config)
        row = {"epoch": epoch, "mean_loss": float(np.mean(losses))}
        if epoch_callback is not None:
            extra = epoch_callback(epoch, state, grid)
            if extra:
                row.update(extra)
        history.append(row)
    return TrainResult(state=state, grid=grid, history=history)


def _apply(params, acc, window, opt, config):
    grads = {name: g / window for name, g in acc.items()}
    adam_step(params, grads, opt, config.learning_rate, config.weight_decay)
    for g in acc.values():
        g.fill(0.0)
