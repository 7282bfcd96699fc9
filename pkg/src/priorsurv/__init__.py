"""Discrete-time survival analysis on precomputed embedding bags.

Prior-guided multi-instance aggregation, ordinal survival prompts, incidence
prediction with likelihood + squared-EMD training, exact Shapley
interpretation, and a censoring-aware metrics suite.
"""

from .aggregation import (
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
from .embeddings import PseudoEncoder, load_embeddings, pseudo_encode, save_embeddings
from .labels import (
    DiscreteLabel,
    KMCurve,
    SurvivalRecord,
    TimeGrid,
    assign_class,
    build_time_grid,
    estimate_censored_class,
    few_shot_sample,
    kaplan_meier,
    target_distribution,
)
from .losses import LossConfig, emd_loss, emd_measure, hazard_nll, mle_loss, total_loss
from .metrics import (
    DCalResult,
    EvaluationReport,
    LogrankResult,
    chi_square_sf,
    cohort_mae,
    concordance_index,
    d_calibration,
    mae,
    risk_grouping_logrank,
)
from .model import ModelState, PromptSpec, init_model_state
from .prediction import (
    HazardResult,
    IncidenceResult,
    expected_time,
    hazard_head,
    incidence,
    risk_score,
    survival_at_time,
)
from .prompts import (
    OrdinalityReport,
    PromptParams,
    class_prompt_tokens,
    default_distance,
    interpolation_weights,
    prompt_ordinality_report,
    survival_prompts,
)
from .interpretation import ShapleyReport, shapley_exact, top_instances
from .synth import SynthCohort, SynthConfig, generate, generate_cohort, oracle_ci
from .trainer import Dataset, OptimizerState, TrainConfig, adam_step, train

__version__ = "0.1.0"
