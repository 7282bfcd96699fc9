"""Synthetic cohorts with a known latent risk structure.

Each patient gets a latent risk r ~ N(0, 1).  A fraction of their instances
proportional to sigmoid(signal_strength * r) carries signal aligned with one
of M orthonormal prototype directions; the rest is isotropic noise.  Event times are
exponential with rate exp(risk_sharpness * r) / baseline_scale, so the true
risk ordering is exactly r and the concordance ceiling is computable.
Censoring times are uniform on (0, q) with q calibrated so the realized
censoring fraction matches the target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .labels import SurvivalRecord
from .metrics import concordance_index

# Proportionality constant between sigmoid(signal_strength * r) and the
# realized signal fraction.  Kept well below 1 so prognostic evidence stays
# concentrated in a minority of instances: bag-mean pooling then dilutes it
# among the noise rows, while prior-matched pooling can still isolate it.
SIGNAL_FRACTION_MAX = 0.3


@dataclass
class SynthConfig:
    n_patients: int = 400
    k_min: int = 20
    k_max: int = 60
    dim: int = 64
    n_prototypes: int = 4
    signal_strength: float = 2.0
    censoring_rate: float = 0.3
    baseline_scale: float = 60.0
    risk_sharpness: float = 3.5
    seed: int = 0

    def __post_init__(self):
        if self.k_min < 1 or self.k_max < self.k_min:
            raise ValueError("need 1 <= k_min <= k_max")
        if not 0 <= self.censoring_rate < 1:
            raise ValueError("censoring_rate must lie in [0, 1)")
        if self.signal_strength < 0:
            raise ValueError("signal_strength must be nonnegative")
        if self.n_prototypes < 1 or self.n_prototypes > self.dim:
            raise ValueError("need 1 <= n_prototypes <= dim")


@dataclass
class SynthCohort:
    records: list
    bags: dict  # patient_id -> (K, dim) float64
    prototypes: np.ndarray  # (M, dim), orthonormal rows
    latent_risks: dict  # patient_id -> true risk r
    config: SynthConfig = field(repr=False, default=None)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate_cohort(config: SynthConfig) -> SynthCohort:
    """Draw a cohort in memory; byte-stable under the seed."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed)))
    protos, _ = np.linalg.qr(rng.standard_normal((config.dim, config.n_prototypes)))
    protos = protos.T.copy()  # (M, dim), orthonormal rows

    n = config.n_patients
    risks = rng.standard_normal(n)
    event_times = (
        rng.exponential(1.0, size=n)
        * config.baseline_scale
        / np.exp(config.risk_sharpness * risks)
    )
    censor_draws = rng.uniform(0.0, 1.0, size=n)

    bags = {}
    records = []
    latent = {}
    sizes = rng.integers(config.k_min, config.k_max + 1, size=n)
    frac = SIGNAL_FRACTION_MAX * _sigmoid(config.signal_strength * risks)
    for i in range(n):
        pid = f"P{i:05d}"
        k = int(sizes[i])
        bag = rng.standard_normal((k, config.dim)) / np.sqrt(config.dim)
        n_signal = int(np.rint(k * frac[i]))
        if n_signal:
            which = rng.choice(k, size=n_signal, replace=False)
            assigned = rng.integers(0, config.n_prototypes, size=n_signal)
            bag[which] += protos[assigned]
        bags[pid] = bag
        latent[pid] = float(risks[i])

    if config.censoring_rate > 0:
        # censor time u*q < T censors; pick q at the (1 - rate) quantile of T/u
        ratio = event_times / censor_draws
        q = float(np.quantile(ratio, 1.0 - config.censoring_rate))
        censor_times = censor_draws * q
        observed = np.minimum(event_times, censor_times)
        events = (event_times <= censor_times).astype(int)
    else:
        observed = event_times
        events = np.ones(n, dtype=int)

    for i in range(n):
        pid = f"P{i:05d}"
        records.append(
            SurvivalRecord(
                patient_id=pid,
                time=float(observed[i]),
                event=int(events[i]),
                bag_path=f"bags/{pid}.vlsb",
            )
        )
    return SynthCohort(
        records=records,
        bags=bags,
        prototypes=protos,
        latent_risks=latent,
        config=config,
    )


def generate(config: SynthConfig, out_dir) -> SynthCohort:
    """Generate a cohort and write manifest, bag files, prototypes, and the
    latent-risk sidecar (used only by oracle_ci, never by training)."""
    from .embeddings import save_embeddings
    from .io import write_manifest

    cohort = generate_cohort(config)
    out = Path(out_dir)
    (out / "bags").mkdir(parents=True, exist_ok=True)
    for pid, bag in cohort.bags.items():
        save_embeddings(out / "bags" / f"{pid}.vlsb", bag)
    save_embeddings(out / "prototypes.vlsb", cohort.prototypes)
    write_manifest(out / "manifest.csv", cohort.records)
    with open(out / "latent_risks.json", "w") as fh:
        json.dump(cohort.latent_risks, fh, indent=0, sort_keys=True)
    return cohort


def oracle_ci(cohort: SynthCohort, records=None) -> float:
    """Concordance of the true latent risk against the observed outcomes.

    This is the achievable ceiling: event times are exponential with a rate
    strictly monotone in the latent risk, so no predictor ordering can beat
    the latent ordering in expectation.
    """
    records = list(records) if records is not None else cohort.records
    risks = [cohort.latent_risks[r.patient_id] for r in records]
    return concordance_index(risks, records)
