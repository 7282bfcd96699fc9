"""File formats: manifest CSV, grid JSON, checkpoints, reports.

A checkpoint is a single file:

    u32 LE header length | UTF-8 JSON header | VLSB blobs, back to back

The header lists every tensor (name, shape, frozen flag) in blob order plus
the grid, the training configuration echo, the encoder seed, and the prior
texts, so evaluation needs nothing but the checkpoint and a manifest.
JSON is serialized with sorted keys and no timestamps, which keeps repeated
runs byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .aggregation import AggregatorConfig, AttentionScorer, LinearHead, PriorSet
from .embeddings import MAGIC, VERSION, PseudoEncoder, load_embeddings
from .labels import KMCurve, SurvivalRecord, TimeGrid
from .model import ModelState, PromptSpec
from .prompts import PromptParams
from .trainer import TrainConfig

CHECKPOINT_FORMAT = "priorsurv-checkpoint-v1"


# -- manifest ----------------------------------------------------------------

MANIFEST_COLUMNS = ["patient_id", "bag_path", "time_months", "event"]


def write_manifest(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            writer.writerow([r.patient_id, r.bag_path or "", f"{r.time:.10g}", r.event])


def read_manifest(path) -> list:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: manifest missing columns {sorted(missing)}")
        records = [
            SurvivalRecord(
                patient_id=row["patient_id"],
                time=float(row["time_months"]),
                event=int(row["event"]),
                bag_path=row["bag_path"] or None,
            )
            for row in reader
        ]
    if not records:
        raise ValueError(f"{path}: empty manifest")
    return records


def bag_loader(manifest_path):
    """patient_id -> bag array, resolving bag paths relative to the manifest."""
    root = Path(manifest_path).parent
    records = {r.patient_id: r for r in read_manifest(manifest_path)}

    def load(patient_id: str) -> np.ndarray:
        record = records[patient_id]
        if not record.bag_path:
            raise ValueError(f"{patient_id}: no bag path in manifest")
        return load_embeddings(root / record.bag_path)

    return load


# -- grid --------------------------------------------------------------------

def grid_to_json(grid: TimeGrid) -> str:
    return json.dumps({"scheme": grid.scheme, "cuts": list(grid.cuts)}, sort_keys=True)


def grid_from_json(text: str) -> TimeGrid:
    data = json.loads(text)
    return TimeGrid(cuts=tuple(data["cuts"]), scheme=data["scheme"])


def save_grid(path, grid: TimeGrid) -> None:
    Path(path).write_text(grid_to_json(grid))


def load_grid(path) -> TimeGrid:
    return grid_from_json(Path(path).read_text())


# -- checkpoints ---------------------------------------------------------------

_LEN = struct.Struct("<I")


def _blob(array) -> bytes:
    a = np.asarray(array, dtype=np.float64)
    flat = a.reshape(1, -1) if a.ndim != 2 else a
    rows, dim = flat.shape
    head = struct.pack("<4sBII", MAGIC, VERSION, rows, dim)
    return head + np.ascontiguousarray(flat, dtype="<f4").tobytes()


def _read_blob(fh) -> np.ndarray:
    head = fh.read(13)
    magic, version, rows, dim = struct.unpack("<4sBII", head)
    if magic != MAGIC or version != VERSION:
        raise ValueError("corrupt checkpoint blob")
    payload = fh.read(rows * dim * 4)
    if len(payload) != rows * dim * 4:
        raise ValueError("truncated checkpoint blob")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, dim).astype(np.float64)


def save_checkpoint(path, state: ModelState, grid: TimeGrid, train_config: TrainConfig,
                    extra=None) -> None:
    tensors = []
    blobs = []
    for name, p in state.parameters().items():
        tensors.append({"name": name, "shape": list(p.value.shape), "frozen": False})
        blobs.append(_blob(p.value))
    if state.priors is not None:
        tensors.append(
            {"name": "prior_base", "shape": list(state.priors.base_embeddings.shape),
             "frozen": True}
        )
        blobs.append(_blob(state.priors.base_embeddings))
    header = {
        "format": CHECKPOINT_FORMAT,
        "tensors": tensors,
        "grid": {"scheme": grid.scheme, "cuts": list(grid.cuts)},
        "train_config": dataclasses.asdict(train_config),
        "encoder": {
            "seed": state.encoder.seed,
            "token_dim": state.encoder.token_dim,
            "out_dim": state.encoder.out_dim,
        },
        "aggregator": dataclasses.asdict(state.aggregator),
        "ordinal": state.prompt_params.ordinal,
        "num_classes": state.prompt_params.num_classes,
        "prior_texts": list(state.priors.texts) if state.priors is not None else [],
        "extra": extra or {},
    }
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_LEN.pack(len(payload)))
        fh.write(payload)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path):
    """Rebuild (state, grid, train_config, header) from a checkpoint file."""
    with open(path, "rb") as fh:
        (n,) = _LEN.unpack(fh.read(_LEN.size))
        header = json.loads(fh.read(n).decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        arrays = {}
        for meta in header["tensors"]:
            arrays[meta["name"]] = _read_blob(fh).reshape(meta["shape"])

    grid = TimeGrid(cuts=tuple(header["grid"]["cuts"]), scheme=header["grid"]["scheme"])
    train_config = TrainConfig(**header["train_config"])
    aggregator = AggregatorConfig(**header["aggregator"])
    encoder = PseudoEncoder(**header["encoder"])

    def learnable(name):
        return ad.Tensor(arrays[name], requires_grad=True)

    priors = None
    if "prior_base" in arrays:
        priors = PriorSet(
            base_embeddings=arrays["prior_base"],
            offsets=learnable("prior_offsets"),
            texts=list(header.get("prior_texts", [])),
        )
    attention = None
    if "attn_v_weight" in arrays:
        attention = AttentionScorer(
            v_weight=learnable("attn_v_weight"),
            v_bias=ad.Tensor(arrays["attn_v_bias"].reshape(-1), requires_grad=True),
            w_weight=ad.Tensor(arrays["attn_w_weight"].reshape(-1), requires_grad=True),
        )
    class_names = sorted(
        (m["name"] for m in header["tensors"] if m["name"].startswith("class_tokens_")),
        key=lambda s: int(s.rsplit("_", 1)[1]),
    )
    prompt_params = PromptParams(
        context_tokens=learnable("context_tokens"),
        class_tokens=[learnable(n) for n in class_names],
        num_classes=int(header["num_classes"]),
        ordinal=bool(header["ordinal"]),
    )
    head = LinearHead(
        weight=learnable("head_weight"),
        bias=ad.Tensor(arrays["head_bias"].reshape(-1), requires_grad=True),
    )
    log_tau = ad.Tensor(float(arrays["log_tau"].reshape(())), requires_grad=True)
    state = ModelState(
        aggregator=aggregator,
        head=head,
        prompt_params=prompt_params,
        encoder=encoder,
        log_tau=log_tau,
        priors=priors,
        attention=attention,
    )
    return state, grid, train_config, header


# -- reports -------------------------------------------------------------------

def write_km_csv(path, km: KMCurve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "survival", "at_risk", "deaths"])
        for row in zip(km.times, km.survival, km.at_risk, km.deaths):
            writer.writerow([f"{row[0]:.10g}", f"{row[1]:.12g}", int(row[2]), int(row[3])])


def write_predictions_csv(path, rows, num_classes: int) -> None:
    """rows: iterable of (patient_id, y_hat vector, risk, expected_time)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["patient_id"]
            + [f"y_hat_{c}" for c in range(1, num_classes + 1)]
            + ["risk", "expected_time"]
        )
        for pid, y_hat, risk, exp_t in rows:
            writer.writerow(
                [pid] + [f"{v:.12g}" for v in y_hat] + [f"{risk:.12g}", f"{exp_t:.12g}"]
            )


def read_predictions_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: empty predictions file")
    y_cols = sorted(
        (c for c in rows[0] if c.startswith("y_hat_")), key=lambda s: int(s.split("_")[-1])
    )
    out = []
    for row in rows:
        out.append(
            {
                "patient_id": row["patient_id"],
                "y_hat": np.array([float(row[c]) for c in y_cols]),
                "risk": float(row["risk"]),
                "expected_time": float(row["expected_time"]),
            }
        )
    return out


def write_report_json(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")


def write_training_log(path, history) -> None:
    if not history:
        return
    keys = ["epoch", "mean_loss"] + sorted(
        k for k in history[0] if k not in ("epoch", "mean_loss")
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for row in history:
            writer.writerow([row.get(k, "") for k in keys])


def write_shapley_csv(path, report, top_fmt="%.12g") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["prior_index", "prior_text", "phi", "baseline_risk", "full_risk"])
        for i, (text, phi) in enumerate(zip(report.prior_texts, report.contributions)):
            writer.writerow(
                [i, text, f"{phi:.12g}", f"{report.baseline_risk:.12g}",
                 f"{report.full_risk:.12g}"]
            )


def write_evidence_csv(path, rows) -> None:
    """rows: iterable of (prior_index, instance_index, weight)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["prior_index", "instance_index", "weight"])
        for prior_index, instance_index, weight in rows:
            writer.writerow([int(prior_index), int(instance_index), f"{weight:.12g}"])
