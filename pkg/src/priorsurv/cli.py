"""Command-line interface.

Subcommands: synth, train, eval, interpret, km, gradcheck.  Options can be
given as flags or collected in a JSON config file (flags win).  The
PRIORSURV_OUT environment variable supplies a default output directory.
Every command is deterministic given its full flag set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import evaluate as ev
from . import io as pio
from .embeddings import load_embeddings
from .gradcheck import build_tiny_problem, run_gradcheck
from .interpretation import shapley_exact, top_instances
from .labels import kaplan_meier
from .metrics import risk_grouping_logrank
from .model import image_representation, tau_snapshot
from .prompts import survival_prompts
from .synth import SynthConfig, generate
from .trainer import Dataset, TrainConfig, train
from . import autodiff as ad
from .aggregation import effective_priors

ENV_OUT = "PRIORSURV_OUT"

ABLATIONS = (
    "no-ordinal-prompts",
    "no-emd",
    "attention",
    "prototypes",
    "hazard-head",
    "quantile-bins",
)


def _default_out(args, parser):
    if args.out is None:
        args.out = os.environ.get(ENV_OUT)
    if args.out is None:
        parser.error(f"--out is required (or set {ENV_OUT})")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_fold(text):
    try:
        index, count = text.split("/")
        index, count = int(index), int(count)
    except ValueError:
        raise argparse.ArgumentTypeError(f"fold must look like '0/5', got {text!r}")
    if not 0 <= index < count:
        raise argparse.ArgumentTypeError(f"fold index {index} outside [0, {count})")
    return index, count


def _merge_config(args, parser, keys):
    """Apply config-file values for flags the user did not set explicitly."""
    if getattr(args, "config", None):
        file_values = json.loads(Path(args.config).read_text())
        unknown = set(file_values) - set(keys)
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        for key, value in file_values.items():
            if getattr(args, key, None) is None:
                setattr(args, key, value)
    return args


def _apply_ablations(args, train_kwargs, parser):
    for token in args.ablation or []:
        token = token.strip()
        if token.startswith("bins"):
            tail = token[4:].lstrip("= ").strip()
            if not tail.isdigit():
                parser.error(f"--ablation bins needs a count, got {token!r}")
            train_kwargs["num_bins"] = int(tail)
        elif token == "no-ordinal-prompts":
            train_kwargs["ordinal_prompts"] = False
        elif token == "no-emd":
            train_kwargs["beta"] = 0.0
            train_kwargs["use_emd"] = False
        elif token == "attention":
            train_kwargs["aggregator"] = "attention"
        elif token == "prototypes":
            train_kwargs["aggregator"] = "prototypes"
        elif token == "hazard-head":
            train_kwargs["head"] = "hazard"
        elif token == "quantile-bins":
            train_kwargs["scheme"] = "quantile"
        else:
            parser.error(f"unknown ablation {token!r} (choose from {ABLATIONS} or 'bins N')")
    return train_kwargs


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args, parser) -> int:
    out = _default_out(args, parser)
    config = SynthConfig(
        n_patients=args.n,
        k_min=args.k_min,
        k_max=args.k_max,
        dim=args.dim,
        n_prototypes=args.prototypes,
        signal_strength=args.signal,
        censoring_rate=args.censoring,
        baseline_scale=args.baseline_scale,
        risk_sharpness=args.sharpness,
        seed=args.seed,
    )
    cohort = generate(config, out)
    n_events = sum(r.event for r in cohort.records)
    print(
        f"synth: wrote {len(cohort.records)} patients "
        f"({n_events} events, censoring {1 - n_events / len(cohort.records):.2f}) to {out}"
    )
    return 0


def _split_records(records, fold, seed):
    if fold is None:
        return records, []
    index, count = fold
    folds = ev.kfold_indices(len(records), count, seed)
    test_idx = set(int(i) for i in folds[index])
    train_recs = [r for i, r in enumerate(records) if i not in test_idx]
    test_recs = [r for i, r in enumerate(records) if i in test_idx]
    return train_recs, test_recs


TRAIN_KEYS = (
    "epochs", "lr", "wd", "accum", "seed", "beta", "alpha", "bins", "scheme",
    "split_seed", "token_dim", "context_length", "class_length", "num_bases",
    "attention_hidden",
)


def cmd_train(args, parser) -> int:
    _merge_config(args, parser, TRAIN_KEYS)
    out = _default_out(args, parser)
    records = pio.read_manifest(args.manifest)
    loader = pio.bag_loader(args.manifest)
    train_recs, test_recs = _split_records(records, args.fold, args.split_seed or 0)

    kwargs = dict(
        epochs=args.epochs if args.epochs is not None else 10,
        learning_rate=args.lr if args.lr is not None else 2e-4,
        weight_decay=args.wd if args.wd is not None else 1e-5,
        accumulation_steps=args.accum if args.accum is not None else 32,
        seed=args.seed if args.seed is not None else 0,
        beta=args.beta if args.beta is not None else 1.0,
        alpha=args.alpha if args.alpha is not None else 100.0,
        num_bins=args.bins,
        scheme=args.scheme or "uniform",
        token_dim=args.token_dim if args.token_dim is not None else 768,
        context_length=args.context_length if args.context_length is not None else 5,
        class_length=args.class_length if args.class_length is not None else 4,
        num_base_prompts=args.num_bases if args.num_bases is not None else 4,
        attention_hidden=args.attention_hidden if args.attention_hidden is not None else 128,
    )
    kwargs = _apply_ablations(args, kwargs, parser)
    config = TrainConfig(**kwargs)

    prior_base = None
    prior_texts = None
    if config.aggregator == "prior":
        if not args.priors:
            parser.error("prior-guided training requires --priors (VLSB file)")
        prior_base = load_embeddings(args.priors).astype(np.float64)
    if args.phrases:
        phrases = json.loads(Path(args.phrases).read_text())
        prior_texts = phrases.get("priors")

    dataset = Dataset(train_recs, loader=lambda pid: loader(pid))

    callback = None
    if test_recs:
        def callback(epoch, state, grid):
            preds = ev.predict_cohort(state, grid, test_recs, loader, head=config.head)
            report = ev.evaluate_cohort(preds, test_recs, grid)
            return {"val_ci": round(report["ci"], 6)}

    result = train(
        dataset,
        config,
        prior_base=prior_base,
        prior_texts=prior_texts,
        num_prototypes=args.prototypes,
        epoch_callback=callback,
    )
    ckpt = out / "checkpoint.ckpt"
    pio.save_checkpoint(ckpt, result.state, result.grid, config,
                        extra={"fold": list(args.fold) if args.fold else None})
    pio.save_grid(out / "grid.json", result.grid)
    pio.write_training_log(out / "train_log.csv", result.history)
    print(
        f"train: {len(train_recs)} patients, C={result.grid.num_classes}, "
        f"beta={config.beta}, aggregator={config.aggregator}, head={config.head}, "
        f"final loss {result.history[-1]['mean_loss']:.4f} -> {ckpt}"
    )
    return 0


def cmd_eval(args, parser) -> int:
    out = _default_out(args, parser)
    if args.aggregate:
        reports = [json.loads(Path(p).read_text()) for p in args.aggregate]
        merged = {
            "n_folds": len(reports),
            "ci": float(np.mean([r["ci"] for r in reports])),
            "mae": float(np.mean([r["mae"] for r in reports])),
            "dcal_passes": sum(
                1 for r in reports if r.get("dcal") and r["dcal"]["pvalue"] > 0.05
            ),
        }
        pio.write_report_json(out / "report_aggregate.json", merged)
        print(f"eval: aggregated {len(reports)} folds, mean CI {merged['ci']:.4f}")
        return 0

    if not args.checkpoint or not args.manifest:
        parser.error("eval requires --checkpoint and --manifest (or --aggregate)")
    state, grid, train_config, header = pio.load_checkpoint(args.checkpoint)
    records = pio.read_manifest(args.manifest)
    loader = pio.bag_loader(args.manifest)
    _, test_recs = _split_records(records, args.fold, args.split_seed or 0)
    if args.fold is None:
        test_recs = records
    if not test_recs:
        print("eval: empty test fold", file=sys.stderr)
        return 1
    preds = ev.predict_cohort(state, grid, test_recs, loader, head=train_config.head)
    report = ev.evaluate_cohort(preds, test_recs, grid)
    curves = report.pop("_logrank_curves", None)
    pio.write_report_json(out / "report.json", report)
    pio.write_predictions_csv(
        out / "predictions.csv",
        [(p.patient_id, p.masses, p.risk, p.expected_time) for p in preds],
        grid.num_classes,
    )
    if curves:
        pio.write_km_csv(out / "km_low_risk.csv", curves[0])
        pio.write_km_csv(out / "km_high_risk.csv", curves[1])
    print(
        f"eval: {len(test_recs)} patients, CI {report['ci']:.4f}, "
        f"MAE {report['mae']:.2f} -> {out / 'report.json'}"
    )
    return 0


def cmd_interpret(args, parser) -> int:
    out = _default_out(args, parser)
    state, grid, train_config, header = pio.load_checkpoint(args.checkpoint)
    if state.priors is None:
        print("interpret: checkpoint has no prior set (attention model?)", file=sys.stderr)
        return 1
    records = {r.patient_id: r for r in pio.read_manifest(args.manifest)}
    if args.patient not in records:
        print(f"interpret: patient {args.patient!r} not in manifest", file=sys.stderr)
        return 1
    loader = pio.bag_loader(args.manifest)
    bag = np.asarray(loader(args.patient), dtype=np.float64)
    with ad.no_grad():
        priors_eff = effective_priors(state.priors)
        from .aggregation import prior_guided_pool

        pooled = prior_guided_pool(priors_eff, bag, state.aggregator.alpha)
        prompt_matrix = survival_prompts(state.prompt_params, state.encoder).value
    report = shapley_exact(
        pooled, state.head, prompt_matrix, tau_snapshot(state), grid,
        prior_texts=state.priors.texts or None,
    )
    pio.write_shapley_csv(out / "shapley.csv", report)
    top_k = min(args.top_k, bag.shape[0])
    rows = []
    for m in range(pooled.shape[0]):
        idx, weights = top_instances(priors_eff, bag, state.aggregator.alpha, m, top_k)
        rows.extend((m, i, w) for i, w in zip(idx, weights))
    pio.write_evidence_csv(out / "evidence.csv", rows)
    print(
        f"interpret: {args.patient}: full risk {report.full_risk:.4f}, "
        f"baseline {report.baseline_risk:.4f}, "
        f"top prior {int(np.argmax(report.contributions))} -> {out}"
    )
    return 0


def cmd_km(args, parser) -> int:
    out = _default_out(args, parser)
    records = pio.read_manifest(args.manifest)
    if args.risks:
        preds = pio.read_predictions_csv(args.risks)
        by_id = {p["patient_id"]: p["risk"] for p in preds}
        missing = [r.patient_id for r in records if r.patient_id not in by_id]
        if missing:
            print(f"km: {len(missing)} patients missing from {args.risks}", file=sys.stderr)
            return 1
        risks = np.array([by_id[r.patient_id] for r in records])
        lr = risk_grouping_logrank(risks, records)
        pio.write_km_csv(out / "km_low_risk.csv", lr.km_low)
        pio.write_km_csv(out / "km_high_risk.csv", lr.km_high)
        pio.write_report_json(
            out / "logrank.json",
            {"statistic": lr.statistic, "pvalue": lr.p_value},
        )
        print(f"km: log-rank statistic {lr.statistic:.4f}, p {lr.p_value:.4g} -> {out}")
    else:
        curve = kaplan_meier(records)
        pio.write_km_csv(out / "km_cohort.csv", curve)
        print(f"km: cohort curve with {len(curve.times)} time points -> {out}")
    return 0


def cmd_gradcheck(args, parser) -> int:
    started = time.perf_counter()
    state, bag, labels = build_tiny_problem(
        k=args.k, m=args.m, c=args.c, d=args.d, kind=args.kind, seed=args.seed
    )
    results = run_gradcheck(
        state, bag, labels, tolerance=args.tolerance,
        break_group="head_weight" if args.break_head else None,
    )
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  rel_err {r.rel_error:12.3e}  "
              f"{'pass' if r.passed else 'FAIL'}")
    elapsed = time.perf_counter() - started
    ok = all(r.passed for r in results)
    print(f"gradcheck: {'all pass' if ok else 'FAILURES'} in {elapsed:.2f}s")
    return 0 if ok else 1


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="priorsurv",
        description="Discrete-time survival analysis on precomputed embedding bags",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--k-min", type=int, default=20)
    p.add_argument("--k-max", type=int, default=60)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--prototypes", type=int, default=4)
    p.add_argument("--signal", type=float, default=2.0)
    p.add_argument("--censoring", type=float, default=0.3)
    p.add_argument("--baseline-scale", type=float, default=60.0)
    p.add_argument("--sharpness", type=float, default=3.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--priors", help="VLSB file with the frozen prior embeddings")
    p.add_argument("--phrases", help="JSON with context/bases/priors phrases")
    p.add_argument("--out", default=None)
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--fold", type=_parse_fold, default=None, help="e.g. 0/5")
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--wd", type=float, default=None)
    p.add_argument("--accum", type=int, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--scheme", choices=["uniform", "quantile"], default=None)
    p.add_argument("--token-dim", type=int, default=None)
    p.add_argument("--context-length", type=int, default=None)
    p.add_argument("--class-length", type=int, default=None)
    p.add_argument("--num-bases", type=int, default=None)
    p.add_argument("--attention-hidden", type=int, default=None)
    p.add_argument("--prototypes", type=int, default=None,
                   help="prototype count for the prototype ablation")
    p.add_argument("--ablation", action="append", default=None,
                   help=f"one of {ABLATIONS} or 'bins N'; repeatable")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a held-out fold")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--fold", type=_parse_fold, default=None)
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--aggregate", nargs="+", default=None,
                   help="fold report JSONs to average")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("interpret", help="Shapley attribution for one patient")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--patient", required=True)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_interpret)

    p = sub.add_parser("km", help="Kaplan-Meier curves (optionally risk-grouped)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--risks", help="predictions.csv with a risk column")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_km)

    p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--c", type=int, default=3)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--kind", choices=["prior", "attention", "prototypes"], default="prior")
    p.add_argument("--seed", type=int, default=123)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--break-head", action="store_true",
                   help="perturb the head gradient (negative control)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args, parser)


if __name__ == "__main__":
    sys.exit(main())
