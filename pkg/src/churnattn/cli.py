"""Command-line interface.

Subcommands:
    prepare   encode a churn CSV into the versioned dataset JSON
    describe  moment statistics for the five numeric columns
    train     one training run from a JSON config file
    suite     run an experiment suite (ablations, ANOVA grid, baselines)
    report    rebuild summaries/report.md for a finished suite directory

Exit codes: 0 success, 1 validation error, 2 runtime failure,
3 acceptance-band failure under `report --strict`.

The train config is JSON with keys:
    data (csv path), out_dir, split_ratio (default 0.8), seed (default 0),
    smote_placement ("before-split" | "train-only"),
    model {d_model, n_heads, ffn_width, mlp_hidden, epochs, learning_rate,
           record_every, seed, use_entity_embedding, use_smote, smote_k}
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .data import describe, load_csv, prepare, save_encoded, split
from .exceptions import ChurnAttnError, DataValidationError
from .harness import SUITES, SuiteSpec, run_suite, emit_report
from .model import TabularAttentionClassifier
from .smote import oversample


def _cmd_prepare(args) -> int:
    ds = prepare(load_csv(args.input))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "encoded.json"
    save_encoded(ds, path)
    print(f"wrote {path} ({ds.n_rows} rows, {len(ds.cat_names)}+{len(ds.num_names)} features)")
    return 0


def _cmd_describe(args) -> int:
    stats = describe(load_csv(args.input))
    if args.json:
        doc = {
            name: {
                "mean": c.mean,
                "std": c.std,
                "cv": c.cv,
                "skewness": c.skewness,
                "kurtosis": c.kurtosis,
            }
            for name, c in stats.columns.items()
        }
        print(json.dumps(doc, indent=2))
        return 0
    print(f"{'column':<16} {'std':>12} {'cv':>8} {'kurtosis':>9} {'mean':>12} {'skewness':>9}")
    for name, c in stats.columns.items():
        print(
            f"{name:<16} {c.std:>12.3f} {c.cv:>8.3f} {c.kurtosis:>9.3f} "
            f"{c.mean:>12.4f} {c.skewness:>9.3f}"
        )
    return 0


def _cmd_train(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    data = prepare(load_csv(cfg["data"]))
    seed = int(cfg.get("seed", 0))
    placement = cfg.get("smote_placement", "before-split")
    model_cfg = dict(cfg.get("model", {}))
    model_cfg.setdefault("seed", seed)
    if "mlp_hidden" in model_cfg:
        model_cfg["mlp_hidden"] = tuple(model_cfg["mlp_hidden"])

    if model_cfg.get("use_smote", True) and placement == "before-split":
        data = oversample(data, k_neighbors=model_cfg.get("smote_k", 5), seed=seed)
        model_cfg["use_smote"] = False
    train_ds, test_ds = split(data, float(cfg.get("split_ratio", 0.8)), seed)

    model = TabularAttentionClassifier(**model_cfg)
    model.fit(train_ds, eval_ds=test_ds)

    out = Path(cfg.get("out_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    record = model.run_record_
    with open(out / "run_record.json", "w", encoding="utf-8") as fh:
        json.dump(record.to_dict(), fh, indent=2)
    lines = ["epoch,train_loss,test_auc"]
    for c in record.checkpoints:
        lines.append(f"{c.epoch},{c.train_loss!r},{c.test_auc!r}")
    (out / "curve.csv").write_text("\n".join(lines) + "\n")
    model.save(out / "model.json")
    last = record.checkpoints[-1]
    print(
        f"trained {record.config['epochs']} epochs; "
        f"final train loss {last.train_loss:.3f}, test AUC {last.test_auc:.4f}; "
        f"artifacts in {out}"
    )
    return 0


def _cmd_suite(args) -> int:
    spec = SuiteSpec(
        suite=args.name,
        data_path=args.data,
        out_dir=args.out,
        runs_per_cell=args.runs,
        base_seed=args.seed,
        workers=args.workers,
        smote_placement=args.placement,
        model_overrides=json.loads(args.overrides) if args.overrides else {},
    )
    result = run_suite(spec)
    ok = len(result.completed())
    print(f"suite {args.name}: {ok}/{len(result.runs)} runs completed; output in {args.out}")
    return 0


def _cmd_report(args) -> int:
    all_passed = emit_report(args.from_dir)
    report = Path(args.from_dir) / "report.md"
    print(report.read_text())
    if args.strict and not all_passed:
        return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="churnattn", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="encode a churn CSV for reuse")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_prepare)

    p = sub.add_parser("describe", help="moment statistics of numeric columns")
    p.add_argument("--input", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=_cmd_describe)

    p = sub.add_parser("train", help="one training run from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("suite", help="run an experiment suite")
    p.add_argument("--name", required=True, choices=SUITES)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--placement", default="before-split", choices=["before-split", "train-only"])
    p.add_argument("--overrides", help="JSON dict of model config overrides")
    p.set_defaults(fn=_cmd_suite)

    p = sub.add_parser("report", help="rebuild summaries and report for a suite")
    p.add_argument("--from", dest="from_dir", required=True)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(fn=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (DataValidationError, ValueError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ChurnAttnError as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
