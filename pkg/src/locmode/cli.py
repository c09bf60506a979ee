"""Command-line front end.

Subcommands: synth, extract, train, predict, evaluate, ablate.
Exit codes: 0 ok, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import model as gbt
from .aggregation import (
    AblationConfig,
    DEFAULT_CONFIG,
    FULL_ABLATION_GRID,
)
from .data_io import (
    ALL_MASKS,
    WINDOW_SAMPLES,
    atomic_write,
    detect_missing_modality,
    load_dataset,
    save_dataset_text,
    synth_dataset,
)
from .errors import DataError, LocmodeError, UsageError
from .model import GbtParams
from .pipeline import (
    SignalFeatureExtractor,
    _group_by_mask,
    build_design_matrix,
    final_model,
    load_bundle,
    majority_vote_predict,
    run_ablation,
    save_bundle,
)
from .report import (
    feature_matrix_csv,
    write_ablation_report,
    write_evaluation,
)


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the contract is 1.
    def error(self, message):
        raise UsageError(message)


def _add_common_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=DEFAULT_CONFIG.to_string(),
                   help="feature configuration string (default: %(default)s)")
    p.add_argument("--k", type=int, default=3, help="number of CV folds (default: 3)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--iterations", type=int, default=1000,
                   help="boosting iterations per model (default: 1000)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="locmode",
                     description="Locomotion-mode classification from tri-axial "
                                 "phone sensors with a missing modality.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--windows", type=int, default=300)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--unmasked", action="store_true",
                   help="keep all three modalities (training-style data)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="write per-scenario feature matrices")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", default=DEFAULT_CONFIG.to_string())
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a model bundle")
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--val", help="validation dataset directory")
    p.add_argument("--exclude-hand", action="store_true",
                   help="drop hand-carried windows from training")
    p.add_argument("--include-validation", action="store_true",
                   help="add validation windows to training (requires --val)")
    _add_common_training_flags(p)
    p.add_argument("--out", required=True, help="output bundle file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict labels with majority voting")
    p.add_argument("--data", required=True, help="dataset directory (labels optional)")
    p.add_argument("--model", required=True, help="trained bundle file")
    p.add_argument("--per-sample", action="store_true",
                   help=f"expand each window to {WINDOW_SAMPLES} sample labels per line")
    p.add_argument("--out", required=True, help="output label file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions and emit reports")
    p.add_argument("--data", required=True, help="labeled dataset directory")
    p.add_argument("--model", required=True, help="trained bundle file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the feature-configuration grid")
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--val", required=True, help="validation dataset directory")
    p.add_argument("--config", action="append", default=None,
                   help="configuration to include (repeatable; default: full grid)")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)

    return parser


def cmd_synth(args) -> int:
    windows = synth_dataset(args.windows, args.classes, seed=args.seed,
                            masked=not args.unmasked)
    save_dataset_text(windows, args.out)
    print(f"wrote {len(windows)} windows to {args.out}")
    return 0


def cmd_extract(args) -> int:
    config = AblationConfig.from_string(args.config)
    windows = load_dataset(args.data)
    extractor = SignalFeatureExtractor()
    out_dir = Path(args.out)
    for mask in ALL_MASKS:
        x, y, ids, schema = build_design_matrix(windows, config, mask, extractor)
        atomic_write(out_dir / f"features_{mask.name}.csv",
                     feature_matrix_csv(schema.names, x, y, ids))
        schema_doc = {
            "config": config.to_string(),
            "mask": mask.name,
            "hash": schema.hash,
            "n_features": len(schema),
            "names": list(schema.names),
        }
        atomic_write(out_dir / f"schema_{mask.name}.json",
                     json.dumps(schema_doc, indent=2, sort_keys=True) + "\n")
        print(f"{mask.name}: {x.shape[0]} rows x {x.shape[1]} features")
    return 0


def cmd_train(args) -> int:
    config = AblationConfig.from_string(args.config)
    train_windows = load_dataset(args.data)
    val_windows = load_dataset(args.val) if args.val else None
    if args.include_validation and val_windows is None:
        raise UsageError("--include-validation requires --val")
    params = GbtParams(n_iterations=args.iterations, seed=args.seed)
    bundle = final_model(
        train_windows,
        val_windows,
        config=config,
        exclude_hand=args.exclude_hand,
        include_validation=args.include_validation,
        k=args.k,
        params=params,
    )
    save_bundle(args.out, bundle)
    print(f"trained {bundle.model_count} models ({config.to_string()}) -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    bundle = load_bundle(args.model)
    windows = load_dataset(args.data, require_labels=False)
    labels = majority_vote_predict(bundle, windows)
    if args.per_sample:
        lines = (" ".join([str(int(v))] * WINDOW_SAMPLES) for v in labels)
    else:
        lines = (str(int(v)) for v in labels)
    atomic_write(args.out, "\n".join(lines) + "\n")
    print(f"wrote {len(labels)} predictions to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    bundle = load_bundle(args.model)
    windows = load_dataset(args.data)
    extractor = SignalFeatureExtractor()
    preds = majority_vote_predict(bundle, windows, extractor)
    y_true = np.array([w.label for w in windows], dtype=np.int64)
    classes = list(bundle.classes)

    scores: dict[str, float] = {
        "overall_mv_macro_f1": gbt.macro_f1(y_true, preds, classes)
    }
    matrices = {}
    for missing, positions in sorted(_group_by_mask(windows).items()):
        name = bundle.per_mask[missing].mask.name
        scores[f"{name}_mv_macro_f1"] = gbt.macro_f1(y_true[positions], preds[positions], classes)
        matrices[name] = gbt.confusion_matrix(y_true[positions], preds[positions], classes)
    paths = write_evaluation(scores, matrices, classes, args.out)
    print(json.dumps(scores, indent=2, sort_keys=True))
    print("wrote: " + ", ".join(str(p) for p in paths))
    return 0


def cmd_ablate(args) -> int:
    if args.config:
        configs = [AblationConfig.from_string(s) for s in args.config]
    else:
        configs = list(FULL_ABLATION_GRID)
    train_windows = load_dataset(args.data)
    val_windows = load_dataset(args.val)
    params = GbtParams(n_iterations=args.iterations, seed=args.seed)
    report = run_ablation(train_windows, val_windows, configs, params=params, k=args.k)
    paths = write_ablation_report(report, args.out)
    for row in report.sorted_rows():
        print(f"{row.config.to_string():45s} val={row.val:.4f} "
              f"val_mv={row.val_mv:.4f} feats={row.n_features}")
    print("wrote: " + ", ".join(str(p) for p in paths))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args) or 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except LocmodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover - defensive
        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
