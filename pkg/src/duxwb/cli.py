"""Command-line entry point covering the full workflow: dataset generation,
feature extraction, training, evaluation, single-pair inference, and
two-model ensembling.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every run logs its
resolved configuration as one JSON line on stderr. DUXWB_THREADS caps worker
parallelism, including the BLAS/FFT thread pools (applied before numpy
loads, which is why the heavy imports live inside the command handlers).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys


def _apply_thread_cap() -> None:
    cap = os.environ.get("DUXWB_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def _log_config(args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(json.dumps({"resolved_config": cfg}), file=sys.stderr)


def _def_config(args: argparse.Namespace):
    from .def_feature import DefConfig

    return DefConfig(
        color_repr=args.color_repr,
        mapping=args.mapping,
        include_covariance=not args.no_cov,
    )


def _add_def_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--color-repr", default="rgb_chroma", choices=["rgb", "rg_chroma", "rgb_chroma"])
    p.add_argument("--mapping", default="linear3x3", choices=["linear3x3", "affine3x4", "homography3x3"])
    p.add_argument("--no-cov", action="store_true", help="drop the covariance block of the feature")


# ============================================================
# Subcommands
# ============================================================

def cmd_gen_data(args: argparse.Namespace) -> int:
    from .synth import SceneSpec, generate_dataset

    spec = SceneSpec(width=args.width, height=args.height)
    if args.small:
        spec = spec.small()
    splits = None
    if args.splits:
        splits = tuple(int(v) for v in args.splits.split(","))
    manifest = generate_dataset(
        args.out,
        n_scenes=args.scenes,
        e_list=[int(v) for v in args.e_list.split(",")],
        seed=args.seed,
        spec=spec,
        splits=splits,
    )
    print(json.dumps({"scenes": len(manifest.scenes), "out": args.out}))
    return 0


def cmd_extract_def(args: argparse.Namespace) -> int:
    from .def_feature import compute_def
    from .synth import DatasetManifest, load_pair

    manifest = DatasetManifest.load(args.data)
    cfg = _def_config(args)
    scenes = manifest.scenes_for(args.split)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        width = cfg.feature_length
        header = ["scene_id", "e"] + [f"def_{i}" for i in range(width)]
        if args.with_gt:
            header += ["gt_r", "gt_g", "gt_b"]
        writer.writerow(header)
        for entry in scenes:
            pair = load_pair(args.data, entry, args.e)
            vec = compute_def(pair, cfg)
            row = [entry.scene_id, args.e] + [repr(float(v)) for v in vec.values]
            if args.with_gt:
                row += [repr(float(v)) for v in entry.gt]
            writer.writerow(row)
    print(json.dumps({"rows": len(scenes), "out": args.out}))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from .models import ModelBundle, save_model
    from .pipeline import build_feature_set
    from .synth import DatasetManifest
    from .training import TrainConfig, train_eccc, train_emlp

    manifest = DatasetManifest.load(args.data)
    def_cfg = _def_config(args)
    cfg = TrainConfig(
        model=args.model,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        augment=args.augment,
        n_biases=args.n,
        hist_bins=args.hist_bins,
        variant=args.hist_input,
        use_def=not args.no_def,
        bias_init=not args.no_bias_init,
    )
    features = build_feature_set(
        args.data,
        manifest,
        "train",
        args.e,
        def_cfg,
        with_hists=args.model == "eccc",
        variant=args.hist_input,
        bins=args.hist_bins,
        augment=args.augment,
        seed=args.seed,
    )
    if args.model == "emlp":
        params, result = train_emlp(features.defs, features.gts, cfg)
        bundle = ModelBundle(kind="emlp", def_cfg=def_cfg, e=args.e, emlp=params)
    else:
        params, result = train_eccc(
            features.hists,
            features.defs if not args.no_def else None,
            features.gts,
            cfg,
        )
        bundle = ModelBundle(kind="eccc", def_cfg=def_cfg, e=args.e, eccc=params)
    save_model(args.out, bundle)
    log_path = args.log or (args.out + ".losses.csv")
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "split", "loss_mean_deg", "smoothness_terms", "lr", "batch_size"])
        for row in result.log:
            writer.writerow([row.epoch, row.split, repr(row.loss_mean_deg), repr(row.smoothness_terms), repr(row.lr), row.batch_size])
    print(json.dumps({
        "out": args.out,
        "epochs": len(result.log),
        "final_loss": result.log[-1].loss_mean_deg if result.log else None,
        "aborted": result.aborted,
        "skipped_steps": result.skipped_steps,
    }))
    return 0


def _write_eval_outputs(args, report, results, label: str, e) -> None:
    from .evaluation import results_csv_rows

    payload = report.to_dict(model=label, split=args.split, e=e)
    with open(args.out_report, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if args.out_csv:
        with open(args.out_csv, "w", newline="") as fh:
            csv.writer(fh).writerows(results_csv_rows(results))
    print(json.dumps(payload))


def _check_split_files(root, manifest, split, keys) -> None:
    from .errors import DataError

    missing = []
    for entry in manifest.scenes_for(split):
        for key in keys:
            rel = entry.files.get(key)
            if rel is None or not os.path.isfile(os.path.join(root, rel)):
                missing.append(entry.scene_id)
                break
    if missing:
        raise DataError(f"missing {keys} frames for scenes: {', '.join(missing)}")


def cmd_eval(args: argparse.Namespace) -> int:
    from .evaluation import baseline_predictor, evaluate_scenes
    from .models import load_model
    from .synth import DatasetManifest, load_pair

    manifest = DatasetManifest.load(args.data)
    if args.baseline:
        _check_split_files(args.data, manifest, args.split, ["auto"])
        predict = baseline_predictor(args.baseline, args.data)
        label, e = args.baseline, None
    else:
        bundle = load_model(args.ckpt)
        e = args.e or bundle.e
        _check_split_files(args.data, manifest, args.split, [f"long_{e}", f"short_{e}"])

        def predict(entry):
            return bundle.predict_pair(load_pair(args.data, entry, e))

        label = bundle.kind
    report, results = evaluate_scenes(predict, manifest, args.data, args.split)
    _write_eval_outputs(args, report, results, label, e)
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    from .core import DualExposurePair, RawImage
    from .models import load_model
    from .synth import read_tensor

    bundle = load_model(args.ckpt)
    pair = DualExposurePair(
        long=RawImage(read_tensor(args.long)),
        short=RawImage(read_tensor(args.short)),
        exposure_factor=float(args.e or bundle.e),
    )
    ill = bundle.predict_pair(pair)
    print(json.dumps({"illuminant": [ill.r, ill.g, ill.b]}))
    return 0


def cmd_ensemble_eval(args: argparse.Namespace) -> int:
    from .evaluation import evaluate_scenes
    from .models import ensemble_predict, load_model
    from .synth import DatasetManifest, load_pair

    manifest = DatasetManifest.load(args.data)
    bundle_a = load_model(args.ckpt_a)
    bundle_b = load_model(args.ckpt_b)
    e = args.e or bundle_a.e

    def predict(entry):
        pair = load_pair(args.data, entry, e)
        return ensemble_predict(bundle_a, bundle_b, pair)

    report, results = evaluate_scenes(predict, manifest, args.data, args.split)
    _write_eval_outputs(args, report, results, "ensemble", e)
    return 0


# ============================================================
# Parser
# ============================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duxwb", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a labeled synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--e-list", default="2,4,8")
    p.add_argument("--width", type=int, default=384)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--small", action="store_true", help="48x32 frames")
    p.add_argument("--splits", default=None, help="train,val,test counts (default: 387:83:86 ratio)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("extract-def", help="write feature vectors as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="all", choices=["all", "train", "val", "test"])
    p.add_argument("--e", type=int, default=8)
    p.add_argument("--with-gt", action="store_true")
    _add_def_flags(p)
    p.set_defaults(func=cmd_extract_def)

    p = sub.add_parser("train", help="train an estimator")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, choices=["emlp", "eccc"])
    p.add_argument("--out", required=True)
    p.add_argument("--e", type=int, default=8)
    p.add_argument("--epochs", type=int, default=0, help="0 = model default (1000 / 200)")
    p.add_argument("--lr", type=float, default=0.0, help="0 = model default (1e-3 / 5e-3)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--n", type=int, default=20, help="bias bank size (eccc)")
    p.add_argument("--hist-bins", type=int, default=64)
    p.add_argument("--hist-input", default="both", choices=["both", "avg", "short", "long"])
    p.add_argument("--no-def", action="store_true", help="eccc variant without the feature path")
    p.add_argument("--no-bias-init", action="store_true")
    p.add_argument("--log", default=None, help="loss CSV path (default: <out>.losses.csv)")
    _add_def_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or baseline on a split")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--ckpt")
    group.add_argument("--baseline", choices=["gray-world", "shades-of-gray"])
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.add_argument("--e", type=int, default=0, help="0 = exposure recorded in the checkpoint")
    p.add_argument("--out-report", required=True)
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="estimate the illuminant of one pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--long", required=True)
    p.add_argument("--short", required=True)
    p.add_argument("--e", type=int, default=0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ensemble-eval", help="evaluate averaged predictions of two checkpoints")
    p.add_argument("--ckpt-a", required=True)
    p.add_argument("--ckpt-b", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.add_argument("--e", type=int, default=0)
    p.add_argument("--out-report", required=True)
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=cmd_ensemble_eval)

    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    _log_config(args)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failure -> exit 1 with a message
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
