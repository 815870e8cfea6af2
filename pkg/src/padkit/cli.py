"""Command-line entry point wiring the pipeline together.

Subcommands: synth, split, train, eval, lbp-extract. One global --seed
feeds every stage; submodules derive their own streams by fixed labels
(synth, cap, split, init, shuffle) so adding a consumer never perturbs
the others.

Exit codes: 0 success, 1 validation error, 2 runtime/data error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import re
import sys
from pathlib import Path

import numpy as np

from . import dataset, evaluation, lbp, neural_net, synth_data
from .dataset import DatasetError, LabelSchemaError
from .image_core import PnmError, to_grayscale
from .neural_net import ModelFormatError, NumericalAbort
from .seeds import derive_seed
from .synth_data import SynthError

PREDICT_CHUNK = 64

CONVERT_RECIPE = (
    "only binary PGM/PPM is decoded; convert other sources first, e.g. "
    "`magick input.bmp output.pgm` or `ffmpeg -i clip.mp4 frames/f%05d.ppm`"
)


class UsageError(Exception):
    """Flag or configuration problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise UsageError(message)


def _parse_size(text: str) -> tuple[int, int]:
    match = re.fullmatch(r"(\d+)[xX](\d+)", text)
    if not match:
        raise UsageError(f"expected WxH, got {text!r}")
    w, h = int(match.group(1)), int(match.group(2))
    if w < 1 or h < 1:
        raise UsageError(f"size must be >= 1x1, got {text!r}")
    return w, h


def _parse_grid(text: str) -> tuple[int, int]:
    match = re.fullmatch(r"(\d+)[xX](\d+)", text)
    if not match:
        raise UsageError(f"expected RxC grid, got {text!r}")
    rows, cols = int(match.group(1)), int(match.group(2))
    if rows < 1 or cols < 1:
        raise UsageError(f"grid must be >= 1x1, got {text!r}")
    return rows, cols


def _parse_binary_schema(text: str) -> dataset.LabelSchema:
    if not text.startswith("fake="):
        raise UsageError(f"expected fake=class1,class2,..., got {text!r}")
    names = [name for name in text[len("fake=") :].split(",") if name]
    if not names:
        raise UsageError("binary schema needs at least one fake class")
    return dataset.LabelSchema("binary", frozenset(names))


def _build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="global random seed")
    common.add_argument(
        "--quiet", action="store_true", help="suppress progress output (results always print)"
    )

    parser = _Parser(prog="padkit", description=__doc__, epilog=CONVERT_RECIPE)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic live/spoof corpus")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--count", type=int, default=800, help="images per class")
    p.add_argument("--size", default="140x140", help="image size WxH")
    p.add_argument("--spoof-factor", type=int, default=2, help="downsample factor")
    p.add_argument("--spoof-blur", type=int, default=0, help="extra box blur radius")
    p.add_argument("--spoof-noise", type=float, default=8.0, help="noise sigma, gray levels")
    p.add_argument("--spoof-period", type=float, default=4.0, help="halftone period, px")
    p.add_argument("--spoof-amplitude", type=float, default=8.0, help="halftone amplitude")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", parents=[common], help="cap, split, and relabel a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cap", type=int, default=None, help="max records per class")
    p.add_argument("--binary", default=None, metavar="fake=CL1,CL2,...",
                   help="merge the listed classes into 'fake'")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="train the CNN on split=train")
    p.add_argument("--manifest", required=True)
    p.add_argument("--arch", default="spoofnet", choices=["spoofnet"])
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--out", required=True, help="model output path (PADM container)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score split=test and write a report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", default=None, help="PADM model to evaluate")
    p.add_argument("--lbp", action="store_true", help="evaluate the LBP 1-NN classifier")
    p.add_argument("--grid", default=None, help="LBP patch grid RxC (default 1x1)")
    p.add_argument("--report", required=True, help="report output directory")
    p.add_argument("--roc", action=argparse.BooleanOptionalAction, default=None,
                   help="force ROC on/off (default: on for binary labels)")
    p.add_argument("--holdout-validation", action="store_true",
                   help="exclude validation records from test scoring")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("lbp-extract", parents=[common],
                       help="dump LBP features for every image")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", default="1x1", help="LBP patch grid RxC")
    p.add_argument("--out", required=True, help="feature dump path")
    p.set_defaults(func=cmd_lbp_extract)
    return parser


def cmd_synth(args) -> int:
    width, height = _parse_size(args.size)
    if args.count < 1:
        raise UsageError(f"--count must be >= 1, got {args.count}")
    try:
        config = synth_data.SynthConfig(
            width=width,
            height=height,
            count_per_class=args.count,
            seed=args.seed,
            downsample_factor=args.spoof_factor,
            blur_radius=args.spoof_blur,
            noise_sigma=args.spoof_noise,
            halftone_period=args.spoof_period,
            halftone_amplitude=args.spoof_amplitude,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    root = Path(args.out)
    manifest_path = root / "manifest.csv"
    if synth_data.corpus_matches(config, root) and manifest_path.is_file():
        print(f"corpus identical ({2 * config.count_per_class} files)")
        print(f"manifest: {manifest_path}")
        return 0
    root.mkdir(parents=True, exist_ok=True)
    manifest = synth_data.gen_corpus(config, root)
    dataset.save_manifest(manifest, manifest_path)
    print(f"{len(manifest.records)} images written")
    print(f"manifest: {manifest_path}")
    return 0


def cmd_split(args) -> int:
    manifest = dataset.load_manifest(args.manifest)
    if args.cap is not None:
        if args.cap < 1:
            raise UsageError(f"--cap must be >= 1, got {args.cap}")
        manifest = dataset.cap_per_class(manifest, args.cap, derive_seed(args.seed, "cap"))
    manifest = dataset.split_half(manifest, derive_seed(args.seed, "split"))
    if args.binary is not None:
        manifest = dataset.apply_label_schema(manifest, _parse_binary_schema(args.binary))
    dataset.save_manifest(manifest, args.manifest)
    for label, splits in sorted(manifest.counts().items()):
        detail = ", ".join(f"{name}={splits[name]}" for name in sorted(splits))
        print(f"{label}: {detail}")
    return 0


def _input_hw(manifest: dataset.DatasetManifest) -> tuple[int, int]:
    records = dataset.select_records(manifest, "train")
    if not records:
        raise DatasetError("manifest has no train records; run `padkit split` first")
    image = to_grayscale(dataset.load_image(manifest, records[0]))
    return image.height, image.width


def cmd_train(args) -> int:
    if args.epochs < 1:
        raise UsageError(f"--epochs must be >= 1, got {args.epochs}")
    if args.batch < 1:
        raise UsageError(f"--batch must be >= 1, got {args.batch}")
    if not args.lr > 0:
        raise UsageError(f"--lr must be > 0, got {args.lr}")

    manifest = dataset.load_manifest(args.manifest)
    classes = manifest.classes()
    binary = classes == ["fake", "real"]
    num_outputs = 1 if binary else len(classes)
    h, w = _input_hw(manifest)

    model = neural_net.build_spoofnet(h, w, num_outputs, seed=args.seed)
    config = neural_net.TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch,
        seed=args.seed,
        loss="binary_ce" if binary else "categorical_ce",
    )
    shuffle_seed = derive_seed(args.seed, "shuffle")

    def batches(epoch: int):
        return dataset.iter_batches(
            manifest, "train", config.batch_size, shuffle_seed, epoch, (h, w)
        )

    val_data = None
    if dataset.select_records(manifest, "validation"):
        val_x, val_y, _ = dataset.load_split(manifest, "validation", (h, w))
        val_data = (val_x, val_y)

    def progress(row: neural_net.EpochMetrics) -> None:
        if not args.quiet:
            val = "" if row.val_accuracy is None else f" val_acc={row.val_accuracy:.4f}"
            print(f"epoch {row.epoch}/{config.epochs} train_loss={row.train_loss:.6f}{val}")

    model, metrics = neural_net.train(model, batches, config, val_data, progress)

    blob = neural_net.save_model(model)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(blob)
    metrics_path = Path(str(out) + ".metrics.csv")
    metrics_path.write_text(neural_net.metrics_csv(metrics), encoding="utf-8")
    from . import figures

    figures.save_training_curves_png(metrics, Path(str(out) + ".metrics.png"))
    print(f"model: {out}")
    print(f"model sha256: {hashlib.sha256(blob).hexdigest()}")
    print(f"metrics: {metrics_path}")
    return 0


def _eval_cnn(args, manifest, holdout):
    model = neural_net.load_model(Path(args.model).read_bytes())
    classes = manifest.classes()
    expected_outputs = 1 if classes == ["fake", "real"] else len(classes)
    if model.num_outputs != expected_outputs:
        raise UsageError(
            f"model has {model.num_outputs} output(s) but the manifest needs "
            f"{expected_outputs} (classes: {'/'.join(classes)})"
        )
    h, w = model.input_shape[0], model.input_shape[1]
    test_x, test_y, records = dataset.load_split(manifest, "test", (h, w), holdout)
    scores = np.concatenate(
        [
            neural_net.predict(model, test_x[i : i + PREDICT_CHUNK])
            for i in range(0, test_x.shape[0], PREDICT_CHUNK)
        ]
    )
    predicted = neural_net.classify_scores(scores)
    pairs = [(classes[t], classes[p]) for t, p in zip(test_y, predicted)]
    real_scores = scores[:, 0] if model.num_outputs == 1 else None
    if real_scores is None and "real" in classes:
        real_scores = scores[:, classes.index("real")]
    return "spoofnet-cnn", pairs, [r.label for r in records], real_scores


def _eval_lbp(args, manifest, holdout, grid):
    rows, cols = grid
    train_records = dataset.select_records(manifest, "train")
    if not train_records:
        raise DatasetError("manifest has no train records; run `padkit split` first")
    feats = []
    labels = []
    for record in train_records:
        image = to_grayscale(dataset.load_image(manifest, record))
        feats.append(lbp.extract_feature(image, rows, cols))
        labels.append(record.label)
    model = lbp.fit(feats, labels)

    test_records = dataset.select_records(manifest, "test", holdout)
    if not test_records:
        raise DatasetError("manifest has no test records; run `padkit split` first")
    pairs = []
    real_scores = []
    binary = manifest.classes() == ["fake", "real"]
    for record in test_records:
        image = to_grayscale(dataset.load_image(manifest, record))
        feature = lbp.extract_feature(image, rows, cols)
        label, _ = lbp.classify(model, feature)
        pairs.append((record.label, label))
        if binary:
            dist = lbp.class_distances(model, feature)
            d_real, d_fake = dist["real"], dist["fake"]
            total = d_real + d_fake
            real_scores.append(0.5 if total == 0 else d_fake / total)
    scores = np.array(real_scores) if binary else None
    return (
        f"lbp-1nn ({rows}x{cols})",
        pairs,
        [r.label for r in test_records],
        scores,
    )


def cmd_eval(args) -> int:
    if bool(args.model) == bool(args.lbp):
        raise UsageError("exactly one of --model or --lbp is required")
    if args.grid is not None and not args.lbp:
        raise UsageError("--grid applies to --lbp only")
    grid = _parse_grid(args.grid) if args.grid is not None else (1, 1)

    manifest = dataset.load_manifest(args.manifest)
    classes = manifest.classes()
    binary = classes == ["fake", "real"]
    if args.roc is True and not binary:
        raise UsageError("ROC requires binary labels (classes real/fake)")
    want_roc = binary if args.roc is None else args.roc

    holdout = args.holdout_validation
    if args.model:
        tool, pairs, _, real_scores = _eval_cnn(args, manifest, holdout)
    else:
        tool, pairs, _, real_scores = _eval_lbp(args, manifest, holdout, grid)

    acc = evaluation.accuracy(pairs)
    confusion = evaluation.confusion_matrix(pairs, classes)

    report_dir = Path(args.report)
    report_dir.mkdir(parents=True, exist_ok=True)
    auc = None
    if want_roc:
        samples = [
            evaluation.ScoredSample(true, float(score))
            for (true, _), score in zip(pairs, real_scores)
        ]
        curve = evaluation.roc_curve(samples)
        auc = curve.auc
        evaluation.render_roc(curve, report_dir / "roc.csv", report_dir / "roc.svg")
        from . import figures

        figures.save_roc_png(curve, report_dir / "roc.png", title=tool)

    report = evaluation.format_report(
        tool, str(args.manifest), classes, acc, confusion, auc, len(pairs)
    )
    (report_dir / "report.txt").write_text(report, encoding="utf-8")
    print(f"accuracy: {acc:.4f}")
    if auc is not None:
        print(f"auc: {auc:.4f}")
    print(f"report: {report_dir / 'report.txt'}")
    return 0


def cmd_lbp_extract(args) -> int:
    rows, cols = _parse_grid(args.grid)
    manifest = dataset.load_manifest(args.manifest)
    lines = []
    for record in dataset.select_records(manifest, "all"):
        image = to_grayscale(dataset.load_image(manifest, record))
        feature = lbp.extract_feature(image, rows, cols)
        lines.append(lbp.format_feature_record(record.path, record.label, feature))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"{len(lines)} feature records written to {args.out}")
    return 0


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except LabelSchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except (DatasetError, PnmError, ModelFormatError, SynthError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
