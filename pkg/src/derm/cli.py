"""Command-line entry points for the whole pipeline.

Subcommands: prepare, eda, augment, train, evaluate, predict, serve.
Flags fall back to DERM_-prefixed environment variables where noted.
Every subcommand is deterministic given its inputs and seeds; operational
failures exit 1 with a one-line diagnostic, usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .augment import (
    AugmentPlan,
    AugmentPolicy,
    materialize_manifest,
    read_manifest,
    rebalance_classes,
    write_manifest,
)
from .dataset import (
    eda_histograms,
    impute_age,
    load_image,
    load_metadata,
    make_split,
    read_split_csv,
    resize_bilinear,
    save_png,
    write_eda_files,
    write_split_csv,
)
from .errors import DermError
from .labels import CLASS_LABELS
from .metrics import confusion_to_csv, format_report, report_to_json
from .model import (
    ModelConfig,
    build_mobilenet,
    model_summary,
    read_dwsn_header,
    save_weights,
)
from .service import (
    DEFAULT_MAX_UPLOAD,
    DEFAULT_PORT,
    bundle_from_model,
    env_default,
    load_bundle,
    predict_image_bytes,
)
from .train import (
    ArrayDataset,
    TrainConfig,
    evaluate,
    train_head,
    write_history_csv,
)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input-size", type=int, default=224)
    p.add_argument("--width", type=float, default=None,
                   help="width multiplier (default: inferred from weights, else 1.0)")
    p.add_argument("--blocks", type=int, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--activation", choices=("relu6", "relu"), default="relu6")


def _infer_config(args, weights_path: Path | None) -> ModelConfig:
    """Fill unset model flags from the weight file's tensor shapes."""
    width, blocks, classes = args.width, args.blocks, args.classes
    if weights_path is not None:
        shapes = {r["name"]: tuple(r["shape"]) for r in read_dwsn_header(weights_path)}
        if width is None and "stem/conv/kernel" in shapes:
            width = shapes["stem/conv/kernel"][3] / 32
        if classes is None and "head/dense/bias" in shapes:
            classes = shapes["head/dense/bias"][0]
        if blocks is None:
            blocks = max(
                (int(n[5:7]) for n in shapes if n.startswith("block")), default=None
            )
    return ModelConfig(
        input_size=args.input_size,
        width_multiplier=1.0 if width is None else width,
        num_blocks=13 if blocks is None else blocks,
        num_classes=7 if classes is None else classes,
        dropout_rate=args.dropout,
        activation=args.activation,
    )


def _load_dataset(index, side: str, images_dir: Path, input_size: int,
                  manifest=None, augmented_dir: Path | None = None) -> ArrayDataset:
    """Stack preprocessed images + labels for one split side."""
    images, labels = [], []

    def add(path: Path, dx: str):
        img = load_image(path)
        if img.shape[:2] != (input_size, input_size):
            img = resize_bilinear(img, input_size, input_size)
        images.append(img.astype(np.float32) / np.float32(127.5) - np.float32(1.0))
        labels.append(CLASS_LABELS.index(dx))

    for record in index.subset(side):
        add(images_dir / f"{record.image_id}.png", record.dx)
    if manifest and side == "train":
        if augmented_dir is None:
            raise DermError("augmented manifest given without --augmented-images")
        for row in manifest:
            add(augmented_dir / f"{row.synthetic_id}.png", row.dx)
    if not images:
        raise DermError(f"no images found for the {side} split under {images_dir}")
    return ArrayDataset(images=np.stack(images), labels=np.array(labels))


def cmd_prepare(args) -> int:
    records = impute_age(load_metadata(args.metadata))
    imputed = sum(1 for r in records if r.age_imputed)
    index = make_split(records, args.val_size, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_split_csv(index, out / "split.csv")
    n_train = len(index.train_records)
    n_val = len(index.validation_records)
    if args.images:
        cache = out / f"images_{args.input_size}"
        cache.mkdir(exist_ok=True)
        src = Path(args.images)
        for record in sorted(index.records, key=lambda r: r.image_id):
            candidates = [src / f"{record.image_id}{ext}" for ext in (".png", ".jpg", ".jpeg")]
            found = next((c for c in candidates if c.exists()), None)
            if found is None:
                raise DermError(f"image for {record.image_id} not found under {src}")
            img = resize_bilinear(load_image(found), args.input_size, args.input_size)
            save_png(img, cache / f"{record.image_id}.png")
        print(f"cached {n_train + n_val} images at {args.input_size}x{args.input_size} in {cache}")
    print(f"prepared split train={n_train} validation={n_val} imputed_ages={imputed}")
    return 0


def cmd_eda(args) -> int:
    records = load_metadata(args.metadata)
    if not args.no_impute:
        records = impute_age(records)
    report = eda_histograms(records, include_imputed=not args.exclude_imputed)
    paths = write_eda_files(report, args.out)
    mode_bin, mode_count = max(report.age_overall.items(), key=lambda kv: kv[1])
    top_sites = ", ".join(site for site, _ in report.localization_counts[:5])
    print(f"eda: {len(records)} records; age mode bin {mode_bin}-{mode_bin + 4} "
          f"({mode_count}); top sites: {top_sites}")
    print(f"wrote {len(paths)} files to {args.out}")
    return 0


def cmd_augment(args) -> int:
    index = read_split_csv(args.split)
    policy = AugmentPolicy(
        rotation_range=args.rotation,
        zoom_range=args.zoom,
        horizontal_flip=not args.no_hflip,
        vertical_flip=not args.no_vflip,
        fill_mode=args.fill_mode,
        seed=args.seed,
    )
    plan = AugmentPlan(target_per_class=args.target)
    manifest = rebalance_classes(index, plan, policy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(manifest, out / "manifest.csv")
    per_class: dict[str, int] = {}
    for row in manifest:
        per_class[row.dx] = per_class.get(row.dx, 0) + 1
    if not args.plan_only:
        if not args.images:
            raise DermError("--images is required unless --plan-only is set")
        materialize_manifest(manifest, args.images, out / "images")
    counts = " ".join(f"{dx}={n}" for dx, n in sorted(per_class.items()))
    print(f"augment: {len(manifest)} synthetic images planned ({counts or 'none needed'})")
    return 0


def cmd_train(args) -> int:
    index = read_split_csv(args.split)
    config = _infer_config(args, Path(args.weights_in) if args.weights_in else None)
    if args.weights_in:
        bundle = load_bundle(args.weights_in, config)
        model = bundle.model
    else:
        model = build_mobilenet(config, np.random.default_rng(args.init_seed))
    manifest = read_manifest(args.manifest) if args.manifest else None
    images_dir = Path(args.images)
    train_set = _load_dataset(index, "train", images_dir, config.input_size,
                              manifest, Path(args.augmented_images) if args.augmented_images else None)
    val_set = _load_dataset(index, "validation", images_dir, config.input_size)
    train_config = TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=args.seed,
    )
    trained, logs = train_head(model, train_set, val_set, train_config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_history_csv(logs, out / "history.csv")
    save_weights(trained, out / "model.dwsn")
    if logs:
        last = logs[-1]
        print(f"epoch {last.epoch}: train_acc={last.train_acc:.4f} "
              f"val_acc={last.val_acc:.4f} val_top3={last.val_top3:.4f}")
    print(f"trained head on {len(train_set)} images; wrote {out / 'model.dwsn'}")
    return 0


def cmd_evaluate(args) -> int:
    config = _infer_config(args, Path(args.model))
    bundle = load_bundle(args.model, config)
    index = read_split_csv(args.split)
    dataset = _load_dataset(index, args.subset, Path(args.images), config.input_size)
    result = evaluate(bundle.model, dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "confusion.csv").write_text(
        confusion_to_csv(result.confusion, bundle.model.labels.codes), encoding="utf-8"
    )
    (out / "report.txt").write_text(format_report(result.report) + "\n", encoding="utf-8")
    doc = report_to_json(result.report)
    doc["top2_accuracy"] = result.top2
    doc["top3_accuracy"] = result.top3
    doc["mean_loss"] = result.mean_loss
    (out / "report.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(format_report(result.report))
    print(f"top2 {result.top2:.4f}  top3 {result.top3:.4f}  loss {result.mean_loss:.4f}")
    return 0


def cmd_predict(args) -> int:
    config = _infer_config(args, Path(args.model))
    bundle = load_bundle(args.model, config)
    result = predict_image_bytes(bundle, Path(args.image).read_bytes())
    print(json.dumps(result.to_json_dict(), indent=2))
    return 0


def cmd_summary(args) -> int:
    config = _infer_config(args, Path(args.model) if args.model else None)
    if args.model:
        bundle = load_bundle(args.model, config)
        model = bundle.model
    else:
        model = build_mobilenet(config, np.random.default_rng(0))
    print(model_summary(model).render())
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = _infer_config(args, Path(args.model))
    bundle = load_bundle(args.model, config)
    app = create_app(
        bundle,
        max_upload=args.max_upload,
        cors_origins=tuple(args.cors_origins.split(",")),
        audit_path=args.audit_log,
    )
    print(f"serving model {bundle.model_id} on {args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="derm",
        description="Seven-way dermoscopy lesion classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="load metadata, impute ages, split, cache resized images")
    p.add_argument("--metadata", required=True)
    p.add_argument("--images", default=env_default("DATA_DIR", None))
    p.add_argument("--out", required=True)
    p.add_argument("--val-size", type=int, default=938)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input-size", type=int, default=224)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("eda", help="write exploratory histogram files")
    p.add_argument("--metadata", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-impute", action="store_true")
    p.add_argument("--exclude-imputed", action="store_true",
                   help="drop imputed ages from the age histograms")
    p.set_defaults(func=cmd_eda)

    p = sub.add_parser("augment", help="plan and render minority-class synthetic images")
    p.add_argument("--split", required=True)
    p.add_argument("--images", default=env_default("DATA_DIR", None))
    p.add_argument("--out", required=True)
    p.add_argument("--target", type=int, default=6000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rotation", type=float, default=180.0)
    p.add_argument("--zoom", type=float, default=0.1)
    p.add_argument("--no-hflip", action="store_true")
    p.add_argument("--no-vflip", action="store_true")
    p.add_argument("--fill-mode", choices=("nearest", "reflect", "constant"), default="nearest")
    p.add_argument("--plan-only", action="store_true", help="write the manifest without images")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train the classification head on frozen features")
    p.add_argument("--split", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--augmented-images")
    p.add_argument("--weights-in", default=env_default("MODEL_PATH", None))
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="confusion matrix, report and top-k accuracy")
    p.add_argument("--model", required=True, default=env_default("MODEL_PATH", None))
    p.add_argument("--split", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subset", choices=("validation", "train"), default="validation")
    _add_model_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify one image, JSON on stdout")
    p.add_argument("--model", default=env_default("MODEL_PATH", None), required=False)
    p.add_argument("--image", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("summary", help="print the per-layer census of a model")
    p.add_argument("--model", default=None)
    _add_model_flags(p)
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("serve", help="start the HTTP inference service")
    p.add_argument("--model", default=env_default("MODEL_PATH", None), required=False)
    _add_model_flags(p)
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=env_default("PORT", DEFAULT_PORT))
    p.add_argument("--max-upload", type=int,
                   default=env_default("MAX_UPLOAD_BYTES", DEFAULT_MAX_UPLOAD))
    p.add_argument("--cors-origins", default=env_default("CORS_ORIGINS", "*"))
    p.add_argument("--audit-log", default=None,
                   help="append request checksums and top predictions to this JSONL file")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) in ("predict", "serve") and not args.model:
        print("error: --model is required (or set DERM_MODEL_PATH)", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except DermError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
