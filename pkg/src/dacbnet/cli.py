"""``dacb`` command line: train, eval, ablate, verify, cam, synth, augment.

Exit codes: 0 ok, 1 runtime failure, 2 usage, config or input-data error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import replace

from . import backbone, config, experiments, explain, losses, metrics, verify
from .data import manifest as manifest_mod
from .data.augment import AugmentSpec
from .data.ppm import atomic_write_bytes, read_ppm
from .data.synth import synth_generate, write_dataset
from .train import CheckpointError, TrainConfig, TrainData, TrainingDiverged, evaluate, load_checkpoint, train_loop

log = logging.getLogger("dacb")

USAGE_ERRORS = (
    config.ConfigError, backbone.ConfigError, manifest_mod.ManifestError, CheckpointError,
    explain.InputError, metrics.InputError, losses.InputError,
)


class UsageError(Exception):
    pass


def _require_file(path, what):
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


# -- train -------------------------------------------------------------------

def _train_raw(args) -> tuple:
    raw = config.read_raw(_require_file(args.config, "config file"))
    for o in args.set or ():
        config.apply_override(raw, o)
    flags = {
        "train.epochs": args.epochs, "train.loss.kind": args.loss, "train.loss.beta": args.beta,
        "output": args.out,
    }
    if args.seed is not None:
        flags.update({"train.seed": args.seed, "model.seed": args.seed})
    for key, value in flags.items():
        if value is not None:
            config.apply_override(raw, f"{key}={json.dumps(value)}")
    mpath = raw.get("data", {}).get("manifest")
    if not mpath:
        raise config.ConfigError("data.manifest is required")
    if not os.path.isabs(mpath):
        mpath = os.path.join(os.path.dirname(os.path.abspath(args.config)), mpath)
    raw["data"]["manifest"] = os.path.abspath(mpath)
    return raw, raw["data"]["manifest"]


def _fill_classes(raw, n):
    for keys in (("model",), ("train", "loss")):
        node = raw
        for k in keys:
            node = node.setdefault(k, {})
        node.setdefault("classes", n)


def prepare_data(cfg: config.RunConfig, manifest):
    if all(e.split == "" for e in manifest.entries):
        manifest = manifest_mod.split(manifest, cfg.data.split)
    if cfg.data.balance_target:
        manifest = manifest_mod.balance_to(manifest, cfg.data.balance_target, cfg.data.augment, cfg.data.split.seed)
    return manifest


def cmd_train(args) -> int:
    raw, mpath = _train_raw(args)
    manifest = manifest_mod.load_manifest(_require_file(mpath, "manifest"))
    _fill_classes(raw, len(manifest.classes))
    cfg = config.resolve(raw)
    for where, n in (("model.classes", cfg.model.classes), ("train.loss.classes", cfg.train.loss.classes)):
        if n != len(manifest.classes):
            raise config.ConfigError(f"{where} = {n} but the manifest has {len(manifest.classes)} classes")
    manifest = prepare_data(cfg, manifest)
    x_tr, y_tr = manifest.load_arrays("train")
    x_va, y_va = manifest.load_arrays("val") if manifest.subset("val") else (None, None)
    if x_tr.shape[2:] != cfg.model.stream_a.input_size:
        raise config.ConfigError(f"images are {x_tr.shape[2:]} but model input_size is {cfg.model.stream_a.input_size}")

    out = cfg.output
    os.makedirs(out, exist_ok=True)
    config.write_resolved(cfg, out)
    manifest_mod.relocate(manifest, out).save(os.path.join(out, "manifest.csv"))
    model = backbone.build_dacb(cfg.model)
    resume = load_checkpoint(_require_file(args.resume, "checkpoint")) if args.resume else None
    start = time.perf_counter()
    result = train_loop(model, TrainData(x_tr, y_tr, x_va, y_va), cfg.train, out, resume,
                        extra={"classes": manifest.classes})
    last = result.history[-1] if result.history else None
    if last:
        print(f"trained {len(result.history)} epochs in {time.perf_counter() - start:.1f}s: "
              f"train_acc {last[2]:.4f} val_acc {last[4]:.4f} (best epoch {result.best_epoch})")
    print(f"outputs in {out}")
    return 0


# -- eval --------------------------------------------------------------------

def cmd_eval(args) -> int:
    ckpt = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    classes = ckpt.extra.get("classes")
    manifest = manifest_mod.load_manifest(_require_file(args.manifest, "manifest"), classes=classes)
    x, y = manifest.load_arrays(args.split)
    model = ckpt.build_model()
    loss_cfg = TrainConfig.from_dict(ckpt.train_config).loss if ckpt.train_config else losses.LossConfig(
        "ce", len(manifest.classes))
    _, _, probs = evaluate(model, x, y, loss_cfg, args.batch_size)
    report = metrics.evaluate_predictions(probs, y, manifest.classes)
    os.makedirs(args.out, exist_ok=True)
    report.write(args.out)
    sys.stdout.write(report.to_text())
    return 0


# -- ablate ------------------------------------------------------------------

ROW_FIELDS = ["variant", "seed", "loss", "test_acc", "macro_f1", "minority_recall", "macro_auc",
              "best_epoch", "epochs", "data_hash"]


def _rows_csv(rows, fields):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def cmd_ablate(args) -> int:
    spec = experiments.ExperimentSpec()
    if args.config:
        raw = config.read_raw(_require_file(args.config, "config file"))
        try:
            spec = experiments.ExperimentSpec.from_dict(raw)
        except (TypeError, ValueError) as exc:
            raise config.ConfigError(f"{args.config}: {exc}") from None
    if args.epochs is not None:
        spec = replace(spec, epochs=args.epochs)
    try:
        variants = [experiments.Variant.parse(v) for v in args.variants.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not variants:
        raise UsageError("no variants given")
    os.makedirs(args.out, exist_ok=True)
    _write_text(os.path.join(args.out, "resolved_config.json"),
                json.dumps({"spec": spec.to_dict(), "variants": [v.name for v in variants],
                            "seeds": args.seeds}, indent=2, sort_keys=True) + "\n")
    rows = experiments.ablate(variants, spec, args.seeds,
                              progress=lambda r: log.info("%s seed %d acc %.4f", r["variant"], r["seed"], r["test_acc"]))
    _write_text(os.path.join(args.out, "comparison.csv"), _rows_csv(rows, ROW_FIELDS))
    table = experiments.summarize(rows)
    summary = _rows_csv(table, ["variant", "loss", "seeds", "test_acc", "macro_f1", "minority_recall"])
    _write_text(os.path.join(args.out, "summary.csv"), summary)
    sys.stdout.write(summary)
    return 0


# -- verify ------------------------------------------------------------------

def cmd_verify(args) -> int:
    results = verify.run_all(args.suite or None)
    ok = True
    for r in results:
        print(f"{r.name}: {r.passed}/{len(r.checks)} passed ({r.seconds:.1f}s)")
        for c in r.checks:
            if not c.passed:
                ok = False
                print(f"  FAIL {c.name}: {c.detail or c.value}")
    return 0 if ok else 1


# -- cam ---------------------------------------------------------------------

def cmd_cam(args) -> int:
    ckpt = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    model = ckpt.build_model()
    image = read_ppm(_require_file(args.image, "image"))
    classes = ckpt.extra.get("classes") or []
    if args.target is None:
        target = int(model.forward(image[None]).argmax())
    elif args.target in classes:
        target = classes.index(args.target)
    else:
        try:
            target = int(args.target)
        except ValueError:
            raise UsageError(f"unknown class {args.target!r}") from None
    layers = args.layer or ["stream_a.dam_out", "stream_b.dam_out"]
    name = args.name or os.path.splitext(os.path.basename(args.image))[0]
    os.makedirs(args.out, exist_ok=True)
    for layer in layers:
        stem = name if len(layers) == 1 else f"{name}_{layer.split('.')[0]}"
        hm = explain.grad_cam(model, image, layer, target)
        explain.render_overlay(hm, image, os.path.join(args.out, f"{stem}_cam.ppm"))
        explain.write_heatmap_csv(hm, os.path.join(args.out, f"{stem}_cam.csv"))
        print(f"{layer}: class {target} -> {stem}_cam.ppm, {stem}_cam.csv")
    return 0


# -- synth / augment ---------------------------------------------------------

def cmd_synth(args) -> int:
    ratios = _int_list(args.ratios) if args.ratios else None
    ds = synth_generate(args.classes, args.per_class, args.size, args.seed, ratios)
    manifest = write_dataset(ds, args.out)
    if args.split:
        manifest = manifest_mod.split(manifest, manifest_mod.SplitSpec(tuple(_float_list(args.split)), args.seed))
    path = os.path.join(args.out, "manifest.csv")
    manifest.save(path)
    counts = ", ".join(f"{c}={n}" for c, n in manifest.counts().items())
    print(f"wrote {len(manifest.entries)} images ({counts}) and {path}")
    return 0


def cmd_augment(args) -> int:
    manifest = manifest_mod.load_manifest(_require_file(args.manifest, "manifest"))
    if not manifest.subset("train"):
        raise manifest_mod.ManifestError("manifest has no train split to balance")
    out = args.out or args.manifest
    balanced = manifest_mod.balance_to(manifest, args.target, AugmentSpec(), args.seed,
                                       materialize=args.materialize)
    manifest_mod.relocate(balanced, os.path.dirname(os.path.abspath(out))).save(out)
    counts = ", ".join(f"{c}={n}" for c, n in balanced.counts("train").items())
    print(f"train split balanced to {args.target} per class ({counts}); wrote {out}")
    return 0


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dacb", description="Dual attention compact bilinear network toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a JSON run config")
    t.add_argument("--config", required=True)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. train.lr=5e-4")
    t.add_argument("--out", help="output directory (config key: output)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int, help="sets train.seed and model.seed")
    t.add_argument("--loss", choices=losses.KINDS)
    t.add_argument("--beta", type=float, help="complement entropy weight for the cce loss")
    t.add_argument("--resume", help="continue from a checkpoint written by an earlier run")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on one manifest split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test", choices=["train", "val", "test"])
    e.add_argument("--out", required=True)
    e.add_argument("--batch-size", type=int, default=64)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train variants on identical synthetic data and compare")
    a.add_argument("--variants", required=True, help="comma separated streams:attention:pooling:loss")
    a.add_argument("--config", help="JSON experiment spec (synthetic set, widths, epochs)")
    a.add_argument("--seeds", type=_int_list, default=[0])
    a.add_argument("--epochs", type=int)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    v = sub.add_parser("verify", help="run the numerical self-checks")
    v.add_argument("--suite", action="append", choices=list(verify.SUITES))
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("cam", help="Grad-CAM heat map overlays")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--image", required=True)
    c.add_argument("--class", dest="target", help="class index or name (default: predicted)")
    c.add_argument("--layer", action="append", help="tap path, e.g. stream_a.dam_out (default: both streams)")
    c.add_argument("--name")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_cam)

    s = sub.add_parser("synth", help="write the synthetic texture dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--per-class", type=int, default=100)
    s.add_argument("--ratios", help="per-class multipliers, e.g. 9,3,1,1")
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split", help="train,val,test fractions, e.g. 0.7,0.15,0.15")
    s.set_defaults(func=cmd_synth)

    g = sub.add_parser("augment", help="balance a manifest's train split by augmentation and subsampling")
    g.add_argument("--manifest", required=True)
    g.add_argument("--target", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="output manifest (default: overwrite the input)")
    g.add_argument("--materialize", action="store_true", help="also write the augmented images")
    g.set_defaults(func=cmd_augment)
    return p


def _limit_threads():
    value = os.environ.get("DACB_THREADS")
    if not value:
        return None
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"DACB_THREADS must be a positive integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limiter = _limit_threads()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"dacb {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"dacb {args.command}: training diverged: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("unhandled error", exc_info=True)
        print(f"dacb {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
