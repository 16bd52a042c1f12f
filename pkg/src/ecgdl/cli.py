"""Command-line entry point: train, cv, explain, generate, inspect-arch.

Exit codes: 0 success, 2 configuration error, 3 runtime/numerical error.
Every command writes its resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .attention import GatedAttentionModel, export_attention_csv, export_attention_svg
from .backbones import named_backbone
from .cam import cam_for_prediction, export_cam_csv, export_cam_svg
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, build_model_from_config, parse_config, parse_layer_grammar
from .data import (generate_synthetic, load_manifest, load_record, load_records,
                   write_dataset)
from .errors import ConfigError, EcgDlError
from .heads import CLASS_NAMES, PooledClassifier
from .introspection import (decision_over_time, export_decision_csv, export_decision_svg,
                            export_gate_csv, export_gate_svg, gate_trace)
from .metrics import cross_validate
from .perturbation import (MaskConfig, export_perturbation_csv, export_perturbation_svg,
                           optimize_mask)
from .recurrent import ConvLstmModel
from .training import evaluate_confusion, train_model

__all__ = ["main"]


def _out_dir(config: RunConfig, override) -> Path:
    out = Path(override) if override else Path(config.get("output", "dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(config: RunConfig, out: Path) -> None:
    (out / "resolved_config.ini").write_text(config.resolved_text())


def _load_dataset(config: RunConfig):
    if config.get_bool("data", "synthetic"):
        return generate_synthetic(config.synthetic_config())
    manifest_path = config.get("data", "manifest")
    if not manifest_path:
        raise ConfigError("[data] either synthetic=true or a manifest path is required")
    manifest = load_manifest(Path(config.source).parent / manifest_path
                             if not Path(manifest_path).is_absolute() else manifest_path)
    return load_records(manifest, sample_rate=config.get_float("data", "sample_rate"))


def _write_loss_curve(history, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(history["epoch_loss"]):
            writer.writerow([i, f"{loss:.8f}"])


def cmd_train(args) -> int:
    config = parse_config(args.config)
    out = _out_dir(config, args.out)
    _echo_config(config, out)
    records = _load_dataset(config)
    model = build_model_from_config(config, seed_override=args.seed)
    train_cfg = config.train_config(seed_override=args.seed)

    state_path = out / "state.json"
    start_epoch = 0
    if args.resume:
        if not state_path.exists():
            raise ConfigError(f"cannot resume: {state_path} does not exist")
        state = json.loads(state_path.read_text())
        start_epoch = int(state["epochs_completed"])
        load_checkpoint(model, out / "model.ckpt")

    if config.get_bool("train", "pretrain") and isinstance(model, ConvLstmModel):
        from .heads import HeadSpec
        from .training import pretrain_then_joint

        schedule = config.pretrain_schedule()
        head = HeadSpec(pooling=config.get("model", "pooling"),
                        classes=config.get_int("model", "classes"))
        model = pretrain_then_joint(model.backbone, head, model.spec, records, schedule,
                                    train_cfg, classes=config.get_int("model", "classes"),
                                    seed=train_cfg.seed,
                                    capture_gates=config.get_bool("model", "capture_gates"))
        history = {"epoch_loss": []}
        epochs_done = schedule.pretrain_epochs + schedule.joint_epochs
    else:
        history = train_model(model, records, train_cfg, start_epoch=start_epoch)
        epochs_done = start_epoch + train_cfg.epochs

    save_checkpoint(model, out / "model.ckpt")
    _write_loss_curve(history, out / "loss.csv")
    cm = evaluate_confusion(model, records, train_cfg)
    metrics = {
        "train_records": len(records),
        "epochs_completed": epochs_done,
        "final_loss": history["epoch_loss"][-1] if history["epoch_loss"] else None,
        "train_confusion": cm.counts.tolist(),
        "train_f1": [float(v) for v in cm.f1_scores()],
    }
    (out / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=2))
    state_path.write_text(json.dumps({"epochs_completed": epochs_done}))
    print(f"trained {epochs_done} epochs; outputs in {out}")
    return 0


def cmd_cv(args) -> int:
    config = parse_config(args.config)
    out = _out_dir(config, args.out)
    _echo_config(config, out)
    records = _load_dataset(config)
    train_cfg = config.train_config(seed_override=args.seed)

    def factory(fold):
        return build_model_from_config(config, seed_override=train_cfg.seed + fold)

    report, fold_cms = cross_validate(factory, records, k=args.k, train_config=train_cfg,
                                      seed=train_cfg.seed, workers=args.workers)
    (out / "cv_report.json").write_text(report.to_json())
    for i, cm in enumerate(fold_cms):
        np.savetxt(out / f"fold{i}_confusion.csv", cm.counts, fmt="%d", delimiter=",")
    print(report.format_table(architecture=config.get("model", "backbone")))
    print(f"mean overall F1: {report.mean_overall:.4f} (+/- {report.std_overall:.4f})")
    return 0


def _load_explain_model(config: RunConfig, checkpoint):
    model = build_model_from_config(config)
    load_checkpoint(model, checkpoint)
    model.eval()
    return model


def cmd_explain(args) -> int:
    config = parse_config(args.config)
    out = _out_dir(config, args.out)
    record = load_record(args.record, sample_rate=config.get_float("data", "sample_rate"))
    model = _load_explain_model(config, args.checkpoint)
    pad_len = config.pad_len
    stem = out / f"{record.id}_{args.method}"

    if args.method == "cam":
        if not isinstance(model, PooledClassifier):
            raise ConfigError("method 'cam' needs a pooled-head model "
                              "(aggregator = pool in the config)")
        cam = cam_for_prediction(model, record, pad_len=pad_len)
        export_cam_csv(cam, record, f"{stem}.csv")
        export_cam_svg(cam, record, f"{stem}.svg",
                       title=f"{record.id}: CAM for class {CLASS_NAMES[cam.class_index]}")
        print(f"CAM for class {CLASS_NAMES[cam.class_index]} -> {stem}.csv/.svg")
    elif args.method == "gate":
        if not isinstance(model, GatedAttentionModel):
            raise ConfigError("method 'gate' needs an attention-gated model "
                              "(aggregator = attention in the config)")
        amap = model.attention_map(record, pad_len=pad_len)
        export_attention_csv(amap, record, f"{stem}.csv")
        export_attention_svg(amap, record, f"{stem}.svg",
                             title=f"{record.id}: gated attention (layer {amap.tap})")
        print(f"attention map -> {stem}.csv/.svg")
    elif args.method == "decision":
        trace = decision_over_time(model, record, pad_len=pad_len)
        export_decision_csv(trace, f"{stem}.csv")
        export_decision_svg(trace, f"{stem}.svg")
        print(f"decision trace (final: {CLASS_NAMES[trace.final_decision]}) -> {stem}.csv/.svg")
    elif args.method == "gatetrace":
        trace = gate_trace(model, record, pad_len=pad_len)
        export_gate_csv(trace, f"{stem}.csv")
        export_gate_svg(trace, f"{stem}.svg")
        print(f"gate trace ({trace.steps} steps x {trace.units} units) -> {stem}.csv/.svg")
    elif args.method == "perturb":
        mask_cfg = MaskConfig(lam1=args.lam1, lam2=args.lam2, epochs=args.epochs,
                              lr=args.lr, seed=args.seed or 0)
        result = optimize_mask(record, model, mask_cfg, pad_len=pad_len)
        export_perturbation_csv(result, f"{stem}.csv")
        export_perturbation_svg(result, record, f"{stem}.svg")
        flip = "flipped" if result.flip_achieved else "did not flip"
        print(f"perturbation {flip} ({CLASS_NAMES[result.predicted_class]} -> "
              f"{CLASS_NAMES[int(np.argmax(result.after))]}) -> {stem}.csv/.svg")
    else:
        raise ConfigError(f"unknown explain method '{args.method}'")
    return 0


def cmd_generate(args) -> int:
    config = parse_config(args.config)
    out = _out_dir(config, args.out)
    _echo_config(config, out)
    records = generate_synthetic(config.synthetic_config())
    manifest = write_dataset(records, out)
    counts = np.bincount([r.label for r in records], minlength=len(CLASS_NAMES))
    histogram = {name: int(c) for name, c in zip(CLASS_NAMES, counts)}
    print(f"wrote {len(records)} records to {out} (manifest {manifest})")
    print(f"class histogram: {histogram}")
    return 0


def cmd_inspect_arch(args) -> int:
    config = parse_config(args.config)
    name = config.get("model", "backbone")
    spec = parse_layer_grammar(config.get("model", "custom_layers")) if name == "custom" \
        else named_backbone(name)
    pad = config.pad_len
    model = build_model_from_config(config)
    print(f"backbone {spec.name}: input length {pad}")
    print(f"{'layer':>8} {'out len':>8} {'channels':>9}")
    for label, length, channels in spec.layer_table(pad):
        print(f"{label:>8} {length:>8} {channels:>9}")
    print(f"trainable parameters: {model.count_parameters()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecgdl",
                                     description="1-D CNN/ConvLSTM rhythm classification "
                                                 "with attention and saliency tooling")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to the run config (INI)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--workers", type=int, default=1, help="parallel fold workers")

    p_train = sub.add_parser("train", help="train one model")
    common(p_train)
    p_train.add_argument("--resume", action="store_true",
                         help="continue from the checkpoint in the output directory")
    p_train.set_defaults(fn=cmd_train)

    p_cv = sub.add_parser("cv", help="k-fold cross validation")
    common(p_cv)
    p_cv.add_argument("--k", type=int, default=8)
    p_cv.set_defaults(fn=cmd_cv)

    p_exp = sub.add_parser("explain", help="emit CSV+SVG explanations for one record")
    common(p_exp)
    p_exp.add_argument("--checkpoint", required=True)
    p_exp.add_argument("--record", required=True)
    p_exp.add_argument("--method", required=True,
                       choices=["cam", "gate", "decision", "perturb", "gatetrace"])
    p_exp.add_argument("--lam1", type=float, default=0.2)
    p_exp.add_argument("--lam2", type=float, default=0.1)
    p_exp.add_argument("--epochs", type=int, default=500)
    p_exp.add_argument("--lr", type=float, default=1e-4)
    p_exp.set_defaults(fn=cmd_explain)

    p_gen = sub.add_parser("generate", help="write a synthetic dataset + manifest")
    common(p_gen)
    p_gen.set_defaults(fn=cmd_generate)

    p_arch = sub.add_parser("inspect-arch", help="print the layer table and parameter count")
    common(p_arch)
    p_arch.set_defaults(fn=cmd_inspect_arch)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except EcgDlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
