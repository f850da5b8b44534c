"""Command-line entry point for the overlay-text pipeline.

One subcommand per pipeline stage. Every run echoes its resolved settings
to ``effective_config.json`` next to its outputs and appends progress to a
``run.log`` there, so any result can be reproduced from that file and the
seed alone. Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

LOG = logging.getLogger("rwt")


def _load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _resolve(flag_value, config: Dict[str, Any], key: str, default):
    """Flag wins over config-file value wins over default."""
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return default


def _start_run(run_dir: Path, args: argparse.Namespace, resolved: Dict[str, Any]) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    payload = {"subcommand": args.subcommand}
    payload.update({k: v for k, v in sorted(resolved.items())})
    (run_dir / "effective_config.json").write_text(json.dumps(payload, indent=2) + "\n")
    for handler in list(LOG.handlers):
        LOG.removeHandler(handler)
    LOG.setLevel(logging.INFO)
    file_handler = logging.FileHandler(run_dir / "run.log")
    file_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    LOG.addHandler(file_handler)
    if getattr(args, "verbose", False):
        stream = logging.StreamHandler(sys.stderr)
        stream.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        LOG.addHandler(stream)
    LOG.info("run: %s", json.dumps(payload, sort_keys=True))


def _cmd_synth(args: argparse.Namespace) -> int:
    from .synth import SyntheticSpec, generate_corpus

    config = _load_config_file(args.config)
    spec_dict = _load_config_file(args.spec) if args.spec else config
    spec = SyntheticSpec.from_dict(spec_dict) if spec_dict else SyntheticSpec()
    if args.seed is not None:
        spec = SyntheticSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    out = Path(args.out)
    _start_run(out, args, {"spec": spec.to_dict(), "n": args.n, "out": str(out)})
    manifest = generate_corpus(spec, args.n, out)
    counts: Dict[str, int] = {}
    for record in manifest:
        counts[record.category] = counts.get(record.category, 0) + 1
    LOG.info("generated %d examples: %s", len(manifest), json.dumps(counts, sort_keys=True))
    print(f"wrote {len(manifest)} examples to {out}")
    return 0


def _cmd_scoremaps(args: argparse.Namespace) -> int:
    from .io import load_image, read_manifest, score_map_path, write_tensor
    from .scoremaps import (
        ProviderConfig,
        ProviderMode,
        ScoreMapProvider,
        layout_path,
        read_layout,
    )

    config = _load_config_file(args.config)
    manifest_path = Path(args.manifest)
    manifest = read_manifest(manifest_path)
    images_root = Path(args.images_root or manifest_path.parent)
    layouts_dir = Path(args.layouts or (manifest_path.parent / "layouts"))
    mode = ProviderMode(_resolve(args.mode, config, "mode", "synthetic_oracle"))
    sigma = float(_resolve(args.sigma, config, "oracle_sigma_px", 4.0))
    provider_cfg = ProviderConfig(
        mode=mode,
        weights_path=_resolve(args.weights, config, "weights_path", None),
        oracle_sigma_px=sigma,
    )
    provider = ScoreMapProvider(provider_cfg)
    target_side = args.target_side
    if target_side is not None and mode is ProviderMode.SYNTHETIC_ORACLE:
        print(
            "error: --target-side resizes images, but oracle layouts are in "
            "native coordinates; regenerate the corpus at the wanted size instead",
            file=sys.stderr,
        )
        return 1
    out = Path(args.out)
    _start_run(
        out,
        args,
        {
            "manifest": str(manifest_path),
            "out": str(out),
            "mode": mode.value,
            "oracle_sigma_px": sigma,
            "weights": provider_cfg.weights_path,
            "images_root": str(images_root),
            "layouts": str(layouts_dir),
            "target_side": target_side,
        },
    )
    from .training import resize_and_pad

    written = 0
    for record in manifest:
        image = load_image(images_root / record.image_path)
        if target_side is not None:
            image = resize_and_pad(image, target_side)
        layout = None
        if mode is ProviderMode.SYNTHETIC_ORACLE:
            layout = read_layout(layout_path(layouts_dir, record.image_id))
        score_map = provider.compute(image, layout)
        write_tensor(score_map_path(out, record.image_id), score_map)
        written += 1
    LOG.info("wrote %d score maps to %s", written, out)
    print(f"wrote {written} score maps to {out}")
    return 0


def _cmd_select(args: argparse.Namespace) -> int:
    from .datamodel import DatasetManifest
    from .io import read_manifest, read_score_map, score_map_path, write_manifest
    from .selection import GateConfig, select_candidates

    config = _load_config_file(args.config)
    gate = GateConfig(
        region_threshold=float(_resolve(args.region_threshold, config, "region_threshold", 0.8)),
        gate_cutoff=float(_resolve(args.gate_cutoff, config, "gate_cutoff", 5e-4)),
    )
    out = Path(args.out)
    _start_run(
        out.parent if out.parent != Path("") else Path("."),
        args,
        {
            "manifest": args.manifest,
            "out": str(out),
            "maps": args.maps,
            "region_threshold": gate.region_threshold,
            "gate_cutoff": gate.gate_cutoff,
        },
    )
    manifest = read_manifest(args.manifest)
    if args.maps:
        maps_dir = Path(args.maps)
        selected = select_candidates(
            manifest,
            lambda image_id: read_score_map(score_map_path(maps_dir, image_id)),
            gate,
        )
    else:
        # No maps given: gate on stored scores; unscored records pass through.
        kept = [
            r.copy()
            for r in manifest
            if r.gate_score is None or r.gate_score > gate.gate_cutoff
        ]
        selected = DatasetManifest(kept)
    write_manifest(out, selected)
    LOG.info("kept %d of %d records", len(selected), len(manifest))
    print(f"kept {len(selected)} of {len(manifest)} records -> {out}")
    return 0


def _cmd_aggregate(args: argparse.Namespace) -> int:
    from .annotation import AggregationConfig, aggregate_manifest, split_dataset
    from .io import read_manifest, read_votes, write_manifest

    config = _load_config_file(args.config)
    agg_cfg = AggregationConfig(
        time_percentile_cut=float(
            _resolve(args.time_cut, config, "time_percentile_cut", 5.0)
        ),
        min_votes=int(_resolve(args.min_votes, config, "min_votes", 3)),
        expected_votes=int(_resolve(args.expected_votes, config, "expected_votes", 5)),
        split_ratio=float(_resolve(args.split_ratio, config, "split_ratio", 0.75)),
        split_seed=int(_resolve(args.seed, config, "split_seed", 0)),
    )
    out = Path(args.out)
    _start_run(
        out.parent if out.parent != Path("") else Path("."),
        args,
        {
            "votes": args.votes,
            "manifest": args.manifest,
            "out": str(out),
            "time_percentile_cut": agg_cfg.time_percentile_cut,
            "min_votes": agg_cfg.min_votes,
            "expected_votes": agg_cfg.expected_votes,
            "split": bool(args.split),
            "split_ratio": agg_cfg.split_ratio,
            "split_seed": agg_cfg.split_seed,
        },
    )
    manifest = read_manifest(args.manifest)
    votes = read_votes(args.votes)
    aggregated = aggregate_manifest(manifest, votes, agg_cfg)
    if args.split:
        aggregated = split_dataset(aggregated, agg_cfg)
    write_manifest(out, aggregated)
    statuses: Dict[str, int] = {}
    for record in aggregated:
        statuses[record.status] = statuses.get(record.status, 0) + 1
    LOG.info("aggregated %d records: %s", len(aggregated), json.dumps(statuses, sort_keys=True))
    print(f"aggregated {len(aggregated)} records -> {out} ({statuses})")
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    from .annotation import dataset_stats, format_agreement_report, write_stats_outputs
    from .io import read_manifest, read_votes

    out_dir = Path(args.out_dir)
    _start_run(
        out_dir,
        args,
        {"manifest": args.manifest, "out_dir": str(out_dir), "votes": args.votes},
    )
    manifest = read_manifest(args.manifest)
    votes = read_votes(args.votes) if args.votes else None
    stats = dataset_stats(manifest, votes)
    write_stats_outputs(stats, out_dir)
    report = format_agreement_report(stats)
    LOG.info("stats written to %s", out_dir)
    print(report)
    return 0


def _variant_from_flag(value: str):
    from .nets import ModelVariant

    return ModelVariant.parse(value)


def _cmd_train(args: argparse.Namespace) -> int:
    from .annotation import AggregationConfig, split_dataset
    from .datamodel import Split
    from .io import read_manifest
    from .nets import save_model
    from .training import (
        TrainConfig,
        load_examples,
        train_classifier,
        write_history_csv,
    )

    config = _load_config_file(args.config)
    variant = _variant_from_flag(_resolve(args.variant, config, "variant", "craft-masked"))
    train_cfg = TrainConfig(
        variant=variant,
        lr0=float(_resolve(args.lr0, config, "lr0", 0.015)),
        momentum=float(_resolve(None, config, "momentum", 0.9)),
        weight_decay=float(_resolve(None, config, "weight_decay", 1e-5)),
        batch_size=int(_resolve(args.batch_size, config, "batch_size", 32)),
        max_epochs=int(_resolve(args.max_epochs, config, "max_epochs", 30)),
        anneal_factor=float(_resolve(None, config, "anneal_factor", 0.5)),
        plateau_epsilon=float(_resolve(None, config, "plateau_epsilon", 1e-4)),
        plateau_patience_epochs=int(_resolve(None, config, "plateau_patience_epochs", 1)),
        min_lr=float(_resolve(None, config, "min_lr", 1e-5)),
        seed=int(_resolve(args.seed, config, "seed", 0)),
        target_side=int(_resolve(None, config, "target_side", 224)),
    )
    manifest_path = Path(args.manifest)
    out = Path(args.out)
    images_root = Path(args.images_root or manifest_path.parent)
    maps_dir = Path(args.maps or (manifest_path.parent / "maps"))
    split_ratio = float(_resolve(args.split_ratio, config, "split_ratio", 0.75))
    _start_run(
        out,
        args,
        {
            "manifest": str(manifest_path),
            "out": str(out),
            "images_root": str(images_root),
            "maps": str(maps_dir),
            "variant": variant.value,
            "split_ratio": split_ratio,
            **{
                k: getattr(train_cfg, k)
                for k in (
                    "lr0",
                    "momentum",
                    "weight_decay",
                    "batch_size",
                    "max_epochs",
                    "anneal_factor",
                    "plateau_epsilon",
                    "plateau_patience_epochs",
                    "min_lr",
                    "seed",
                    "target_side",
                )
            },
        },
    )
    manifest = read_manifest(manifest_path)
    has_split = any(r.split is not None for r in manifest)
    if not has_split:
        manifest = split_dataset(
            manifest,
            AggregationConfig(split_ratio=split_ratio, split_seed=train_cfg.seed),
        )
    train_records = [r for r in manifest if r.split is Split.TRAIN]
    val_records = [r for r in manifest if r.split is Split.VAL]
    from .datamodel import DatasetManifest

    resize_to = train_cfg.target_side if args.resize else None
    train_examples = load_examples(
        DatasetManifest(train_records), images_root, maps_dir, resize_to=resize_to
    )
    val_examples = load_examples(
        DatasetManifest(val_records), images_root, maps_dir, resize_to=resize_to
    )
    LOG.info(
        "training %s on %d train / %d val examples",
        variant.value,
        len(train_examples),
        len(val_examples),
    )
    result = train_classifier(train_examples, val_examples, train_cfg)
    ckpt = out / f"{variant.value}.ckpt"
    save_model(
        ckpt,
        result.model,
        extra_meta={
            "train_config": {
                "variant": variant.value,
                "lr0": train_cfg.lr0,
                "momentum": train_cfg.momentum,
                "weight_decay": train_cfg.weight_decay,
                "batch_size": train_cfg.batch_size,
                "max_epochs": train_cfg.max_epochs,
                "seed": train_cfg.seed,
            },
            "best_val_loss": result.best_val_loss,
            "epochs_run": result.epochs_run,
            "stopped_reason": result.stopped_reason,
        },
    )
    write_history_csv(out / "history.csv", result.history)
    last = result.history[-1]
    LOG.info(
        "finished after %d epochs (%s): val_loss %.4f val_f1 %.4f",
        result.epochs_run,
        result.stopped_reason,
        last.val_loss,
        last.val_f1,
    )
    print(
        f"trained {variant.value}: {result.epochs_run} epochs, "
        f"best val loss {result.best_val_loss:.4f} -> {ckpt}"
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    from .datamodel import DatasetManifest, Split
    from .io import read_manifest
    from .metrics import best_f1_threshold, compute_report, format_metrics_table
    from .nets import load_model
    from .training import load_examples, predict_probabilities

    import numpy as np

    config = _load_config_file(args.config)
    threshold = float(_resolve(args.threshold, config, "threshold", 0.5))
    ckpt_path = Path(args.ckpt)
    checkpoints = (
        sorted(ckpt_path.glob("*.ckpt")) if ckpt_path.is_dir() else [ckpt_path]
    )
    if not checkpoints:
        raise FileNotFoundError(f"no checkpoints found under {ckpt_path}")
    manifest_path = Path(args.manifest)
    out = Path(args.out)
    _start_run(
        out.parent if out.parent != Path("") else Path("."),
        args,
        {
            "ckpt": str(ckpt_path),
            "manifest": str(manifest_path),
            "out": str(out),
            "threshold": threshold,
            "split": args.split,
        },
    )
    manifest = read_manifest(manifest_path)
    wanted = {
        "train": Split.TRAIN,
        "val": Split.VAL,
    }.get(args.split)
    records = [
        r
        for r in manifest
        if r.binary_class is not None and (wanted is None or r.split is wanted)
    ]
    if not records:
        raise ValueError("no labeled records match the requested split")
    images_root = Path(args.images_root or manifest_path.parent)
    maps_dir = Path(args.maps or (manifest_path.parent / "maps"))
    examples = load_examples(DatasetManifest(records), images_root, maps_dir)
    labels = np.array([e.label for e in examples])
    reports = {}
    payload = {}
    for ckpt in checkpoints:
        model, meta = load_model(ckpt)
        scores = predict_probabilities(model, examples)
        report = compute_report(scores, labels, threshold)
        best_t, best_f1 = best_f1_threshold(scores, labels)
        name = meta.get("variant", ckpt.stem)
        reports[name] = report
        entry = report.to_dict()
        entry["best_f1_threshold"] = best_t
        entry["best_f1"] = best_f1
        payload[name] = entry
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    table = format_metrics_table(reports)
    LOG.info("evaluated %d checkpoints on %d examples", len(checkpoints), len(examples))
    print(table)
    print(f"report -> {out}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app, load_state

    manifest_path = Path(args.manifest)
    audit = Path(args.audit) if args.audit else manifest_path.parent / "audit.jsonl"
    _start_run(
        manifest_path.parent,
        args,
        {
            "manifest": str(manifest_path),
            "images": args.images,
            "maps": args.maps,
            "votes": args.votes,
            "audit": str(audit),
            "host": args.host,
            "port": args.port,
        },
    )
    state = load_state(
        manifest_path,
        images_root=args.images,
        maps_dir=args.maps,
        audit_path=audit,
        votes_path=args.votes,
    )
    app = create_app(state)
    LOG.info("serving %d records on %s:%d", len(state.manifest), args.host, args.port)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rwt",
        description="Detect artificially overlaid text in room photos: "
        "dataset pipeline, training, evaluation, and vetting service.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the run seed")
    common.add_argument("--config", default=None, help="JSON config file; flags win")
    common.add_argument("--verbose", action="store_true", help="log to stderr too")

    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--spec", default=None, help="SyntheticSpec JSON file")
    p.add_argument("--n", type=int, default=500, help="number of examples")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("scoremaps", parents=[common], help="compute and cache score maps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="directory for .rwt score maps")
    p.add_argument("--mode", choices=["synthetic_oracle", "pretrained_backbone"], default=None)
    p.add_argument("--images-root", default=None)
    p.add_argument("--layouts", default=None, help="layout dir (oracle mode)")
    p.add_argument("--weights", default=None, help="backbone weights (backbone mode)")
    p.add_argument("--sigma", type=float, default=None, help="oracle Gaussian sigma, px")
    p.add_argument(
        "--target-side",
        type=int,
        default=None,
        help="square images to this side before scoring (backbone mode only)",
    )
    p.set_defaults(func=_cmd_scoremaps)

    p = sub.add_parser("select", parents=[common], help="gate images for annotation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--maps", default=None, help="score map dir; omit to gate on stored scores")
    p.add_argument("--region-threshold", type=float, default=None)
    p.add_argument("--gate-cutoff", type=float, default=None)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("aggregate", parents=[common], help="aggregate crowd votes")
    p.add_argument("--votes", required=True, help="votes CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--time-cut", type=float, default=None, help="vote-time percentile cut")
    p.add_argument("--min-votes", type=int, default=None)
    p.add_argument("--expected-votes", type=int, default=None)
    p.add_argument("--split", action="store_true", help="also assign train/val splits")
    p.add_argument("--split-ratio", type=float, default=None)
    p.set_defaults(func=_cmd_aggregate)

    p = sub.add_parser("stats", parents=[common], help="dataset statistics and plots")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--votes", default=None, help="votes CSV for agreement stats")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("train", parents=[common], help="train a classifier variant")
    p.add_argument("--manifest", required=True)
    p.add_argument(
        "--variant",
        default=None,
        help="craft-masked | unmasked-resnet | binarized-linear",
    )
    p.add_argument("--out", required=True, help="checkpoint output directory")
    p.add_argument("--images-root", default=None)
    p.add_argument("--maps", default=None)
    p.add_argument("--lr0", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--split-ratio", type=float, default=None)
    p.add_argument(
        "--resize",
        action="store_true",
        help="square images to target_side at load; needs maps built at that size",
    )
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate checkpoints")
    p.add_argument("--ckpt", required=True, help="checkpoint file or directory")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--images-root", default=None)
    p.add_argument("--maps", default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--split", choices=["train", "val", "all"], default="all")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("serve", parents=[common], help="run the vetting service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--images", default=None, help="image root directory")
    p.add_argument("--maps", default=None, help="score map directory for boxes")
    p.add_argument("--votes", default=None, help="votes CSV for the detail view")
    p.add_argument("--audit", default=None, help="audit log path")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 1
    except Exception as err:  # domain errors -> exit 1 with a message
        LOG.error("%s", err)
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
