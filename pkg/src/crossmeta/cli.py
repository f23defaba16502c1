"""Command-line runner: gen-data, pretrain, finetune, eval, ablate, heatmap, export-embeddings.

Every command writes into ``--out`` (default: ``$CROSSMETA_OUT/<command>``).
Outputs are staged in a scratch directory and moved into place only on
success; a failed run leaves its partial files under ``<out>/quarantine/``.
Logs are JSON, one record per line.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config, with_seed
from .data import (default_specs, generate, load_table, sister_pairs, specs_from_json, specs_to_json,
                   write_table)
from .encoders import ValidationError
from .evaluation import (class_heatmap, evaluate, export_location_embeddings,
                         run_ablation, summarize)
from .training import finetune, load_checkpoint, pretrain, save_checkpoint

OUT_ENV = "CROSSMETA_OUT"


class CommandError(Exception):
    pass


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUT_ENV)
    if not root:
        raise CommandError(f"--out is required when ${OUT_ENV} is not set")
    return Path(root) / args.command


def _load_data(data_dir: Path):
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    names = manifest.get("classes")
    train = load_table(data_dir / "train.csv", names, "train")
    test = load_table(data_dir / "test.csv", names or train.class_names, "test")
    pairs = [tuple(p) for p in manifest.get("sister_pairs", [])]
    return train, test, pairs, manifest


def _resolve(args, require_seed: bool) -> RunConfig:
    cfg = with_seed(load_config(getattr(args, "config", None)), getattr(args, "seed", None))
    if require_seed and not cfg.seed_given:
        raise CommandError("a seed is required: set [training] seed in --config or pass --seed")
    return cfg


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, out: Path) -> dict:
    cfg = args.resolved
    if args.spec:
        try:
            specs = specs_from_json(Path(args.spec).read_text())
        except (OSError, ValueError, TypeError) as exc:
            raise CommandError(f"cannot read species spec {args.spec}: {exc}") from exc
    else:
        specs = default_specs(cfg.data.feature_dim, cfg.data.noise, cfg.data.spec_seed)
    n = args.n_per_class or cfg.data.n_per_class
    train, test = generate(specs, n, seed=args.seed)
    write_table(train, out / "train.csv")
    write_table(test, out / "test.csv")
    spec_json = specs_to_json(specs)
    (out / "specs.json").write_text(spec_json)
    manifest = {"classes": train.class_names, "num_classes": train.num_classes,
                "counts": {"train": len(train), "test": len(test)},
                "per_class": {"train": np.bincount(train.labels).tolist(),
                              "test": np.bincount(test.labels).tolist()},
                "sister_pairs": [list(p) for p in sister_pairs(specs)],
                "spec_hash": hashlib.sha256(spec_json.encode()).hexdigest()[:16],
                "seed": args.seed, "feature_dim": int(train.features.shape[1])}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))
    return {"train": len(train), "test": len(test)}


def _encoder_for(cfg: RunConfig, train):
    return replace(cfg.encoders, num_classes=train.num_classes, image_dim=train.features.shape[1])


def cmd_pretrain(args, out: Path) -> dict:
    cfg = args.resolved
    train, _, _, _ = _load_data(args.data)
    enc = _encoder_for(cfg, train)
    args.resolved = replace(cfg, encoders=enc)
    params, hist = pretrain(train, cfg.training, enc)
    save_checkpoint(out / "checkpoint.npz", params, enc, cfg.training, {"stage": "pretrain"})
    _write_jsonl(out / "pretrain_log.jsonl", hist.records)
    return {"final_total": hist.records[-1]["total"] if hist.records else None}


def cmd_finetune(args, out: Path) -> dict:
    cfg = args.resolved
    train, test, _, _ = _load_data(args.data)
    params, enc, _, _ = load_checkpoint(args.checkpoint)
    training = cfg.training
    if args.unfreeze:
        training = replace(training, freeze_encoders=False)
    args.resolved = replace(cfg, encoders=enc, training=training)
    params, hist = finetune(train, params, training, enc, test)
    save_checkpoint(out / "finetune.npz", params, enc, training, {"stage": "finetune"})
    _write_jsonl(out / "finetune_log.jsonl", hist.records)
    return {"final_test_accuracy": hist.records[-1].get("test_accuracy") if hist.records else None}


def cmd_eval(args, out: Path) -> dict:
    _, test, pairs, _ = _load_data(args.data)
    params, enc, training, meta = load_checkpoint(args.checkpoint)
    args.resolved = replace(args.resolved, encoders=enc, training=training)
    report = evaluate(test, params, enc, pairs, training.use_meta, seed=training.seed,
                      config_hash=meta.get("config_hash"))
    (out / "report.json").write_text(report.to_json() + "\n")
    return {"accuracy": report.accuracy, "sister_accuracy": report.sister_accuracy}


def cmd_ablate(args, out: Path) -> dict:
    cfg = args.resolved
    train, test, pairs, _ = _load_data(args.data)
    enc = _encoder_for(cfg, train)
    args.resolved = replace(cfg, encoders=enc)
    seeds = [cfg.training.seed + k for k in range(args.n_seeds)]
    reports = run_ablation(train, test, cfg.training, enc, pairs=pairs, seeds=seeds)
    with open(out / "ablation.jsonl", "w", encoding="utf-8") as fh:
        for rs in reports.values():
            for r in rs:
                fh.write(r.to_json() + "\n")
    summary = {}
    for name, rs in reports.items():
        acc_mean, acc_sd = summarize(rs, "accuracy")
        sis_mean, sis_sd = summarize(rs, "sister_accuracy") if pairs else (None, None)
        summary[name] = {"accuracy_mean": acc_mean, "accuracy_sd": acc_sd,
                         "sister_accuracy_mean": sis_mean, "sister_accuracy_sd": sis_sd}
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
    return summary


def _fixed_image(args, test, class_id: int) -> np.ndarray:
    if args.sample_id is not None:
        hits = np.flatnonzero(test.ids == args.sample_id)
        if hits.size == 0:
            raise CommandError(f"no test sample with id {args.sample_id}")
        return test.features[hits[0]]
    return test.features[test.labels == class_id].mean(axis=0)


def cmd_heatmap(args, out: Path) -> dict:
    cfg = args.resolved
    _, test, _, _ = _load_data(args.data)
    params, enc, training, _ = load_checkpoint(args.checkpoint)
    args.resolved = replace(cfg, encoders=enc, training=training)
    class_id = cfg.evaluation.class_id if args.class_id is None else args.class_id
    date = cfg.evaluation.date if args.date is None else args.date
    hm = class_heatmap(params, enc, class_id, _fixed_image(args, test, class_id), date, cfg.evaluation.grid)
    hm.write(out / "heatmap.csv")
    return {"max": float(hm.probs.max()), "mean": float(hm.probs.mean())}


def cmd_export_embeddings(args, out: Path) -> dict:
    cfg = args.resolved
    params, enc, training, _ = load_checkpoint(args.checkpoint)
    args.resolved = replace(cfg, encoders=enc, training=training)
    date = cfg.evaluation.date if args.date is None else args.date
    table = export_location_embeddings(params, enc, cfg.evaluation.grid, date, out / "embeddings.csv")
    return {"rows": int(table.shape[0])}


SEEDED_COMMANDS = ("pretrain", "finetune", "ablate")

COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "heatmap": cmd_heatmap,
    "export-embeddings": cmd_export_embeddings,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossmeta", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_, *, config=True, data=True, checkpoint=False, seed=False):
        p = sub.add_parser(name, help=help_, description=help_)
        if config:
            p.add_argument("--config", help="INI config file; flags override its values")
        if data:
            p.add_argument("--data", required=True, help="directory with train.csv, test.csv, manifest.json")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="parameter checkpoint (.npz)")
        if seed:
            p.add_argument("--seed", type=int, help="run seed (overrides [training] seed)")
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/{name})")
        return p

    p = add("gen-data", "Generate the synthetic sister-species dataset.", data=False)
    p.add_argument("--spec", help="JSON list of species specs (default: built-in 12-class set)")
    p.add_argument("--seed", type=int, required=True, help="generator seed")
    p.add_argument("--n-per-class", type=int, help="samples per class before the 50/50 split")

    add("pretrain", "Cross-contrastive pre-training of all three encoders.", seed=True)
    p = add("finetune", "Fine-tune the classifier on concatenated image+metadata embeddings.",
            checkpoint=True, seed=True)
    p.add_argument("--unfreeze", action="store_true", help="also update image and metadata encoders")
    add("eval", "Evaluate a fine-tuned checkpoint on the test split.", config=False, checkpoint=True)
    p = add("ablate", "Re-run pre-training and fine-tuning with loss terms removed.", seed=True)
    p.add_argument("--n-seeds", type=int, default=5, help="number of consecutive seeds (default 5)")
    p = add("heatmap", "Probability of one class over a lat/lon grid for a fixed image and date.",
            checkpoint=True)
    p.add_argument("--class-id", type=int, help="class to map (default from [evaluation])")
    p.add_argument("--date", type=int, help="day of year (default from [evaluation], mid-year)")
    p.add_argument("--sample-id", type=int, help="test sample whose image is held fixed "
                                                 "(default: mean test image of the class)")
    p = add("export-embeddings", "Write the metadata embedding of every grid cell.", data=False,
            checkpoint=True)
    p.add_argument("--date", type=int, help="day of year (default from [evaluation])")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = _out_dir(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    stage = out / f".partial-{os.getpid()}-{time.time_ns()}"
    stage.mkdir()
    started = time.time()
    try:
        args.resolved = _resolve(args, require_seed=args.command in SEEDED_COMMANDS)
        result = COMMANDS[args.command](args, stage)
        (stage / "config.ini").write_text(args.resolved.to_ini())
    except (CommandError, ValidationError, ValueError, OSError, FloatingPointError) as exc:
        quarantine = out / "quarantine" / stage.name.lstrip(".")
        quarantine.parent.mkdir(exist_ok=True)
        shutil.move(str(stage), quarantine)
        print(json.dumps({"command": args.command, "status": "error", "error": str(exc),
                          "quarantine": str(quarantine)}, sort_keys=True))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for item in stage.iterdir():
        target = out / item.name
        if target.exists():
            target.unlink()
        shutil.move(str(item), target)
    stage.rmdir()
    print(json.dumps({"command": args.command, "status": "ok", "out": str(out),
                      "seconds": round(time.time() - started, 3), "result": result},
                     sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
