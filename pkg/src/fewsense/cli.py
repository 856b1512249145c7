"""Command-line entry point: generate, preprocess, train, eval, ablate.

Configuration is layered: dataclass defaults, then a key=value config file,
then repeated --set key=value overrides. Every run writes a manifest.json
echoing the fully resolved configuration so the run can be reproduced.
The output directory comes from --out, else $FEWSENSE_OUT, else ./runs/<command>.
"""
from __future__ import annotations

import argparse
import ast
import csv
import json
import os
import sys
from dataclasses import asdict, fields
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .csi_core import SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .errors import ConfigurationError, FewsenseError
from .preprocess import DwtConfig, HampelConfig, preprocess_record
from .trainer import (
    TrainConfig,
    config_to_dict,
    evaluate,
    load_checkpoint,
    model_from_checkpoint,
    run_ablation,
    train,
)

MANIFEST_FORMAT_VERSION = 1


def _parse_value(text: str):
    lowered = text.strip().lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return ast.literal_eval(text.strip())
    except (ValueError, SyntaxError):
        return text.strip()


def load_config_file(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = _parse_value(value)
    return values


def resolve_config(defaults: dict, config_path, set_args) -> dict:
    resolved = dict(defaults)
    layers = []
    if config_path:
        layers.append(load_config_file(config_path))
    overrides = {}
    for item in set_args or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = _parse_value(value)
    layers.append(overrides)
    for layer in layers:
        for key, value in layer.items():
            if key not in resolved:
                raise ConfigurationError(f"unknown configuration key {key!r}")
            resolved[key] = value
    return resolved


def _out_dir(args, command: str) -> Path:
    base = args.out or os.environ.get("FEWSENSE_OUT") or os.path.join("runs", command)
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out_dir: Path, command: str, config: dict, seed, outputs: dict) -> Path:
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "package_version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "outputs": {name: str(path) for name, path in outputs.items()},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _synthetic_defaults() -> dict:
    return {f.name: getattr(SyntheticConfig(), f.name) for f in fields(SyntheticConfig)}


def _flat_train_defaults() -> dict:
    base = TrainConfig()
    flat = {}
    for f in fields(TrainConfig):
        value = getattr(base, f.name)
        if f.name in ("hampel", "dwt"):
            for sub, subval in asdict(value).items():
                flat[f"{f.name}_{sub}"] = subval
        else:
            flat[f.name] = value
    return flat


def _train_config_from_flat(flat: dict) -> TrainConfig:
    kwargs = {}
    hampel = {}
    dwt = {}
    for key, value in flat.items():
        if key.startswith("hampel_"):
            hampel[key[len("hampel_"):]] = value
        elif key.startswith("dwt_"):
            dwt[key[len("dwt_"):]] = value
        elif key in ("conv_channels", "attention_channels"):
            kwargs[key] = tuple(value) if isinstance(value, (list, tuple)) else (value,)
        else:
            kwargs[key] = value
    kwargs["hampel"] = HampelConfig(**hampel)
    kwargs["dwt"] = DwtConfig(**dwt)
    return TrainConfig(**kwargs)


def cmd_generate(args) -> int:
    config = resolve_config(_synthetic_defaults(), args.config, args.set)
    if isinstance(config.get("n_train_labels"), str) and config["n_train_labels"].lower() == "none":
        config["n_train_labels"] = None
    cfg = SyntheticConfig(**config)
    ds = generate_synthetic(cfg)
    out_dir = _out_dir(args, "generate")
    dataset_path = out_dir / "dataset.csid"
    save_dataset(ds, dataset_path)
    _write_manifest(out_dir, "generate", config, cfg.seed, {"dataset": dataset_path})
    print(f"wrote {dataset_path} ({len(ds.records)} records, {len(ds.label_space)} classes)")
    return 0


def cmd_preprocess(args) -> int:
    defaults = {
        **{f"hampel_{f.name}": getattr(HampelConfig(), f.name) for f in fields(HampelConfig)},
        **{f"dwt_{f.name}": getattr(DwtConfig(), f.name) for f in fields(DwtConfig)},
    }
    config = resolve_config(defaults, args.config, args.set)
    hampel = HampelConfig(**{k[len("hampel_"):]: v for k, v in config.items() if k.startswith("hampel_")})
    dwt = DwtConfig(**{k[len("dwt_"):]: v for k, v in config.items() if k.startswith("dwt_")})
    ds = load_dataset(args.dataset)
    processed = ds.map_records(lambda rec: preprocess_record(rec, hampel, dwt))
    out_dir = _out_dir(args, "preprocess")
    dataset_path = out_dir / "preprocessed.csid"
    save_dataset(processed, dataset_path)
    config["dataset"] = str(args.dataset)
    _write_manifest(out_dir, "preprocess", config, None, {"dataset": dataset_path})
    print(f"wrote {dataset_path} ({len(processed.records)} records)")
    return 0


def cmd_train(args) -> int:
    flat = resolve_config(_flat_train_defaults(), args.config, args.set)
    cfg = _train_config_from_flat(flat)
    ds = load_dataset(args.dataset)
    out_dir = _out_dir(args, "train")
    checkpoint_path = out_dir / "checkpoint.pt"
    _, report = train(
        ds,
        cfg,
        resume_from=args.resume,
        checkpoint_path=checkpoint_path,
        checkpoint_every=args.checkpoint_every,
    )
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    stage_path = out_dir / "stage_table.json"
    stage_path.write_text(json.dumps(report.stage_table, indent=2) + "\n")
    flat["dataset"] = str(args.dataset)
    _write_manifest(
        out_dir, "train", flat, cfg.seed,
        {"checkpoint": checkpoint_path, "report": report_path, "stage_table": stage_path},
    )
    print(
        f"trained {cfg.ablation_mode} for {len(report.epoch_losses)} epochs: "
        f"test accuracy {report.test_accuracy:.4f} +/- {report.test_ci95:.4f}"
    )
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    defaults = {
        "n_way": model.train_config.n_way,
        "k_shot": model.train_config.k_shot,
        "n_query": model.train_config.n_query,
        "n_test_episodes": model.train_config.n_test_episodes,
        "seed": model.train_config.seed,
        "preprocess": model.train_config.preprocess,
    }
    config = resolve_config(defaults, args.config, args.set)
    cfg = TrainConfig(
        n_way=config["n_way"],
        k_shot=config["k_shot"],
        n_query=config["n_query"],
        n_test_episodes=config["n_test_episodes"],
        seed=config["seed"],
        preprocess=config["preprocess"],
        hampel=model.train_config.hampel,
        dwt=model.train_config.dwt,
        ablation_mode=model.train_config.ablation_mode,
    )
    ds = load_dataset(args.dataset)
    accuracy, ci95 = evaluate(model, ds, cfg, cfg.n_test_episodes)
    out_dir = _out_dir(args, "eval")
    eval_path = out_dir / "eval.json"
    eval_path.write_text(
        json.dumps(
            {"accuracy": accuracy, "ci95": ci95, "n_test_episodes": cfg.n_test_episodes},
            indent=2,
        )
        + "\n"
    )
    config["dataset"] = str(args.dataset)
    config["checkpoint"] = str(args.checkpoint)
    _write_manifest(out_dir, "eval", config, cfg.seed, {"eval": eval_path})
    print(f"accuracy {accuracy:.4f} +/- {ci95:.4f} over {cfg.n_test_episodes} episodes")
    return 0


def cmd_ablate(args) -> int:
    defaults = _flat_train_defaults()
    defaults.update({"modes": "proto,proto_A_Bplus", "seeds": (0, 1, 2), "shots": (1, 5)})
    config = resolve_config(defaults, args.config, args.set)
    modes = config.pop("modes")
    if isinstance(modes, str):
        modes = tuple(m.strip() for m in modes.split(",") if m.strip())
    seeds = config.pop("seeds")
    seeds = (seeds,) if isinstance(seeds, int) else tuple(seeds)
    shots = config.pop("shots")
    shots = (shots,) if isinstance(shots, int) else tuple(shots)
    if not modes:
        raise ConfigurationError("modes must be non-empty")
    base_cfg = _train_config_from_flat(config)
    ds = load_dataset(args.dataset)
    rows = run_ablation(ds, base_cfg, modes, seeds, shots)

    out_dir = _out_dir(args, "ablate")
    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["mode", "seed"] + [f"{shot}shot_acc" for shot in shots] + ["train_seconds"]
        )
        for row in rows:
            writer.writerow(
                [row.mode, row.seed]
                + [f"{row.accuracy[shot]:.4f}" for shot in shots]
                + [f"{row.train_seconds:.2f}"]
            )
    reports_path = out_dir / "ablation_reports.json"
    reports_path.write_text(
        json.dumps(
            [
                {
                    "mode": row.mode,
                    "seed": row.seed,
                    "reports": {str(shot): rep.to_dict() for shot, rep in row.reports.items()},
                }
                for row in rows
            ],
            indent=2,
        )
        + "\n"
    )
    manifest_config = dict(config)
    manifest_config.update(
        {"modes": list(modes), "seeds": list(seeds), "shots": list(shots), "dataset": str(args.dataset)}
    )
    _write_manifest(
        out_dir, "ablate", manifest_config, list(seeds),
        {"table": csv_path, "reports": reports_path},
    )
    print(f"wrote {csv_path} ({len(rows)} rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewsense",
        description="Few-shot CSI gesture recognition: synthesis, training, evaluation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a configuration key (repeatable)")
        p.add_argument("--out", help="output directory (default $FEWSENSE_OUT or ./runs/<cmd>)")

    p = sub.add_parser("generate", help="write a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", help="denoise a dataset file")
    common(p)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="meta-train on a dataset file")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--checkpoint-every", type=int, default=None,
                   help="write the checkpoint every N epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="meta-test a checkpoint")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation ladder")
    common(p)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FewsenseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
