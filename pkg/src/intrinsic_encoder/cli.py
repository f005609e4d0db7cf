"""Command-line harness: synth | train | encode | eval | visualize.

Every command reads an optional JSON config file (see README for the
schema), applies flag overrides on top, writes its outputs plus a
`run_manifest.json` with checksums, and exits nonzero with a single-line
`error: ...` message on failure. Outputs are fully determined by config
and seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import data as data_mod
from . import placerec
from .checkpoint import load_checkpoint, restore_bundle
from .errors import ConfigError, ToolkitError
from .nets import (
    BundleConfig,
    DiscriminatorConfig,
    EncoderConfig,
    GeneratorConfig,
)
from .objectives import LossWeights
from .trainer import TrainingConfig, train

logger = logging.getLogger(__name__)

DEFAULT_EVAL = {
    "seq_lengths": [1, 4],
    "max_distance": 1,
    "window": 10,
    "velocities": [1.0],
    "reference_domain": None,
}


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return cfg


def _write_run_manifest(out_dir: Path, command: str, config: dict,
                        inputs: dict[str, str], outputs: list[Path]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "config_sha256": hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()).hexdigest(),
        "inputs": inputs,
        "outputs": {
            str(p.relative_to(out_dir)): _sha256_file(p)
            for p in sorted(outputs) if p.is_file()
        },
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))


def _synth_spec(config: dict, args) -> data_mod.SynthSpec:
    section = dict(config.get("synth", {}))
    for key, flag in (("num_places", "num_places"), ("num_domains", "num_domains"),
                      ("strength", "strength"), ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            section[key] = value
    if getattr(args, "size", None) is not None:
        section["image_size"] = [args.size, args.size]
    return data_mod.SynthSpec.from_dict(section)


def _bundle_config(config: dict) -> BundleConfig:
    section = config.get("models")
    if not section:
        return BundleConfig()
    disc = dict(section.get("discriminator", {}))
    if "channel_schedule" in disc:
        disc["channel_schedule"] = tuple(disc["channel_schedule"])
    return BundleConfig(
        encoder=EncoderConfig(**section.get("encoder", {})),
        generator=GeneratorConfig(**section.get("generator", {})),
        discriminator=DiscriminatorConfig(**disc),
    )


def _training_config(config: dict, args) -> TrainingConfig:
    section = dict(config.get("training", {}))
    if "cycle_weight" in section or "encoder_weight" in section:
        section["weights"] = {
            "cycle_weight": section.pop("cycle_weight", LossWeights().cycle_weight),
            "encoder_weight": section.pop("encoder_weight", LossWeights().encoder_weight),
        }
    for key in ("steps", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            section["total_steps" if key == "steps" else key] = value
    if getattr(args, "no_enc_loss", False):
        section["disable_encoder_loss"] = True
    if getattr(args, "domains", None):
        section["domain_subset"] = [d for d in args.domains.split(",") if d]
    return TrainingConfig.from_dict(section)


def _eval_params(config: dict, args) -> dict:
    params = {**DEFAULT_EVAL, **config.get("evaluation", {})}
    if getattr(args, "seq_lengths", None):
        params["seq_lengths"] = [int(v) for v in args.seq_lengths.split(",")]
    if getattr(args, "max_distance", None) is not None:
        params["max_distance"] = args.max_distance
    if getattr(args, "window", None) is not None:
        params["window"] = args.window
    if getattr(args, "reference", None) is not None:
        params["reference_domain"] = args.reference
    return params


def _resolve_dataset(config: dict, args, need_size=None) -> data_mod.Dataset:
    root = getattr(args, "data_root", None) or config.get("data", {}).get("test_root")
    synth_section = config.get("synth")
    if root:
        size = need_size or tuple(config.get("data", {}).get(
            "image_size", data_mod.DEFAULT_IMAGE_SIZE))
        return data_mod.load_domain_sets(root, image_size=tuple(size))
    if synth_section:
        return data_mod.synth_generate(data_mod.SynthSpec.from_dict(synth_section))
    raise ConfigError("no data source: pass --data-root or a 'data'/'synth' config section")


def _pick_reference(domains, requested: str | None) -> str:
    if requested is not None:
        if requested not in domains:
            raise ConfigError(f"reference domain {requested!r} not in {list(domains)}")
        return requested
    return "winter" if "winter" in domains else sorted(domains)[0]


def cmd_synth(args) -> int:
    config = _load_config(args.config)
    spec = _synth_spec(config, args)
    out_dir = Path(args.out or config.get("output_dir", "synth_data"))
    dataset = data_mod.synth_generate(spec)
    manifest_path = data_mod.write_image_folders(dataset, out_dir, spec)
    outputs = [p for p in out_dir.rglob("*") if p.is_file()]
    _write_run_manifest(out_dir, "synth", {"synth": spec.to_dict()}, {}, outputs)
    logger.info("wrote %d files under %s", len(outputs), out_dir)
    print(manifest_path)
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    cfg = _training_config(config, args)
    out_dir = Path(args.out or config.get("output_dir", "train_run"))
    train_root = getattr(args, "data_root", None) or config.get("data", {}).get("train_root")
    if train_root:
        size = tuple(config.get("data", {}).get("image_size", data_mod.DEFAULT_IMAGE_SIZE))
        dataset = data_mod.load_domain_sets(train_root, image_size=size)
    elif config.get("synth"):
        dataset = data_mod.synth_generate(data_mod.SynthSpec.from_dict(config["synth"]))
    else:
        raise ConfigError("no data source: pass --data-root or a 'data'/'synth' config section")
    result = train(dataset, cfg, models=_bundle_config(config), out_dir=out_dir,
                   resume_from=args.resume)
    outputs = [p for p in out_dir.rglob("*") if p.is_file()]
    inputs = {"resume": _sha256_file(Path(args.resume))} if args.resume else {}
    _write_run_manifest(out_dir, "train",
                        {"training": cfg.to_dict(), "models": _bundle_config(config).to_dict()},
                        inputs, outputs)
    print(result.final_checkpoint)
    return 0


def cmd_encode(args) -> int:
    config = _load_config(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    bundle = restore_bundle(ckpt)
    size = tuple(ckpt.meta.get("image_size") or
                 config.get("data", {}).get("image_size", data_mod.DEFAULT_IMAGE_SIZE))
    dataset = _resolve_dataset(config, args, need_size=size)
    out_dir = Path(args.out or config.get("output_dir", "representations"))
    manifest_path = data_mod.export_representations(bundle.encoder, dataset, out_dir)
    outputs = [p for p in out_dir.rglob("*") if p.is_file()]
    _write_run_manifest(out_dir, "encode", {"image_size": list(size)},
                        {"checkpoint": _sha256_file(Path(args.checkpoint))}, outputs)
    print(manifest_path)
    return 0


def _metric_rows(reps_by_domain: dict[str, np.ndarray], params: dict,
                 method: str) -> list[dict]:
    reference = _pick_reference(list(reps_by_domain), params.get("reference_domain"))
    rows = []
    for domain in sorted(reps_by_domain):
        if domain == reference:
            continue
        pair_rows = placerec.evaluate_retrieval(
            reps_by_domain[domain], reps_by_domain[reference],
            seq_lengths=tuple(params["seq_lengths"]),
            max_distance=int(params["max_distance"]),
            window=int(params["window"]),
            velocities=tuple(params.get("velocities", (1.0,))),
        )
        for row in pair_rows:
            rows.append({"method": method, "domain_pair": f"{domain}-{reference}", **row})
    return rows


def _write_metrics(out_dir: Path, rows: list[dict]) -> list[Path]:
    import csv as csv_mod

    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "metrics.csv"
    with csv_path.open("w", newline="") as f:
        writer = csv_mod.DictWriter(
            f, fieldnames=["method", "domain_pair", "len", "dis", "accuracy", "num_queries"])
        writer.writeheader()
        writer.writerows(rows)
    json_path = out_dir / "metrics.json"
    json_path.write_text(json.dumps(rows, sort_keys=True, indent=2))
    # wide accuracy table: one row per method, one column per pair x length
    table_path = out_dir / "accuracy_table.csv"
    methods = sorted({r["method"] for r in rows})
    columns = sorted({(r["domain_pair"], r["len"]) for r in rows})
    with table_path.open("w", newline="") as f:
        writer = csv_mod.writer(f)
        writer.writerow(["method"] + [f"{pair}/len{ln}" for pair, ln in columns])
        for method in methods:
            row = [method]
            for pair, ln in columns:
                cell = [r for r in rows
                        if r["method"] == method and r["domain_pair"] == pair and r["len"] == ln]
                row.append(f"{cell[0]['accuracy']:.4f}" if cell else "")
            writer.writerow(row)
    return [csv_path, json_path, table_path]


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    params = _eval_params(config, args)
    out_dir = Path(args.out or config.get("output_dir", "eval_out"))
    inputs = {}
    if args.representations:
        manifest = Path(args.representations)
        reps = data_mod.load_representations(manifest)
        inputs["representations"] = _sha256_file(manifest)
        method = "intrinsic"
    elif args.raw:
        dataset = _resolve_dataset(config, args)
        reps = {d: dataset.frames(d) for d in dataset.domain_ids}
        method = "raw"
    else:
        raise ConfigError("pass --representations MANIFEST or --raw with a data source")
    if len(reps) < 2:
        raise ConfigError(f"evaluation needs at least 2 domains, got {list(reps)}")
    rows = _metric_rows(reps, params, method)
    outputs = _write_metrics(out_dir, rows)
    _write_run_manifest(out_dir, "eval", {"evaluation": params}, inputs, outputs)
    for row in rows:
        print(f"{row['method']} {row['domain_pair']} len={row['len']} "
              f"dis={row['dis']} accuracy={row['accuracy']:.4f}")
    return 0


def cmd_visualize(args) -> int:
    config = _load_config(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    bundle = restore_bundle(ckpt)
    dataset = _resolve_dataset(config, args)
    out_dir = Path(args.out or config.get("output_dir", "panels"))
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = ([int(v) for v in args.frames.split(",")] if args.frames
              else list(range(min(4, dataset.num_frames(dataset.domain_ids[0])))))
    outputs = []
    for index in frames:
        panel = render_panel(bundle.encoder, dataset, index)
        path = out_dir / f"panel_{index:05d}.png"
        Image.fromarray(panel).save(path)
        outputs.append(path)
    _write_run_manifest(out_dir, "visualize", {"frames": frames},
                        {"checkpoint": _sha256_file(Path(args.checkpoint))}, outputs)
    print(out_dir)
    return 0


def render_panel(encoder, dataset: data_mod.Dataset, index: int,
                 separator: int = 2) -> np.ndarray:
    """One row per domain: original image next to its equalized representation."""
    rows = []
    for domain in dataset.domain_ids:
        frame = dataset.frame(domain, index)
        original = data_mod.to_uint8(frame)
        with torch.no_grad():
            rep = encoder(torch.from_numpy(frame[None]))[0].numpy()
        equalized = placerec.histogram_equalize(rep)
        if equalized.ndim == 2:
            equalized = np.stack([equalized] * 3, axis=-1)
        if equalized.shape[-1] != 3:
            equalized = np.stack([equalized[..., 0]] * 3, axis=-1)
        gap = np.full((original.shape[0], separator, 3), 255, dtype=np.uint8)
        rows.append(np.concatenate([original, gap, equalized], axis=1))
    gap = np.full((separator, rows[0].shape[1], 3), 255, dtype=np.uint8)
    stacked = [rows[0]]
    for row in rows[1:]:
        stacked += [gap, row]
    return np.concatenate(stacked, axis=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intrinsic-encoder",
        description="Train and evaluate condition-invariant image representations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic multi-domain dataset")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--num-places", type=int, dest="num_places")
    p.add_argument("--num-domains", type=int, dest="num_domains")
    p.add_argument("--size", type=int, help="square image size")
    p.add_argument("--strength", choices=["mild", "strong"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the encoder on domain-labeled folders")
    p.add_argument("--config")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--out")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-enc-loss", action="store_true", dest="no_enc_loss",
                   help="ablation: drop the encoder term from the gradients")
    p.add_argument("--domains", help="comma-separated domain subset ablation")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="export representations for a dataset")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--out")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", help="place-recognition metrics vs a reference domain")
    p.add_argument("--config")
    p.add_argument("--representations", help="manifest written by `encode`")
    p.add_argument("--raw", action="store_true",
                   help="evaluate raw preprocessed images (baseline mode)")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--out")
    p.add_argument("--seq-lengths", dest="seq_lengths")
    p.add_argument("--max-distance", type=int, dest="max_distance")
    p.add_argument("--window", type=int)
    p.add_argument("--reference")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("visualize", help="original/representation panels per place")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--frames", help="comma-separated frame indices")
    p.add_argument("--out")
    p.set_defaults(func=cmd_visualize)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ToolkitError, OSError) as exc:
        message = str(exc).replace("\n", " ")
        print(f"error: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
