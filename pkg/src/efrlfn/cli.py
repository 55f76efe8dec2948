"""Command-line front end.

Subcommands: train, infer, bench, metrics, rank, dataset, dump-features,
ablate. Every run accepts --seed and an optional flat key=value --config
file whose entries fill in flags not given explicitly (explicit flags
win). Exit code 0 means every requested output was written; failures
print a one-line cause to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import io as media_io
from .bench import measure_fps, report
from .curation import (
    DEFAULT_TAU,
    categorize,
    load_records_csv,
    make_pairs,
    procedural_images,
    scene_static_filter,
    write_split_csv,
)
from .losses import LOSS_VARIANTS
from .metrics import psnr, ssim
from .model import ModelConfig, build_model, dump_features, forward, param_count
from .ranking import bootstrap_ci, filter_responses, fit_bradley_terry, load_responses_csv, write_ranking_csv
from .tensor import Tensor, no_grad
from .train import TrainConfig, evaluate, load_checkpoint, train

ACTIVATION_GRID = ("tanh", "shifted_sigmoid", "relu")
ATTENTION_GRID = ("eca", "esa")


def _read_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _resolve(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Fill unset flags from the config file, then from coded defaults."""
    config = _read_config_file(args.config) if getattr(args, "config", None) else {}
    for key, default in defaults.items():
        if getattr(args, key, None) is not None:
            continue
        if key in config:
            raw = config[key]
            caster = type(default) if default is not None else str
            if caster is bool:
                setattr(args, key, raw.lower() in ("1", "true", "yes"))
            else:
                setattr(args, key, caster(raw))
        else:
            setattr(args, key, default)
    return args


def _load_dir_images(directory) -> tuple[list[str], list[np.ndarray]]:
    paths = sorted(Path(directory).glob("*.ppm"))
    if not paths:
        raise FileNotFoundError(f"no .ppm images in {directory}")
    names = [p.stem for p in paths]
    return names, [media_io.read_image(p).data[0] for p in paths]


def _synthetic_pairs(count: int, size: int, scale: int, seed: int):
    return make_pairs(procedural_images(count, size=size, seed=seed), scale)


def _model_config_from_args(args) -> ModelConfig:
    return ModelConfig(
        channels=args.channels,
        blocks=args.blocks,
        scale=args.scale,
        activation=args.activation,
        attention=args.attention,
        seed=args.seed,
    )


# ---- subcommands ---------------------------------------------------------------


def _cmd_train(args) -> int:
    _resolve(
        args,
        {
            "scale": 2,
            "steps": 500,
            "lr": 5e-4,
            "batch": 8,
            "patch": 64,
            "seed": 0,
            "loss": "full",
            "channels": 16,
            "blocks": 2,
            "activation": "tanh",
            "attention": "eca",
            "dtype": "float32",
            "synthetic": 0,
            "size": 48,
            "checkpoint_every": 0,
        },
    )
    if args.hr_dir:
        _, hr_imgs = _load_dir_images(args.hr_dir)
        if args.lr_dir:
            names, lr_imgs = _load_dir_images(args.lr_dir)
            pairs = make_pairs(hr_imgs, args.scale, mode="real", lr_images=lr_imgs, ids=names)
        else:
            pairs = make_pairs(hr_imgs, args.scale)
    elif args.synthetic:
        pairs = _synthetic_pairs(args.synthetic, args.size, args.scale, args.seed)
    else:
        raise ValueError("train needs --hr-dir or --synthetic N")

    patch = min(args.patch, min(p[1].shape[1] for p in pairs), min(p[1].shape[2] for p in pairs))
    patch -= patch % args.scale
    config = TrainConfig(
        scale=args.scale,
        patch_size=patch,
        batch_size=args.batch,
        steps=args.steps,
        learning_rate=args.lr,
        seed=args.seed,
        loss_variant=args.loss,
        checkpoint_every=args.checkpoint_every,
        dtype=args.dtype,
    )
    if args.resume:
        model, state, start_step = load_checkpoint(args.resume, dtype=config.numpy_dtype())
    else:
        model = build_model(_model_config_from_args(args), dtype=config.numpy_dtype())
        state, start_step = None, 0
    model, log = train(
        pairs,
        model,
        config,
        log_path=args.log,
        checkpoint_path=args.out if config.checkpoint_every else None,
        state=state,
        start_step=start_step,
    )
    media_io.save_weights(model, args.out)
    result = evaluate(model, pairs)
    print(f"trained {config.steps} steps; train PSNR {result.psnr_mean:.2f} dB; weights -> {args.out}")
    return 0


def _cmd_infer(args) -> int:
    _resolve(args, {"seed": 0})
    model = media_io.load_weights(args.weights)
    inputs = [Path(p) for p in args.inputs]
    out = Path(args.out)
    if len(inputs) > 1 or out.is_dir():
        out.mkdir(parents=True, exist_ok=True)
        targets = [out / p.name for p in inputs]
    else:
        targets = [out]
    with no_grad():
        for src, dst in zip(inputs, targets):
            lr = media_io.read_image(src, dtype=np.float32)
            sr = forward(model, lr, clamp=True)
            media_io.write_image(sr, dst)
            print(f"{src} -> {dst}")
    return 0


def _cmd_bench(args) -> int:
    _resolve(
        args,
        {
            "frames": 100,
            "runs": 3,
            "warmup": 10,
            "height": 180,
            "width": 320,
            "seed": 0,
            "stub_ms": 0.0,
            "model_id": "",
        },
    )
    if args.weights:
        model = media_io.load_weights(args.weights)
        model_id = args.model_id or Path(args.weights).stem
        scale = model.config.scale

        def runner(frame):
            with no_grad():
                return forward(model, Tensor(frame[None]), clamp=True)

    elif args.stub_ms > 0:
        model_id = args.model_id or f"stub-{args.stub_ms}ms"
        scale = None
        delay = args.stub_ms / 1000.0

        def runner(frame):
            time.sleep(delay)

    else:
        raise ValueError("bench needs --weights or --stub-ms")
    result = measure_fps(
        runner,
        frames=args.frames,
        runs=args.runs,
        warmup=args.warmup,
        input_dims=(3, args.height, args.width),
        seed=args.seed,
        model_id=model_id,
        scale=scale,
    )
    report([result], None, args.out_csv, args.out_json)
    print(f"{model_id}: {result.fps_mean:.1f} +- {result.fps_std:.1f} FPS -> {args.out_csv}")
    return 0


def _cmd_metrics(args) -> int:
    _resolve(args, {"seed": 0})
    sr_names, sr_imgs = _load_dir_images(args.sr_dir)
    hr_names, hr_imgs = _load_dir_images(args.hr_dir)
    if sr_names != hr_names:
        raise ValueError("sr and hr directories must contain matching file names")
    rows = []
    for name, sr_img, hr_img in zip(sr_names, sr_imgs, hr_imgs):
        rows.append((name, psnr(sr_img, hr_img), ssim(sr_img, hr_img)))
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    dest = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(dest)
        writer.writerow(["image", "psnr_db", "ssim"])
        for name, p, s in rows:
            writer.writerow([name, repr(p), repr(s)])
        writer.writerow(["mean", repr(mean_psnr), repr(mean_ssim)])
    finally:
        if args.out:
            dest.close()
    return 0


def _cmd_rank(args) -> int:
    _resolve(args, {"seed": 0, "boot": 0})
    responses = load_responses_csv(args.responses)
    study = filter_responses(responses)
    if args.boot:
        result = bootstrap_ci(study, n_boot=args.boot, seed=args.seed)
    else:
        result = fit_bradley_terry(study)
    write_ranking_csv(result, args.out)
    for item, score in zip(result.items, result.scores):
        print(f"{item}: {score:.6f}")
    return 0


def _cmd_dataset(args) -> int:
    if args.action == "filter":
        _resolve(args, {"tau": DEFAULT_TAU, "seed": 0})
        if not args.frames:
            raise ValueError("dataset filter needs --frames FIRST 100TH 150TH")
        frames = [media_io.read_image(p).data[0] for p in args.frames]
        verdict = scene_static_filter(*frames, tau=args.tau)
        print(verdict)
        return 0
    if args.action in ("categorize", "split"):
        _resolve(args, {"clusters": 20, "seed": 0})
        if not args.records or not args.out:
            raise ValueError(f"dataset {args.action} needs --records and --out")
        records = load_records_csv(args.records)
        assignment = categorize(records, k=args.clusters, seed=args.seed)
        write_split_csv(assignment, args.out)
        counts = {label: sum(1 for v in assignment.values() if v == label) for label in ("test", "train", "val")}
        print(f"{len(assignment)} ids -> {counts} -> {args.out}")
        return 0
    if args.action == "degrade":
        _resolve(args, {"scale": 2, "seed": 0})
        if not args.hr_dir or not args.out_dir:
            raise ValueError("dataset degrade needs --hr-dir and --out-dir")
        names, hr_imgs = _load_dir_images(args.hr_dir)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        pairs = make_pairs(hr_imgs, args.scale, ids=names)
        for name, (lr_img, _) in zip(names, pairs):
            media_io.write_image(lr_img, out_dir / f"{name}.ppm")
        print(f"wrote {len(pairs)} LR images to {out_dir}")
        return 0
    raise ValueError(f"unknown dataset action {args.action!r}")


def _cmd_dump_features(args) -> int:
    _resolve(args, {"seed": 0})
    model = media_io.load_weights(args.weights)
    lr = media_io.read_image(args.input, dtype=np.float32)
    indices = [int(tok) for tok in args.blocks.split(",") if tok]
    with no_grad():
        maps = dump_features(model, lr, indices)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for index, tensor in sorted(maps.items()):
        plane = tensor.data[0].mean(axis=0)
        span = plane.max() - plane.min()
        normed = (plane - plane.min()) / span if span > 0 else np.zeros_like(plane)
        media_io.write_image(np.repeat(normed[None], 3, axis=0), out_dir / f"block{index}.ppm")
    print(f"wrote {len(maps)} feature maps to {out_dir}")
    return 0


def _cmd_ablate(args) -> int:
    _resolve(
        args,
        {
            "steps": 200,
            "seed": 0,
            "scale": 2,
            "channels": 16,
            "blocks": 2,
            "synthetic": 4,
            "size": 48,
            "batch": 4,
            "lr": 1e-3,
        },
    )
    pairs = _synthetic_pairs(args.synthetic, args.size, args.scale, args.seed)
    rows: list[dict] = []

    def run_one(config: ModelConfig, loss_variant: str) -> dict:
        train_config = TrainConfig(
            scale=args.scale,
            patch_size=args.size - args.size % args.scale,
            batch_size=args.batch,
            steps=args.steps,
            learning_rate=args.lr,
            seed=args.seed,
            loss_variant=loss_variant,
        )
        model = build_model(config, dtype=np.float32)
        model, _ = train(pairs, model, train_config)
        result = evaluate(model, pairs)
        return {"psnr_db": result.psnr_mean, "ssim": result.ssim_mean}

    if args.grid == "attention-activation":
        columns = ["activation", "attention", "params", "psnr_db", "ssim"]
        for act in ACTIVATION_GRID:
            for att in ATTENTION_GRID:
                config = ModelConfig(
                    channels=args.channels,
                    blocks=args.blocks,
                    scale=args.scale,
                    activation=act,
                    attention=att,
                    seed=args.seed,
                )
                stats = run_one(config, "full")
                rows.append({"activation": act, "attention": att, "params": param_count(config), **stats})
    elif args.grid == "loss":
        columns = ["loss", "psnr_db", "ssim"]
        config = ModelConfig(
            channels=args.channels,
            blocks=args.blocks,
            scale=args.scale,
            seed=args.seed,
        )
        for variant in LOSS_VARIANTS:
            if variant == "lpips_placeholder":
                continue  # needs externally supplied extractor weights
            stats = run_one(config, variant)
            rows.append({"loss": variant, **stats})
    else:
        raise ValueError(f"unknown grid {args.grid!r}")

    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row[c] if not isinstance(row[c], float) else repr(row[c]) for c in columns])
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


# ---- argument wiring --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="efrlfn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file; explicit flags win")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--hr-dir")
    p.add_argument("--lr-dir")
    p.add_argument("--synthetic", type=int, help="train on N procedural images")
    p.add_argument("--size", type=int, help="synthetic image size")
    p.add_argument("--scale", type=int, choices=(2, 4))
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--loss", choices=LOSS_VARIANTS)
    p.add_argument("--channels", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--activation", choices=ACTIVATION_GRID)
    p.add_argument("--attention", choices=ATTENTION_GRID)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--log", help="JSON-lines training log path")
    p.add_argument("--out", required=True, help="output weights path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="super-resolve pixmaps")
    common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True, help="output file (single input) or directory")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("bench", help="measure FPS")
    common(p)
    p.add_argument("--weights")
    p.add_argument("--stub-ms", type=float, help="bench a sleep stub instead of a model")
    p.add_argument("--frames", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--model-id")
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-json")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("metrics", help="PSNR/SSIM table for SR vs HR directories")
    common(p)
    p.add_argument("--sr-dir", required=True)
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("rank", help="Bradley-Terry scores from a responses CSV")
    common(p)
    p.add_argument("--responses", required=True)
    p.add_argument("--boot", type=int, help="bootstrap replicates for 95%% CIs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rank)

    p = sub.add_parser("dataset", help="filter / categorize / split / degrade")
    common(p)
    p.add_argument("action", choices=("filter", "categorize", "split", "degrade"))
    p.add_argument("--frames", nargs=3, help="1st, 100th and 150th frame pixmaps")
    p.add_argument("--tau", type=float)
    p.add_argument("--records", help="video feature records CSV")
    p.add_argument("--clusters", type=int)
    p.add_argument("--hr-dir")
    p.add_argument("--out-dir")
    p.add_argument("--scale", type=int, choices=(2, 4))
    p.add_argument("--out")
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("dump-features", help="write per-block attention feature maps")
    common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--blocks", required=True, help="comma-separated 1-based block indices")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_dump_features)

    p = sub.add_parser("ablate", help="run the architecture or loss grid at desk scale")
    common(p)
    p.add_argument("--grid", required=True, choices=("attention-activation", "loss"))
    p.add_argument("--steps", type=int)
    p.add_argument("--scale", type=int, choices=(2, 4))
    p.add_argument("--channels", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--synthetic", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def main(argv=None) -> int:
    try:
        return run(argv)
    except Exception as exc:  # argparse handles its own usage errors
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
