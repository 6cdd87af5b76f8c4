"""Command-line interface.

Subcommands: synth, pairs, train, transfer, register, eval,
bench-kernels. All randomness is controlled by --seed; synth, pairs,
train and eval outputs are byte-reproducible for fixed seeds and
inputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .benchrun import EvalConfig, run_benchmark, write_report
from .checkpoint import load_checkpoint, save_checkpoint
from .cloud_io import load_cloud, save_cloud
from .errors import MsregError, PairGenerationError
from .kernelbench import format_rows, run_kernel_benchmark
from .model import ModelConfig, build_model
from .pairgen import UdgeParams, generate_pair, load_pair, load_pair_manifest, materialize_pairs
from .registration import RansacConfig, register_pair
from .synth import synth_scene
from .train import TrainConfig, train, write_trace_csv

PRESETS = {
    "indoor": UdgeParams(
        crop_shape="cube", crop_size=3.0, period_range=(0.02, 0.08),
        alpha_range=(0.10, 0.40), jitter_sigma=0.007, scale_range=(0.9, 1.2),
        min_overlap=0.3, overlap_radius=0.1,
    ),
    "outdoor": UdgeParams(
        crop_shape="cube", crop_size=10.0, period_range=(0.04, 0.16),
        alpha_range=(0.15, 0.30), jitter_sigma=0.01, scale_range=(0.9, 1.2),
        min_overlap=0.3, overlap_radius=0.2,
    ),
    "object": UdgeParams(
        crop_shape="cube", crop_size=2.0, period_range=(0.02, 0.08),
        alpha_range=(1.0, 1.0), jitter_sigma=0.01, scale_range=(0.9, 1.2),
        min_overlap=0.3, overlap_radius=0.1,
    ),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msreg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scene clouds")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--extent", type=float, default=5.0)
    p.add_argument("--density", type=float, default=600.0)
    p.add_argument("--profile", choices=["uniform", "lidar", "mixed"], default="mixed")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pairs", help="generate training/eval pairs from scenes")
    p.add_argument("--in", dest="in_dir", required=True, help="directory of scene clouds")
    p.add_argument("--out", required=True, help="output manifest path (JSON)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="indoor")
    p.add_argument("--pairs-per-scene", type=int, default=5)
    p.add_argument("--no-rotate", action="store_true", help="disable rotation augmentation")
    p.add_argument("--crop-size", type=float, default=None, help="override preset crop size")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model on a pair manifest")
    p.add_argument("--config", required=True, help="JSON config with model/train sections")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--trace", default=None, help="loss trace CSV (default <out>.trace.csv)")

    p = sub.add_parser("transfer", help="fine-tune a checkpoint on new pairs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--pos-radius", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None)

    p = sub.add_parser("register", help="register two clouds with a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--dst", required=True)
    p.add_argument("--out", required=True, help="pose output file")
    p.add_argument("--n-keypoints", type=int, default=5000)
    p.add_argument("--inlier-threshold", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="run the benchmark over a pair manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--tau1", type=float, default=0.1)
    p.add_argument("--tau2", type=float, default=0.05)
    p.add_argument("--n-keypoints", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True, help="report CSV path")

    p = sub.add_parser("bench-kernels", help="compare the kernel-map backends")
    p.add_argument("--voxels", type=int, default=30000)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--repeats", type=int, default=5)

    return parser


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.scenes):
        if args.profile == "mixed":
            profile = "uniform" if k % 2 == 0 else "lidar"
        else:
            profile = args.profile
        rng = np.random.default_rng([args.seed, k])
        cloud = synth_scene(rng, extent=args.extent, profile=profile, density=args.density)
        save_cloud(cloud, out / f"scene_{k:03d}.ply", "ply_binary_le")
        print(f"scene_{k:03d}.ply: {len(cloud)} points ({profile})")
    return 0


def cmd_pairs(args) -> int:
    params = PRESETS[args.preset]
    params = replace(params, seed=args.seed)
    if args.no_rotate:
        params = replace(params, rotate=False)
    if args.crop_size is not None:
        params = replace(params, crop_size=args.crop_size)
    scene_files = sorted(
        p for p in Path(args.in_dir).iterdir() if p.suffix.lower() in (".ply", ".xyz")
    )
    if not scene_files:
        raise MsregError(f"no .ply/.xyz scene files in {args.in_dir}")
    samples = []
    skipped = 0
    for si, scene_path in enumerate(scene_files):
        cloud = load_cloud(scene_path)
        for k in range(args.pairs_per_scene):
            rng = np.random.default_rng([args.seed, si, k])
            try:
                sample = generate_pair(cloud, params, rng, source_id=scene_path.name)
            except PairGenerationError as exc:
                print(f"warning: {exc}", file=sys.stderr)
                skipped += 1
                continue
            samples.append(sample)
    if not samples:
        raise MsregError("no pairs could be generated")
    manifest = Path(args.out)
    manifest.parent.mkdir(parents=True, exist_ok=True)
    data_dir = manifest.parent / (manifest.stem + "_data")
    records = materialize_pairs(samples, data_dir, manifest)
    print(f"wrote {len(records)} pairs to {manifest} ({skipped} skipped)")
    return 0


def _load_train_config(path) -> tuple[ModelConfig, TrainConfig, int]:
    with open(path) as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - {"model", "train"}
    if unknown:
        raise MsregError(f"{path}: unknown config sections {sorted(unknown)}")
    model_cfg = dict(cfg.get("model", {}))
    init_seed = int(model_cfg.pop("seed", cfg.get("train", {}).get("seed", 0)))
    try:
        mc = ModelConfig.from_dict(model_cfg)
        tc = TrainConfig(**cfg.get("train", {}))
    except (TypeError, ValueError) as exc:
        raise MsregError(f"{path}: bad config: {exc}") from None
    return mc, tc, init_seed


def _load_pairs(manifest_path):
    records = load_pair_manifest(manifest_path)
    base = Path(manifest_path).resolve().parent
    return [load_pair(r, base) for r in records]


def cmd_train(args) -> int:
    model_cfg, train_cfg, init_seed = _load_train_config(args.config)
    pairs = _load_pairs(args.pairs)
    model = build_model(model_cfg, seed=init_seed)
    _, trace = train(model, pairs, train_cfg, log=print)
    save_checkpoint(model, args.out)
    write_trace_csv(trace, args.trace or (args.out + ".trace.csv"))
    print(f"saved checkpoint {args.out}")
    return 0


def cmd_transfer(args) -> int:
    model = load_checkpoint(args.ckpt)
    pairs = _load_pairs(args.pairs)
    cfg = TrainConfig(
        lr=args.lr, epochs=args.epochs, pos_radius=args.pos_radius, seed=args.seed
    )
    _, trace = train(model, pairs, cfg, log=print)
    save_checkpoint(model, args.out)
    write_trace_csv(trace, args.trace or (args.out + ".trace.csv"))
    print(f"saved checkpoint {args.out}")
    return 0


def cmd_register(args) -> int:
    model = load_checkpoint(args.ckpt)
    src = load_cloud(args.src)
    dst = load_cloud(args.dst)
    outcome = register_pair(
        model, src, dst,
        n_keypoints=args.n_keypoints,
        ransac_config=RansacConfig(inlier_threshold=args.inlier_threshold, seed=args.seed),
        seed=args.seed,
    )
    with open(args.out, "w") as fh:
        fh.write(f"success {'true' if outcome.success else 'false'}\n")
        if outcome.transform is not None:
            fh.write("R " + " ".join(repr(float(v)) for v in outcome.transform.R.ravel()) + "\n")
            fh.write("t " + " ".join(repr(float(v)) for v in outcome.transform.t) + "\n")
        fh.write(f"inliers {len(outcome.inliers)}\n")
        fh.write(f"matches {len(outcome.matches)}\n")
        fh.write(f"descriptor_time_s {outcome.descriptor_time_s!r}\n")
        fh.write(f"total_time_s {outcome.total_time_s!r}\n")
    if not outcome.success:
        print("registration failed (no consistent pose found)", file=sys.stderr)
        return 1
    print(f"wrote pose to {args.out} ({len(outcome.inliers)} inliers)")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    records = load_pair_manifest(args.pairs)
    config = EvalConfig(
        tau1=args.tau1, tau2=args.tau2, n_keypoints=args.n_keypoints, seed=args.seed
    )
    report = run_benchmark(
        model, records, config, Path(args.pairs).resolve().parent,
        log=lambda msg: print(msg, file=sys.stderr),
    )
    write_report(report, args.report)
    print(f"fmr {report.fmr!r}")
    print(f"sre_median {report.sre_median!r}")
    print(f"mean_descriptor_time_s {report.mean_descriptor_time_s:.4f}")
    return 0


def cmd_bench_kernels(args) -> int:
    rows = run_kernel_benchmark(args.voxels, args.channels, args.repeats)
    print(format_rows(rows))
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "pairs": cmd_pairs,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "register": cmd_register,
    "eval": cmd_eval,
    "bench-kernels": cmd_bench_kernels,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return _COMMANDS[args.command](args)
    except (MsregError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
