"""Operator command line: synth, reconstruct, train, eval, infer,
export-bands, plot, bench-recon.

Exit codes: 0 success, 2 usage/validation, 3 provenance/integrity,
4 numeric failure. Every artifact-producing command writes one run-manifest
JSON (`run_manifest.json` in its output directory, or `<output>.run.json`
next to a single-file output) recording the command line, effective config,
seeds, input hashes, output paths and wall-clock duration.

Heavy imports stay inside the handlers so --deterministic can pin the BLAS
thread pools via environment variables before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__


def _parse_resolution(text: str) -> tuple[int, int]:
    try:
        w_h = text.lower().split("x")
        h, w = int(w_h[0]), int(w_h[1])
        return h, w
    except (ValueError, IndexError):
        raise argparse.ArgumentTypeError(f"resolution must look like 64x64, got {text!r}")


def _parse_bands(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bands must be comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hyperfake",
        description="Spectral-reconstruction deepfake detection pipeline",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="force single-threaded numeric paths (sets BLAS thread env vars)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic labeled corpus")
    p.add_argument("--n", type=int, required=True, help="videos per class")
    p.add_argument("--resolution", type=_parse_resolution, default=(64, 64))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("reconstruct", help="RGB frames -> HSC1 spectral cubes")
    p.add_argument("frames", nargs="+", help="input frame image paths")
    p.add_argument("--out", required=True)
    p.add_argument("--weights", help="reconstruction weights archive")
    p.add_argument("--random-init", action="store_true", help="use seeded random-init weights")
    p.add_argument("--resolution", type=_parse_resolution, default=(64, 64))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bands", type=_parse_bands, default=None,
                   help="1-based band indices to export as grayscale PNGs, e.g. 8,16,31")
    _add_recon_config_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("train", help="train band attention + classifier (frozen recon)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--config", help="flat key=value config file; flags override")
    p.add_argument("--recon-weights")
    p.add_argument("--random-init-recon", action="store_true")
    p.add_argument("--resume", help="resume from a checkpoint (same configs)")
    p.add_argument("--stop-epoch", type=int, default=None)
    p.add_argument("--resolution", type=_parse_resolution, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr0", type=float, default=None)
    p.add_argument("--lr-min", type=float, default=None)
    p.add_argument("--adam-beta1", type=float, default=None)
    p.add_argument("--adam-beta2", type=float, default=None)
    p.add_argument("--adam-eps", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--pool-size", type=int, default=None)
    p.add_argument("--attn-dim", type=int, default=None)
    p.add_argument("--spectral-heads", type=int, default=None)
    p.add_argument("--backbone", choices=["compact", "effnet_b0_shape"], default=None)
    p.add_argument("--recalib-reduction", type=int, default=None)
    _add_recon_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--recon-weights", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--per-video", action="store_true",
                   help="average frame probabilities per video before scoring")
    p.add_argument("--out", help="report path (default: report_<split>.json beside checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="single frame -> probability + label")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--recon-weights", required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("export-bands", help="band-weight JSON for interpretability")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cube", help="HSC1 cube input")
    p.add_argument("--frame", help="frame input (requires --recon-weights)")
    p.add_argument("--recon-weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_bands)

    p = sub.add_parser("plot", help="SVG figures from report/history JSON")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--report", help="metrics report JSON -> ROC curve")
    group.add_argument("--history", help="training history JSON -> history figure")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("bench-recon", help="wall-clock reconstruction benchmark")
    p.add_argument("--resolution", type=_parse_resolution, default=(64, 64))
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--compare-backends", action="store_true",
                   help="time both kernel backends when the compiled one is built")
    p.add_argument("--out", help="optional JSON output")
    _add_recon_config_flags(p)
    p.set_defaults(func=cmd_bench_recon)

    return parser


def _add_recon_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--recon-stages", type=int, default=None)
    p.add_argument("--recon-features", type=int, default=None)
    p.add_argument("--recon-heads", type=int, default=None)
    p.add_argument("--flexi-downsample", type=int, default=None)


# -- run manifests ----------------------------------------------------------------


def _hash_if_file(path) -> str | None:
    from .util import sha256_file

    p = Path(path)
    return sha256_file(p) if p.is_file() else None


def _write_run_manifest(
    target: Path, command: str, argv: list[str], config: dict, seeds: dict,
    inputs: dict, outputs: list, started: float, extra: dict | None = None,
) -> Path:
    if target.is_dir():
        path = target / "run_manifest.json"
    else:
        path = Path(str(target) + ".run.json")
    payload = {
        "command": command,
        "argv": argv,
        "config": config,
        "seeds": seeds,
        "input_hashes": {k: _hash_if_file(v) for k, v in inputs.items()},
        "outputs": [str(o) for o in outputs],
        "duration_s": time.perf_counter() - started,
        "version": __version__,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


def _cache_dir_for(out_dir: Path) -> Path:
    override = os.environ.get("HYPERFAKE_CACHE_DIR")
    return Path(override) if override else out_dir / "cube_cache"


# -- command handlers ---------------------------------------------------------------


def cmd_synth(args) -> int:
    from .datamodel import synth_dataset

    started = time.perf_counter()
    out_dir = Path(args.out)
    manifest = synth_dataset(args.n, args.resolution, args.seed, out_dir)
    outputs = [out_dir / "manifest.jsonl"] + [out_dir / r.frame_path for r in manifest.records]
    _write_run_manifest(
        out_dir, "synth", args.argv, {"n": args.n, "resolution": list(args.resolution)},
        {"seed": args.seed}, {}, outputs, started,
    )
    print(f"wrote {len(manifest.records)} frames + manifest to {out_dir}")
    return 0


def _recon_config(args):
    from .reconstruction import ReconConfig

    base = ReconConfig()
    return ReconConfig(
        n_stages=args.recon_stages if args.recon_stages is not None else base.n_stages,
        feature_channels=args.recon_features if args.recon_features is not None
        else base.feature_channels,
        n_heads=args.recon_heads if args.recon_heads is not None else base.n_heads,
        flexi_downsample=args.flexi_downsample if args.flexi_downsample is not None
        else base.flexi_downsample,
    )


def _load_or_init_recon(args, resolution, random_flag: str):
    from .errors import ConfigError, ValidationError
    from .reconstruction import init_reconstruction, load_recon_weights

    weights = getattr(args, "recon_weights", None) or getattr(args, "weights", None)
    if weights:
        model = load_recon_weights(weights)
        if tuple(model.resolution) != tuple(resolution):
            raise ConfigError(
                f"weights were built for resolution {model.resolution}, requested {resolution}"
            )
        return model, Path(weights)
    if getattr(args, random_flag, False):
        seed = args.seed if getattr(args, "seed", None) is not None else 0
        return init_reconstruction(_recon_config(args), resolution, seed), None
    raise ValidationError(
        f"reconstruction weights required (pass --weights/--recon-weights or --{random_flag.replace('_', '-')})"
    )


def cmd_reconstruct(args) -> int:
    import cv2
    import numpy as np

    from .datamodel import BANDS, load_frame, write_cube
    from .errors import ValidationError
    from .reconstruction import reconstruct

    started = time.perf_counter()
    if args.bands:
        for b in args.bands:
            if not 1 <= b <= BANDS:
                raise ValidationError(f"band out of range 1..{BANDS}: {b}")
    model, weights_path = _load_or_init_recon(args, args.resolution, "random_init")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    band_scales = []
    for frame_path in args.frames:
        frame = load_frame(frame_path, args.resolution)
        cube = reconstruct(frame, model).astype(np.float32)
        stem = Path(frame_path).stem
        cube_path = out_dir / f"{stem}.hsc1"
        write_cube(cube, cube_path)
        outputs.append(cube_path)
        for b in args.bands or []:
            band = cube[b - 1].astype(np.float64)
            lo, hi = float(band.min()), float(band.max())
            norm = (band - lo) / (hi - lo) if hi > lo else np.zeros_like(band)
            png_path = out_dir / f"{stem}_band{b:02d}.png"
            gray = np.clip(np.rint(norm * 255.0), 0, 255).astype(np.uint8)
            if not cv2.imwrite(str(png_path), gray):
                raise IOError(f"cannot write PNG {png_path}")
            outputs.append(png_path)
            band_scales.append({"frame": stem, "band": b, "min": lo, "max": hi})
    _write_run_manifest(
        out_dir, "reconstruct", args.argv,
        {"resolution": list(args.resolution), "bands": args.bands,
         "recon": _recon_config(args).__dict__, "band_scales": band_scales},
        {"seed": getattr(args, "seed", None)},
        {"weights": weights_path} if weights_path else {f"frame:{f}": f for f in args.frames},
        outputs, started,
    )
    print(f"wrote {len(outputs)} artifacts to {out_dir}")
    return 0


TRAIN_CONFIG_KEYS = {
    "epochs": int, "batch_size": int, "lr0": float, "lr_min": float,
    "adam_beta1": float, "adam_beta2": float, "adam_eps": float,
    "seed": int, "eval_every": int,
    "pool_size": int, "attn_dim": int, "spectral_heads": int,
    "backbone": str, "recalib_reduction": int, "resolution": str,
    "recon_stages": int, "recon_features": int, "recon_heads": int,
    "flexi_downsample": int,
}


def _read_config_file(path: str) -> dict:
    from .errors import SchemaError

    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in TRAIN_CONFIG_KEYS:
            raise SchemaError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = TRAIN_CONFIG_KEYS[key](value.strip())
    return values


def _effective_train_settings(args) -> dict:
    settings = {key: None for key in TRAIN_CONFIG_KEYS}
    if args.config:
        settings.update(_read_config_file(args.config))
    for key in TRAIN_CONFIG_KEYS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            settings[key] = flag_value
    if isinstance(settings.get("resolution"), str):
        settings["resolution"] = _parse_resolution(settings["resolution"])
    return settings


def cmd_train(args) -> int:
    from dataclasses import asdict

    from .classifier import ClassifierConfig
    from .datamodel import load_manifest
    from .reconstruction import ReconConfig, freeze
    from .spectral import SpectralConfig
    from .training import TrainConfig, train

    started = time.perf_counter()
    s = _effective_train_settings(args)
    resolution = tuple(s["resolution"]) if s["resolution"] else (64, 64)

    spectral_cfg = SpectralConfig(
        pool_size=s["pool_size"] or SpectralConfig.pool_size,
        attn_dim=s["attn_dim"] or SpectralConfig.attn_dim,
        head_count=s["spectral_heads"] or SpectralConfig.head_count,
    )
    classifier_cfg = ClassifierConfig(
        backbone=s["backbone"] or "compact",
        recalib_reduction=s["recalib_reduction"] or 4,
        input_resolution=resolution,
    )
    defaults = TrainConfig()
    train_cfg = TrainConfig(
        epochs=s["epochs"] if s["epochs"] is not None else defaults.epochs,
        batch_size=s["batch_size"] if s["batch_size"] is not None else defaults.batch_size,
        lr0=s["lr0"] if s["lr0"] is not None else defaults.lr0,
        lr_min=s["lr_min"] if s["lr_min"] is not None else defaults.lr_min,
        adam_beta1=s["adam_beta1"] if s["adam_beta1"] is not None else defaults.adam_beta1,
        adam_beta2=s["adam_beta2"] if s["adam_beta2"] is not None else defaults.adam_beta2,
        adam_eps=s["adam_eps"] if s["adam_eps"] is not None else defaults.adam_eps,
        seed=s["seed"] if s["seed"] is not None else defaults.seed,
        eval_every=s["eval_every"] if s["eval_every"] is not None else defaults.eval_every,
        checkpoint_dir=args.out,
    )

    # recon flags may come from the config file too
    for key in ("recon_stages", "recon_features", "recon_heads", "flexi_downsample"):
        if getattr(args, key, None) is None and s[key] is not None:
            setattr(args, key, s[key])
    if getattr(args, "seed", None) is None:
        args.seed = train_cfg.seed
    model, weights_path = _load_or_init_recon(args, resolution, "random_init_recon")
    freeze(model)

    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out)
    ckpt, history = train(
        manifest, model, spectral_cfg, classifier_cfg, train_cfg,
        resume_from=args.resume, stop_epoch=args.stop_epoch,
        cache_dir=_cache_dir_for(out_dir),
        log=lambda rec: print(
            f"epoch {rec['epoch']:4d}  loss {rec['train_loss']:.4f}  "
            f"train_acc {rec['train_acc']:.3f}  val_acc {rec['val_acc']:.3f}"
        ),
    )
    _write_run_manifest(
        out_dir, "train", args.argv,
        {"spectral": asdict(spectral_cfg), "classifier": asdict(classifier_cfg),
         "train": train_cfg.serializable(), "recon": _recon_config(args).__dict__},
        {"seed": train_cfg.seed},
        {"manifest": args.manifest, **({"recon_weights": weights_path} if weights_path else {})},
        [ckpt, out_dir / "recon_weights.hfw", out_dir / "history.json"], started,
    )
    final = history[-1]
    print(f"finished at epoch {final['epoch']}: train_acc {final['train_acc']:.3f} "
          f"val_acc {final['val_acc']:.3f} -> {ckpt}")
    return 0


def cmd_eval(args) -> int:
    from .datamodel import load_manifest
    from .pipeline import evaluate_checkpoint

    started = time.perf_counter()
    manifest = load_manifest(args.manifest)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"report_{args.split}.json"
    report = evaluate_checkpoint(
        args.checkpoint, manifest, args.split, args.recon_weights,
        out_path=out, threshold=args.threshold, per_video=args.per_video,
    )
    _write_run_manifest(
        out, "eval", args.argv,
        {"split": args.split, "threshold": args.threshold, "per_video": args.per_video},
        {"seed": report.provenance["seed"]},
        {"checkpoint": args.checkpoint, "manifest": args.manifest,
         "recon_weights": args.recon_weights},
        [out], started,
    )
    print(f"split {args.split}: accuracy {report.accuracy:.4f}  auc {report.auc:.4f}  "
          f"eer {report.eer:.4f} -> {out}")
    return 0


def cmd_infer(args) -> int:
    from .datamodel import load_frame
    from .errors import IntegrityError, ValidationError
    from .pipeline import frame_probability
    from .reconstruction import load_recon_weights
    from .training import restore_pipeline
    from .util import sha256_file

    if not 0.0 < args.threshold < 1.0:
        raise ValidationError(f"threshold must be in (0,1), got {args.threshold}")
    spectral, model, header = restore_pipeline(args.checkpoint)
    recon_hash = sha256_file(args.recon_weights)
    if recon_hash != header["recon_weights_hash"]:
        raise IntegrityError("reconstruction weights hash does not match the checkpoint")
    recon = load_recon_weights(args.recon_weights)
    frame = load_frame(args.frame, model.config.input_resolution)
    probability = frame_probability(frame, recon, spectral, model)
    label = int(probability >= args.threshold)  # >= tie rule: tie classifies fake
    print(json.dumps({"probability": probability, "label": label}))
    return 0


def cmd_export_bands(args) -> int:
    import numpy as np

    from .datamodel import load_frame, read_cube
    from .errors import ValidationError
    from .spectral import band_descriptors, compute_mixing, export_band_weights, spectral_attention
    from .training import restore_pipeline

    started = time.perf_counter()
    spectral, model, _ = restore_pipeline(args.checkpoint)
    inputs: dict = {"checkpoint": args.checkpoint}
    if args.cube:
        cube = read_cube(args.cube)
        inputs["cube"] = args.cube
    elif args.frame and args.recon_weights:
        from .reconstruction import load_recon_weights, reconstruct

        recon = load_recon_weights(args.recon_weights)
        frame = load_frame(args.frame, model.config.input_resolution)
        cube = reconstruct(frame, recon).astype(np.float32)
        inputs.update({"frame": args.frame, "recon_weights": args.recon_weights})
    else:
        raise ValidationError("provide --cube, or --frame together with --recon-weights")
    descriptors = band_descriptors(cube, spectral.pool_size)
    values, attention = spectral_attention(descriptors, spectral)
    mixing = compute_mixing(values, spectral)
    out = Path(args.out)
    export_band_weights(mixing, attention, out)
    _write_run_manifest(out, "export-bands", args.argv, {}, {}, inputs, [out], started)
    print(f"wrote band weights to {out}")
    return 0


def cmd_plot(args) -> int:
    from .plotting import history_svg, roc_svg

    started = time.perf_counter()
    out = Path(args.out)
    if args.report:
        payload = json.loads(Path(args.report).read_text())
        svg = roc_svg(payload["roc"], payload.get("auc"))
        source = {"report": args.report}
    else:
        history = json.loads(Path(args.history).read_text())
        svg = history_svg(history)
        source = {"history": args.history}
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg, encoding="utf-8")
    _write_run_manifest(out, "plot", args.argv, {}, {}, source, [out], started)
    print(f"wrote {out}")
    return 0


def cmd_bench_recon(args) -> int:
    import numpy as np

    from . import kernels
    from .reconstruction import init_reconstruction, reconstruct
    from .util import derive_rng

    started = time.perf_counter()
    model = init_reconstruction(_recon_config(args), args.resolution, args.seed)
    rng = derive_rng(args.seed, "bench")
    frames = rng.random((args.frames, 3, *args.resolution)).astype(np.float32)
    backends = list(kernels.available_backends()) if args.compare_backends else [
        kernels.active_backend()
    ]
    results = {}
    for backend in backends:
        with kernels.use_backend(backend):
            reconstruct(frames[0], model)  # warm up
            t0 = time.perf_counter()
            for _ in range(args.repeats):
                for frame in frames:
                    reconstruct(frame, model)
            elapsed = time.perf_counter() - t0
        per_frame = elapsed / (args.repeats * args.frames)
        results[backend] = per_frame
        print(f"{backend:>9}: {per_frame * 1000.0:8.2f} ms/frame "
              f"({args.frames} frames x {args.repeats} repeats)")
    if len(results) == 2:
        ratio = results["python"] / results["compiled"]
        print(f"compiled speedup: {ratio:.2f}x")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(
            {"resolution": list(args.resolution), "frames": args.frames,
             "repeats": args.repeats, "seconds_per_frame": results}, indent=2) + "\n")
        _write_run_manifest(out, "bench-recon", args.argv,
                            {"resolution": list(args.resolution)}, {"seed": args.seed},
                            {}, [out], started)
    return 0


# -- entry points ---------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.deterministic:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, "1")
    args.argv = argv
    from . import errors

    try:
        return args.func(args)
    except (errors.ValidationError, errors.ConfigError, errors.ShapeError,
            errors.FormatError, errors.DomainError, errors.MetricError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (errors.IntegrityError, errors.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except errors.NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


def console_main() -> None:
    sys.exit(main())
