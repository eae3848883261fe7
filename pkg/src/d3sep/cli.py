"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime/validation failure,
3 check failure (gradcheck or invariant).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_CHECK = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_seed() -> int:
    return int(os.environ.get("D3SEP_SEED", "0"))


def build_parser() -> _Parser:
    parser = _Parser(prog="d3sep", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rf-analyze", help="receptive-field coverage report")
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--scheme", choices=["naive", "multi", "none"], default="multi")
    p.add_argument("--out", default=None, help="CSV path (PNG written alongside)")

    p = sub.add_parser("train", help="train a per-source separation model")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset directory or 'synth'")
    p.add_argument("--source", default="tonal")
    p.add_argument("--scenes", type=int, default=32,
                   help="scene count when --data synth")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=6)
    p.add_argument("--patch-frames", type=int, default=64)
    p.add_argument("--lr-switch-epoch", type=int, default=None)
    p.add_argument("--no-augmentation", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, repeatable")

    p = sub.add_parser("separate", help="separate a mixture into stems")
    p.add_argument("--ckpt", nargs="+", required=True,
                   help="per-source checkpoints named <source>.npz")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--patch-frames", type=int, default=64)

    p = sub.add_parser("eval", help="windowed SDR of estimates vs references")
    p.add_argument("--est", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True, help="scores CSV")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--config", default="tiny")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("weight-norms", help="per-skip kernel norm report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="CSV path (PNG written alongside)")

    return parser


def cmd_rf_analyze(args) -> int:
    from . import rf
    from .reports import plot_rf_report

    report = rf.block_report(args.layers, args.kernel, args.scheme)
    print(report.summary())
    if args.out:
        rf.write_report_csv(report, args.out)
        fig = plot_rf_report(report, args.out)
        print(f"wrote {args.out} and {fig}")
    return EXIT_OK


def _resolve_seed(value):
    return _default_seed() if value is None else value


def _load_config_or_usage(name, overrides=None):
    from .config import load_config

    try:
        return load_config(name, overrides)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args) -> int:
    from .blocks import build_network, config_fingerprint, save_checkpoint
    from .reports import write_loss_history
    from .synth import load_dataset, synth_dataset
    from .training import TrainConfig, train

    seed = _resolve_seed(args.seed)
    cfg = _load_config_or_usage(args.config, args.set)
    print(f"config fingerprint {config_fingerprint(cfg)[:16]} seed {seed}")
    if args.data == "synth":
        scenes = synth_dataset(seed, args.scenes)
    else:
        scenes = load_dataset(args.data)
    switch = args.lr_switch_epoch
    if switch is None:
        switch = max(1, int(args.epochs * 0.8))
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                       lr_switch_epoch=switch, patch_frames=args.patch_frames,
                       seed=seed, augmentation=not args.no_augmentation)
    model = build_network(cfg, seed=seed)
    print(f"model {cfg.get('name', '?')}: {model.param_count()} parameters")
    history = train(model, scenes, args.source, tcfg, log=print)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out, epoch=tcfg.epochs)
    write_loss_history(history, out.with_suffix(".loss.csv"))
    print(f"wrote {out} and {out.with_suffix('.loss.csv')}")
    return EXIT_OK


def cmd_separate(args) -> int:
    from .blocks import config_fingerprint, load_checkpoint
    from .inference import separate
    from .spectral import read_wav, write_wav

    models = {}
    for ckpt in args.ckpt:
        name = Path(ckpt).stem
        models[name], _ = load_checkpoint(ckpt)
        print(f"{name}: config fingerprint "
              f"{config_fingerprint(models[name].config)[:16]}")
    mixture = read_wav(args.input)
    stems = separate(models, mixture, patch_frames=args.patch_frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, clip in stems.items():
        write_wav(clip, out / f"{name}.wav")
        print(f"wrote {out / (name + '.wav')}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluate import aggregate_sdr, sdr
    from .reports import write_sdr_report
    from .spectral import read_wav

    est_root, ref_root = Path(args.est), Path(args.ref)
    ref_scenes = sorted(d.name for d in ref_root.glob("scene_*"))
    if not ref_scenes:
        raise ValueError(f"no scene_* directories under {ref_root}")
    rows = []
    by_source = {}
    missing = []
    for scene in ref_scenes:
        for ref_wav in sorted((ref_root / scene).glob("*.wav")):
            if ref_wav.stem == "mixture":
                continue
            est_wav = est_root / scene / ref_wav.name
            if not est_wav.exists():
                missing.append(str(est_wav))
                continue
            score = sdr(read_wav(est_wav), read_wav(ref_wav))
            rows.append({"scene": scene, "source": ref_wav.stem,
                         "sdr_db": f"{score:.4f}"})
            by_source.setdefault(ref_wav.stem, []).append(score)
    if missing:
        raise ValueError("missing estimate stems: " + ", ".join(missing))
    for source in sorted(by_source):
        med = aggregate_sdr(by_source[source])
        rows.append({"scene": "MEDIAN", "source": source, "sdr_db": f"{med:.4f}"})
        print(f"{source}: median SDR {med:.2f} dB")
    write_sdr_report(rows, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .blocks import config_fingerprint
    from .checks import layer_checks, network_check, parameter_gradient_check

    seed = _resolve_seed(args.seed)
    cfg = _load_config_or_usage(args.config)
    print(f"config fingerprint {config_fingerprint(cfg)[:16]} seed {seed}")
    failed = False
    for name, err in layer_checks(seed).items():
        status = "pass" if err < args.tol else "FAIL"
        failed |= err >= args.tol
        print(f"{name:24s} max rel err {err:.3e}  {status}")
    err = network_check(cfg, seed)
    status = "pass" if err < args.tol else "FAIL"
    failed |= err >= args.tol
    print(f"{'network-input':24s} max rel err {err:.3e}  {status}")
    err = parameter_gradient_check(cfg, seed)
    status = "pass" if err < args.tol else "FAIL"
    failed |= err >= args.tol
    print(f"{'network-params':24s} max rel err {err:.3e}  {status}")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_weight_norms(args) -> int:
    from .blocks import load_checkpoint
    from .reports import write_weight_norms

    model, _ = load_checkpoint(args.ckpt)
    rows = write_weight_norms(model, args.out)
    for r in rows:
        print(f"skip {r['skip_index']} (dilation {r['dilation']}): "
              f"normalized L1 {r['normalized']:.4f}")
    print(f"wrote {args.out}")
    return EXIT_OK


COMMANDS = {
    "rf-analyze": cmd_rf_analyze,
    "train": cmd_train,
    "separate": cmd_separate,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "weight-norms": cmd_weight_norms,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
