"""Command-line surface: mixing, manifests, training, enhancement, evaluation.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  Option precedence
is CLI flag > TOML config file > built-in default; the resolved config is
echoed to stderr before each run.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

try:
    import tomllib
except ImportError:                 # Python < 3.11
    import tomli as tomllib

from . import data, dsp, metrics, toy, training


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _log(msg):
    print(msg, file=sys.stderr)


def _load_config_file(path):
    if path is None:
        return {}
    with open(path, "rb") as f:
        return tomllib.load(f)


def _resolve_train_config(args, stage):
    """CLI flag > config file > defaults."""
    doc = _load_config_file(args.config)
    base = (training.TrainConfig(stage="pretrain") if stage == "pretrain"
            else training.TrainConfig.finetune_defaults())
    values = dataclasses.asdict(base)
    for key, val in doc.items():
        if key not in values:
            raise UsageError(f"unknown config key {key!r}")
        values[key] = val
    for key in ("lr_g", "lr_d", "batch_size", "total_epochs", "steps_per_epoch",
                "seed", "decay_start_epoch", "id_epochs"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if stage == "finetune" and getattr(args, "variant", None):
        values["cycle_variant"] = args.variant
    values["stage"] = stage
    if args.preset == "toy":
        toy_vals = dataclasses.asdict(training.toy_train_config(stage))
        for key in ("lr_g", "lr_d", "batch_size", "total_epochs",
                    "steps_per_epoch"):
            if getattr(args, key, None) is None and key not in doc:
                values[key] = toy_vals[key]
        values["decay_start_epoch"] = min(values["decay_start_epoch"],
                                          values["total_epochs"])
    return training.TrainConfig(**values)


def _arch_for(args):
    return training.TOY_ARCH if args.preset == "toy" else training.ArchConfig()


def _sampler_for(args, config):
    if args.manifest:
        manifest = data.CorpusManifest.from_file(args.manifest)
    elif args.preset == "toy":
        corpus_dir = Path(args.workdir) / "toy_corpus"
        if not (corpus_dir / "train_manifest.json").exists():
            _log(f"generating toy corpus under {corpus_dir}")
            toy.make_toy_corpus(corpus_dir, seed=config.seed)
        manifest = data.CorpusManifest.from_file(corpus_dir / "train_manifest.json")
    else:
        raise UsageError("either --manifest or --preset toy is required")
    crop = (training.TOY_CROP_FRAMES if args.preset == "toy"
            else data.CROP_FRAMES)
    return data.BatchSampler(manifest, batch_size=config.batch_size,
                             paired=args.paired, crop_frames=crop,
                             seed=config.seed)


def _add_train_flags(p):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--manifest", help="training manifest JSON")
    p.add_argument("--preset", choices=["toy"], help="built-in preset")
    p.add_argument("--workdir", default=".", help="output directory")
    p.add_argument("--ckpt-out", help="checkpoint output path")
    p.add_argument("--log", help="JSONL loss-log path")
    p.add_argument("--paired", action="store_true",
                   help="use aligned clean targets (parallel-data mode)")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int)
    for flag, typ in (("--lr-g", float), ("--lr-d", float), ("--batch-size", int),
                      ("--total-epochs", int), ("--steps-per-epoch", int),
                      ("--decay-start-epoch", int), ("--id-epochs", int)):
        p.add_argument(flag, type=typ, dest=flag[2:].replace("-", "_"))


def build_parser():
    parser = _Parser(prog="cycleclean",
                     description="Non-parallel speech enhancement toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mix", help="mix clean speech with noise at a target SNR")
    p.add_argument("--clean", required=True)
    p.add_argument("--noise", required=True)
    p.add_argument("--snr", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("manifest", help="build a training manifest from WAV dirs")
    p.add_argument("--noisy-dir", required=True)
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-mcgan", help="stage 1: pretrain the magnitude cycle")
    _add_train_flags(p)

    p = sub.add_parser("train-cincgan", help="stage 2: joint fine-tuning")
    _add_train_flags(p)
    p.add_argument("--stage1-ckpt", required=True, help="stage-1 checkpoint")
    p.add_argument("--variant", choices=["I", "II", "III", "IV"], default="IV")

    p = sub.add_parser("enhance", help="enhance a noisy WAV file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", required=True)

    p = sub.add_parser("evaluate", help="score enhanced files against references")
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--est-dir", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--csv", help="optional CSV report path")
    p.add_argument("--external-scorer", action="append", default=[],
                   metavar="NAME=CMD",
                   help="external per-file scorer, e.g. pesq='run_pesq {ref} {est}'")
    return parser


def _cmd_mix(args):
    clean = dsp.read_wav(args.clean)
    noise = dsp.read_wav(args.noise)
    import numpy as np
    mix, gain = data.mix_at_snr(clean, noise, args.snr,
                                np.random.default_rng(args.seed))
    dsp.write_wav(args.out, mix)
    _log(f"mixed {args.clean} + {args.noise} at {args.snr} dB "
         f"(noise gain {gain:.4f}) -> {args.out}")
    return 0


def _cmd_manifest(args):
    manifest = data.build_manifest(args.noisy_dir, args.clean_dir, seed=args.seed)
    manifest.to_file(args.out)
    _log(f"wrote manifest with {len(manifest.noisy_entries)} noisy / "
         f"{len(manifest.clean_entries)} clean entries to {args.out}")
    return 0


def _cmd_train(args, stage):
    config = _resolve_train_config(args, stage)
    arch = _arch_for(args)
    _log("resolved config: " + json.dumps(dataclasses.asdict(config)))
    sampler = _sampler_for(args, config)
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    ckpt = args.ckpt_out or str(workdir / f"{stage}.ckpt")
    log = args.log or str(workdir / f"{stage}_log.jsonl")
    if stage == "pretrain":
        training.pretrain_magnitude_cycle(config, sampler, ckpt, arch=arch,
                                          log_path=log,
                                          max_steps=args.max_steps)
    else:
        training.finetune_cascade(config, sampler, args.stage1_ckpt, ckpt,
                                  arch=arch, log_path=log,
                                  max_steps=args.max_steps)
    _log(f"checkpoint written to {ckpt}; loss log at {log}")
    return 0


def _cmd_enhance(args):
    training.enhance_file(args.infile, args.out, args.ckpt)
    _log(f"enhanced {args.infile} -> {args.out}")
    return 0


def _cmd_evaluate(args):
    ref_dir, est_dir = Path(args.ref_dir), Path(args.est_dir)
    pairs = []
    for ref in sorted(ref_dir.glob("*.wav")):
        est = est_dir / ref.name
        pairs.append((ref, est))
    if not pairs:
        raise FileNotFoundError(f"no WAV files under {ref_dir}")
    scorers = {}
    for item in args.external_scorer:
        name, _, cmd = item.partition("=")
        if not cmd:
            raise UsageError(f"bad --external-scorer value: {item!r}")
        scorers[name] = cmd
    report = metrics.evaluate_corpus(pairs, external_scorers=scorers,
                                     metadata={"ref_dir": str(ref_dir),
                                               "est_dir": str(est_dir)})
    report.to_json(args.report)
    if args.csv:
        report.to_csv(args.csv)
    _log("corpus means: " + json.dumps(report.means))
    if report.errors:
        _log(f"{len(report.errors)} file(s) failed; see report")
    return 0


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _log(f"usage error: {exc}")
        return 1
    except SystemExit as exc:       # --help paths
        return int(exc.code or 0)
    try:
        if args.command == "mix":
            return _cmd_mix(args)
        if args.command == "manifest":
            return _cmd_manifest(args)
        if args.command == "train-mcgan":
            return _cmd_train(args, "pretrain")
        if args.command == "train-cincgan":
            return _cmd_train(args, "finetune")
        if args.command == "enhance":
            return _cmd_enhance(args)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        _log(f"usage error: {exc}")
        return 1
    except Exception as exc:
        _log(f"error: {exc}")
        if getattr(args, "verbose", False):
            raise
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
