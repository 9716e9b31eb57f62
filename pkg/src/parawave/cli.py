"""Command-line entry points.

Exit codes: 0 success, 1 a verification check failed, 2 usage or
configuration error (including unreadable or incompatible input files),
3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import __version__
from . import checkpoint as ckpt
from . import config as config_mod
from .autodiff import AdamState
from .bench import run_bench
from .distill import distill, sequence_kl_estimate
from .dsp import (Dataset, Example, compute_mel_stats, load_manifest_clips, log_mel, read_wav,
                  synth_dataset, upsample_conditioner, write_wav)
from .errors import ConfigError, NumericError, ParawaveError
from .rng import standard_normal
from .student import FlowStack, iaf_sample
from .teacher import ClipPolicy, TeacherParams, ar_sample, train_teacher
from .verify import SUITES, run_suite

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


# ------------------------------------------------------------------ manifest

@dataclass
class RunManifest:
    config_hash: str
    checkpoints: List[str] = field(default_factory=list)
    metrics: List[str] = field(default_factory=list)
    histograms: List[str] = field(default_factory=list)
    provenance: str = ""

    def write(self, path) -> None:
        missing = [p for p in self.checkpoints + self.metrics + self.histograms if not os.path.exists(p)]
        if missing:
            raise ConfigError(f"manifest lists missing files: {missing[:3]}")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.__dict__, fh, indent=2, sort_keys=True)
            fh.write("\n")


def provenance(cfg: config_mod.ExperimentConfig) -> str:
    return f"parawave-{__version__}+cfg.{cfg.digest()[:12]}.seed{cfg.run.seed}"


# ------------------------------------------------------------------- helpers

def load_config(args) -> config_mod.ExperimentConfig:
    overrides = list(args.set or [])
    if getattr(args, "out", None):
        overrides.append(f"run.out_dir={args.out}")
    if args.config:
        return config_mod.load(args.config, overrides)
    return config_mod.finalize(config_mod.preset(args.preset), overrides)


def build_dataset(cfg: config_mod.ExperimentConfig) -> Dataset:
    d = cfg.data
    if not d.manifest:
        return synth_dataset(cfg.synth_spec(), cfg.run.seed)
    clips = load_manifest_clips(d.manifest)
    for c in clips:
        if c.sample_rate != d.sample_rate:
            raise ConfigError(f"manifest clip at {c.sample_rate} Hz, config expects {d.sample_rate} Hz")
    stats = compute_mel_stats(clips, d.mel_bands, cfg.stft())
    return Dataset([Example(c, log_mel(c, d.mel_bands, cfg.stft(), stats)) for c in clips], stats)


def make_optimizer(cfg: config_mod.ExperimentConfig) -> AdamState:
    o = cfg.optim
    return AdamState(lr=o.lr, beta1=o.beta1, beta2=o.beta2, eps=o.eps,
                     anneal_every=o.anneal_every, anneal_factor=o.anneal_factor)


def build_student(cfg: config_mod.ExperimentConfig, teacher: TeacherParams) -> FlowStack:
    s = cfg.student
    return FlowStack.for_teacher(teacher, cfg.student_layers(), residual_channels=s.residual_channels,
                                 skip_channels=s.skip_channels, kernel_size=s.kernel_size, cycle=s.cycle,
                                 reverse_time=cfg.student_reverse(), seed=cfg.run.seed + 1)


def _out_dir(cfg) -> str:
    os.makedirs(cfg.run.out_dir, exist_ok=True)
    return cfg.run.out_dir


def _load_teacher_for(cfg, path) -> TeacherParams:
    if ckpt.checkpoint_kind(path) != "teacher":
        raise ConfigError(f"{path} is not a teacher checkpoint")
    teacher, _ = ckpt.load_teacher(path)
    if teacher.conditioner.bands != cfg.data.mel_bands:
        raise ConfigError(f"teacher conditioner expects {teacher.conditioner.bands} mel bands, "
                          f"config has {cfg.data.mel_bands}")
    return teacher


# ------------------------------------------------------------------ commands

def cmd_train_teacher(args) -> int:
    cfg = load_config(args)
    out = _out_dir(cfg)
    data = build_dataset(cfg)
    cfg.save(os.path.join(out, "config.ini"))
    stats_path = os.path.join(out, "mel_stats.txt")
    data.stats.save(stats_path)
    teacher = TeacherParams(cfg.teacher_net(), bands=cfg.data.mel_bands, seed=cfg.run.seed)
    opt = make_optimizer(cfg)
    metrics_path = os.path.join(out, "teacher_metrics.csv")
    ckpt_dir = os.path.join(out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    checkpoints: List[str] = []
    every = cfg.teacher.checkpoint_every
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("step", "nll", "clip_fraction", "lr"))

        def on_step(i, nll, frac):
            writer.writerow((i, nll, frac, opt.current_lr()))
            if every and (i + 1) % every == 0:
                path = os.path.join(ckpt_dir, f"teacher_{i + 1:07d}.ckpt")
                ckpt.save_teacher(path, teacher, {"step": str(i + 1)})
                checkpoints.append(path)

        run = train_teacher(teacher, list(data), opt, cfg.teacher.steps,
                            clip=ClipPolicy(cfg.teacher.clip_floor), batch_size=cfg.teacher.batch_size,
                            callback=on_step)
    final = os.path.join(out, "teacher.ckpt")
    ckpt.save_teacher(final, teacher, {"step": str(cfg.teacher.steps)})
    RunManifest(cfg.digest(), checkpoints + [final], [metrics_path, stats_path],
                provenance=provenance(cfg)).write(os.path.join(out, "manifest.json"))
    final_nll = run.nll[-1] if run.nll else float("nan")
    print(f"trained teacher for {cfg.teacher.steps} steps; final NLL {final_nll:.6f}; checkpoint {final}")
    return EXIT_OK


def cmd_distill(args) -> int:
    cfg = load_config(args)
    teacher = _load_teacher_for(cfg, args.teacher)
    out = _out_dir(cfg)
    data = build_dataset(cfg)
    cfg.save(os.path.join(out, "config.ini"))
    stack = build_student(cfg, teacher)
    opt = make_optimizer(cfg)
    metrics_path = os.path.join(out, "distill_metrics.csv")
    hist_dir = os.path.join(out, "histograms")
    ckpt_dir = os.path.join(out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    extra = {"teacher_checkpoint": os.path.abspath(args.teacher),
             "teacher_digest": ckpt.file_digest(args.teacher)}
    checkpoints: List[str] = []
    every = cfg.distill.checkpoint_every

    def on_step(m):
        if every and (m.step + 1) % every == 0:
            path = os.path.join(ckpt_dir, f"student_{m.step + 1:07d}.ckpt")
            ckpt.save_student(path, stack, dict(extra, step=str(m.step + 1)))
            checkpoints.append(path)

    run = distill(teacher, stack, list(data), cfg.distill_config(), opt, cfg.distill.steps,
                  stft_cfg=cfg.stft(), seed=cfg.run.seed, batch_size=cfg.distill.batch_size,
                  metrics_path=metrics_path, hist_dir=hist_dir, hist_every=cfg.distill.hist_every,
                  callback=on_step)
    final = os.path.join(out, "student.ckpt")
    ckpt.save_student(final, stack, dict(extra, step=str(cfg.distill.steps)))
    RunManifest(cfg.digest(), checkpoints + [final], [metrics_path], run.histograms,
                provenance=provenance(cfg)).write(os.path.join(out, "manifest.json"))
    last = run.metrics[-1] if run.metrics else None
    summary = f"final KL {last.kl_loss:.6f}, reg {last.reg_term:.6f}, STFT {last.stft_loss:.6f}" if last else ""
    print(f"distilled {cfg.distill.steps} steps ({run.aborted} aborted); {summary}; checkpoint {final}")
    return EXIT_OK


def _conditioner_for(args, cfg, bands: int, T: int) -> Optional[np.ndarray]:
    if bands == 0:
        return None
    if args.cond == "synth":
        mel = build_dataset(cfg)[0].mel
    else:
        clip = read_wav(args.cond)
        stats = None
        if args.stats:
            from .dsp import MelStats
            stats = MelStats.load(args.stats)
        mel = log_mel(clip, bands, cfg.stft(), stats)
    if mel.bands != bands:
        raise ConfigError(f"checkpoint expects {bands} mel bands, conditioner has {mel.bands}")
    return upsample_conditioner(mel, T)


def cmd_sample(args) -> int:
    cfg = load_config(args)
    if args.T < 1:
        raise ConfigError("--T must be >= 1")
    kind = ckpt.checkpoint_kind(args.checkpoint)
    sr = cfg.data.sample_rate
    if kind == "teacher":
        teacher, _ = ckpt.load_teacher(args.checkpoint)
        cond = _conditioner_for(args, cfg, teacher.conditioner.bands, args.T)
        result = ar_sample(teacher, cond, args.T, args.seed, args.temperature)
        samples = result.samples
    else:
        stack, _ = ckpt.load_student(args.checkpoint)
        cond = _conditioner_for(args, cfg, stack.conditioner.bands, args.T)
        x, _ = iaf_sample(standard_normal(args.seed, args.T), stack, cond)
        samples = x.data
    if not np.all(np.isfinite(samples)):
        raise NumericError("sampled audio is not finite")
    write_wav(args.wav, np.clip(samples, -1.0, 1.0), sr)
    print(f"wrote {args.T} samples from the {kind} checkpoint to {args.wav}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = load_config(args)
    if args.teacher and args.student:
        teacher, _ = ckpt.load_teacher(args.teacher)
        stack, _ = ckpt.load_student(args.student, teacher.conditioner)
    elif args.teacher or args.student:
        raise ConfigError("give both --teacher and --student, or neither")
    else:
        teacher = TeacherParams(cfg.teacher_net(), bands=cfg.data.mel_bands, seed=cfg.run.seed)
        stack = build_student(cfg, teacher)
    reports = [run_bench(teacher, stack, T, seed=cfg.run.seed) for T in args.T]
    text = json.dumps(reports if len(reports) > 1 else reports[0], indent=2)
    print(text)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = run_suite(args.suite, seed=args.seed)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK_FAILED


def cmd_eval_kl(args) -> int:
    cfg = load_config(args)
    teacher = _load_teacher_for(cfg, args.teacher)
    stack, _ = ckpt.load_student(args.student, teacher.conditioner)
    T = args.T or cfg.data.length
    cond = None
    if teacher.conditioner.bands:
        cond = upsample_conditioner(build_dataset(cfg)[0].mel, T)
    mean, se = sequence_kl_estimate(teacher, stack, cond, args.draws, length=T, seed=args.seed)
    print(json.dumps({"T": T, "draws": args.draws, "sequence_kl": mean, "std_error": se,
                      "per_step_kl": mean / T}, indent=2))
    return EXIT_OK


# -------------------------------------------------------------------- parser

def _config_args(p: argparse.ArgumentParser, with_out: bool = True) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="INI config file")
    src.add_argument("--preset", default="smoke", choices=config_mod.PRESETS, help="named preset (default smoke)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key")
    if with_out:
        p.add_argument("--out", help="output directory (overrides run.out_dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parawave", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"parawave {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="train the autoregressive teacher")
    _config_args(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="distill a parallel student from a teacher checkpoint")
    _config_args(p)
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("sample", help="write a WAV sampled from a teacher or student checkpoint")
    _config_args(p, with_out=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--T", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=1.0, help="teacher only")
    p.add_argument("--cond", default="synth", help="'synth' or a WAV file to take log-mel frames from")
    p.add_argument("--stats", help="mel statistics file for --cond WAV normalization")
    p.add_argument("--out", dest="wav", required=True, help="output WAV path")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("bench", help="sequential vs parallel sampling throughput")
    _config_args(p)
    p.add_argument("--teacher")
    p.add_argument("--student")
    p.add_argument("--T", type=int, nargs="+", default=[4096])
    p.add_argument("--json", help="also write the report here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run oracle self-checks")
    p.add_argument("suite", choices=list(SUITES) + ["all"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval-kl", help="sequence-level KL estimate between teacher and student")
    _config_args(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=int, default=0, help="sequence length (default: data.length)")
    p.set_defaults(func=cmd_eval_kl)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        where = f" (step {exc.step})" if exc.step is not None else ""
        print(f"numeric failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParawaveError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
