"""Experiment configuration: INI-style ``key = value`` sections plus named presets."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from .distill import DistillConfig
from .dsp import StftConfig, SynthSpec
from .errors import ConfigError
from .wavenet import WaveNetConfig

SEED_ENV = "CLARINET_SEED"


@dataclass
class RunSection:
    preset: str = "smoke"
    seed: int = 0
    out_dir: str = "runs/smoke"
    workers: int = 1


@dataclass
class DataSection:
    num_clips: int = 1
    length: int = 512
    sample_rate: int = 4000
    components: str = "220:0.4,470:0.2"
    noise_std: float = 0.0
    random_phase: bool = True
    dequantize: bool = False
    mel_bands: int = 16
    fft_size: int = 256
    hop: int = 50
    window_len: int = 200
    manifest: str = ""


@dataclass
class TeacherSection:
    layers: int = 10
    cycle: int = 5
    residual_channels: int = 32
    skip_channels: int = 32
    cond_channels: int = 8
    kernel_size: int = 2
    clip_floor: float = -9.0
    steps: int = 2000
    batch_size: int = 1
    checkpoint_every: int = 500


@dataclass
class StudentSection:
    layers: str = "6,6,6,6"
    reverse_time: str = "0,0,0,0"
    residual_channels: int = 16
    skip_channels: int = 16
    kernel_size: int = 3
    cycle: int = 6


@dataclass
class DistillSection:
    lam: float = 4.0
    kl_direction: str = "reverse"
    kl_clip_floor: float = -6.0
    kl_weight: float = 1.0
    stft_weight: float = 1.0
    kld_mask_threshold: float = 10.0
    warmup_steps: int = 500
    grad_norm_threshold: float = 1000.0
    tight_clip: str = "-0.1,0.1"
    loose_clip: str = "-5.0,5.0"
    grad_policy_start: int = 0
    steps: int = 2000
    batch_size: int = 1
    hist_every: int = 50
    checkpoint_every: int = 500


@dataclass
class OptimSection:
    lr: float = 1e-3
    anneal_every: int = 200_000
    anneal_factor: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


SECTIONS = {
    "run": RunSection, "data": DataSection, "teacher": TeacherSection,
    "student": StudentSection, "distill": DistillSection, "optim": OptimSection,
}


@dataclass
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    teacher: TeacherSection = field(default_factory=TeacherSection)
    student: StudentSection = field(default_factory=StudentSection)
    distill: DistillSection = field(default_factory=DistillSection)
    optim: OptimSection = field(default_factory=OptimSection)

    # ------------------------------------------------------------ derived
    def stft(self) -> StftConfig:
        d = self.data
        return StftConfig(fft_size=d.fft_size, hop=d.hop, window_len=d.window_len)

    def synth_spec(self) -> SynthSpec:
        d = self.data
        return SynthSpec(num_clips=d.num_clips, length=d.length, sample_rate=d.sample_rate,
                         components=parse_components(d.components), noise_std=d.noise_std,
                         random_phase=d.random_phase, dequantize=d.dequantize,
                         mel_bands=d.mel_bands, stft=self.stft())

    def teacher_net(self) -> WaveNetConfig:
        t = self.teacher
        return WaveNetConfig(layers=t.layers, cycle=t.cycle, residual_channels=t.residual_channels,
                             skip_channels=t.skip_channels, cond_channels=t.cond_channels,
                             kernel_size=t.kernel_size)

    def student_layers(self) -> List[int]:
        return _int_list(self.student.layers, "student.layers")

    def student_reverse(self) -> List[bool]:
        flags = [bool(v) for v in _int_list(self.student.reverse_time, "student.reverse_time")]
        if len(flags) != len(self.student_layers()):
            raise ConfigError("student.reverse_time needs one flag per flow")
        return flags

    def distill_config(self) -> DistillConfig:
        d = self.distill
        return DistillConfig(lam=d.lam, kl_direction=d.kl_direction, kl_clip_floor=d.kl_clip_floor,
                             kl_weight=d.kl_weight, stft_weight=d.stft_weight,
                             kld_mask_threshold=d.kld_mask_threshold, warmup_steps=d.warmup_steps,
                             grad_norm_threshold=d.grad_norm_threshold,
                             tight_clip=_float_pair(d.tight_clip, "distill.tight_clip"),
                             loose_clip=_float_pair(d.loose_clip, "distill.loose_clip"),
                             grad_policy_start=d.grad_policy_start)

    def validate(self) -> "ExperimentConfig":
        self.synth_spec().validate()
        self.teacher_net()
        layers = self.student_layers()
        if not layers or min(layers) < 0:
            raise ConfigError("student.layers must list at least one non-negative layer count")
        self.student_reverse()
        self.distill_config()
        if self.teacher.steps < 0 or self.distill.steps < 0:
            raise ConfigError("step counts must be >= 0")
        if not math.isfinite(self.teacher.clip_floor):
            raise ConfigError("teacher.clip_floor must be finite")
        if self.optim.lr <= 0:
            raise ConfigError("optim.lr must be positive")
        return self

    # ------------------------------------------------------ serialization
    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        for name in SECTIONS:
            section = getattr(self, name)
            cp[name] = {f.name: _fmt(getattr(section, f.name)) for f in dataclasses.fields(section)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    def set(self, dotted: str, value: str) -> None:
        try:
            sec, key = dotted.split(".", 1)
            section = getattr(self, sec)
        except (ValueError, AttributeError):
            raise ConfigError(f"unknown config key {dotted!r}") from None
        if sec not in SECTIONS:
            raise ConfigError(f"unknown config section {sec!r}")
        fields = {f.name: f for f in dataclasses.fields(section)}
        if key not in fields:
            raise ConfigError(f"unknown config key {dotted!r}")
        setattr(section, key, _parse(value, type(getattr(SECTIONS[sec](), key)), dotted))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(text: str, kind, key: str):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(float(text)) if "e" in text.lower() else int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None


def _int_list(text: str, key: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {text!r}") from None


def _float_pair(text: str, key: str) -> Tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"{key}: expected 'low,high', got {text!r}") from None
    return lo, hi


def parse_components(text: str) -> List[Tuple[float, float]]:
    out = []
    for item in text.split(","):
        if not item.strip():
            continue
        try:
            f, a = item.split(":")
            out.append((float(f), float(a)))
        except ValueError:
            raise ConfigError(f"data.components: bad entry {item!r} (want freq:amp)") from None
    return out


def from_text(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    cfg = base if base is not None else ExperimentConfig()
    if cp.has_option("run", "preset") and base is None:
        cfg = preset(cp.get("run", "preset"))
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown config section [{sec}]")
        for key, value in cp.items(sec):
            cfg.set(f"{sec}.{key}", value)
    return cfg


def load(path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return finalize(from_text(text), overrides)


def finalize(cfg: ExperimentConfig, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Apply ``section.key=value`` overrides and the seed environment variable, then validate."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v)
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        cfg.set("run.seed", env)
    return cfg.validate()


def preset(name: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.run.preset = name
    cfg.run.out_dir = f"runs/{name}"
    if name == "smoke":
        cfg.data.length = 64
        cfg.data.components = "300:0.5"
        cfg.data.mel_bands = 8
        cfg.data.fft_size = 64
        cfg.data.hop = 16
        cfg.data.window_len = 64
        cfg.teacher.layers, cfg.teacher.cycle = 4, 4
        cfg.teacher.residual_channels = cfg.teacher.skip_channels = 8
        cfg.teacher.cond_channels = 4
        cfg.teacher.steps = 200
        cfg.teacher.checkpoint_every = 100
        cfg.student.layers, cfg.student.reverse_time = "2,2", "0,1"
        cfg.student.residual_channels = cfg.student.skip_channels = 8
        cfg.student.cycle = 2
        cfg.distill.steps = 200
        cfg.distill.warmup_steps = 100
        cfg.distill.hist_every = 20
        cfg.distill.checkpoint_every = 100
    elif name == "overfit":
        cfg.teacher.steps = 2000
        cfg.distill.steps = 2000
        cfg.distill.hist_every = 40
    elif name == "paper-shape":
        cfg.data.sample_rate = 24000
        cfg.data.length = 12000
        cfg.data.components = "220:0.4,1250:0.2"
        cfg.data.mel_bands = 80
        cfg.data.fft_size, cfg.data.hop, cfg.data.window_len = 2048, 300, 1200
        cfg.teacher.layers, cfg.teacher.cycle = 20, 10
        cfg.teacher.residual_channels = cfg.teacher.skip_channels = 128
        cfg.teacher.cond_channels = 80
        cfg.teacher.steps = 1_000_000
        cfg.teacher.batch_size = 8
        cfg.teacher.checkpoint_every = 10_000
        cfg.student.layers, cfg.student.reverse_time = "10,10,10,30", "0,1,0,1"
        cfg.student.residual_channels = cfg.student.skip_channels = 64
        cfg.student.cycle = 10
        cfg.distill.steps = 1_000_000
        cfg.distill.batch_size = 8
        cfg.distill.checkpoint_every = 10_000
        cfg.optim.anneal_every = 200_000
    else:
        raise ConfigError(f"unknown preset {name!r} (choose smoke, overfit, paper-shape)")
    return cfg


PRESETS = ("smoke", "overfit", "paper-shape")
