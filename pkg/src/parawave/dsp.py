"""Audio containers, WAV/manifest I/O, STFT features and the STFT loss."""
from __future__ import annotations

import os
import wave
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError
from .rng import philox

QUANT_STEP = 2.0 / 65536
LOG_FLOOR = 1e-10


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    origin_bits: int = 16

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size < 1:
            raise ContractError("audio clip must contain at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise ContractError("audio clip contains non-finite samples")
        if np.any(np.abs(self.samples) > 1.0):
            raise ContractError("audio samples must lie in [-1, 1]")

    def __len__(self):
        return self.samples.size


def quantize16(x: np.ndarray) -> np.ndarray:
    """Snap to the 16-bit grid ``k / 32768`` with ``k`` in ``[-32768, 32767]``."""
    k = np.clip(np.round(np.asarray(x, dtype=np.float64) * 32768.0), -32768, 32767)
    return k / 32768.0


def dequantize(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return x + rng.uniform(0.0, QUANT_STEP, np.shape(x))


# ---------------------------------------------------------------------- WAV

def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """16-bit PCM mono little-endian. Samples are clamped to [-1, 1] here."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(os.fspath(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(pcm.tobytes())


def read_wav(path) -> AudioClip:
    try:
        with wave.open(os.fspath(path), "rb") as w:
            if w.getnchannels() != 1 or w.getsampwidth() != 2:
                raise ConfigError(f"{path}: expected 16-bit mono PCM")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise ConfigError(f"{path}: not a readable WAV file ({exc})") from exc
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(data, rate)


def read_manifest(path) -> List[Tuple[str, int, int]]:
    """Parse ``path<TAB>start_sample<TAB>length`` lines; blank lines and ``#`` comments skipped."""
    entries = []
    base = os.path.dirname(os.fspath(path))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ConfigError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                start, length = int(parts[1]), int(parts[2])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad integer field") from exc
            wav = parts[0] if os.path.isabs(parts[0]) else os.path.join(base, parts[0])
            entries.append((wav, start, length))
    return entries


def write_manifest(path, entries: Iterable[Tuple[str, int, int]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for wav, start, length in entries:
            fh.write(f"{wav}\t{int(start)}\t{int(length)}\n")


def load_manifest_clips(path) -> List[AudioClip]:
    clips = []
    for wav, start, length in read_manifest(path):
        clip = read_wav(wav)
        if start < 0 or start + length > len(clip):
            raise ConfigError(f"{wav}: segment [{start}, {start + length}) out of range")
        clips.append(AudioClip(clip.samples[start:start + length], clip.sample_rate))
    return clips


# --------------------------------------------------------------------- STFT

@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 256
    hop: int = 50
    window_len: int = 200
    center: bool = True

    def __post_init__(self):
        n = self.fft_size
        if n < 2 or n & (n - 1):
            raise ConfigError(f"fft_size must be a power of two, got {n}")
        if not 1 <= self.window_len <= n:
            raise ConfigError("window_len must be in [1, fft_size]")
        if not 1 <= self.hop <= self.window_len:
            raise ConfigError("hop must be in [1, window_len]")

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    @classmethod
    def full_size(cls, sample_rate: int = 24000) -> "StftConfig":
        # 12.5 ms shift, 50 ms Hann window, 2048-point FFT
        return cls(fft_size=2048, hop=int(round(0.0125 * sample_rate)),
                   window_len=int(round(0.05 * sample_rate)))


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_indices(length: int, cfg: StftConfig) -> np.ndarray:
    """Source index of every ``(frame, tap)`` after zero-extension and reflect padding.

    Clips shorter than one window are first zero-extended to ``window_len``;
    indices ``>= length`` point at those zeros.
    """
    L = max(length, cfg.window_len)
    pad = cfg.window_len // 2 if cfg.center else 0
    n_frames = (L + 2 * pad - cfg.window_len) // cfg.hop + 1
    j = np.arange(n_frames)[:, None] * cfg.hop + np.arange(cfg.window_len)[None, :]
    src = j - pad
    src = np.where(src < 0, -src, src)
    src = np.where(src >= L, 2 * (L - 1) - src, src)
    return src


def _signal(x) -> Tensor:
    if isinstance(x, AudioClip):
        return Tensor(x.samples)
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def stft_magnitude(x, cfg: StftConfig) -> Tensor:
    """Hann-windowed STFT magnitudes, shape ``[B, frames]`` (or ``[N, B, frames]``).

    Differentiable with respect to ``x`` when it is a tensor that requires grad.
    Where a magnitude is exactly zero its gradient is taken as zero.
    """
    x = _signal(x)
    T = x.shape[-1]
    L = max(T, cfg.window_len)
    idx = frame_indices(T, cfg)
    xd = x.data
    if L > T:
        xd = np.concatenate([xd, np.zeros(xd.shape[:-1] + (L - T,))], axis=-1)
    win = hann(cfg.window_len)
    frames = xd[..., idx] * win
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=-1)
    mag = np.abs(spec)

    def bw(g):
        g = np.swapaxes(g, -1, -2)  # [..., frames, B]
        safe = np.where(mag > 0, mag, 1.0)
        c = np.where(mag > 0, g * np.conj(spec) / safe, 0.0)
        full = np.zeros(c.shape[:-1] + (cfg.fft_size,), dtype=complex)
        full[..., :cfg.bins] = c
        gy = np.fft.fft(full, axis=-1).real[..., :cfg.window_len] * win
        gx = np.zeros(xd.shape)
        if gx.ndim == 1:
            np.add.at(gx, idx, gy)
        else:
            flat = gx.reshape(-1, L)
            gyf = gy.reshape(-1, *idx.shape)
            for n in range(flat.shape[0]):
                np.add.at(flat[n], idx, gyf[n])
        return (gx[..., :T],)

    return ad.apply(np.swapaxes(mag, -1, -2).copy(), (x,), bw)


def stft_loss(x, x_ref, cfg: StftConfig) -> Tensor:
    """Squared magnitude-spectrogram distance divided by bins and by frames."""
    x = _signal(x)
    ref = _signal(x_ref)
    if x.shape[-1] != ref.shape[-1]:
        raise ContractError(f"stft_loss length mismatch: {x.shape[-1]} vs {ref.shape[-1]}")
    mag = stft_magnitude(x, cfg)
    ref_mag = stft_magnitude(Tensor(ref.data), cfg).data
    n_frames = mag.shape[-1]
    diff = ad.sub(mag, Tensor(np.broadcast_to(ref_mag, mag.shape)))
    total = ad.sum(ad.square(diff))
    batch = int(np.prod(mag.shape[:-2])) if mag.ndim > 2 else 1
    return ad.mul(total, 1.0 / (cfg.bins * n_frames * batch))


# -------------------------------------------------------------------- mel

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(bands: int, fft_size: int, sample_rate: int,
                   fmin: float = 0.0, fmax: Optional[float] = None) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape ``[bands, fft_size//2 + 1]``."""
    n_bins = fft_size // 2 + 1
    if bands < 1:
        raise ConfigError("bands must be >= 1")
    if bands > n_bins:
        raise ConfigError(f"{bands} mel bands exceed {n_bins} frequency bins")
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), bands + 2))
    freqs = np.arange(n_bins) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


@dataclass
class MelStats:
    """Corpus-wide log-mel range used for [0, 1] normalization."""

    min: float
    max: float

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"min = {self.min!r}\nmax = {self.max!r}\n")

    @classmethod
    def load(cls, path) -> "MelStats":
        values: Dict[str, float] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if "=" in line:
                    k, v = line.split("=", 1)
                    values[k.strip()] = float(v)
        try:
            return cls(values["min"], values["max"])
        except KeyError as exc:
            raise ConfigError(f"{path}: missing key {exc}") from exc


@dataclass
class ConditionerSeq:
    frames: np.ndarray  # [bands, n_frames]
    hop: int
    normalized: bool = False

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.normalized and (self.frames.min() < 0.0 or self.frames.max() > 1.0):
            raise ContractError("normalized conditioner values must lie in [0, 1]")

    @property
    def bands(self) -> int:
        return self.frames.shape[0]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[1]


def raw_log_mel(clip, bands: int, cfg: StftConfig, sample_rate: Optional[int] = None) -> np.ndarray:
    sr = sample_rate if sample_rate is not None else clip.sample_rate
    fb = mel_filterbank(bands, cfg.fft_size, sr)
    power = stft_magnitude(clip, cfg).data ** 2
    return np.log(fb @ power + LOG_FLOOR)


def compute_mel_stats(clips: Sequence[AudioClip], bands: int, cfg: StftConfig) -> MelStats:
    logs = [raw_log_mel(c, bands, cfg) for c in clips]
    return MelStats(float(min(l.min() for l in logs)), float(max(l.max() for l in logs)))


def log_mel(clip: AudioClip, bands: int, cfg: StftConfig, stats: Optional[MelStats] = None) -> ConditionerSeq:
    """Log-mel frames min-max scaled into [0, 1].

    With ``stats`` the corpus range is used (values outside it are clipped);
    without, the clip's own range is used.
    """
    lm = raw_log_mel(clip, bands, cfg)
    lo, hi = (stats.min, stats.max) if stats is not None else (lm.min(), lm.max())
    span = hi - lo
    norm = np.zeros_like(lm) if span <= 0 else np.clip((lm - lo) / span, 0.0, 1.0)
    return ConditionerSeq(norm, cfg.hop, normalized=True)


def upsample_conditioner(cond: ConditionerSeq, target_len: int) -> np.ndarray:
    """Repeat each frame ``hop`` times and truncate to ``target_len`` samples."""
    if target_len > cond.n_frames * cond.hop:
        raise ContractError(f"target length {target_len} exceeds conditioner coverage "
                            f"{cond.n_frames * cond.hop}")
    return np.repeat(cond.frames, cond.hop, axis=1)[:, :target_len]


# ---------------------------------------------------------------- synthetic

@dataclass
class SynthSpec:
    """Sum of sinusoids plus Gaussian noise, quantized to 16 bits."""

    num_clips: int = 1
    length: int = 512
    sample_rate: int = 4000
    components: List[Tuple[float, float]] = field(default_factory=lambda: [(220.0, 0.5)])
    noise_std: float = 0.0
    random_phase: bool = True
    dequantize: bool = False
    mel_bands: int = 16
    stft: StftConfig = field(default_factory=StftConfig)

    def validate(self) -> None:
        if self.num_clips < 1 or self.length < 1 or self.sample_rate < 1:
            raise ConfigError("num_clips, length and sample_rate must be positive")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if sum(abs(a) for _, a in self.components) + 4 * self.noise_std > 1.0:
            raise ConfigError("component amplitudes (plus 4 noise std) must not exceed 1")
        for f, _ in self.components:
            if not 0 <= f <= self.sample_rate / 2:
                raise ConfigError(f"component frequency {f} outside [0, Nyquist]")


@dataclass
class Example:
    clip: AudioClip
    mel: ConditionerSeq


@dataclass
class Dataset:
    examples: List[Example]
    stats: MelStats

    def __len__(self):
        return len(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    def __iter__(self):
        return iter(self.examples)


def synth_clips(spec: SynthSpec, seed: int) -> List[AudioClip]:
    spec.validate()
    gen = philox(seed, stream=1)
    t = np.arange(spec.length) / spec.sample_rate
    clips = []
    for _ in range(spec.num_clips):
        x = np.zeros(spec.length)
        for freq, amp in spec.components:
            phase = gen.uniform(0.0, 2.0 * np.pi) if spec.random_phase else 0.0
            x += amp * np.sin(2.0 * np.pi * freq * t + phase)
        if spec.noise_std > 0:
            x += spec.noise_std * gen.standard_normal(spec.length)
        x = quantize16(np.clip(x, -1.0, 1.0))
        if spec.dequantize:
            x = np.minimum(dequantize(x, gen), 1.0)
        clips.append(AudioClip(x, spec.sample_rate))
    return clips


def synth_dataset(spec: SynthSpec, seed: int) -> Dataset:
    """Deterministic synthetic corpus with corpus-normalized log-mel conditioners."""
    clips = synth_clips(spec, seed)
    stats = compute_mel_stats(clips, spec.mel_bands, spec.stft)
    return Dataset([Example(c, log_mel(c, spec.mel_bands, spec.stft, stats)) for c in clips], stats)
