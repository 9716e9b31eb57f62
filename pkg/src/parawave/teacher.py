"""Gaussian autoregressive WaveNet teacher: forward pass, clipped NLL, sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dsp import AudioClip
from .errors import ContractError, DimensionError, NumericError
from .rng import standard_normal
from .wavenet import Conditioner, IncrementalWaveNet, WaveNet, WaveNetConfig

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class GaussianSeq:
    """Per-timestep Gaussian: means and natural-log standard deviations."""

    mu: Tensor
    log_sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_sigma.shape:
            raise DimensionError(f"mu {self.mu.shape} and log_sigma {self.log_sigma.shape} differ")

    def __len__(self):
        return self.mu.shape[-1]

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma.data)


@dataclass(frozen=True)
class ClipPolicy:
    """Lower bound on log sigma inside the training likelihood only."""

    train_floor: Optional[float] = -9.0


class TeacherParams:
    """A conditioned WaveNet predicting ``(mu, log_sigma)`` of the next sample."""

    def __init__(self, config: WaveNetConfig, bands: int = 0, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.conditioner = Conditioner(bands, config.cond_channels if bands else 0, rng)
        self.net = WaveNet(config, rng)

    @property
    def config(self) -> WaveNetConfig:
        return self.net.config

    def parameters(self) -> Dict[str, Tensor]:
        out = {f"net.{k}": v for k, v in self.net.params.items()}
        out.update({f"cond.{k}": v for k, v in self.conditioner.params.items()})
        return out

    def requires_grad_(self, flag: bool = True) -> "TeacherParams":
        for t in self.parameters().values():
            t.requires_grad = flag
        return self


def _as_signal(x) -> Tensor:
    if isinstance(x, AudioClip):
        return Tensor(x.samples)
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _cond_features(conditioner: Conditioner, cond, T: int) -> Optional[Tensor]:
    if cond is None:
        return None
    feats = conditioner(cond)
    if feats is not None and feats.shape[-1] != T:
        raise ContractError(f"conditioner length {feats.shape[-1]} != clip length {T}")
    return feats


def teacher_forward(x, cond, params: TeacherParams) -> GaussianSeq:
    """Teacher-forced prediction of ``p(x_t | x_<t)`` for every ``t`` at once.

    ``x`` may be an :class:`AudioClip`, an array ``[T]``/``[N, T]`` or a tensor
    (gradients flow into it). ``cond`` is the sample-rate log-mel ``[bands, T]``
    or None.
    """
    x = _as_signal(x)
    feats = _cond_features(params.conditioner, cond, x.shape[-1])
    mu, log_sigma = params.net.forward(ad.shift_right(x), feats)
    return GaussianSeq(mu, log_sigma)


def gaussian_nll_terms(mu: Tensor, log_sigma: Tensor, x: Tensor, floor: Optional[float]) -> Tensor:
    ls = ad.clamp_min(log_sigma, floor) if floor is not None else log_sigma
    z2 = ad.mul(ad.square(ad.sub(x, mu)), ad.exp(ad.mul(ls, -2.0)))
    return ad.add(ad.add(ls, ad.mul(z2, 0.5)), HALF_LOG_2PI)


def _check_finite(pred: GaussianSeq) -> None:
    for name, t in (("mu", pred.mu), ("log_sigma", pred.log_sigma)):
        bad = ~np.isfinite(t.data)
        if bad.any():
            step = int(np.argwhere(bad)[0][-1])
            raise NumericError(f"non-finite {name} at timestep {step}", index=step)


def nll_loss(pred: GaussianSeq, x, clip: ClipPolicy = ClipPolicy()) -> Tensor:
    """Mean per-sample negative log-likelihood with log sigma clipped from below."""
    x = _as_signal(x)
    if pred.mu.shape != x.shape:
        raise DimensionError(f"prediction shape {pred.mu.shape} != data shape {x.shape}")
    _check_finite(pred)
    return ad.mean(gaussian_nll_terms(pred.mu, pred.log_sigma, x, clip.train_floor))


def clip_fraction(pred: GaussianSeq, floor: float) -> float:
    """Share of timesteps whose predicted log sigma sits below the training floor."""
    return float(np.mean(pred.log_sigma.data < floor))


@dataclass
class SampleResult:
    """Raw (unclamped) samples and the Gaussians they were drawn from."""

    samples: np.ndarray
    mu: np.ndarray
    log_sigma: np.ndarray

    def to_clip(self, sample_rate: int) -> AudioClip:
        return AudioClip(np.clip(self.samples, -1.0, 1.0), sample_rate)


def ar_sample(params: TeacherParams, cond, T: int, seed: int, temperature: float = 1.0) -> SampleResult:
    """Draw ``x_t = mu_t + temperature * sigma_t * eps_t`` one sample at a time.

    No log-sigma clipping is applied here.
    """
    if temperature < 0:
        raise ContractError("temperature must be >= 0")
    if T < 1:
        raise ContractError("T must be >= 1")
    feats = _cond_features(params.conditioner, None if cond is None else np.asarray(cond)[:, :T], T)
    net = IncrementalWaveNet(params.net, None if feats is None else feats.data, T)
    eps = standard_normal(seed, T)
    x = np.zeros(T)
    mus = np.zeros(T)
    log_sigmas = np.zeros(T)
    prev = 0.0
    for t in range(T):
        mu, ls = net.step(t, np.array([prev]))
        mus[t], log_sigmas[t] = mu[0], ls[0]
        with np.errstate(over="ignore", invalid="ignore"):
            x[t] = mus[t] + temperature * np.exp(log_sigmas[t]) * eps[t]
        if not (math.isfinite(x[t]) and math.isfinite(log_sigmas[t])):
            raise NumericError(f"sampling diverged at timestep {t}", index=t)
        prev = x[t]
    return SampleResult(x, mus, log_sigmas)


@dataclass
class TeacherRun:
    nll: list
    clip_fraction: list


def train_teacher(params: TeacherParams, examples, opt, steps: int, *, clip: ClipPolicy = ClipPolicy(),
                  batch_size: int = 1, callback=None) -> TeacherRun:
    """Plain maximum-likelihood training; ``examples`` are ``dsp.Example`` items.

    ``callback(step, nll, clip_fraction)`` runs after every step (the fraction
    is NaN without a floor); raise from it to stop early.
    """
    from .distill import stack_batch

    names = params.parameters()
    params.requires_grad_(True)
    nlls, fractions = [], []
    for i in range(steps):
        start = (i * batch_size) % len(examples)
        batch = [examples[(start + j) % len(examples)] for j in range(batch_size)]
        x, cond = stack_batch(batch)
        with ad.Tape() as tape:
            pred = teacher_forward(x, cond, params)
            loss = nll_loss(pred, x, clip)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite training NLL at step {opt.step}", step=opt.step)
        grads = ad.backward(tape, loss, wrt=names.values())
        ad.adam_step(names, {k: grads[t] for k, t in names.items()}, opt)
        nlls.append(value)
        frac = clip_fraction(pred, clip.train_floor) if clip.train_floor is not None else float("nan")
        fractions.append(frac)
        if callback is not None:
            callback(i, value, frac)
    return TeacherRun(nlls, fractions)
