"""Distillation losses, gradient policy, estimators and the student training loop."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor, adam_step, backward, global_norm
from .dsp import Example, StftConfig, stft_loss, upsample_conditioner
from .errors import ConfigError, NumericError
from .kl import gaussian_kl
from .rng import standard_normal
from .student import FlowStack, iaf_sample
from .teacher import GaussianSeq, TeacherParams, teacher_forward

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

HIST_EDGES = np.linspace(-10.0, 2.0, 101)


@dataclass
class DistillConfig:
    lam: float = 4.0
    kl_direction: str = "reverse"
    kl_clip_floor: float = -6.0
    kl_weight: float = 1.0
    stft_weight: float = 1.0
    kld_mask_threshold: float = 10.0
    warmup_steps: int = 500
    grad_norm_threshold: float = 1000.0
    tight_clip: Tuple[float, float] = (-0.1, 0.1)
    loose_clip: Tuple[float, float] = (-5.0, 5.0)
    # gradient value clipping switches on at this step (0 = from the start)
    grad_policy_start: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.kl_direction not in ("reverse", "forward"):
            raise ConfigError(f"kl_direction must be 'reverse' or 'forward', got {self.kl_direction!r}")
        if not math.isfinite(self.kl_clip_floor):
            raise ConfigError("kl_clip_floor must be finite")
        for lo, hi in (self.tight_clip, self.loose_clip):
            if lo > hi:
                raise ConfigError("clip ranges must satisfy low <= high")


# ------------------------------------------------------------------- losses

def kl_loss_terms(q: GaussianSeq, p: GaussianSeq, cfg: DistillConfig) -> Tuple[Tensor, Tensor]:
    """Mean per-step divergence (log sigmas floored) and mean regularizer (unfloored).

    Reverse mode gives KL(q || p); forward mode gives the cross entropy H(p, q),
    i.e. KL(p || q) up to the teacher entropy, which does not depend on the student.
    """
    floor = cfg.kl_clip_floor
    lq = ad.clamp_min(q.log_sigma, floor)
    lp = ad.clamp_min(p.log_sigma, floor)
    dmu2 = ad.square(ad.sub(p.mu, q.mu))
    if cfg.kl_direction == "reverse":
        ratio = ad.exp(ad.mul(ad.sub(lq, lp), 2.0))
        per_step = ad.add(ad.add(ad.sub(lp, lq), ad.mul(ad.sub(ratio, 1.0), 0.5)),
                          ad.mul(ad.mul(dmu2, ad.exp(ad.mul(lp, -2.0))), 0.5))
    else:
        ratio = ad.exp(ad.mul(ad.sub(lp, lq), 2.0))
        per_step = ad.add(ad.add(lq, HALF_LOG_2PI),
                          ad.mul(ad.add(ratio, ad.mul(dmu2, ad.exp(ad.mul(lq, -2.0)))), 0.5))
    reg = ad.mul(ad.mean(ad.square(ad.sub(p.log_sigma, q.log_sigma))), cfg.lam)
    return ad.mean(per_step), reg


def apply_grad_policy(grads: Dict[str, np.ndarray], cfg: DistillConfig) -> Tuple[Dict[str, np.ndarray], float]:
    """Clip gradient values: tight range when the global norm is above threshold, loose otherwise."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name!r}")
    norm = global_norm(grads.values())
    lo, hi = cfg.tight_clip if norm > cfg.grad_norm_threshold else cfg.loose_clip
    return {k: np.clip(g, lo, hi) for k, g in grads.items()}, norm


# --------------------------------------------------------------- histograms

def log_sigma_histogram(values: np.ndarray) -> np.ndarray:
    """Counts over 100 bins on [-10, 2]; out-of-range values land in the edge bins."""
    v = np.clip(np.asarray(values, dtype=np.float64).reshape(-1), HIST_EDGES[0], HIST_EDGES[-1])
    counts, _ = np.histogram(v, bins=HIST_EDGES)
    return counts


def histogram_overlap(counts_p: np.ndarray, counts_q: np.ndarray) -> float:
    p = counts_p / max(counts_p.sum(), 1)
    q = counts_q / max(counts_q.sum(), 1)
    return float(np.minimum(p, q).sum())


def write_histogram(path, counts_p: np.ndarray, counts_q: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# bin_edge\tcount_p\tcount_q\n")
        for edge, cp, cq in zip(HIST_EDGES[:-1], counts_p, counts_q):
            fh.write(f"{edge:.6f}\t{int(cp)}\t{int(cq)}\n")


def read_histogram(path) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = np.loadtxt(path, comments="#", ndmin=2)
    return rows[:, 0], rows[:, 1].astype(int), rows[:, 2].astype(int)


# ---------------------------------------------------------------- batching

def stack_batch(examples: Sequence[Example]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    lengths = {len(e.clip) for e in examples}
    if len(lengths) != 1:
        raise ConfigError("all clips in a batch must have the same length")
    T = lengths.pop()
    x = np.stack([e.clip.samples for e in examples])
    cond = np.stack([upsample_conditioner(e.mel, T) for e in examples])
    return x, cond


# -------------------------------------------------------------------- step

METRIC_COLUMNS = ("step", "kl_loss", "reg_term", "stft_loss", "grad_norm", "masked_flag", "lr")


@dataclass
class StepMetrics:
    step: int
    kl_loss: float
    reg_term: float
    stft_loss: float
    grad_norm: float
    masked_flag: bool
    lr: float
    aborted: bool = False
    log_sigma_p: Optional[np.ndarray] = field(default=None, repr=False)
    log_sigma_q: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def total(self) -> float:
        return self.kl_loss * (not self.masked_flag) + self.reg_term + self.stft_loss

    def row(self) -> List:
        return [self.step, self.kl_loss, self.reg_term, self.stft_loss, self.grad_norm,
                int(self.masked_flag), self.lr]


def distill_loss(teacher: TeacherParams, stack: FlowStack, x_ref: np.ndarray, cond: Optional[np.ndarray],
                 z0: np.ndarray, cfg: DistillConfig, stft_cfg: StftConfig, step: int = 0):
    """Build the full distillation loss on the active tape.

    Returns ``(loss, kl, reg, stft, masked, q, p)``.
    """
    x, q = iaf_sample(z0, stack, cond)
    p = teacher_forward(x, cond, teacher)
    kl, reg = kl_loss_terms(q, p, cfg)
    sl = stft_loss(x, x_ref, stft_cfg) if cfg.stft_weight else Tensor(0.0)
    masked = step >= cfg.warmup_steps and kl.item() > cfg.kld_mask_threshold
    loss = ad.add(reg, ad.mul(sl, cfg.stft_weight))
    if not masked:
        loss = ad.add(loss, ad.mul(kl, cfg.kl_weight))
    return loss, kl, reg, sl, masked, q, p


def distill_step(teacher: TeacherParams, stack: FlowStack, batch: Sequence[Example], cfg: DistillConfig,
                 opt: AdamState, stft_cfg: StftConfig = StftConfig(), seed: int = 0) -> StepMetrics:
    """One optimizer step on the student; the teacher and conditioner stay frozen."""
    step = opt.step
    teacher.requires_grad_(False)
    stack.conditioner.params["w"].requires_grad = False
    stack.conditioner.params["b"].requires_grad = False
    params = stack.parameters()
    stack.requires_grad_(True)
    x_ref, cond = stack_batch(batch)
    z0 = standard_normal(seed, x_ref.shape, stream=step + 1)
    lr = opt.current_lr()
    with Tape() as tape:
        loss, kl, reg, sl, masked, q, p = distill_loss(teacher, stack, x_ref, cond, z0, cfg, stft_cfg, step)
    metrics = StepMetrics(step, kl.item(), reg.item(), sl.item(), float("nan"), masked, lr,
                          log_sigma_p=p.log_sigma.data.copy(), log_sigma_q=q.log_sigma.data.copy())
    if not math.isfinite(loss.item()):
        metrics.aborted = True
        return metrics
    grads = backward(tape, loss, wrt=params.values())
    named = {name: grads[t] for name, t in params.items()}
    try:
        if step >= cfg.grad_policy_start:
            named, norm = apply_grad_policy(named, cfg)
        else:
            norm = global_norm(named.values())
            if not math.isfinite(norm):
                raise NumericError("non-finite gradient norm")
    except NumericError:
        metrics.aborted = True
        return metrics
    metrics.grad_norm = norm
    adam_step(params, named, opt)
    return metrics


# --------------------------------------------------------------- estimators

def sequence_kl_estimate(teacher: TeacherParams, stack: FlowStack, cond=None, num_noise_draws: int = 1000, *,
                         length: Optional[int] = None, seed: int = 0, chunk: int = 20000,
                         return_draws: bool = False):
    """Mean and standard error of the summed per-step KL over independent noise draws.

    Each draw runs the student on fresh white noise, feeds its sample into the
    teacher and sums the closed-form KL over time. ``cond`` is the sample-rate
    log-mel ``[bands, T]`` shared by every draw, or None (then ``length`` is
    required).
    """
    T = length if length is not None else np.asarray(cond).shape[-1]
    values = np.empty(num_noise_draws)
    done = 0
    block = 0
    while done < num_noise_draws:
        n = min(chunk, num_noise_draws - done)
        z0 = standard_normal(seed, (n, T), stream=block)
        x, q = iaf_sample(z0, stack, cond)
        p = teacher_forward(x, cond, teacher)
        kl = gaussian_kl((q.mu.data, np.exp(q.log_sigma.data)), (p.mu.data, np.exp(p.log_sigma.data)))
        values[done:done + n] = np.sum(kl, axis=-1)
        done += n
        block += 1
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(num_noise_draws)) if num_noise_draws > 1 else 0.0
    if return_draws:
        return mean, se, values
    return mean, se


def closed_form_kl_given_z(q: Tuple[np.ndarray, np.ndarray], p: Tuple[np.ndarray, np.ndarray]) -> float:
    """The closed-form per-step KL sum: deterministic once the noise is fixed."""
    return float(np.sum(gaussian_kl(q, p)))


# --------------------------------------------------------------- training

class MetricsWriter:
    def __init__(self, path):
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh)
        self._w.writerow(METRIC_COLUMNS)

    def write(self, m: StepMetrics) -> None:
        self._w.writerow(m.row())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class DistillRun:
    metrics: List[StepMetrics]
    aborted: int
    histograms: List[str]
    overlaps: List[float]


def distill(teacher: TeacherParams, stack: FlowStack, examples: Sequence[Example], cfg: DistillConfig,
            opt: AdamState, steps: int, *, stft_cfg: StftConfig = StftConfig(), seed: int = 0,
            batch_size: int = 1, metrics_path=None, hist_dir=None, hist_every: int = 50,
            keep_sigmas: bool = False, callback=None) -> DistillRun:
    """Run ``steps`` distillation steps, cycling through ``examples`` in order.

    ``callback(metrics)`` runs after every step.
    """
    history: List[StepMetrics] = []
    hist_files: List[str] = []
    overlaps: List[float] = []
    aborted = 0
    writer = MetricsWriter(metrics_path) if metrics_path is not None else None
    if hist_dir is not None:
        os.makedirs(hist_dir, exist_ok=True)
    try:
        for i in range(steps):
            start = (i * batch_size) % len(examples)
            batch = [examples[(start + j) % len(examples)] for j in range(batch_size)]
            m = distill_step(teacher, stack, batch, cfg, opt, stft_cfg, seed)
            if m.aborted:
                aborted += 1
                opt.step += 1
            if hist_every and i % hist_every == 0:
                cp = log_sigma_histogram(m.log_sigma_p)
                cq = log_sigma_histogram(m.log_sigma_q)
                overlaps.append(histogram_overlap(cp, cq))
                if hist_dir is not None:
                    path = os.path.join(hist_dir, f"hist_{m.step:07d}.txt")
                    write_histogram(path, cp, cq)
                    hist_files.append(path)
            if not keep_sigmas:
                m.log_sigma_p = m.log_sigma_q = None
            if writer is not None:
                writer.write(m)
            history.append(m)
            if callback is not None:
                callback(m)
    finally:
        if writer is not None:
            writer.close()
    return DistillRun(history, aborted, hist_files, overlaps)
