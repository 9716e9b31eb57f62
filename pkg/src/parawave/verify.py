"""Oracle-driven self checks behind ``parawave verify``.

Each suite returns a list of :class:`Check` results; a suite passes when
every check does.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from . import autodiff as ad
from . import oracles
from .distill import DistillConfig, kl_loss_terms, sequence_kl_estimate
from .dsp import StftConfig, hann, mel_filterbank, stft_loss, stft_magnitude
from .kl import gaussian_cross_entropy, gaussian_entropy, gaussian_kl, regularized_kl
from .student import FlowStack, iaf_log_likelihood, iaf_invert, iaf_sample
from .teacher import ClipPolicy, GaussianSeq, TeacherParams, nll_loss, teacher_forward
from .wavenet import Conditioner, WaveNetConfig


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _check(name: str, value: float, bound: float, what: str = "max error") -> Check:
    return Check(name, bool(value < bound), f"{what} {value:.3e} (bound {bound:.0e})")


# ------------------------------------------------------------------- kl

def random_gaussian_pairs(n: int, seed: int, log_sigma_range=(-6.0, 2.0), mu_range=(-1.0, 1.0)):
    rng = np.random.default_rng(seed)
    mu = rng.uniform(*mu_range, size=(n, 2))
    sig = np.exp(rng.uniform(*log_sigma_range, size=(n, 2)))
    return [((mu[i, 0], sig[i, 0]), (mu[i, 1], sig[i, 1])) for i in range(n)]


def suite_kl(seed: int = 0, pairs: int = 1000) -> List[Check]:
    """Closed forms against Simpson and Gauss-Hermite quadrature on log sigma in [-6, 2]."""
    data = random_gaussian_pairs(pairs, seed)
    simpson_err = gh_err = 0.0
    for q, p in data:
        s = oracles.kl_simpson(q, p)
        simpson_err = max(simpson_err, abs(gaussian_kl(q, p) - s))
        gh_err = max(gh_err, abs(oracles.kl_gauss_hermite(q, p) - s))
    q_arr = (np.array([d[0][0] for d in data]), np.array([d[0][1] for d in data]))
    p_arr = (np.array([d[1][0] for d in data]), np.array([d[1][1] for d in data]))
    ce = gaussian_cross_entropy(q_arr, p_arr)
    ident = np.max(np.abs(ce - gaussian_entropy(q_arr[1]) - gaussian_kl(q_arr, p_arr)) / np.maximum(1.0, np.abs(ce)))
    reg = regularized_kl(q_arr, p_arr, 4.0)
    ce_err = 0.0
    for q, p in data[:50]:
        oracle = oracles.cross_entropy_simpson(p, q) - oracles.cross_entropy_simpson(p, p)
        ce_err = max(ce_err, abs(gaussian_cross_entropy(p, q) - gaussian_entropy(p[1]) - oracle))
    return [
        _check(f"closed-form KL vs adaptive Simpson ({pairs} pairs)", simpson_err, 1e-8),
        _check("Gauss-Hermite vs Simpson", gh_err, 1e-8),
        _check("KL = cross entropy - entropy", ident, 1e-12, "max error / max(1, |H(q,p)|)"),
        _check("forward KL via cross entropy vs quadrature", ce_err, 1e-8),
        Check("regularized KL >= 0", bool(np.all(reg >= 0)), f"min {reg.min():.3e}"),
    ]


# ------------------------------------------------------------------ iaf

def random_stack(rng: np.random.Generator, T: int, max_flows: int = 4, bands: int = 3,
                 with_cond: bool = True):
    n_flows = int(rng.integers(1, max_flows + 1))
    layers = [int(v) for v in rng.integers(1, 3, size=n_flows)]
    cond = Conditioner(bands, 2, rng) if with_cond else Conditioner(0, 0)
    stack = FlowStack.build(layers, cond, residual_channels=4, skip_channels=4, kernel_size=3, cycle=3,
                            reverse_time=[bool(v) for v in rng.integers(0, 2, size=n_flows)],
                            seed=int(rng.integers(2 ** 31)), head_scale=0.3)
    mel = rng.uniform(0.0, 1.0, size=(bands, T)) if with_cond else None
    return stack, mel


def suite_iaf(seed: int = 0, stacks: int = 100, T: int = 16) -> List[Check]:
    rng = np.random.default_rng(seed)
    ident = ll_err = rt_err = 0.0
    for _ in range(stacks):
        stack, mel = random_stack(rng, T)
        z0 = rng.standard_normal(T)
        x, q = iaf_sample(z0, stack, mel)
        ident = max(ident, np.max(np.abs(x.data - (q.mu.data + np.exp(q.log_sigma.data) * z0))))
        forward_ll = np.sum(-0.5 * oracles.LOG_2PI - q.log_sigma.data
                            - 0.5 * ((x.data - q.mu.data) / np.exp(q.log_sigma.data)) ** 2)
        ll_err = max(ll_err, abs(iaf_log_likelihood(x.data, stack, mel) - forward_ll))
        z_back, _ = iaf_invert(x.data, stack, mel)
        rt_err = max(rt_err, np.max(np.abs(z_back - z0)))
    return [
        _check(f"x = mu_q + sigma_q * z0 ({stacks} stacks)", ident, 1e-10),
        _check("inverse-path log-likelihood vs forward accumulators", ll_err, 1e-8),
        _check("z0 round trip", rt_err, 1e-8),
    ]


# ------------------------------------------------------------ gradients

def _grad_check(loss_fn: Callable[[], ad.Tensor], params: Dict[str, ad.Tensor]) -> float:
    for t in params.values():
        t.requires_grad = True
    with ad.Tape() as tape:
        loss = loss_fn()
    grads = ad.backward(tape, loss, wrt=params.values())
    numeric = oracles.finite_difference_grads(lambda: loss_fn().item(), params.values())
    worst = 0.0
    for t, num in zip(params.values(), numeric):
        worst = max(worst, float(np.max(oracles.relative_errors(grads[t], num))))
    return worst


def tiny_teacher(seed: int, bands: int = 2) -> TeacherParams:
    cfg = WaveNetConfig(layers=2, cycle=2, residual_channels=3, skip_channels=3, cond_channels=2, kernel_size=2)
    teacher = TeacherParams(cfg, bands=bands, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for t in teacher.net.params.values():
        t.data = t.data + 0.3 * rng.standard_normal(t.shape)
    return teacher


def suite_gradients(seed: int = 0) -> List[Check]:
    rng = np.random.default_rng(seed)
    T = 8
    teacher = tiny_teacher(seed)
    mel = rng.uniform(0, 1, size=(2, T))
    x = rng.uniform(-0.5, 0.5, size=T)
    params = teacher.parameters()
    nll_err = _grad_check(lambda: nll_loss(teacher_forward(x, mel, teacher), x, ClipPolicy(-9.0)), params)

    mu_q, ls_q, mu_p, ls_p = (ad.Tensor(rng.uniform(-1, 1, size=T)) for _ in range(4))
    cfg = DistillConfig()

    def kl_fn():
        kl, reg = kl_loss_terms(GaussianSeq(mu_q, ls_q), GaussianSeq(mu_p, ls_p), cfg)
        return ad.add(kl, reg)

    kl_err = _grad_check(kl_fn, {"mq": mu_q, "lq": ls_q, "mp": mu_p, "lp": ls_p})

    scfg = StftConfig(fft_size=32, hop=8, window_len=16)
    sig = ad.Tensor(rng.standard_normal(40))
    ref = rng.standard_normal(40)
    stft_err = _grad_check(lambda: stft_loss(sig, ref, scfg), {"x": sig})
    return [
        _check("teacher NLL gradient vs finite differences", nll_err, 1e-4, "max relative error"),
        _check("regularized KL gradient vs finite differences", kl_err, 1e-4, "max relative error"),
        _check("STFT loss gradient vs finite differences", stft_err, 1e-4, "max relative error"),
    ]


# ---------------------------------------------------------- sequence-kl

def _smooth_head(net, rng: np.random.Generator, scale: float) -> None:
    """Hand-set biases so both head ReLUs stay in their linear region for any input.

    The gated activation is bounded by 1, so a skip bias above the row sums
    of ``|skip.w|`` keeps every skip channel positive; nonnegative ``out1``
    weights with a positive bias keep the second ReLU positive too. The
    network is then analytic in its input and Gauss-Hermite quadrature
    converges quickly.
    """
    p = net.params
    for name in p:
        if name.endswith(".skip.b"):
            p[name].data = 1.0 + np.abs(p[name[:-1] + "w"].data).sum(axis=1)
    p["out1.w"].data = np.abs(p["out1.w"].data)
    p["out1.b"].data = np.full(p["out1.b"].shape, 0.1)
    p["out2.w"].data = scale * rng.uniform(-1.0, 1.0, p["out2.w"].shape)
    p["out2.b"].data = scale * rng.uniform(-1.0, 1.0, p["out2.b"].shape)


def toy_pair(seed: int = 2):
    """Fixed one-layer teacher and two-flow student for ``T = 2`` checks (no conditioner)."""
    cfg = WaveNetConfig(layers=1, cycle=1, residual_channels=3, skip_channels=3, cond_channels=0, kernel_size=2)
    teacher = TeacherParams(cfg, bands=0, seed=seed)
    rng = np.random.default_rng(seed + 7)
    _smooth_head(teacher.net, rng, 0.6)
    stack = FlowStack.for_teacher(teacher, [1, 1], residual_channels=3, skip_channels=3, kernel_size=2,
                                  cycle=1, seed=seed + 11)
    for flow in stack.flows:
        _smooth_head(flow, rng, 0.4)
    return teacher, stack


def suite_sequence_kl(seed: int = 0, draws: int = 100_000) -> List[Check]:
    teacher, stack = toy_pair()
    oracle = oracles.sequence_kl_quadrature(teacher, stack)
    mean, se = sequence_kl_estimate(teacher, stack, None, draws, length=2, seed=seed)
    _, se4 = sequence_kl_estimate(teacher, stack, None, 4 * draws, length=2, seed=seed + 1)
    ratio = se / se4
    return [
        Check("estimator mean within 3 SE of quadrature",
              bool(abs(mean - oracle) < 3 * se),
              f"mean {mean:.6f}, quadrature {oracle:.6f}, SE {se:.2e}"),
        Check("SE halves when draws quadruple", bool(1.6 <= ratio <= 2.4), f"SE ratio {ratio:.3f} (want 2 +-20%)"),
    ]


# ----------------------------------------------------------------- stft

def suite_stft(seed: int = 0) -> List[Check]:
    rng = np.random.default_rng(seed)
    cfg = StftConfig(fft_size=64, hop=16, window_len=64, center=False)
    x = rng.standard_normal(64)
    mag = stft_magnitude(x, cfg).data[:, 0]
    dft_err = float(np.max(np.abs(mag - oracles.naive_dft_magnitude(x * oracles.hann_window(64), 64))))
    y = rng.standard_normal(64)
    my = oracles.naive_dft_magnitude(y * oracles.hann_window(64), 64)
    mx = oracles.naive_dft_magnitude(x * oracles.hann_window(64), 64)
    hand = float(np.sum((mx - my) ** 2) / cfg.bins)
    loss_err = abs(stft_loss(x, y, cfg).item() - hand)
    fb_err = float(np.max(np.abs(mel_filterbank(8, 256, 4000) - oracles.triangular_filterbank(8, 256, 4000))))
    win_err = float(np.max(np.abs(hann(200) - oracles.hann_window(200))))
    return [
        _check("STFT magnitude vs direct DFT", dft_err, 1e-10),
        _check("one-frame STFT loss vs hand computation", loss_err, 1e-10),
        _check("mel filterbank vs pointwise construction", fb_err, 1e-10),
        _check("Hann window", win_err, 1e-12),
    ]


SUITES: Dict[str, Callable[..., List[Check]]] = {
    "kl": suite_kl,
    "iaf": suite_iaf,
    "gradients": suite_gradients,
    "sequence-kl": suite_sequence_kl,
    "stft": suite_stft,
}


def run_suite(name: str, seed: int = 0) -> List[Check]:
    if name == "all":
        return [c for key in SUITES for c in SUITES[key](seed=seed)]
    return SUITES[name](seed=seed)
