"""Gated dilated-convolution WaveNet shared by the teacher and every IAF flow.

A network maps an already-shifted scalar input sequence (plus an optional
conditioner feature map) to a per-timestep ``(mu, log_sigma)`` pair. Two
evaluators exist: :meth:`WaveNet.forward` is the parallel, differentiable path
used for training and for flows; :class:`IncrementalWaveNet` computes one
timestep at a time and backs autoregressive sampling and flow inversion.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class WaveNetConfig:
    layers: int = 10
    cycle: int = 10
    residual_channels: int = 32
    skip_channels: int = 32
    cond_channels: int = 0
    kernel_size: int = 2

    def __post_init__(self):
        if self.layers < 0 or self.cycle < 1:
            raise ConfigError("layers must be >= 0 and cycle >= 1")
        if self.residual_channels < 1 or self.skip_channels < 1 or self.kernel_size < 1:
            raise ConfigError("channel counts and kernel size must be positive")
        if self.cond_channels < 0:
            raise ConfigError("cond_channels must be >= 0")

    def dilations(self) -> List[int]:
        return [2 ** (i % self.cycle) for i in range(self.layers)]

    def receptive_field(self) -> int:
        return 1 + (self.kernel_size - 1) * sum(self.dilations())

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BlockParams:
    """Parameters of one gated residual layer.

    ``gate_w``/``filter_w`` are the dilated kernels, ``gate_cond``/``filter_cond``
    the 1x1 conditioner projections, ``res_*`` and ``skip_*`` the output 1x1 convs.
    """

    gate_w: Tensor
    filter_w: Tensor
    gate_b: Tensor
    filter_b: Tensor
    res_w: Tensor
    res_b: Tensor
    skip_w: Tensor
    skip_b: Tensor
    gate_cond: Optional[Tensor] = None
    filter_cond: Optional[Tensor] = None


def gated_residual_block(h: Tensor, cond: Optional[Tensor], params: BlockParams,
                         dilation: int) -> Tuple[Tensor, Tensor]:
    """One layer: ``sigmoid(W_g*h + A_g c + b_g) * tanh(W_f*h + A_f c + b_f)``.

    Returns ``(h + res(gated), skip(gated))``. ``cond`` must already be at sample
    rate with the same length as ``h``.
    """
    if cond is not None and cond.shape[-1] != h.shape[-1]:
        raise DimensionError(f"conditioner length {cond.shape[-1]} != sequence length {h.shape[-1]}")
    g = ad.causal_dilated_conv1d(h, params.gate_w, dilation)
    f = ad.causal_dilated_conv1d(h, params.filter_w, dilation)
    if cond is not None and params.gate_cond is not None:
        g = ad.add(g, ad.conv1x1(cond, params.gate_cond))
        f = ad.add(f, ad.conv1x1(cond, params.filter_cond))
    gated = ad.mul(ad.sigmoid(ad.add_bias(g, params.gate_b)),
                   ad.tanh(ad.add_bias(f, params.filter_b)))
    h_next = ad.add(h, ad.add_bias(ad.conv1x1(gated, params.res_w), params.res_b))
    skip = ad.add_bias(ad.conv1x1(gated, params.skip_w), params.skip_b)
    return h_next, skip


class Conditioner:
    """1x1 projection of the upsampled log-mel frames into conditioner features.

    The same instance is shared by the teacher and all student flows.
    """

    def __init__(self, bands: int, channels: int, rng: Optional[np.random.Generator] = None):
        self.bands = bands
        self.channels = channels
        rng = rng if rng is not None else np.random.default_rng(0)
        a = np.sqrt(1.0 / max(bands, 1))
        self.params: Dict[str, Tensor] = {
            "w": Tensor(rng.uniform(-a, a, (channels, bands)), name="cond.w"),
            "b": Tensor(np.zeros(channels), name="cond.b"),
        }

    def __call__(self, mel_up) -> Optional[Tensor]:
        if mel_up is None or self.channels == 0:
            return None
        mel = mel_up if isinstance(mel_up, Tensor) else Tensor(mel_up)
        if mel.shape[-2] != self.bands:
            raise DimensionError(f"conditioner expects {self.bands} bands, got {mel.shape[-2]}")
        return ad.add_bias(ad.conv1x1(mel, self.params["w"]), self.params["b"])


def _uniform(rng, shape, fan_in):
    a = np.sqrt(1.0 / fan_in)
    return rng.uniform(-a, a, shape)


class WaveNet:
    """Parameter container plus the parallel forward pass."""

    def __init__(self, config: WaveNetConfig, rng: Optional[np.random.Generator] = None,
                 head_scale: float = 0.0):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)
        R, S, C, K = (config.residual_channels, config.skip_channels,
                      config.cond_channels, config.kernel_size)
        p: Dict[str, Tensor] = {}
        p["in.w"] = Tensor(_uniform(rng, (R, 1), 1))
        p["in.b"] = Tensor(np.zeros(R))
        for i in range(config.layers):
            for kind in ("gate", "filter"):
                p[f"l{i}.{kind}.w"] = Tensor(_uniform(rng, (R, R, K), R * K))
                p[f"l{i}.{kind}.b"] = Tensor(np.zeros(R))
                if C:
                    p[f"l{i}.{kind}.cond"] = Tensor(_uniform(rng, (R, C), C))
            p[f"l{i}.res.w"] = Tensor(_uniform(rng, (R, R), R))
            p[f"l{i}.res.b"] = Tensor(np.zeros(R))
            p[f"l{i}.skip.w"] = Tensor(_uniform(rng, (S, R), R))
            p[f"l{i}.skip.b"] = Tensor(np.zeros(S))
        p["out1.w"] = Tensor(_uniform(rng, (S, S), S))
        p["out1.b"] = Tensor(np.zeros(S))
        # zero head: a fresh network predicts mu = 0, log_sigma = 0
        p["out2.w"] = Tensor(head_scale * _uniform(rng, (2, S), S))
        p["out2.b"] = Tensor(head_scale * _uniform(rng, (2,), S))
        for name, t in p.items():
            t.name = name
        self.params = p

    def block(self, i: int) -> BlockParams:
        p = self.params
        return BlockParams(
            gate_w=p[f"l{i}.gate.w"], filter_w=p[f"l{i}.filter.w"],
            gate_b=p[f"l{i}.gate.b"], filter_b=p[f"l{i}.filter.b"],
            res_w=p[f"l{i}.res.w"], res_b=p[f"l{i}.res.b"],
            skip_w=p[f"l{i}.skip.w"], skip_b=p[f"l{i}.skip.b"],
            gate_cond=p.get(f"l{i}.gate.cond"), filter_cond=p.get(f"l{i}.filter.cond"),
        )

    def num_parameters(self) -> int:
        return int(np.sum([t.data.size for t in self.params.values()]))

    def requires_grad_(self, flag: bool = True) -> "WaveNet":
        for t in self.params.values():
            t.requires_grad = flag
        return self

    def forward(self, inp: Tensor, cond: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        """Map a shifted input ``inp[N, T]`` (or ``[T]``) to ``(mu, log_sigma)``.

        The caller is responsible for the one-step delay that makes the output
        at ``t`` depend on inputs strictly before ``t``.
        """
        squeeze = inp.ndim == 1
        T = inp.shape[-1]
        if cond is not None and cond.shape[-1] != T:
            raise DimensionError(f"conditioner length {cond.shape[-1]} != sequence length {T}")
        if cond is not None and self.config.cond_channels and cond.shape[-2] != self.config.cond_channels:
            raise DimensionError(f"expected {self.config.cond_channels} conditioner channels, got {cond.shape[-2]}")
        x = ad.reshape(inp, (-1, 1, T))
        p = self.params
        h = ad.add_bias(ad.conv1x1(x, p["in.w"]), p["in.b"])
        skips = None
        for i, d in enumerate(self.config.dilations()):
            h, s = gated_residual_block(h, cond, self.block(i), d)
            skips = s if skips is None else ad.add(skips, s)
        if skips is None:
            skips = Tensor(np.zeros((h.shape[0], self.config.skip_channels, T)))
        o = ad.relu(skips)
        o = ad.relu(ad.add_bias(ad.conv1x1(o, p["out1.w"]), p["out1.b"]))
        o = ad.add_bias(ad.conv1x1(o, p["out2.w"]), p["out2.b"])
        if squeeze:
            return o[0, 0], o[0, 1]
        return o[:, 0], o[:, 1]


class IncrementalWaveNet:
    """Step-by-step evaluation of a :class:`WaveNet` without a tape.

    ``step(t, inp)`` must be called for ``t = 0, 1, 2, ...`` in order, where
    ``inp`` is the (already delayed) network input at time ``t`` for each of
    the ``batch`` sequences. Per-layer inputs are kept so dilated taps can
    look back without recomputation.
    """

    def __init__(self, net: WaveNet, cond: Optional[np.ndarray], length: int, batch: int = 1):
        cfg = net.config
        self.net = net
        self.length = length
        self.batch = batch
        self.dilations = cfg.dilations()
        p = {k: v.data for k, v in net.params.items()}
        self.p = p
        R, K = cfg.residual_channels, cfg.kernel_size
        self.K = K
        self.history = [np.zeros((length, batch, R)) for _ in self.dilations]
        # conditioner contribution + bias for every layer, precomputed
        self.gate_bias = []
        self.filter_bias = []
        for i in range(cfg.layers):
            gb = np.repeat(p[f"l{i}.gate.b"][:, None], length, axis=1)
            fb = np.repeat(p[f"l{i}.filter.b"][:, None], length, axis=1)
            if cond is not None and f"l{i}.gate.cond" in p:
                gb = gb + p[f"l{i}.gate.cond"] @ cond
                fb = fb + p[f"l{i}.filter.cond"] @ cond
            self.gate_bias.append(gb)
            self.filter_bias.append(fb)
        self._t = 0

    def step(self, t: int, inp: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if t != self._t:
            raise ValueError(f"steps must be sequential: expected {self._t}, got {t}")
        self._t += 1
        p, K = self.p, self.K
        h = np.outer(np.asarray(inp, dtype=np.float64).reshape(self.batch), p["in.w"][:, 0]) + p["in.b"]
        skips = np.zeros((self.batch, self.net.config.skip_channels))
        for i, d in enumerate(self.dilations):
            hist = self.history[i]
            hist[t] = h
            g = self.gate_bias[i][..., t] + h @ p[f"l{i}.gate.w"][:, :, K - 1].T
            f = self.filter_bias[i][..., t] + h @ p[f"l{i}.filter.w"][:, :, K - 1].T
            for k in range(K - 1):
                src = t - (K - 1 - k) * d
                if src >= 0:
                    past = hist[src]
                    g = g + past @ p[f"l{i}.gate.w"][:, :, k].T
                    f = f + past @ p[f"l{i}.filter.w"][:, :, k].T
            gated = 0.5 * (1.0 + np.tanh(0.5 * g)) * np.tanh(f)
            h = h + gated @ p[f"l{i}.res.w"].T + p[f"l{i}.res.b"]
            skips = skips + gated @ p[f"l{i}.skip.w"].T + p[f"l{i}.skip.b"]
        o = np.maximum(skips, 0.0)
        o = np.maximum(o @ p["out1.w"].T + p["out1.b"], 0.0)
        o = o @ p["out2.w"].T + p["out2.b"]
        return o[:, 0], o[:, 1]
