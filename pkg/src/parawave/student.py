"""Stacked Gaussian inverse autoregressive flow (the parallel student).

Each flow is an independent :class:`WaveNet` applied to the previous latent
sequence delayed by one step, giving an affine map ``z' = z * sigma + mu``.
The per-timestep output Gaussian is carried alongside in log-sigma form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, NumericError
from .teacher import GaussianSeq, TeacherParams
from .wavenet import Conditioner, IncrementalWaveNet, WaveNet, WaveNetConfig

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class FlowStack:
    flows: List[WaveNet]
    reverse_time: List[bool]
    conditioner: Conditioner

    def __post_init__(self):
        if len(self.flows) != len(self.reverse_time):
            raise ContractError("one reverse_time flag is needed per flow")
        if len({id(f) for f in self.flows}) != len(self.flows):
            raise ContractError("flows must not share parameters")

    def __len__(self):
        return len(self.flows)

    @classmethod
    def build(cls, layers: Sequence[int], conditioner: Conditioner, *, residual_channels: int = 16,
              skip_channels: int = 16, kernel_size: int = 3, cycle: int = 10,
              reverse_time: Optional[Sequence[bool]] = None, seed: int = 0,
              head_scale: float = 0.0) -> "FlowStack":
        rng = np.random.default_rng(seed)
        flows = [WaveNet(WaveNetConfig(layers=n, cycle=cycle, residual_channels=residual_channels,
                                       skip_channels=skip_channels, cond_channels=conditioner.channels,
                                       kernel_size=kernel_size), rng, head_scale=head_scale)
                 for n in layers]
        flags = list(reverse_time) if reverse_time is not None else [False] * len(flows)
        return cls(flows, flags, conditioner)

    @classmethod
    def for_teacher(cls, teacher: TeacherParams, layers: Sequence[int], **kwargs) -> "FlowStack":
        """A stack sharing the teacher's conditioner projection (same tensors)."""
        return cls.build(layers, teacher.conditioner, **kwargs)

    def total_layers(self) -> int:
        return sum(f.config.layers for f in self.flows)

    def parameters(self) -> Dict[str, Tensor]:
        """Trainable student parameters; the shared conditioner is excluded."""
        return {f"flow{i}.{k}": v for i, f in enumerate(self.flows) for k, v in f.params.items()}

    def requires_grad_(self, flag: bool = True) -> "FlowStack":
        for t in self.parameters().values():
            t.requires_grad = flag
        return self


@dataclass
class FlowState:
    z: Tensor
    mu_acc: Tensor
    sigma_acc_log: Tensor

    @classmethod
    def initial(cls, z0: Tensor) -> "FlowState":
        return cls(z0, Tensor(np.zeros(z0.shape)), Tensor(np.zeros(z0.shape)))


def iaf_flow_step(state: FlowState, flow: WaveNet, cond: Optional[Tensor], reverse: bool = False) -> FlowState:
    """Apply one flow and update the accumulated output Gaussian.

    ``cond`` is the conditioner feature map (already projected). With
    ``reverse`` the flow runs on the time-reversed sequence and its outputs are
    flipped back, so it is anti-causal in the original time order.
    """
    z = state.z
    if reverse:
        z_in = ad.reverse_time(z)
        c = None if cond is None else ad.reverse_time(cond)
    else:
        z_in, c = z, cond
    mu, log_sigma = flow.forward(ad.shift_right(z_in), c)
    if reverse:
        mu, log_sigma = ad.reverse_time(mu), ad.reverse_time(log_sigma)
    if not np.all(np.isfinite(log_sigma.data)):
        step = int(np.argwhere(~np.isfinite(log_sigma.data))[0][-1])
        raise NumericError(f"non-finite flow log sigma at timestep {step}", index=step)
    sigma = ad.exp(log_sigma)
    return FlowState(
        z=ad.add(ad.mul(z, sigma), mu),
        mu_acc=ad.add(ad.mul(state.mu_acc, sigma), mu),
        sigma_acc_log=ad.add(state.sigma_acc_log, log_sigma),
    )


def iaf_sample(z0, stack: FlowStack, cond=None) -> Tuple[Tensor, GaussianSeq]:
    """Push white noise through every flow in one parallel pass each.

    Returns the sample ``x`` (a tensor, differentiable w.r.t. the flows) and
    the output Gaussian ``q(x_t | z_<t)``.
    """
    if len(stack) < 1:
        raise ContractError("a flow stack needs at least one flow")
    z0 = z0 if isinstance(z0, Tensor) else Tensor(z0)
    feats = stack.conditioner(cond) if cond is not None else None
    if feats is not None and feats.shape[-1] != z0.shape[-1]:
        raise DimensionError(f"conditioner length {feats.shape[-1]} != noise length {z0.shape[-1]}")
    state = FlowState.initial(z0)
    for flow, rev in zip(stack.flows, stack.reverse_time):
        state = iaf_flow_step(state, flow, feats, rev)
    return state.z, GaussianSeq(state.mu_acc, state.sigma_acc_log)


def _invert_flow(z_out: np.ndarray, flow: WaveNet, feats: Optional[np.ndarray], reverse: bool,
                 flow_index: int) -> Tuple[np.ndarray, np.ndarray]:
    """Sequentially solve ``z_in`` from ``z_out = z_in * sigma(z_in_<t) + mu(z_in_<t)``."""
    if reverse:
        z_out = z_out[..., ::-1]
        feats = None if feats is None else feats[..., ::-1]
    batch_shape = z_out.shape[:-1]
    T = z_out.shape[-1]
    flat = z_out.reshape(-1, T)
    net = IncrementalWaveNet(flow, None if feats is None else np.ascontiguousarray(feats), T, batch=flat.shape[0])
    z_in = np.zeros_like(flat)
    log_sigma = np.zeros_like(flat)
    prev = np.zeros(flat.shape[0])
    for t in range(T):
        mu, ls = net.step(t, prev)
        sigma = np.exp(ls)
        if not np.all(np.isfinite(ls)) or np.any(sigma == 0.0):
            raise NumericError(f"sigma underflow while inverting flow {flow_index} at timestep "
                               f"{T - 1 - t if reverse else t}", index=t)
        z_in[:, t] = (flat[:, t] - mu) / sigma
        log_sigma[:, t] = ls
        prev = z_in[:, t]
    z_in = z_in.reshape(batch_shape + (T,))
    log_sigma = log_sigma.reshape(batch_shape + (T,))
    if reverse:
        z_in, log_sigma = z_in[..., ::-1], log_sigma[..., ::-1]
    return z_in, log_sigma


def iaf_invert(x, stack: FlowStack, cond=None) -> Tuple[np.ndarray, np.ndarray]:
    """Recover the white noise behind ``x``; returns ``(z0, total log sigma per timestep)``."""
    z = np.asarray(x.data if isinstance(x, Tensor) else getattr(x, "samples", x), dtype=np.float64)
    feats = None
    if cond is not None:
        f = stack.conditioner(cond)
        feats = None if f is None else f.data
    total = np.zeros_like(z)
    for i in reversed(range(len(stack))):
        z, ls = _invert_flow(z, stack.flows[i], feats, stack.reverse_time[i], i)
        total = total + ls
    return z, total


def iaf_log_likelihood(x, stack: FlowStack, cond=None) -> float:
    """``log q(x)`` through the slow inverse path (change of variables).

    For a batch ``[N, T]`` the per-sequence log-likelihoods are returned as an array.
    """
    z0, total_log_sigma = iaf_invert(x, stack, cond)
    ll = np.sum(-HALF_LOG_2PI - 0.5 * z0 * z0 - total_log_sigma, axis=-1)
    return float(ll) if np.ndim(ll) == 0 else ll
