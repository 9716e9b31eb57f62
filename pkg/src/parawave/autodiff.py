"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Operations record themselves on the innermost active :class:`Tape` whenever at
least one input requires a gradient. Outside a tape every op is a plain numpy
computation, which is what inference paths rely on for speed.

Usage::

    w = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum(ad.square(w))
    grads = backward(tape, loss)
    grads[w]  # -> array([2., 2., 2.])
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "Tensor", "Tape", "backward", "apply", "current_tape",
    "add", "sub", "mul", "div", "neg", "exp", "log", "sigmoid", "tanh", "relu",
    "square", "clamp_min", "sum", "mean", "reshape", "add_bias", "conv1x1",
    "causal_dilated_conv1d", "shift_right", "reverse_time", "take",
    "AdamState", "adam_step",
]


class Tensor:
    """A float64 array plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.data.reshape(-1)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return take(self, index)


@dataclass
class _Node:
    out: Tensor
    inputs: Sequence[Tensor]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Operation records in the order they were executed (a topological order)."""

    nodes: List[_Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def __len__(self):
        return len(self.nodes)


_TAPES: List[Tape] = []


def current_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply(data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap ``data`` as the output of an op and record it if anything needs grads.

    ``backward_fn`` maps the output gradient to one gradient (or None) per input.
    """
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(out, tuple(inputs), backward_fn))
    return out


def backward(tape: Tape, loss: Tensor, wrt: Optional[Iterable[Tensor]] = None) -> Dict[Tensor, np.ndarray]:
    """Reverse sweep over ``tape`` starting from the scalar ``loss``.

    Returns a map from leaf tensors to their gradients and also stores each in
    ``leaf.grad``. With ``wrt`` given, exactly those tensors are returned, with
    zeros for any that the loss does not reach.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = set()
    leaves: Dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        produced.add(id(node.out))
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            leaves[key] = inp
    if not tape.nodes or id(loss) not in produced:
        leaves[id(loss)] = loss

    if wrt is None:
        result = {t: grads[k] for k, t in leaves.items() if k in grads and k not in produced}
    else:
        result = {t: grads.get(id(t), np.zeros_like(t.data)) for t in wrt}
    for t, g in result.items():
        t.grad = g
    return result


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return apply(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return apply(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return apply(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return apply(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(a: Tensor) -> Tensor:
    return apply(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return apply(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return apply(np.log(ad), (a,), lambda g: (g / ad,))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return apply(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return apply(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return apply(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return apply(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """``max(a, floor)``; the gradient is blocked where the floor is active."""
    mask = a.data > floor
    return apply(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


# ----------------------------------------------------------------- reductions

def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return apply(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return apply(np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


# ------------------------------------------------------------- shape / layout

def take(a: Tensor, index) -> Tensor:
    """Basic numpy indexing (ints and slices); gradient scatters back."""
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return apply(a.data[index], (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return apply(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def shift_right(a: Tensor, steps: int = 1) -> Tensor:
    """Delay along the last (time) axis with zero fill: out[..., t] = a[..., t - steps]."""
    T = a.shape[-1]
    out = np.zeros_like(a.data)
    if steps < T:
        out[..., steps:] = a.data[..., :T - steps]

    def bw(g):
        gi = np.zeros_like(g)
        if steps < T:
            gi[..., :T - steps] = g[..., steps:]
        return (gi,)

    return apply(out, (a,), bw)


def reverse_time(a: Tensor) -> Tensor:
    return apply(a.data[..., ::-1].copy(), (a,), lambda g: (g[..., ::-1].copy(),))


# --------------------------------------------------------------- convolution

def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias ``b[C]`` to ``x[..., C, T]``."""
    if b.ndim != 1 or x.shape[-2] != b.shape[0]:
        raise DimensionError(f"bias of shape {b.shape} does not match channels of {x.shape}")
    axes = tuple(i for i in range(x.ndim) if i != x.ndim - 2)
    return apply(x.data + b.data[:, None], (x, b), lambda g: (g, g.sum(axis=axes)))


def conv1x1(x: Tensor, w: Tensor) -> Tensor:
    """Pointwise convolution: ``w[C_out, C_in] @ x[..., C_in, T]``."""
    if w.ndim != 2 or x.shape[-2] != w.shape[1]:
        raise DimensionError(f"1x1 weights {w.shape} do not match input {x.shape}")
    xd, wd = x.data, w.data

    def bw(g):
        gx = wd.T @ g
        gw = g @ np.swapaxes(xd, -1, -2)
        if gw.ndim == 3:
            gw = gw.sum(axis=0)
        return gx, gw

    return apply(wd @ xd, (x, w), bw)


def causal_dilated_conv1d(x: Tensor, w: Tensor, dilation: int = 1) -> Tensor:
    """Causal dilated convolution of ``x[..., C_in, T]`` with ``w[C_out, C_in, K]``.

    Tap ``k`` reads input time ``t - (K-1-k) * dilation``, so the last tap is the
    current sample and tap 0 is the oldest. Left padding is zeros.
    """
    if w.ndim != 3 or x.shape[-2] != w.shape[1]:
        raise DimensionError(f"conv weights {w.shape} do not match input {x.shape}")
    if dilation < 1 or int(dilation) != dilation:
        raise ContractError(f"dilation must be a positive integer, got {dilation}")
    Cout, Cin, K = w.shape
    T = x.shape[-1]
    pad = (K - 1) * dilation
    xd, wd = x.data, w.data
    lead = xd.shape[:-2]
    if K == 1:
        cols = xd
    else:
        xp = np.zeros(lead + (Cin, T + pad))
        xp[..., pad:] = xd
        # im2col: rows ordered (tap, channel)
        cols = np.concatenate([xp[..., k * dilation:k * dilation + T] for k in range(K)], axis=-2)
    wmat = wd.transpose(0, 2, 1).reshape(Cout, K * Cin)
    out = wmat @ cols

    def bw(g):
        gcols = wmat.T @ g
        gw = g @ np.swapaxes(cols, -1, -2)
        if gw.ndim == 3:
            gw = gw.sum(axis=0)
        gw = gw.reshape(Cout, K, Cin).transpose(0, 2, 1)
        if K == 1:
            return gcols, gw
        gxp = np.zeros(lead + (Cin, T + pad))
        for k in range(K):
            s = k * dilation
            gxp[..., s:s + T] += gcols[..., k * Cin:(k + 1) * Cin, :]
        return gxp[..., pad:], gw

    return apply(out, (x, w), bw)


# ------------------------------------------------------------------ optimizer

@dataclass
class AdamState:
    """Adam moments plus a step-wise learning-rate anneal."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    anneal_every: int = 200_000
    anneal_factor: float = 0.5
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        if self.anneal_every <= 0:
            return self.lr
        return self.lr * self.anneal_factor ** (self.step // self.anneal_every)


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState) -> Dict[str, Tensor]:
    """One bias-corrected Adam update, in place on ``params[name].data``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}", step=state.step)
    lr = state.current_lr()
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return math.sqrt(float(np.sum([np.sum(g * g) for g in grads])))
