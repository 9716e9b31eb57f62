import math

import numpy as np
import pytest

from parawave.autodiff import Tensor
from parawave.errors import ConfigError, DimensionError
from parawave.wavenet import (BlockParams, Conditioner, IncrementalWaveNet, WaveNet, WaveNetConfig,
                              gated_residual_block)


def make_block(rng, R=3, S=2, C=2, K=2, scale=0.5, zero=False):
    def arr(*shape):
        return Tensor(np.zeros(shape) if zero else scale * rng.standard_normal(shape))
    return BlockParams(gate_w=arr(R, R, K), filter_w=arr(R, R, K), gate_b=arr(R), filter_b=arr(R),
                       res_w=arr(R, R), res_b=arr(R), skip_w=arr(S, R), skip_b=arr(S),
                       gate_cond=arr(R, C), filter_cond=arr(R, C))


def block_by_hand(h, c, p, d):
    """Term-by-term evaluation of the gated residual layer."""
    R, T = h.shape
    K = p.gate_w.shape[2]
    gw, fw = p.gate_w.data, p.filter_w.data
    h_next = np.zeros_like(h)
    skip = np.zeros((p.skip_w.shape[0], T))
    for t in range(T):
        gated = np.zeros(R)
        for o in range(R):
            a_g = p.gate_b.data[o] + sum(p.gate_cond.data[o, j] * c[j, t] for j in range(c.shape[0]))
            a_f = p.filter_b.data[o] + sum(p.filter_cond.data[o, j] * c[j, t] for j in range(c.shape[0]))
            for i in range(R):
                for k in range(K):
                    src = t - (K - 1 - k) * d
                    if src >= 0:
                        a_g += gw[o, i, k] * h[i, src]
                        a_f += fw[o, i, k] * h[i, src]
            gated[o] = 1.0 / (1.0 + math.exp(-a_g)) * math.tanh(a_f)
        h_next[:, t] = h[:, t] + p.res_w.data @ gated + p.res_b.data
        skip[:, t] = p.skip_w.data @ gated + p.skip_b.data
    return h_next, skip


def test_zero_block_is_identity(rng):
    h = rng.standard_normal((3, 10))
    p = make_block(rng, zero=True)
    h_next, skip = gated_residual_block(Tensor(h), Tensor(np.zeros((2, 10))), p, 2)
    np.testing.assert_array_equal(h_next.data, h)
    np.testing.assert_array_equal(skip.data, 0.0)


def test_saturated_block(rng):
    h = rng.standard_normal((3, 6))
    p = make_block(rng, zero=True)
    p.gate_b.data[:] = 40.0
    p.filter_b.data[:] = 40.0
    p.res_w.data[:] = rng.standard_normal((3, 3))
    p.skip_w.data[:] = rng.standard_normal((2, 3))
    h_next, skip = gated_residual_block(Tensor(h), None, p, 1)
    ones = np.ones(3)
    np.testing.assert_allclose(h_next.data, h + (p.res_w.data @ ones)[:, None], atol=1e-12)
    np.testing.assert_allclose(skip.data, np.repeat((p.skip_w.data @ ones)[:, None], 6, axis=1), atol=1e-12)


@pytest.mark.parametrize("dilation,K", [(1, 2), (2, 2), (4, 3)])
def test_block_matches_hand_transcription(rng, dilation, K):
    h = rng.standard_normal((3, 12))
    c = rng.uniform(0, 1, size=(2, 12))
    p = make_block(rng, K=K)
    h_next, skip = gated_residual_block(Tensor(h), Tensor(c), p, dilation)
    ref_h, ref_s = block_by_hand(h, c, p, dilation)
    np.testing.assert_allclose(h_next.data, ref_h, rtol=0, atol=1e-12)
    np.testing.assert_allclose(skip.data, ref_s, rtol=0, atol=1e-12)


def test_block_rejects_conditioner_length_mismatch(rng):
    p = make_block(rng)
    with pytest.raises(DimensionError):
        gated_residual_block(Tensor(np.zeros((3, 8))), Tensor(np.zeros((2, 7))), p, 1)


def test_dilation_schedule_doubles_within_cycle():
    cfg = WaveNetConfig(layers=7, cycle=3)
    assert cfg.dilations() == [1, 2, 4, 1, 2, 4, 1]
    assert WaveNetConfig(layers=10, cycle=10).dilations()[-1] == 512
    assert WaveNetConfig(layers=3, cycle=3, kernel_size=2).receptive_field() == 8


def test_config_validation():
    with pytest.raises(ConfigError):
        WaveNetConfig(layers=-1)
    with pytest.raises(ConfigError):
        WaveNetConfig(kernel_size=0)


def test_zero_head_predicts_standard_normal(rng):
    net = WaveNet(WaveNetConfig(layers=3, cycle=3, residual_channels=4, skip_channels=4), rng)
    mu, ls = net.forward(Tensor(rng.standard_normal(16)))
    np.testing.assert_array_equal(mu.data, 0.0)
    np.testing.assert_array_equal(ls.data, 0.0)


def test_init_bounds(rng):
    cfg = WaveNetConfig(layers=2, cycle=2, residual_channels=5, skip_channels=3, kernel_size=3)
    net = WaveNet(cfg, rng)
    bound = math.sqrt(1.0 / (5 * 3))
    assert np.abs(net.params["l0.gate.w"].data).max() <= bound
    assert net.num_parameters() == sum(t.data.size for t in net.params.values())


def test_parameter_names_are_distinct_per_layer(rng):
    net = WaveNet(WaveNetConfig(layers=2, cycle=2, residual_channels=2, skip_channels=2, cond_channels=1), rng)
    assert "l1.gate.cond" in net.params
    assert len({id(t) for t in net.params.values()}) == len(net.params)


@pytest.mark.parametrize("cond_channels,batch", [(0, 1), (3, 1), (3, 4)])
def test_incremental_matches_parallel_forward(rng, cond_channels, batch):
    cfg = WaveNetConfig(layers=4, cycle=2, residual_channels=4, skip_channels=3,
                        cond_channels=cond_channels, kernel_size=3)
    net = WaveNet(cfg, rng, head_scale=1.0)
    T = 20
    inp = rng.standard_normal((batch, T))
    cond = rng.standard_normal((cond_channels, T)) if cond_channels else None
    mu, ls = net.forward(Tensor(inp), None if cond is None else Tensor(cond))
    inc = IncrementalWaveNet(net, cond, T, batch=batch)
    for t in range(T):
        m, s = inc.step(t, inp[:, t])
        np.testing.assert_allclose(m, mu.data[:, t], atol=1e-12)
        np.testing.assert_allclose(s, ls.data[:, t], atol=1e-12)


def test_incremental_requires_sequential_steps(rng):
    net = WaveNet(WaveNetConfig(layers=1, cycle=1, residual_channels=2, skip_channels=2), rng)
    inc = IncrementalWaveNet(net, None, 4)
    with pytest.raises(ValueError):
        inc.step(1, np.zeros(1))


def test_conditioner_projection_and_band_check(rng):
    cond = Conditioner(4, 2, rng)
    mel = rng.uniform(0, 1, size=(4, 9))
    out = cond(mel).data
    np.testing.assert_allclose(out, cond.params["w"].data @ mel + cond.params["b"].data[:, None])
    with pytest.raises(DimensionError):
        cond(rng.uniform(0, 1, size=(3, 9)))
    assert Conditioner(0, 0)(mel) is None
