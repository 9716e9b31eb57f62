import numpy as np
import pytest
from hypothesis import given, strategies as st

from parawave.autodiff import Tape, Tensor, backward
from parawave.dsp import (QUANT_STEP, AudioClip, ConditionerSeq, MelStats, StftConfig, SynthSpec, frame_indices,
                          hann, load_manifest_clips, log_mel, mel_filterbank, quantize16, read_manifest, read_wav,
                          stft_loss, stft_magnitude, synth_clips, synth_dataset, upsample_conditioner,
                          write_manifest, write_wav)
from parawave.errors import ConfigError, ContractError
from parawave.oracles import hann_window, naive_dft_magnitude, triangular_filterbank
from parawave.rng import philox, standard_normal


# ------------------------------------------------------------------- clips

def test_audio_clip_contract():
    with pytest.raises(ContractError):
        AudioClip(np.array([]), 16000)
    with pytest.raises(ContractError):
        AudioClip(np.array([0.0, 1.5]), 16000)
    with pytest.raises(ContractError):
        AudioClip(np.array([0.0, np.nan]), 16000)


def test_quantize16_grid():
    x = quantize16(np.array([-1.0, 0.3, 1.0]))
    np.testing.assert_array_equal(x * 32768, np.round(x * 32768))
    assert x[-1] == 32767 / 32768


def test_wav_round_trip(tmp_path, rng):
    x = rng.uniform(-1, 1, 300)
    path = tmp_path / "a.wav"
    write_wav(path, x, 8000)
    clip = read_wav(path)
    assert clip.sample_rate == 8000
    np.testing.assert_array_equal(clip.samples, quantize16(x))


def test_read_wav_rejects_garbage(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"not a wav file")
    with pytest.raises(ConfigError):
        read_wav(path)


def test_manifest_round_trip(tmp_path, rng):
    write_wav(tmp_path / "a.wav", rng.uniform(-0.5, 0.5, 100), 4000)
    write_manifest(tmp_path / "m.tsv", [("a.wav", 10, 50)])
    assert read_manifest(tmp_path / "m.tsv") == [(str(tmp_path / "a.wav"), 10, 50)]
    clips = load_manifest_clips(tmp_path / "m.tsv")
    assert len(clips[0]) == 50
    write_manifest(tmp_path / "bad.tsv", [("a.wav", 90, 50)])
    with pytest.raises(ConfigError):
        load_manifest_clips(tmp_path / "bad.tsv")


# -------------------------------------------------------------------- STFT

def test_full_size_fft_has_1025_bins():
    assert StftConfig.full_size().bins == 1025
    assert StftConfig.full_size().hop == 300 and StftConfig.full_size().window_len == 1200


def test_fft_size_must_be_power_of_two():
    with pytest.raises(ConfigError):
        StftConfig(fft_size=100, hop=10, window_len=50)


def test_zero_clip_has_zero_magnitudes():
    mag = stft_magnitude(np.zeros(500), StftConfig()).data
    assert mag.shape[0] == 129
    assert np.all(mag == 0.0)


def test_frame_count_formula():
    cfg = StftConfig(fft_size=64, hop=16, window_len=64)
    for length in (64, 100, 257):
        L = length + 64
        assert frame_indices(length, cfg).shape[0] == (L - 64) // 16 + 1


def test_stft_matches_direct_dft(rng):
    cfg = StftConfig(fft_size=64, hop=16, window_len=64)
    x = rng.uniform(-1, 1, 64)
    mag = stft_magnitude(x, cfg).data
    idx = frame_indices(64, cfg)
    win = hann_window(64)
    for f in range(idx.shape[0]):
        ref = naive_dft_magnitude(x[idx[f]] * win, 64)
        np.testing.assert_allclose(mag[:, f], ref, rtol=0, atol=1e-10)


def test_hann_matches_oracle():
    np.testing.assert_allclose(hann(200), hann_window(200), atol=1e-15)


@given(st.floats(-3, 3), st.integers(0, 2 ** 31))
def test_stft_scales_with_input(alpha, seed):
    cfg = StftConfig(fft_size=64, hop=16, window_len=48)
    x = philox(seed).uniform(-1, 1, 100)
    np.testing.assert_allclose(stft_magnitude(alpha * x, cfg).data, abs(alpha) * stft_magnitude(x, cfg).data,
                               rtol=1e-12, atol=1e-12)


def test_frame_energy_bound(rng):
    # Parseval: per-frame spectral energy is bounded by window and signal energy
    cfg = StftConfig(fft_size=128, hop=32, window_len=100)
    x = rng.uniform(-1, 1, 400)
    mag = stft_magnitude(x, cfg).data
    full = mag ** 2
    energy = full[0] + full[-1] + 2 * full[1:-1].sum(axis=0)
    bound = cfg.fft_size * np.sum(hann(100) ** 2) * np.max(x ** 2)
    assert np.all(energy <= bound)


def test_stft_loss_identity_and_symmetry(rng):
    cfg = StftConfig(fft_size=64, hop=16, window_len=64)
    x, y = rng.uniform(-1, 1, (2, 120))
    assert stft_loss(x, x, cfg).item() == 0.0
    assert stft_loss(x, y, cfg).item() == pytest.approx(stft_loss(y, x, cfg).item(), rel=1e-14)
    assert stft_loss(x, y, cfg).item() > 0
    with pytest.raises(ContractError):
        stft_loss(x, y[:100], cfg)


def test_stft_loss_single_frame_by_hand(rng):
    cfg = StftConfig(fft_size=32, hop=32, window_len=32, center=False)
    x, y = rng.uniform(-1, 1, (2, 32))
    win = hann_window(32)
    diff = naive_dft_magnitude(x * win, 32) - naive_dft_magnitude(y * win, 32)
    expected = float(np.sum(diff ** 2)) / 17
    assert stft_loss(x, y, cfg).item() == pytest.approx(expected, rel=0, abs=1e-10)


def test_stft_loss_batched_is_mean_of_singles(rng):
    cfg = StftConfig(fft_size=32, hop=8, window_len=32)
    x = rng.uniform(-1, 1, (3, 40))
    ref = rng.uniform(-1, 1, 40)
    singles = [stft_loss(x[i], ref, cfg).item() for i in range(3)]
    assert stft_loss(x, ref, cfg).item() == pytest.approx(np.mean(singles), rel=1e-13)


def test_stft_gradient_is_zero_at_silence():
    cfg = StftConfig(fft_size=32, hop=8, window_len=32)
    x = Tensor(np.zeros(40), requires_grad=True)
    with Tape() as tape:
        loss = stft_loss(x, np.zeros(40), cfg)
    g = backward(tape, loss, wrt=[x])[x]
    assert np.all(g == 0.0)


# --------------------------------------------------------------------- mel

def test_filterbank_matches_oracle():
    fb = mel_filterbank(8, 256, 4000)
    ref = triangular_filterbank(8, 256, 4000)
    np.testing.assert_allclose(fb, ref, rtol=0, atol=1e-10)
    np.testing.assert_allclose(fb.sum(axis=1), ref.sum(axis=1), rtol=0, atol=1e-10)


def test_white_noise_log_mel_uses_oracle_filterbank():
    cfg = StftConfig()
    clip = AudioClip(np.clip(0.2 * standard_normal(3, 800), -1, 1), 4000)
    power = stft_magnitude(clip, cfg).data ** 2
    raw = np.log(triangular_filterbank(8, 256, 4000) @ power + 1e-10)
    out = log_mel(clip, 8, cfg)
    np.testing.assert_allclose(out.frames, (raw - raw.min()) / (raw.max() - raw.min()), atol=1e-10)


def test_too_many_bands_rejected():
    with pytest.raises(ConfigError):
        mel_filterbank(200, 256, 4000)
    with pytest.raises(ConfigError):
        mel_filterbank(0, 256, 4000)


@given(st.integers(0, 2 ** 31), st.floats(0.01, 1.0))
def test_log_mel_is_normalized(seed, amp):
    x = amp * philox(seed).uniform(-1, 1, 300)
    out = log_mel(AudioClip(x, 4000), 8, StftConfig())
    assert out.normalized
    assert out.frames.min() >= 0.0 and out.frames.max() <= 1.0


def test_silence_gives_identical_frames():
    out = log_mel(AudioClip(np.zeros(400), 4000), 8, StftConfig())
    assert np.all(out.frames == out.frames[:, :1])


def test_stats_clip_out_of_range_values(tmp_path):
    stats = MelStats(-5.0, 0.0)
    stats.save(tmp_path / "s.txt")
    assert MelStats.load(tmp_path / "s.txt") == stats
    out = log_mel(AudioClip(0.9 * np.sin(np.arange(400)), 4000), 8, StftConfig(), stats)
    assert out.frames.min() >= 0.0 and out.frames.max() == 1.0


def test_normalized_conditioner_contract():
    with pytest.raises(ContractError):
        ConditionerSeq(np.array([[0.5, 1.2]]), 4, normalized=True)


# ---------------------------------------------------------------- upsample

def test_upsample_single_frame():
    out = upsample_conditioner(ConditionerSeq(np.array([[0.3]]), 4), 4)
    np.testing.assert_array_equal(out, [[0.3] * 4])


def test_upsample_repetition_pattern():
    out = upsample_conditioner(ConditionerSeq(np.array([[0.0, 1.0, 2.0]]), 2), 5)
    np.testing.assert_array_equal(out, [[0, 0, 1, 1, 2]])


@given(st.integers(1, 5), st.integers(1, 6), st.integers(1, 7))
def test_upsample_round_trip(bands, frames, hop):
    f = philox(bands * 100 + frames).uniform(0, 1, (bands, frames))
    up = upsample_conditioner(ConditionerSeq(f, hop), frames * hop)
    np.testing.assert_array_equal(up[:, ::hop], f)


def test_upsample_too_long_rejected():
    with pytest.raises(ContractError):
        upsample_conditioner(ConditionerSeq(np.zeros((1, 3)), 2), 7)


# --------------------------------------------------------------- synthetic

def test_pure_sine_matches_table():
    spec = SynthSpec(length=40, sample_rate=4000, components=[(100.0, 0.5)], random_phase=False)
    (clip,) = synth_clips(spec, 0)
    table = quantize16(0.5 * np.sin(2 * np.pi * 100 * np.arange(40) / 4000))
    np.testing.assert_array_equal(clip.samples, table)
    (two,) = synth_clips(SynthSpec(length=80, sample_rate=4000, components=[(100.0, 0.5)], random_phase=False), 0)
    np.testing.assert_allclose(two.samples[:40], two.samples[40:], atol=QUANT_STEP)


def test_dequantization_bounds():
    spec = SynthSpec(length=500, components=[(220.0, 0.5)], dequantize=True)
    plain = synth_clips(SynthSpec(length=500, components=[(220.0, 0.5)]), 7)[0].samples
    noisy = synth_clips(spec, 7)[0].samples
    delta = noisy - plain
    assert delta.min() >= 0.0 and delta.max() <= QUANT_STEP


def test_synth_is_deterministic():
    spec = SynthSpec(num_clips=2, length=300, noise_std=0.05)
    a, b = synth_dataset(spec, 5), synth_dataset(spec, 5)
    for ea, eb in zip(a, b):
        assert ea.clip.samples.tobytes() == eb.clip.samples.tobytes()
        assert ea.mel.frames.tobytes() == eb.mel.frames.tobytes()
    assert synth_clips(spec, 6)[0].samples.tobytes() != a[0].clip.samples.tobytes()


def test_synth_validation():
    with pytest.raises(ConfigError):
        SynthSpec(components=[(220.0, 0.8), (300.0, 0.5)]).validate()
    with pytest.raises(ConfigError):
        SynthSpec(components=[(3000.0, 0.5)], sample_rate=4000).validate()
