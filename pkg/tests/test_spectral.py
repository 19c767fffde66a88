"""FFT, STFT round-trip, Parseval, adjoint, and WAV I/O tests."""

import numpy as np
import pytest

from ssmsep import autograd as ag
from ssmsep import spectral as sp
from ssmsep import wavio
from ssmsep.errors import ConfigurationError, ContractError
from ssmsep.gradcheck import central_difference, relative_error

RNG = np.random.default_rng(21)


# -- in-repo FFT against numpy's ------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 8, 64, 512])
def test_fft_matches_numpy(n):
    x = RNG.standard_normal((3, n)) + 1j * RNG.standard_normal((3, n))
    assert np.allclose(sp.fft(x), np.fft.fft(x), atol=1e-10)
    assert np.allclose(sp.ifft(x), np.fft.ifft(x), atol=1e-10)


def test_rfft_irfft_match_numpy():
    x = RNG.standard_normal((4, 256))
    got = sp.rfft(x)
    assert np.allclose(got, np.fft.rfft(x), atol=1e-10)
    assert np.allclose(sp.irfft(got, 256), x, atol=1e-10)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ConfigurationError):
        sp.fft(np.zeros(12))


# -- STFT contract ---------------------------------------------------------------


def test_stft_zero_signal_zero_spectrogram():
    buf = sp.AudioBuffer(np.zeros(4000, dtype=np.float32), 16000)
    s = sp.stft(buf, 512, 128)
    assert np.all(s.data == 0)
    assert s.n_freqs == 257


def test_stft_centered_impulse_flat_magnitude():
    # A unit impulse at the center of frame 0 sits at the window peak; the DFT
    # of a windowed impulse has constant magnitude across bins.
    win, hop = 512, 128
    buf_len = 4 * win
    x = np.zeros(buf_len, dtype=np.float64)
    x[0] = 1.0  # center padding puts sample 0 at position win//2 of frame 0
    s = sp.stft(sp.AudioBuffer(x, 16000), win, hop)
    mag0 = np.hypot(s.data[0, :, 0], s.data[1, :, 0])
    assert np.allclose(mag0, mag0[0], rtol=1e-9)
    assert mag0[0] == pytest.approx(sp.hann_window(win)[win // 2], rel=1e-9)


def test_stft_sine_at_bin_center_concentrates():
    # Rectangular-window sanity config: window == fft == 256, hop == 256 with
    # a Hann window would break COLA, so probe the DFT orthogonality on one
    # frame directly via rfft.
    n = 256
    bin_idx = 17
    t = np.arange(n)
    x = np.cos(2 * np.pi * bin_idx * t / n)
    spec = sp.rfft(x)
    mags = np.abs(spec)
    assert mags[bin_idx] == pytest.approx(n / 2, rel=1e-9)
    others = np.delete(mags, bin_idx)
    assert np.max(others) < 1e-9 * mags[bin_idx]


def test_stft_linearity():
    x = RNG.standard_normal(5000)
    y = RNG.standard_normal(5000)
    a, b = 0.7, -1.3
    sa = sp.stft(sp.AudioBuffer(x, 8000), 512, 128)
    sb = sp.stft(sp.AudioBuffer(y, 8000), 512, 128)
    sab = sp.stft(sp.AudioBuffer(a * x + b * y, 8000), 512, 128)
    assert np.allclose(sab.data, a * sa.data + b * sb.data, atol=1e-10)


def test_stft_rejects_hop_above_window():
    with pytest.raises(ConfigurationError):
        sp.stft(sp.AudioBuffer(np.zeros(4000), 8000), window_len=256, hop=512)


def test_stft_rejects_window_above_fft():
    with pytest.raises(ConfigurationError):
        sp.stft(sp.AudioBuffer(np.zeros(4000), 8000), window_len=512, hop=128, fft_size=256)


def test_parseval_per_frame():
    # Time-domain energy of each windowed frame equals its onesided spectrum
    # energy with weights 1/n (DC, Nyquist) and 2/n elsewhere.
    x = RNG.standard_normal(3000)
    win, hop, nfft = 512, 128, 512
    s = spectrum = sp.stft(sp.AudioBuffer(x, 8000), win, hop, nfft)
    frames = sp._frame(x, win, hop) * sp.hann_window(win)
    time_energy = (frames**2).sum(axis=1)
    w = np.full(nfft // 2 + 1, 2.0 / nfft)
    w[0] = w[-1] = 1.0 / nfft
    spec_energy = (w[None, :] * (s.data[0].T ** 2 + s.data[1].T ** 2)).sum(axis=1)
    assert relative_error(time_energy, spec_energy) < 1e-5


# -- iSTFT / round trip -----------------------------------------------------------


@pytest.mark.parametrize("seconds", [1.0, 2.3, 4.0])
def test_roundtrip_single_precision(seconds):
    n = int(16000 * seconds)
    x = RNG.standard_normal(n).astype(np.float32)
    s = sp.stft(sp.AudioBuffer(x, 16000), 512, 128, 512)
    y = sp.istft(s, n).samples
    rel = np.linalg.norm(x - y) / np.linalg.norm(x)
    assert rel < 1e-6


def test_istft_zero_spectrogram():
    s = sp.Spectrogram(np.zeros((2, 257, 10), dtype=np.float32), 512, 128, 512, 16000)
    out = sp.istft(s, 1000)
    assert np.all(out.samples == 0)


def test_istft_scaling_linearity():
    x = RNG.standard_normal(6000).astype(np.float32)
    s = sp.stft(sp.AudioBuffer(x, 8000), 512, 128)
    y1 = sp.istft(s, 6000).samples
    s.data = 2.5 * s.data
    y2 = sp.istft(s, 6000).samples
    assert np.allclose(y2, 2.5 * y1, atol=1e-6)


def test_istft_non_cola_raises():
    # hop == window with a Hann window zeroes the synthesis denominator at the
    # frame seams.
    s = sp.Spectrogram(np.ones((2, 257, 8), dtype=np.float32), 512, 512, 512, 16000)
    with pytest.raises(ConfigurationError):
        sp.istft(s, 2048)


def test_istft_pads_when_longer_than_frames():
    x = RNG.standard_normal(2000).astype(np.float32)
    s = sp.stft(sp.AudioBuffer(x, 8000), 512, 128)
    out = sp.istft(s, 3000).samples
    assert out.size == 3000
    assert np.allclose(out[:2000], x, atol=1e-5)


# -- adjoint / differentiability ---------------------------------------------------


def test_istft_adjoint_identity():
    # <istft(S), g> == <S, adjoint(g)> for random S, g.
    win, hop, nfft = 64, 16, 64
    n_frames, olen = 9, 150
    s = RNG.standard_normal((2, nfft // 2 + 1, n_frames))
    g = RNG.standard_normal(olen)
    spect = sp.Spectrogram(s, win, hop, nfft, 8000)
    forward = sp.istft(spect, olen).samples
    adj = sp.istft_adjoint(g, n_frames, win, hop, nfft)
    assert np.isclose((forward * g).sum(), (s * adj).sum(), rtol=1e-10)


def test_istft_op_gradient_matches_fd():
    win, hop, nfft = 32, 8, 32
    n_frames, olen = 5, 60
    s = RNG.standard_normal((2, nfft // 2 + 1, n_frames))
    t = ag.parameter(s.copy())
    out = sp.istft_op(t, win, hop, nfft, 8000, olen)
    seed = RNG.standard_normal(olen)
    out.backward(seed)

    def f(arr):
        spect = sp.Spectrogram(arr, win, hop, nfft, 8000)
        return float((sp.istft(spect, olen).samples * seed).sum())

    (fd,) = central_difference(f, [s.copy()])
    assert relative_error(t.grad, fd, floor=1e-7) < 1e-6


# -- WAV I/O -----------------------------------------------------------------------


def test_wav_float32_roundtrip_bit_exact(tmp_path):
    x = RNG.standard_normal(5000).astype(np.float32)
    path = tmp_path / "f32.wav"
    wavio.write_wav(path, sp.AudioBuffer(x, 16000), encoding="float32")
    back = wavio.read_wav(path)
    assert back.sample_rate == 16000
    assert np.array_equal(back.samples, x)


def test_wav_pcm16_roundtrip_quantized(tmp_path):
    x = (0.5 * np.sin(np.linspace(0, 50, 8000))).astype(np.float32)
    path = tmp_path / "p16.wav"
    wavio.write_wav(path, sp.AudioBuffer(x, 8000), encoding="pcm16")
    back = wavio.read_wav(path)
    assert back.sample_rate == 8000
    assert np.max(np.abs(back.samples - x)) <= 1.0 / 32768.0


def test_wav_rejects_garbage(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"not a wav file at all")
    with pytest.raises(ContractError):
        wavio.read_wav(path)
