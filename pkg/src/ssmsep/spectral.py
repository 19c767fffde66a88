"""STFT analysis/synthesis with exact round-trip reconstruction.

The Fourier transform is an in-repo iterative radix-2 FFT (the transform size
is always a power of two), computed internally in double precision so the
round trip is limited only by the storage precision of the spectrogram.
Framing is center-padded (reflection), the window is a periodic Hann, and
synthesis divides by the overlap-added squared window of the *actual* frame
set, which makes reconstruction exact wherever that denominator is nonzero.

The backward half of the pipeline (``istft_op``) exposes the synthesis as an
autograd primitive: the iSTFT is linear in the spectrogram, and its adjoint
is a scaled forward transform of the re-framed upstream gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, ContractError

_COLA_EPS = 1e-8


@dataclass
class AudioBuffer:
    """Mono audio: float samples plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ContractError(f"AudioBuffer expects 1-D samples, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ContractError("sample_rate must be positive")

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass
class Spectrogram:
    """Complex time-frequency grid stored as two real planes [2, F, T]."""

    data: np.ndarray  # (2, F, T_frames): real plane, imaginary plane
    window_len: int
    hop: int
    fft_size: int
    sample_rate: int

    @property
    def n_freqs(self):
        return self.data.shape[1]

    @property
    def n_frames(self):
        return self.data.shape[2]


# -- radix-2 FFT ---------------------------------------------------------------


@lru_cache(maxsize=32)
def _fft_plan(n):
    """Bit-reversal permutation and per-stage twiddle factors for size n."""
    if n & (n - 1) or n < 1:
        raise ConfigurationError(f"FFT size must be a power of two, got {n}")
    levels = n.bit_length() - 1
    perm = np.zeros(n, dtype=np.intp)
    for i in range(n):
        rev = 0
        v = i
        for _ in range(levels):
            rev = (rev << 1) | (v & 1)
            v >>= 1
        perm[i] = rev
    twiddles = []
    m = 2
    while m <= n:
        twiddles.append(np.exp(-2j * np.pi * np.arange(m // 2) / m))
        m *= 2
    return perm, twiddles


def fft(x):
    """Complex DFT along the last axis (length must be a power of two)."""
    x = np.asarray(x)
    n = x.shape[-1]
    perm, twiddles = _fft_plan(n)
    out = np.ascontiguousarray(x[..., perm], dtype=np.complex128)
    m = 2
    for w in twiddles:
        half = m // 2
        view = out.reshape(out.shape[:-1] + (n // m, m))
        even = view[..., :half]
        odd = view[..., half:] * w
        view[..., :half], view[..., half:] = even + odd, even - odd
        m *= 2
    return out


def ifft(x):
    x = np.asarray(x, dtype=np.complex128)
    return np.conj(fft(np.conj(x))) / x.shape[-1]


def rfft(x, n=None):
    """Onesided DFT of real input: bins 0..n/2 along the last axis."""
    x = np.asarray(x)
    n = n or x.shape[-1]
    if x.shape[-1] < n:
        pad = [(0, 0)] * (x.ndim - 1) + [(0, n - x.shape[-1])]
        x = np.pad(x, pad)
    return fft(x)[..., : n // 2 + 1]


def irfft(spec, n):
    """Real inverse of a onesided spectrum (imag parts of DC/Nyquist ignored)."""
    spec = np.asarray(spec, dtype=np.complex128)
    full = np.empty(spec.shape[:-1] + (n,), dtype=np.complex128)
    half = n // 2
    full[..., : half + 1] = spec
    full[..., half + 1 :] = np.conj(spec[..., half - 1 : 0 : -1])
    return ifft(full).real


# -- framing --------------------------------------------------------------------


def hann_window(n):
    """Periodic Hann window (exact COLA at hop = n/4)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _check_geometry(window_len, hop, fft_size):
    if hop > window_len:
        raise ConfigurationError(f"hop {hop} exceeds window length {window_len}")
    if window_len > fft_size:
        raise ConfigurationError(f"window length {window_len} exceeds FFT size {fft_size}")
    if hop < 1:
        raise ConfigurationError("hop must be >= 1")


def n_frames_for(length, window_len, hop):
    padded = length + 2 * (window_len // 2)
    return 1 + max(0, -(-(padded - window_len) // hop))


def _frame(x, window_len, hop):
    """Center-pad (reflect) then slice overlapping frames: (n_frames, window_len)."""
    p = window_len // 2
    xp = np.pad(x, (p, p), mode="reflect")
    frames = n_frames_for(x.size, window_len, hop)
    total = (frames - 1) * hop + window_len
    if total > xp.size:
        xp = np.pad(xp, (0, total - xp.size))
    s = xp.strides[0]
    return np.lib.stride_tricks.as_strided(xp, shape=(frames, window_len), strides=(s * hop, s))


def stft(x: AudioBuffer, window_len=512, hop=128, fft_size=None) -> Spectrogram:
    """Windowed onesided spectra of a mono buffer, center-padded framing."""
    fft_size = fft_size or window_len
    _check_geometry(window_len, hop, fft_size)
    samples = np.asarray(x.samples)
    if samples.size < 2:
        raise ContractError("stft needs at least 2 samples")
    frames = _frame(samples.astype(np.float64, copy=False), window_len, hop)
    spec = rfft(frames * hann_window(window_len), n=fft_size)  # (T, F)
    dtype = samples.dtype if samples.dtype in (np.float32, np.float64) else np.float64
    data = np.stack([spec.real.T, spec.imag.T]).astype(dtype)
    return Spectrogram(data=data, window_len=window_len, hop=hop, fft_size=fft_size, sample_rate=x.sample_rate)


def _synth_denominator(n_frames, window_len, hop, total):
    win_sq = hann_window(window_len) ** 2
    den = np.zeros(total)
    for f in range(n_frames):
        den[f * hop : f * hop + window_len] += win_sq
    return den


def istft(s: Spectrogram, original_len: int) -> AudioBuffer:
    """Overlap-add synthesis normalized by the squared-window sum; exact

    inverse of ``stft`` for COLA-compatible geometry. Output is truncated or
    zero-padded to ``original_len``.
    """
    _check_geometry(s.window_len, s.hop, s.fft_size)
    spec = s.data[0].T + 1j * s.data[1].T  # (T, F)
    frames_t = irfft(spec, s.fft_size)[:, : s.window_len]
    win = hann_window(s.window_len)
    n_frames = frames_t.shape[0]
    total = (n_frames - 1) * s.hop + s.window_len
    num = np.zeros(total)
    for f in range(n_frames):
        num[f * s.hop : f * s.hop + s.window_len] += frames_t[f] * win
    den = _synth_denominator(n_frames, s.window_len, s.hop, total)
    p = s.window_len // 2
    # Non-COLA geometry leaves holes in the steady-state interior; the frame
    # run-out at the very end is not a configuration problem and is zero-filled.
    interior = den[s.window_len : total - s.window_len]
    if interior.size and interior.min() < _COLA_EPS:
        raise ConfigurationError(
            f"window/hop ({s.window_len}/{s.hop}) does not satisfy COLA: zero synthesis denominator"
        )
    covered = den >= _COLA_EPS
    rec = np.zeros(total)
    rec[covered] = num[covered] / den[covered]
    out = np.zeros(original_len, dtype=s.data.dtype)
    usable = min(original_len, total - p)
    out[:usable] = rec[p : p + usable]
    return AudioBuffer(samples=out, sample_rate=s.sample_rate)


def istft_adjoint(grad_samples, n_frames, window_len, hop, fft_size):
    """Adjoint of the linear map istft: R^{2 x F x T} -> R^L.

    Derivation: the synthesis divides by the OLA'd squared window, windows
    each inverse-transformed frame and overlap-adds; its transpose re-frames
    the (denominator-scaled) gradient, windows it, and applies the adjoint of
    the onesided inverse DFT, which is the forward onesided DFT with weight
    1/n on DC/Nyquist bins and 2/n elsewhere.
    """
    grad_samples = np.asarray(grad_samples, dtype=np.float64)
    total = (n_frames - 1) * hop + window_len
    p = window_len // 2
    d_full = np.zeros(total)
    usable = min(grad_samples.size, total - p)
    den = _synth_denominator(n_frames, window_len, hop, total)
    region = slice(p, p + usable)
    d_full[region] = grad_samples[:usable] / den[region]

    win = hann_window(window_len)
    d_frames = np.zeros((n_frames, fft_size))
    for f in range(n_frames):
        d_frames[f, :window_len] = d_full[f * hop : f * hop + window_len] * win

    weights = np.full(fft_size // 2 + 1, 2.0 / fft_size)
    weights[0] = 1.0 / fft_size
    weights[-1] = 1.0 / fft_size
    d_spec = rfft(d_frames) * weights  # (T, F)
    out = np.stack([d_spec.real.T, d_spec.imag.T])
    # imaginary parts of DC and Nyquist never influence the synthesis
    out[1, 0, :] = 0.0
    out[1, -1, :] = 0.0
    return out


def istft_op(spec_planes, window_len, hop, fft_size, sample_rate, original_len):
    """Differentiable iSTFT: autograd Tensor [2, F, T] -> Tensor [original_len]."""
    from . import autograd as ag

    s_t = ag.as_tensor(spec_planes)
    n_frames = s_t.data.shape[2]
    spect = Spectrogram(
        data=s_t.data, window_len=window_len, hop=hop, fft_size=fft_size, sample_rate=sample_rate
    )
    wav = istft(spect, original_len).samples

    def bwd(g):
        if s_t.requires_grad:
            d = istft_adjoint(g, n_frames, window_len, hop, fft_size).astype(s_t.data.dtype)
            s_t.grad = d if s_t.grad is None else s_t.grad + d

    return ag.Tensor(wav, parents=(s_t,), backward=bwd)
