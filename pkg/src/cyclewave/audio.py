"""Audio ingestion and analysis: WAV I/O, the mel transform, F0, cepstra.

The mel pipeline is written in terms of the tensor library so the same code
path serves both plain feature extraction and differentiable use inside the
training losses. All analysis assumes mono 22.05 kHz audio.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.signal import resample_poly

from . import tensor as tc
from .errors import AudioFormatError, ContractError, EmptyAudioError

SAMPLE_RATE = 22050
HOP_LENGTH = 256
WIN_LENGTH = 1024
N_MELS = 80
LOG_FLOOR = 1e-5

F0_MIN_HZ = 60.0
F0_MAX_HZ = 500.0
F0_PERIODICITY_THRESHOLD = 0.45
F0_ENERGY_THRESHOLD_DB = -40.0
FRAME_PERIOD_MS = 5.0
ANALYSIS_HOP = int(SAMPLE_RATE * FRAME_PERIOD_MS / 1000.0)  # 110 samples on the 5 ms grid

MCEP_ORDER = 34  # coefficients 1..34 enter the distortion metric; c0 carries gain


@dataclass
class AudioBuffer:
    """Mono waveform in [-1, 1] with its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ContractError(f"sample rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    """Log-mel magnitudes, 80 rows by T frames."""

    values: np.ndarray
    hop_samples: int = HOP_LENGTH
    window_samples: int = WIN_LENGTH

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != N_MELS:
            raise ContractError(f"expected [{N_MELS}, T] mel matrix, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ContractError("mel values must be finite")

    @property
    def frames(self) -> int:
        return self.values.shape[1]


@dataclass
class F0Track:
    """Per-frame fundamental frequency on the 5 ms grid; 0 where unvoiced."""

    f0_hz: np.ndarray
    voiced: np.ndarray
    frame_period_ms: float = FRAME_PERIOD_MS

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64).reshape(-1)
        self.voiced = np.asarray(self.voiced, dtype=bool).reshape(-1)
        if self.f0_hz.shape != self.voiced.shape:
            raise ContractError("f0 and voicing tracks must have equal length")
        if np.any((self.f0_hz > 0) != self.voiced):
            raise ContractError("f0 must be positive exactly on voiced frames")


@dataclass
class McepSequence:
    """Mel-cepstral coefficients c0..c34 per 5 ms frame, shape [T, 35]."""

    coeffs: np.ndarray
    frame_period_ms: float = FRAME_PERIOD_MS

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 2 or self.coeffs.shape[1] != MCEP_ORDER + 1:
            raise ContractError(f"expected [T, {MCEP_ORDER + 1}] coefficients, got {self.coeffs.shape}")

    def __len__(self) -> int:
        return self.coeffs.shape[0]


# ---------------------------------------------------------------------------
# WAV files


def load_wav(path) -> AudioBuffer:
    """Read a RIFF/WAVE file with 16-bit PCM samples.

    Multi-channel files contribute only their first channel; samples are
    scaled by 1/32768 into [-1, 1).
    """
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        raise AudioFormatError(f"cannot parse {path}: {exc}") from exc
    except EOFError as exc:
        raise AudioFormatError(f"truncated WAV file {path}") from exc
    if sampwidth != 2:
        raise AudioFormatError(f"{path}: only 16-bit PCM is supported, got {8 * sampwidth}-bit")
    pcm = np.frombuffer(raw, dtype="<i2")
    if n_channels > 1:
        pcm = pcm[::n_channels]
    return AudioBuffer(pcm.astype(np.float64) / 32768.0, rate)


def save_wav(path, buf: AudioBuffer) -> None:
    """Write mono 16-bit PCM, little-endian."""
    pcm = np.clip(np.round(buf.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(buf.sample_rate)
        wf.writeframes(pcm.tobytes())


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited polyphase resampling to ``target_rate``."""
    if target_rate <= 0:
        raise ContractError("target rate must be positive")
    if target_rate == buf.sample_rate:
        return AudioBuffer(buf.samples.copy(), buf.sample_rate)
    ratio = Fraction(int(target_rate), int(buf.sample_rate))
    out = resample_poly(buf.samples, ratio.numerator, ratio.denominator)
    return AudioBuffer(out, target_rate)


def normalize_and_trim(buf: AudioBuffer, silence_threshold_db: float = -40.0,
                       peak: float = 0.95) -> AudioBuffer:
    """Scale the peak to ``peak`` and drop leading/trailing silence.

    The threshold is measured in dBFS after normalization, so trimming
    decisions do not depend on the input level.
    """
    if len(buf) == 0:
        raise EmptyAudioError("empty buffer")
    top = np.max(np.abs(buf.samples))
    if top == 0.0:
        raise EmptyAudioError("all-silent audio cannot be normalized")
    x = buf.samples * (peak / top)
    threshold = 10.0 ** (silence_threshold_db / 20.0)
    loud = np.nonzero(np.abs(x) > threshold)[0]
    if loud.size == 0:
        raise EmptyAudioError("no samples above the silence threshold")
    return AudioBuffer(x[loud[0]:loud[-1] + 1], buf.sample_rate)


# ---------------------------------------------------------------------------
# mel spectrogram (the waveform -> feature transform)


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int = SAMPLE_RATE, n_fft: int = WIN_LENGTH,
                   n_mels: int = N_MELS, fmin: float = 0.0,
                   fmax: float | None = None) -> np.ndarray:
    """Triangular mel filters, [n_mels, n_fft//2 + 1]."""
    if fmax is None:
        fmax = sample_rate / 2.0
    n_bins = n_fft // 2 + 1
    bin_freqs = np.arange(n_bins) * sample_rate / n_fft
    mel_points = np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2)
    hz_points = _mel_to_hz(mel_points)
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, center, hi = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        up = (bin_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - bin_freqs) / max(hi - center, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def mel_filter_centers(sample_rate: int = SAMPLE_RATE, n_mels: int = N_MELS,
                       fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    if fmax is None:
        fmax = sample_rate / 2.0
    mel_points = np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2)
    return _mel_to_hz(mel_points)[1:-1]


def mel_forward(wav: tc.Tensor, num_frames: int | None = None) -> tc.Tensor:
    """Differentiable log-mel transform.

    ``wav`` is [L], [1, L] or [N, 1, L]; the result is [80, T] (or [N, 80, T])
    with T = floor(L/256) + 1 under centered framing, optionally cropped to
    ``num_frames``.
    """
    x = wav
    if x.ndim == 2:
        x = tc.reshape(x, (x.shape[1],))
    elif x.ndim == 3:
        if x.shape[1] != 1:
            raise ContractError(f"expected mono waveforms, got {x.shape}")
        x = tc.reshape(x, (x.shape[0], x.shape[2]))
    length = x.shape[-1]
    if length < WIN_LENGTH:
        raise ContractError(f"waveform of {length} samples is shorter than one {WIN_LENGTH}-sample window")
    pad = WIN_LENGTH // 2
    x = tc.pad1d(x, (pad, pad), mode="reflect")
    frames = tc.frame_signal(x, WIN_LENGTH, HOP_LENGTH, num_frames=num_frames)  # [.., T, 1024]
    window = np.broadcast_to(hann_window(WIN_LENGTH), frames.shape)
    mag = tc.rdft_magnitude(tc.mul(frames, tc.Tensor(window.copy())))           # [.., T, 513]
    mel = tc.matmul(mag, tc.Tensor(mel_filterbank().T.copy()))                  # [.., T, 80]
    logmel = tc.log_clamped(mel, LOG_FLOOR)
    axes = (1, 0) if logmel.ndim == 2 else (0, 2, 1)
    return tc.transpose(logmel, axes)                                           # [.., 80, T]


def mel_spectrogram(buf: AudioBuffer) -> MelSpectrogram:
    """The feature transform applied to a plain buffer (non-differentiable path)."""
    if buf.sample_rate != SAMPLE_RATE:
        raise ContractError(f"mel extraction expects {SAMPLE_RATE} Hz audio, got {buf.sample_rate}")
    if len(buf) < WIN_LENGTH:
        raise ContractError(f"audio of {len(buf)} samples is too short for analysis")
    with tc.no_grad():
        values = mel_forward(tc.Tensor(buf.samples)).data
    return MelSpectrogram(values)


# ---------------------------------------------------------------------------
# 5 ms analysis grid shared by F0 and cepstral extraction


def _analysis_frames(samples: np.ndarray, window: int = WIN_LENGTH,
                     hop: int = ANALYSIS_HOP) -> np.ndarray:
    if len(samples) < window:
        raise ContractError(f"audio of {len(samples)} samples is too short for analysis")
    n = (len(samples) - window) // hop + 1
    idx = np.arange(window)[None, :] + hop * np.arange(n)[:, None]
    return samples[idx]


def estimate_f0(buf: AudioBuffer) -> F0Track:
    """Normalized-autocorrelation pitch tracking in [60, 500] Hz.

    A frame is voiced when the best normalized autocorrelation peak reaches
    0.45 and the frame RMS is at least -40 dBFS; unvoiced frames carry F0 = 0.
    """
    if buf.sample_rate != SAMPLE_RATE:
        raise ContractError(f"F0 estimation expects {SAMPLE_RATE} Hz audio, got {buf.sample_rate}")
    frames = _analysis_frames(buf.samples)
    frames = frames - frames.mean(axis=1, keepdims=True)
    n, w = frames.shape

    lag_min = int(math.ceil(SAMPLE_RATE / F0_MAX_HZ))
    lag_max = int(math.floor(SAMPLE_RATE / F0_MIN_HZ))

    nfft = 2048
    spec = np.fft.rfft(frames, nfft, axis=1)
    acf = np.fft.irfft(spec.real**2 + spec.imag**2, nfft, axis=1)[:, :w]

    energy = frames * frames
    total = energy.sum(axis=1, keepdims=True)
    csum = np.cumsum(energy, axis=1)
    lags = np.arange(lag_min, lag_max + 1)
    head = np.take(csum, w - 1 - lags, axis=1)          # sum of x_t^2 for t < w - lag
    tail = total - np.take(csum, lags - 1, axis=1)      # sum of x_t^2 for t >= lag
    norm = np.sqrt(np.maximum(head * tail, 1e-300))
    r = acf[:, lag_min:lag_max + 1] / norm

    # Exact period multiples tie at the maximum for periodic signals; among
    # local maxima, take the shortest lag within a small tolerance of the
    # global peak to avoid subharmonic (octave-down) picks.
    peak = r.max(axis=1, keepdims=True)
    local_max = np.zeros_like(r, dtype=bool)
    local_max[:, 1:-1] = (r[:, 1:-1] >= r[:, :-2]) & (r[:, 1:-1] >= r[:, 2:])
    candidates = local_max & (r >= peak - 0.01)
    has_candidate = candidates.any(axis=1)
    best = np.where(has_candidate, np.argmax(candidates, axis=1), np.argmax(r, axis=1))
    periodicity = r[np.arange(n), best]
    rms = np.sqrt(np.maximum(total[:, 0] / w, 0.0))
    energy_gate = rms >= 10.0 ** (F0_ENERGY_THRESHOLD_DB / 20.0)
    voiced = (periodicity >= F0_PERIODICITY_THRESHOLD) & energy_gate
    f0 = np.where(voiced, SAMPLE_RATE / (best + lag_min), 0.0)
    return F0Track(f0, voiced)


@lru_cache(maxsize=4)
def _dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Orthonormal DCT-II analysis matrix, [n_out, n_in]."""
    j = np.arange(n_in)
    m = np.arange(n_out)[:, None]
    mat = np.cos(np.pi * m * (2 * j + 1) / (2 * n_in))
    mat *= np.sqrt(2.0 / n_in)
    mat[0] *= np.sqrt(0.5)
    mat.setflags(write=False)
    return mat


def extract_mcep(buf: AudioBuffer) -> McepSequence:
    """Warped-cepstrum approximation on the 5 ms grid.

    Each frame: Hann-windowed 1024-point magnitude spectrum, 80-band mel
    log-spectrum, orthonormal DCT-II truncated to c0..c34.
    """
    if buf.sample_rate != SAMPLE_RATE:
        raise ContractError(f"cepstral analysis expects {SAMPLE_RATE} Hz audio, got {buf.sample_rate}")
    frames = _analysis_frames(buf.samples) * hann_window(WIN_LENGTH)
    mag = np.abs(np.fft.rfft(frames, axis=1))
    mel = mag @ mel_filterbank().T
    logmel = np.log(np.maximum(mel, LOG_FLOOR))
    coeffs = logmel @ _dct_matrix(MCEP_ORDER + 1, N_MELS).T
    return McepSequence(coeffs)
