"""Deterministic speech-like test signals for demos and the test suite.

These are not meant to sound like speech; they only need the right gross
structure (harmonic source, slow envelope, some noise) so that cycle
training and the evaluation metrics have something non-trivial to chew on.
"""

from __future__ import annotations

import numpy as np

from .audio import SAMPLE_RATE, AudioBuffer, normalize_and_trim


def _smooth_contour(rng: np.random.Generator, n: int, points: int, lo: float, hi: float) -> np.ndarray:
    knots = rng.uniform(lo, hi, size=points)
    x = np.linspace(0, 1, points)
    return np.interp(np.linspace(0, 1, n), x, knots)


def speech_like(duration: float = 2.0, seed: int = 0, f0_lo: float = 120.0,
                f0_hi: float = 220.0, sr: int = SAMPLE_RATE) -> AudioBuffer:
    """Harmonic source with drifting pitch, slow envelope, and a noise floor."""
    rng = np.random.default_rng(seed)
    n = int(duration * sr)
    f0 = _smooth_contour(rng, n, 8, f0_lo, f0_hi)
    phase = 2.0 * np.pi * np.cumsum(f0) / sr
    sig = np.zeros(n)
    for h in range(1, 13):
        sig += np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h
    envelope = _smooth_contour(rng, n, 12, 0.15, 1.0)
    sig = sig * envelope + 0.02 * rng.normal(size=n)
    sig *= 0.8 / np.max(np.abs(sig))
    return AudioBuffer(sig, sr)


def _spectral_shape(buf: AudioBuffer, lo: float, hi: float, rolloff: float = 200.0) -> AudioBuffer:
    """Band-pass with smooth cos^2 edges (zero-phase, via the DFT)."""
    spec = np.fft.rfft(buf.samples)
    freqs = np.fft.rfftfreq(len(buf.samples), 1.0 / buf.sample_rate)
    gain = np.ones_like(freqs)
    below = freqs < lo
    gain[below] = np.cos(np.clip((lo - freqs[below]) / rolloff, 0, 1) * np.pi / 2) ** 2
    above = freqs > hi
    gain[above] = np.cos(np.clip((freqs[above] - hi) / rolloff, 0, 1) * np.pi / 2) ** 2
    out = np.fft.irfft(spec * gain, n=len(buf.samples))
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= min(1.0, 0.8 / peak)
    return AudioBuffer(out, buf.sample_rate)


def toy_domain_pair(seed: int = 0, duration: float = 2.0) -> tuple[AudioBuffer, AudioBuffer]:
    """One (X, Y) utterance pair: low-passed vs band-passed renderings."""
    base_x = speech_like(duration, seed=seed)
    base_y = speech_like(duration, seed=seed + 1000)
    x = normalize_and_trim(_spectral_shape(base_x, 0.0, 1200.0))
    y = normalize_and_trim(_spectral_shape(base_y, 300.0, 3500.0))
    return x, y


def toy_pools(n_utterances: int = 2, duration: float = 2.0,
              seed: int = 0) -> tuple[list[AudioBuffer], list[AudioBuffer]]:
    xs, ys = [], []
    for i in range(n_utterances):
        x, y = toy_domain_pair(seed + i, duration)
        xs.append(x)
        ys.append(y)
    return xs, ys
