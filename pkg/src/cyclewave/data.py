"""Segment sampling, temporal masks, and batch assembly.

A training segment pairs a fixed-length mel slice with the waveform span it
was computed from (frame i of an utterance covers samples
[i*256 - 512, i*256 + 512) under centered framing, so the tight span for
frames [o, o+F) is samples [o*256, (o+F)*256)). Batch assembly is a pure
function of (pool, rng) and may safely run ahead of training on a separate
producer as long as the producer owns the rng.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio
from .errors import ConfigError, DataError, DimensionError

log = logging.getLogger(__name__)


@dataclass
class TemporalMask:
    """Column-constant binary mask over a mel matrix.

    Zero columns form a single contiguous run of ``length`` frames starting
    at ``start``; the all-ones mask has length 0.
    """

    values: np.ndarray
    start: int
    length: int

    @classmethod
    def from_span(cls, frames: int, start: int, length: int, bins: int = audio.N_MELS) -> "TemporalMask":
        if not (0 <= length <= frames):
            raise ConfigError(f"mask length {length} outside [0, {frames}]")
        if not (0 <= start <= frames - length):
            raise ConfigError(f"mask start {start} invalid for length {length} of {frames} frames")
        values = np.ones((bins, frames))
        values[:, start:start + length] = 0.0
        return cls(values, start, length)

    @classmethod
    def ones(cls, frames: int, bins: int = audio.N_MELS) -> "TemporalMask":
        return cls(np.ones((bins, frames)), 0, 0)

    @property
    def frames(self) -> int:
        return self.values.shape[1]


@dataclass
class TrainSegment:
    """One training example: mel slice, its masked copy, the mask, raw audio."""

    mel: np.ndarray          # [80, F]
    mel_masked: np.ndarray   # [80, F], mel * mask
    mask: TemporalMask
    wav: np.ndarray          # [F * 256]

    def __post_init__(self):
        frames = self.mel.shape[1]
        if self.wav.shape[0] != frames * audio.HOP_LENGTH:
            raise DimensionError(
                f"waveform of {self.wav.shape[0]} samples does not cover {frames} frames")


def sample_mask(frames: int, max_mask_frames: int, rng: np.random.Generator,
                bins: int = audio.N_MELS) -> TemporalMask:
    """Draw n ~ U{0..max} masked frames and a uniform start position."""
    if not (0 <= max_mask_frames <= frames):
        raise ConfigError(f"max_mask_frames {max_mask_frames} must lie in [0, {frames}]")
    n = int(rng.integers(0, max_mask_frames + 1))
    start = int(rng.integers(0, frames - n + 1))
    return TemporalMask.from_span(frames, start, n, bins)


def apply_mask(mel: audio.MelSpectrogram, mask: TemporalMask) -> audio.MelSpectrogram:
    """Elementwise product; masked columns become exactly zero."""
    if mel.values.shape != mask.values.shape:
        raise DimensionError(f"mel {mel.values.shape} vs mask {mask.values.shape}")
    return audio.MelSpectrogram(mel.values * mask.values,
                                mel.hop_samples, mel.window_samples)


def read_manifest(path) -> list[Path]:
    """One WAV path per line; blank lines and ``#`` comments are skipped."""
    base = Path(path)
    entries = []
    for line in base.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            p = Path(line)
            entries.append(p if p.is_absolute() else base.parent / p)
    return entries


class UtterancePool:
    """Loaded utterances with cached mel features, ready for segment draws."""

    def __init__(self, buffers: list[audio.AudioBuffer], frames: int):
        self.frames = frames
        self.buffers = []
        self.mels = []
        min_len = frames * audio.HOP_LENGTH
        for i, buf in enumerate(buffers):
            if len(buf) < min_len:
                log.warning("utterance %d (%d samples) shorter than %d, skipped", i, len(buf), min_len)
                continue
            self.buffers.append(buf)
            self.mels.append(audio.mel_spectrogram(buf).values)
        if not self.buffers:
            raise DataError(f"no utterance long enough for {frames}-frame segments")

    @classmethod
    def from_manifest(cls, path, frames: int, preprocess: bool = True) -> "UtterancePool":
        buffers = []
        for wav_path in read_manifest(path):
            buf = audio.load_wav(wav_path)
            if buf.sample_rate != audio.SAMPLE_RATE:
                buf = audio.resample(buf, audio.SAMPLE_RATE)
            if preprocess:
                buf = audio.normalize_and_trim(buf)
            buffers.append(buf)
        if not buffers:
            raise DataError(f"manifest {path} lists no usable utterances")
        return cls(buffers, frames)

    def __len__(self) -> int:
        return len(self.buffers)

    def draw_segment(self, rng: np.random.Generator, max_mask_frames: int) -> TrainSegment:
        idx = int(rng.integers(0, len(self.buffers)))
        buf = self.buffers[idx]
        mel = self.mels[idx]
        max_offset = len(buf) // audio.HOP_LENGTH - self.frames
        offset = int(rng.integers(0, max_offset + 1))
        mask = sample_mask(self.frames, max_mask_frames, rng)
        mel_slice = mel[:, offset:offset + self.frames].copy()
        wav = buf.samples[offset * audio.HOP_LENGTH:(offset + self.frames) * audio.HOP_LENGTH].copy()
        return TrainSegment(mel_slice, mel_slice * mask.values, mask, wav)


def make_batch(utterances: list[audio.AudioBuffer], batch_size: int, frames: int,
               rng: np.random.Generator, max_mask_frames: int = 25,
               pool: UtterancePool | None = None) -> list[TrainSegment]:
    """Assemble ``batch_size`` independently sampled segments.

    Pass a prebuilt ``pool`` to reuse cached mel features across batches;
    otherwise one is built from ``utterances`` on the fly.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be at least 1")
    if pool is None:
        pool = UtterancePool(utterances, frames)
    return [pool.draw_segment(rng, max_mask_frames) for _ in range(batch_size)]
