"""Cycle-consistent adversarial voice conversion on raw waveforms."""

__version__ = "0.1.0"
