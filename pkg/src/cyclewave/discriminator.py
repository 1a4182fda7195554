"""Multi-period and multi-scale waveform discriminators.

One Discriminator instance bundles 5 period blocks and 3 scale blocks; a
forward pass returns exactly 8 patch-score maps plus the per-layer feature
maps of every block. Scores stay differentiable end-to-end to the input
waveform because generator updates flow through them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .errors import ConfigError, ContractError, DimensionError


@dataclass
class DiscriminatorConfig:
    mpd_periods: tuple[int, ...] = (2, 3, 5, 7, 11)
    msd_pool_factors: tuple[int, ...] = (1, 2, 4)
    mpd_channels: tuple[int, ...] = (8, 16, 32, 64)
    mpd_kernel: int = 5
    mpd_stride: int = 3
    msd_channels: tuple[int, ...] = (8, 16, 32, 64)
    leaky_slope: float = 0.1

    def validate(self) -> None:
        if len(self.mpd_periods) != 5:
            raise ConfigError(f"expected 5 period blocks, got {len(self.mpd_periods)}")
        if len(self.msd_pool_factors) != 3:
            raise ConfigError(f"expected 3 scale blocks, got {len(self.msd_pool_factors)}")
        if not self.mpd_channels or not self.msd_channels:
            raise ConfigError("channel ladders must be non-empty")
        for i, c in enumerate(self.msd_channels[1:], start=1):
            g = self._msd_groups(i)
            if c % g or self.msd_channels[i - 1] % g:
                raise ConfigError("grouped scale convs need divisible channel counts")

    @property
    def num_blocks(self) -> int:
        return len(self.mpd_periods) + len(self.msd_pool_factors)

    def _msd_groups(self, layer: int) -> int:
        # first conv ungrouped, later ones grouped like the wide original
        return 1 if layer == 0 else min(4, self.msd_channels[layer - 1])


# scale-block layer plan: (kernel, stride) per ladder layer, then a
# same-length conv and a 1-channel patch head
_MSD_KERNELS = (15, 41, 41, 41)
_MSD_STRIDES = (1, 2, 4, 4)


def discriminator_param_shapes(cfg: DiscriminatorConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for p in cfg.mpd_periods:
        prev = 1
        for i, c in enumerate(cfg.mpd_channels):
            shapes[f"mpd{p}.c{i}.w"] = (c, prev, cfg.mpd_kernel, 1)
            shapes[f"mpd{p}.c{i}.b"] = (c,)
            prev = c
        shapes[f"mpd{p}.post.w"] = (prev, prev, cfg.mpd_kernel, 1)
        shapes[f"mpd{p}.post.b"] = (prev,)
        shapes[f"mpd{p}.head.w"] = (1, prev, 3, 1)
        shapes[f"mpd{p}.head.b"] = (1,)
    for f in cfg.msd_pool_factors:
        prev = 1
        for i, c in enumerate(cfg.msd_channels):
            k = _MSD_KERNELS[min(i, len(_MSD_KERNELS) - 1)]
            g = cfg._msd_groups(i)
            shapes[f"msd{f}.c{i}.w"] = (c, prev // g, k)
            shapes[f"msd{f}.c{i}.b"] = (c,)
            prev = c
        shapes[f"msd{f}.post.w"] = (prev, prev, 5)
        shapes[f"msd{f}.post.b"] = (prev,)
        shapes[f"msd{f}.head.w"] = (1, prev, 3)
        shapes[f"msd{f}.head.b"] = (1,)
    return shapes


def count_params(cfg: DiscriminatorConfig) -> int:
    return sum(int(np.prod(s)) for s in discriminator_param_shapes(cfg).values())


def init_discriminator_params(cfg: DiscriminatorConfig, rng: np.random.Generator,
                              weight_std: float = 0.01) -> dict[str, tc.Tensor]:
    params = {}
    for name, shape in discriminator_param_shapes(cfg).items():
        if name.endswith(".b"):
            params[name] = tc.zeros_param(shape)
        else:
            params[name] = tc.randn_param(shape, rng, weight_std)
    return params


@dataclass
class DiscriminatorOutput:
    """K patch-score maps and, per block, the intermediate feature maps."""

    scores: list[tc.Tensor]
    feature_maps: list[list[tc.Tensor]]

    def __post_init__(self):
        if len(self.scores) != len(self.feature_maps):
            raise ContractError("scores and feature maps must pair up per block")


def mpd_forward(params: dict[str, tc.Tensor], cfg: DiscriminatorConfig,
                wav: tc.Tensor, period: int) -> tuple[tc.Tensor, list[tc.Tensor]]:
    """Period block: reflect-pad to a multiple of ``period``, view as 2D, conv."""
    batched = wav.ndim == 3
    x = wav if batched else tc.reshape(wav, (1,) + wav.shape)
    n, ch, length = x.shape
    if ch != 1:
        raise DimensionError(f"expected mono waveforms, got {ch} channels")
    if length < period:
        raise ContractError(f"waveform of {length} samples shorter than period {period}")
    rem = length % period
    if rem:
        x = tc.pad1d(x, (0, period - rem), mode="reflect")
        length += period - rem
    x = tc.reshape(x, (n, 1, length // period, period))

    feats = []
    pad = ((cfg.mpd_kernel - 1) // 2, 0)
    h = x
    for i in range(len(cfg.mpd_channels)):
        h = tc.conv2d(h, params[f"mpd{period}.c{i}.w"], params[f"mpd{period}.c{i}.b"],
                      stride=(cfg.mpd_stride, 1), padding=pad)
        h = tc.leaky_relu(h, cfg.leaky_slope)
        feats.append(h)
    h = tc.conv2d(h, params[f"mpd{period}.post.w"], params[f"mpd{period}.post.b"], padding=pad)
    h = tc.leaky_relu(h, cfg.leaky_slope)
    feats.append(h)
    score = tc.conv2d(h, params[f"mpd{period}.head.w"], params[f"mpd{period}.head.b"],
                      padding=(1, 0))
    return score, feats


def msd_forward(params: dict[str, tc.Tensor], cfg: DiscriminatorConfig,
                wav: tc.Tensor, pool_factor: int) -> tuple[tc.Tensor, list[tc.Tensor]]:
    """Scale block: average-pool by the factor, then a grouped conv ladder."""
    batched = wav.ndim == 3
    x = wav if batched else tc.reshape(wav, (1,) + wav.shape)
    if x.shape[1] != 1:
        raise DimensionError(f"expected mono waveforms, got {x.shape[1]} channels")
    if x.shape[-1] < pool_factor:
        raise ContractError(f"waveform shorter than pool factor {pool_factor}")
    h = x if pool_factor == 1 else tc.avg_pool1d(x, pool_factor, pool_factor)

    feats = []
    for i in range(len(cfg.msd_channels)):
        k = _MSD_KERNELS[min(i, len(_MSD_KERNELS) - 1)]
        s = _MSD_STRIDES[min(i, len(_MSD_STRIDES) - 1)]
        h = tc.conv1d(h, params[f"msd{pool_factor}.c{i}.w"], params[f"msd{pool_factor}.c{i}.b"],
                      stride=s, padding=(k - 1) // 2, groups=cfg._msd_groups(i))
        h = tc.leaky_relu(h, cfg.leaky_slope)
        feats.append(h)
    h = tc.conv1d(h, params[f"msd{pool_factor}.post.w"], params[f"msd{pool_factor}.post.b"], padding=2)
    h = tc.leaky_relu(h, cfg.leaky_slope)
    feats.append(h)
    score = tc.conv1d(h, params[f"msd{pool_factor}.head.w"], params[f"msd{pool_factor}.head.b"],
                      padding=1)
    return score, feats


class Discriminator:
    """Ensemble of 5 period blocks plus 3 scale blocks over raw waveforms."""

    def __init__(self, cfg: DiscriminatorConfig, params: dict[str, tc.Tensor]):
        cfg.validate()
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg: DiscriminatorConfig, rng: np.random.Generator) -> "Discriminator":
        cfg.validate()
        return cls(cfg, init_discriminator_params(cfg, rng))

    def forward(self, wav: tc.Tensor) -> DiscriminatorOutput:
        length = wav.shape[-1]
        needed = max(max(self.cfg.mpd_periods), max(self.cfg.msd_pool_factors))
        if length < needed:
            raise ContractError(f"waveform of {length} samples too short for this discriminator")
        scores, fmaps = [], []
        for p in self.cfg.mpd_periods:
            s, f = mpd_forward(self.params, self.cfg, wav, p)
            scores.append(s)
            fmaps.append(f)
        for fac in self.cfg.msd_pool_factors:
            s, f = msd_forward(self.params, self.cfg, wav, fac)
            scores.append(s)
            fmaps.append(f)
        return DiscriminatorOutput(scores, fmaps)

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())
