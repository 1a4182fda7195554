"""Waveform generator: GLU feature encoder, transposed-conv upsampling, MRF.

One generator maps a (optionally masked) mel-spectrogram plus its mask to a
raw waveform 256x longer than the frame count. The encoder and the mask
input are switchable so ablation variants construct genuinely different
graphs; parameter names are stable, which the checkpoint format relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc
from .errors import ConfigError, DimensionError

MEL_HOP = 256


@dataclass
class GeneratorConfig:
    mel_bins: int = 80
    glu_channels: int = 64
    glu_kernel: tuple[int, int] = (5, 15)
    upsample_rates: tuple[int, ...] = (8, 8, 2, 2)
    upsample_kernels: tuple[int, ...] = (16, 16, 4, 4)
    mrf_kernels: tuple[int, ...] = (2, 7, 11)
    mrf_dilations: tuple[int, ...] = (1, 3, 5)
    base_channels: int = 64
    pre_kernel: int = 7
    out_kernel: int = 7
    leaky_slope: float = 0.1
    use_glu_encoder: bool = True
    use_mask_input: bool = True

    def validate(self) -> None:
        if len(self.upsample_rates) != len(self.upsample_kernels):
            raise ConfigError("upsample rate/kernel lists differ in length")
        for u, k in zip(self.upsample_rates, self.upsample_kernels):
            if k != 2 * u:
                raise ConfigError(f"upsample kernel {k} must equal 2x stride {u}")
            if (k - u) % 2:
                raise ConfigError(f"(kernel - stride) must be even, got k={k}, u={u}")
        if int(np.prod(self.upsample_rates)) != MEL_HOP:
            raise ConfigError(
                f"upsample rates {self.upsample_rates} must multiply to the mel hop {MEL_HOP}")
        if len(self.mrf_kernels) != 3:
            raise ConfigError(f"expected 3 MRF kernels, got {len(self.mrf_kernels)}")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be positive")
        if self.use_glu_encoder and self.glu_channels < 1:
            raise ConfigError("glu_channels must be positive when the encoder is enabled")

    def block_channels(self, i: int) -> int:
        return max(self.base_channels >> i, 1)

    @property
    def input_channels(self) -> int:
        if self.use_glu_encoder:
            return self.glu_channels * self.mel_bins
        return 2 * self.mel_bins if self.use_mask_input else self.mel_bins


def _same_pad(kernel: int, dilation: int = 1) -> tuple[int, int]:
    total = dilation * (kernel - 1)
    return total // 2, total - total // 2


def generator_param_shapes(cfg: GeneratorConfig) -> dict[str, tuple[int, ...]]:
    """Stable name -> shape map; the single source for init and counting."""
    degenerate = (not cfg.upsample_rates and not cfg.use_glu_encoder
                  and cfg.base_channels == 0)
    if degenerate:
        return {}
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.use_glu_encoder:
        planes = 2 if cfg.use_mask_input else 1
        kh, kw = cfg.glu_kernel
        shapes["glu.w"] = (2 * cfg.glu_channels, planes, kh, kw)
        shapes["glu.b"] = (2 * cfg.glu_channels,)
    shapes["pre.w"] = (cfg.base_channels, cfg.input_channels, cfg.pre_kernel)
    shapes["pre.b"] = (cfg.base_channels,)
    for i, (u, k) in enumerate(zip(cfg.upsample_rates, cfg.upsample_kernels)):
        c_in, c_out = cfg.block_channels(i), cfg.block_channels(i + 1)
        shapes[f"up{i}.w"] = (c_in, c_out, k)
        shapes[f"up{i}.b"] = (c_out,)
        for j, kr in enumerate(cfg.mrf_kernels):
            for l in range(len(cfg.mrf_dilations)):
                shapes[f"up{i}.mrf{j}.sub{l}.c1.w"] = (c_out, c_out, kr)
                shapes[f"up{i}.mrf{j}.sub{l}.c1.b"] = (c_out,)
                shapes[f"up{i}.mrf{j}.sub{l}.c2.w"] = (c_out, c_out, kr)
                shapes[f"up{i}.mrf{j}.sub{l}.c2.b"] = (c_out,)
    final = cfg.block_channels(len(cfg.upsample_rates))
    shapes["out.w"] = (1, final, cfg.out_kernel)
    shapes["out.b"] = (1,)
    return shapes


def count_params(cfg: GeneratorConfig) -> int:
    return sum(int(np.prod(s)) for s in generator_param_shapes(cfg).values())


def init_generator_params(cfg: GeneratorConfig, rng: np.random.Generator,
                          weight_std: float = 0.01) -> dict[str, tc.Tensor]:
    params = {}
    for name, shape in generator_param_shapes(cfg).items():
        if name.endswith(".b"):
            params[name] = tc.zeros_param(shape)
        else:
            params[name] = tc.randn_param(shape, rng, weight_std)
    return params


def mrf_forward(block_params: dict[str, tc.Tensor], x: tc.Tensor,
                kernels: tuple[int, ...], dilations: tuple[int, ...],
                slope: float = 0.1) -> tc.Tensor:
    """Multi-receptive-field fusion: mean over parallel residual branches.

    Branch j uses kernel ``kernels[j]``; inside a branch, one residual
    sub-unit per dilation applies leaky_relu -> dilated conv -> leaky_relu
    -> conv with an additive skip. Length is preserved for any input.
    """
    branches = []
    for j, kr in enumerate(kernels):
        h = x
        for l, d in enumerate(dilations):
            y = tc.leaky_relu(h, slope)
            y = tc.conv1d(y, block_params[f"mrf{j}.sub{l}.c1.w"], block_params[f"mrf{j}.sub{l}.c1.b"],
                          padding=_same_pad(kr, d), dilation=d)
            y = tc.leaky_relu(y, slope)
            y = tc.conv1d(y, block_params[f"mrf{j}.sub{l}.c2.w"], block_params[f"mrf{j}.sub{l}.c2.b"],
                          padding=_same_pad(kr, 1))
            h = tc.add(h, y)
        branches.append(h)
    acc = branches[0]
    for b in branches[1:]:
        acc = tc.add(acc, b)
    return acc * (1.0 / len(branches))


class Generator:
    """Mel (+ mask) to waveform. Parameters live in a flat named dict."""

    def __init__(self, cfg: GeneratorConfig, params: dict[str, tc.Tensor]):
        cfg.validate()
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg: GeneratorConfig, rng: np.random.Generator) -> "Generator":
        cfg.validate()
        return cls(cfg, init_generator_params(cfg, rng))

    def _subparams(self, prefix: str) -> dict[str, tc.Tensor]:
        cut = len(prefix)
        return {k[cut:]: v for k, v in self.params.items() if k.startswith(prefix)}

    def forward(self, mel: tc.Tensor, mask: tc.Tensor | None = None) -> tc.Tensor:
        """Returns a waveform tensor [1, 256*T] (or [N, 1, 256*T])."""
        cfg = self.cfg
        batched = mel.ndim == 3
        x = mel if batched else tc.reshape(mel, (1,) + mel.shape)
        n, bins, frames = x.shape
        if bins != cfg.mel_bins:
            raise DimensionError(f"expected {cfg.mel_bins} mel bins, got {bins}")
        if cfg.use_mask_input:
            if mask is None:
                raise DimensionError("this generator requires a mask input")
            m = mask if mask.ndim == 3 else tc.reshape(mask, (1,) + mask.shape)
            if m.shape != x.shape:
                raise DimensionError(f"mask {m.shape} does not match mel {x.shape}")

        if cfg.use_glu_encoder:
            planes = [tc.reshape(x, (n, 1, bins, frames))]
            if cfg.use_mask_input:
                planes.append(tc.reshape(m, (n, 1, bins, frames)))
            h = tc.concat_channels(planes, axis=1)
            kh, kw = cfg.glu_kernel
            h = tc.conv2d(h, self.params["glu.w"], self.params["glu.b"],
                          padding=((kh - 1) // 2, (kw - 1) // 2))
            h = tc.glu(h, axis=1)
            h = tc.reshape(h, (n, cfg.glu_channels * bins, frames))
        elif cfg.use_mask_input:
            h = tc.concat_channels([x, m], axis=1)
        else:
            h = x

        h = tc.conv1d(h, self.params["pre.w"], self.params["pre.b"],
                      padding=(cfg.pre_kernel - 1) // 2)
        for i, (u, k) in enumerate(zip(cfg.upsample_rates, cfg.upsample_kernels)):
            h = tc.leaky_relu(h, cfg.leaky_slope)
            h = tc.conv_transpose1d(h, self.params[f"up{i}.w"], self.params[f"up{i}.b"],
                                    stride=u, padding=(k - u) // 2)
            h = mrf_forward(self._subparams(f"up{i}."), h,
                            cfg.mrf_kernels, cfg.mrf_dilations, cfg.leaky_slope)
        h = tc.leaky_relu(h, cfg.leaky_slope)
        h = tc.conv1d(h, self.params["out.w"], self.params["out.b"],
                      padding=(cfg.out_kernel - 1) // 2)
        out = tc.tanh(h)
        return out if batched else tc.reshape(out, out.shape[1:])

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())
