"""Small conditional encoder-decoder predicting the clean image.

The network sees the current diffusion state concatenated channel-wise with
the upsampled conditioning image, plus a sinusoidal timestep embedding
injected additively at every resolution level. Its raw output is a delta on
top of the conditioning image, so a zero-initialized head makes the
untrained model an exact pass-through of the interpolation baseline.

SiLU activations and group normalization throughout; both are smooth, which
the finite-difference gradient checks rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .imaging import ImagePlane


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 32
    depth: int = 3
    time_embed_dim: int = 128
    image_channels: int = 3

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ValueError(f"time_embed_dim must be even and >= 2, got {self.time_embed_dim}")
        if self.image_channels not in (1, 3):
            raise ValueError(f"image_channels must be 1 or 3, got {self.image_channels}")

    @property
    def in_channels(self) -> int:
        # diffusion state + conditioning image, concatenated
        return 2 * self.image_channels

    @property
    def out_channels(self) -> int:
        return self.image_channels

    @property
    def level_channels(self) -> tuple[int, ...]:
        # widths per resolution level, capped at 4x base
        return tuple(self.base_channels * min(2**i, 4) for i in range(self.depth + 1))


def sinusoid_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Batched sinusoidal embedding, pairs (sin(t*w_k), cos(t*w_k)) with
    w_k = 10000**(-2k/dim)."""
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    k = torch.arange(half, dtype=t.dtype, device=t.device)
    freq = torch.pow(torch.tensor(10000.0, dtype=t.dtype), -2.0 * k / dim)
    angles = t[:, None] * freq[None, :]
    emb = torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1)
    return emb.reshape(t.shape[0], dim)


def time_embedding(t: int, dim: int) -> np.ndarray:
    """Embedding vector for a single timestep, as float64."""
    if t < 1:
        raise ValueError(f"timestep must be >= 1, got {t}")
    vec = sinusoid_embedding(torch.tensor([float(t)], dtype=torch.float64), dim)
    return vec[0].numpy()


def _norm_groups(channels: int) -> int:
    # group size must stay >= 2: with one channel per group the normalization
    # exactly cancels the per-channel time-embedding bias added before norm2
    for g in (8, 4, 2):
        if channels % g == 0 and channels // g >= 2:
            return g
    return 1


class _ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_norm_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(_norm_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()
        self.act = nn.SiLU()

    def forward(self, x, temb):
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.time_proj(self.act(temb))[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return h + self.skip(x)


class Denoiser(nn.Module):
    """U-shaped conditional predictor; forward takes NCHW tensors."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        chans = config.level_channels
        tdim = config.time_embed_dim

        self.time_mlp = nn.Sequential(
            nn.Linear(tdim, tdim), nn.SiLU(), nn.Linear(tdim, tdim)
        )
        self.stem = nn.Conv2d(config.in_channels, chans[0], 3, padding=1)
        self.enc_blocks = nn.ModuleList(
            _ResBlock(chans[i], chans[i + 1], tdim) for i in range(config.depth)
        )
        self.downs = nn.ModuleList(
            nn.Conv2d(chans[i + 1], chans[i + 1], 3, stride=2, padding=1)
            for i in range(config.depth)
        )
        self.mid = _ResBlock(chans[-1], chans[-1], tdim)
        self.up_convs = nn.ModuleList(
            nn.Conv2d(chans[i + 1], chans[i + 1], 3, padding=1)
            for i in reversed(range(config.depth))
        )
        self.dec_blocks = nn.ModuleList(
            _ResBlock(2 * chans[i + 1], chans[i], tdim)
            for i in reversed(range(config.depth))
        )
        self.head_norm = nn.GroupNorm(_norm_groups(chans[0]), chans[0])
        self.head = nn.Conv2d(chans[0], config.out_channels, 3, padding=1)
        self.act = nn.SiLU()

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, y_t: torch.Tensor, t: torch.Tensor, lr_up: torch.Tensor) -> torch.Tensor:
        temb = self.time_mlp(sinusoid_embedding(t.to(y_t.dtype), self.config.time_embed_dim))
        h = self.stem(torch.cat([y_t, lr_up], dim=1))
        skips = []
        for block, down in zip(self.enc_blocks, self.downs):
            h = block(h, temb)
            skips.append(h)
            h = down(h)
        h = self.mid(h, temb)
        for up_conv, block in zip(self.up_convs, self.dec_blocks):
            h = nn.functional.interpolate(h, scale_factor=2, mode="nearest")
            h = up_conv(h)
            h = block(torch.cat([h, skips.pop()], dim=1), temb)
        delta = self.head(self.act(self.head_norm(h)))
        return lr_up + delta


def build_denoiser(config: DenoiserConfig, seed: int) -> Denoiser:
    """Construct and initialize: hidden weights ~ N(0, sqrt(2/fan_in)),
    biases zero, zero head. Same seed gives identical parameters."""
    model = Denoiser(config)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                module.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
                module.bias.zero_()
            elif isinstance(module, nn.Linear):
                module.weight.normal_(0.0, math.sqrt(2.0 / module.in_features), generator=gen)
                module.bias.zero_()
        model.head.weight.zero_()
        model.head.bias.zero_()
    return model


def _to_nchw(img: ImagePlane) -> torch.Tensor:
    arr = img.data.transpose(2, 0, 1).astype(np.float32)
    return torch.from_numpy(arr)[None]


def check_weights_finite(model: Denoiser) -> None:
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise RuntimeError(f"denoiser weights contain non-finite values ({name})")


def predict(model: Denoiser, y_t: ImagePlane, t: int, lr_up: ImagePlane) -> ImagePlane:
    """Clean-image estimate for one state; pure given fixed weights."""
    cfg = model.config
    if y_t.shape != lr_up.shape:
        raise ValueError(f"predict: shape mismatch {y_t.shape} vs {lr_up.shape}")
    if y_t.channels != cfg.image_channels:
        raise ValueError(
            f"predict: expected {cfg.image_channels} channels, got {y_t.channels}"
        )
    div = 2**cfg.depth
    if y_t.height % div or y_t.width % div:
        raise ValueError(
            f"predict: spatial size {y_t.height}x{y_t.width} not divisible by {div}"
        )
    if t < 1:
        raise ValueError(f"predict: timestep must be >= 1, got {t}")
    check_weights_finite(model)
    model.eval()
    with torch.no_grad():
        out = model(_to_nchw(y_t), torch.tensor([float(t)]), _to_nchw(lr_up))
    arr = out[0].numpy().astype(np.float64).transpose(1, 2, 0)
    return ImagePlane.from_array(arr)
