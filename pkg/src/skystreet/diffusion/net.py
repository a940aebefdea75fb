"""Multi-frame latent denoiser.

The stack of N aerial frames plus one ground frame is processed as a batch of
2D latents through a small UNet; the middle block mixes information with
(a) attention along the frame axis at each spatial location, (b) spatial
attention within each frame, and (c) cross-attention from latent pixels to
the point-render tokens.  Frame-axis attention carries no positional
encoding, so the net is equivariant to permutations of the aerial frames;
the ground frame is distinguished only by a learned frame-type embedding.
Conditioning enters as time embedding + camera embedding + frame-type
embedding added inside every residual block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..errors import DataError
from ..geom import Camera
from .codec import LATENT_CHANNELS, LATENT_RES
from .tokens import TOKEN_DIM


@dataclass(frozen=True)
class FrameStack:
    """(N+1, 32, 32, 4) latents: frames 0..N-1 aerial, frame N ground."""

    latents: np.ndarray

    def __post_init__(self):
        lat = np.asarray(self.latents)
        if lat.ndim != 4 or lat.shape[1:] != (LATENT_RES, LATENT_RES, LATENT_CHANNELS) or lat.shape[0] < 2:
            raise DataError(
                f"FrameStack: expected (N+1, {LATENT_RES}, {LATENT_RES}, {LATENT_CHANNELS}) "
                f"with N >= 1, got {lat.shape}"
            )
        object.__setattr__(self, "latents", lat)

    @property
    def num_frames(self) -> int:
        return self.latents.shape[0]

    @property
    def n_refs(self) -> int:
        return self.latents.shape[0] - 1


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 64
    channel_mult: tuple[int, ...] = (1, 2)
    heads: int = 4
    time_dim: int = 128
    cam_feature_dim: int = 20

    def __post_init__(self):
        if self.base_channels % 8 != 0:
            raise DataError(f"base_channels must be divisible by 8, got {self.base_channels}")
        mid = self.base_channels * self.channel_mult[-1]
        if mid % self.heads != 0:
            raise DataError(f"heads must divide middle width {mid}, got {self.heads}")
        if len(self.channel_mult) != 2:
            raise DataError("this UNet is fixed at two stages (channel_mult of length 2)")

    def to_dict(self) -> dict:
        return {
            "base_channels": self.base_channels,
            "channel_mult": list(self.channel_mult),
            "heads": self.heads,
            "time_dim": self.time_dim,
            "cam_feature_dim": self.cam_feature_dim,
        }

    @staticmethod
    def from_dict(d: dict) -> "DenoiserConfig":
        d = dict(d)
        d["channel_mult"] = tuple(d["channel_mult"])
        return DenoiserConfig(**d)


def camera_feature(camera: Camera, scene_diameter: float) -> np.ndarray:
    """20 numbers: flattened 4x4 world-from-camera with translation divided by
    scene diameter, plus intrinsics normalized by image size."""
    m = camera.pose.matrix().copy()
    m[:3, 3] /= scene_diameter
    intr = camera.intrinsics
    extra = np.array(
        [intr.fx / intr.width, intr.fy / intr.height, intr.cx / intr.width, intr.cy / intr.height]
    )
    return np.concatenate([m.reshape(-1), extra])


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """(B,) steps -> (B, dim) sin/cos features."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / (half - 1)
    )
    ang = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


def _groups(ch: int) -> int:
    return min(8, ch)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, cond_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.cond = nn.Linear(cond_dim, cout)
        self.norm2 = nn.GroupNorm(_groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.cond(torch.nn.functional.silu(c))[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return self.skip(x) + h


class SelfAttention(nn.Module):
    """Pre-norm multi-head self-attention over (B, L, C); no positional encoding."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim, bias=False)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, l, c = x.shape
        h = self.heads
        q, k, v = self.qkv(self.norm(x)).chunk(3, dim=-1)
        q = q.view(b, l, h, c // h).transpose(1, 2)
        k = k.view(b, l, h, c // h).transpose(1, 2)
        v = v.view(b, l, h, c // h).transpose(1, 2)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(c // h), dim=-1)
        out = (att @ v).transpose(1, 2).reshape(b, l, c)
        return x + self.proj(out)


class CrossAttention(nn.Module):
    """Latent pixels attend to point-render tokens."""

    def __init__(self, dim: int, token_dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm = nn.LayerNorm(dim)
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(token_dim, dim, bias=False)
        self.v = nn.Linear(token_dim, dim, bias=False)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        b, l, c = x.shape
        h = self.heads
        q = self.q(self.norm(x)).view(b, l, h, c // h).transpose(1, 2)
        k = self.k(tokens).view(b, tokens.shape[1], h, c // h).transpose(1, 2)
        v = self.v(tokens).view(b, tokens.shape[1], h, c // h).transpose(1, 2)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(c // h), dim=-1)
        out = (att @ v).transpose(1, 2).reshape(b, l, c)
        return x + self.proj(out)


class DenoiserNet(nn.Module):
    def __init__(self, config: DenoiserConfig = DenoiserConfig(), init_seed: int = 0):
        super().__init__()
        self.config = config
        cb = config.base_channels
        c1 = cb * config.channel_mult[0]
        c2 = cb * config.channel_mult[1]
        td = config.time_dim

        self.time_mlp = nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
        self.cam_embed = nn.Linear(config.cam_feature_dim, td)
        self.frame_type = nn.Embedding(2, td)  # 0 = aerial, 1 = ground
        self.token_adapter = nn.Sequential(
            nn.Linear(TOKEN_DIM, TOKEN_DIM), nn.SiLU(), nn.Linear(TOKEN_DIM, TOKEN_DIM)
        )

        self.stem = nn.Conv2d(LATENT_CHANNELS, c1, 3, padding=1)
        self.res_down1 = ResBlock(c1, c1, td)
        self.down1 = nn.Conv2d(c1, c1, 3, stride=2, padding=1)
        self.res_down2 = ResBlock(c1, c2, td)
        self.down2 = nn.Conv2d(c2, c2, 3, stride=2, padding=1)

        self.res_mid1 = ResBlock(c2, c2, td)
        self.frame_attn = SelfAttention(c2, config.heads)
        self.spatial_attn = SelfAttention(c2, config.heads)
        self.cross_attn = CrossAttention(c2, TOKEN_DIM, config.heads)
        self.res_mid2 = ResBlock(c2, c2, td)

        self.up2 = nn.Conv2d(c2, c2, 3, padding=1)
        self.res_up2 = ResBlock(c2 + c2, c2, td)
        self.up1 = nn.Conv2d(c2, c2, 3, padding=1)
        self.res_up1 = ResBlock(c2 + c1, c1, td)
        self.out_norm = nn.GroupNorm(_groups(c1), c1)
        self.out_conv = nn.Conv2d(c1, LATENT_CHANNELS, 3, padding=1)

        self._seeded_init(init_seed)

    def _seeded_init(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight[0].numel()
                with torch.no_grad():
                    m.weight.normal_(0.0, 1.0 / math.sqrt(fan_in), generator=gen)
                    if m.bias is not None:
                        m.bias.zero_()
            elif isinstance(m, (nn.GroupNorm, nn.LayerNorm)):
                with torch.no_grad():
                    m.weight.fill_(1.0)
                    m.bias.zero_()
            elif isinstance(m, nn.Embedding):
                with torch.no_grad():
                    m.weight.normal_(0.0, 0.02, generator=gen)
        # Zero-init the output projection: the untrained net predicts zero
        # noise, which keeps early training stable.
        with torch.no_grad():
            self.out_conv.weight.zero_()
            self.out_conv.bias.zero_()

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(
        self,
        x: torch.Tensor,  # (B, F, 4, 32, 32)
        t: torch.Tensor,  # (B,)
        cam_feats: torch.Tensor,  # (B, F, 20)
        tokens: torch.Tensor,  # (B, TOKEN_COUNT, TOKEN_DIM)
        ground_mask: torch.Tensor,  # (B, F) bool, True for the ground frame
    ) -> torch.Tensor:
        if x.ndim != 5 or x.shape[2:] != (LATENT_CHANNELS, LATENT_RES, LATENT_RES):
            raise DataError(f"denoiser: bad stack shape {tuple(x.shape)}")
        b, fn = x.shape[:2]
        if cam_feats.shape[:2] != (b, fn) or ground_mask.shape != (b, fn):
            raise DataError("denoiser: cam_feats/ground_mask do not match the stack")
        dtype = self.out_conv.weight.dtype

        temb = self.time_mlp(sinusoidal_embedding(t.to(dtype), self.config.time_dim))
        cond = temb[:, None, :] + self.cam_embed(cam_feats.to(dtype)) + self.frame_type(ground_mask.long())
        cond = cond.reshape(b * fn, -1)
        tok = self.token_adapter(tokens.to(dtype))
        tok = tok[:, None].expand(b, fn, *tok.shape[1:]).reshape(b * fn, *tok.shape[1:])

        h = x.to(dtype).reshape(b * fn, *x.shape[2:])
        h0 = self.stem(h)
        h1 = self.res_down1(h0, cond)
        h2 = self.res_down2(self.down1(h1), cond)
        m = self.res_mid1(self.down2(h2), cond)

        bf, c, hh, ww = m.shape
        # Frame axis: every spatial site attends across the F frames.
        m = m.reshape(b, fn, c, hh * ww).permute(0, 3, 1, 2).reshape(b * hh * ww, fn, c)
        m = self.frame_attn(m)
        m = m.reshape(b, hh * ww, fn, c).permute(0, 2, 3, 1).reshape(bf, c, hh, ww)
        # Spatial attention within each frame, then cross-attention to tokens.
        m = m.reshape(bf, c, hh * ww).transpose(1, 2)
        m = self.spatial_attn(m)
        m = self.cross_attn(m, tok)
        m = m.transpose(1, 2).reshape(bf, c, hh, ww)
        m = self.res_mid2(m, cond)

        u = self.up2(torch.nn.functional.interpolate(m, scale_factor=2, mode="nearest"))
        u = self.res_up2(torch.cat([u, h2], dim=1), cond)
        u = self.up1(torch.nn.functional.interpolate(u, scale_factor=2, mode="nearest"))
        u = self.res_up1(torch.cat([u, h1], dim=1), cond)
        out = self.out_conv(torch.nn.functional.silu(self.out_norm(u)))
        return out.reshape(b, fn, *x.shape[2:])

    def denoise(
        self,
        stack_latents: torch.Tensor,  # (F, 32, 32, 4) channels-last
        t: int,
        cam_feats: torch.Tensor,  # (F, 20)
        tokens: torch.Tensor,  # (TOKEN_COUNT, TOKEN_DIM)
        conditioned: bool = True,
    ) -> torch.Tensor:
        """Single-stack convenience wrapper; returns (F, 32, 32, 4) eps."""
        if stack_latents.ndim != 4 or stack_latents.shape[1:] != (LATENT_RES, LATENT_RES, LATENT_CHANNELS):
            raise DataError(f"denoise: bad stack shape {tuple(stack_latents.shape)}")
        fn = stack_latents.shape[0]
        x = stack_latents.permute(0, 3, 1, 2).unsqueeze(0)
        tok = tokens.unsqueeze(0)
        if not conditioned:
            tok = torch.zeros_like(tok)
        mask = torch.zeros(1, fn, dtype=torch.bool)
        mask[0, -1] = True
        tt = torch.tensor([t], dtype=torch.long)
        out = self.forward(x, tt, cam_feats.unsqueeze(0), tok, mask)
        return out[0].permute(0, 2, 3, 1)
