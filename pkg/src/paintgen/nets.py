"""Shared network blocks: interval MLP, attention, and a small
encoder-decoder backbone with skip connections used by both the mask
generator and the diffusion denoiser.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

TOKEN_DIM = 768


class IntervalMLP(nn.Module):
    """21 -> 256 -> 512 -> 768, ReLU after every layer but the last."""

    def __init__(self):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(21, 256), nn.ReLU(),
            nn.Linear(256, 512), nn.ReLU(),
            nn.Linear(512, TOKEN_DIM),
        )

    def forward(self, pe21: torch.Tensor) -> torch.Tensor:
        return self.net(pe21)


def timestep_embedding(s: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = s.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, emb_dim: int | None = None):
        super().__init__()
        groups = 8 if in_ch % 8 == 0 else 1
        self.norm1 = nn.GroupNorm(groups, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(8 if out_ch % 8 == 0 else 1, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, out_ch) if emb_dim else None
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, emb=None):
        h = self.conv1(F.silu(self.norm1(x)))
        if self.emb_proj is not None and emb is not None:
            h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class SelfAttention(nn.Module):
    """Single-head self-attention over spatial tokens.

    Extra key/value tokens (reference features from a twin network) can
    be appended, which is how the target image is injected.
    """

    def __init__(self, ch: int):
        super().__init__()
        self.norm = nn.GroupNorm(8 if ch % 8 == 0 else 1, ch)
        self.qkv = nn.Conv2d(ch, 3 * ch, 1)
        self.out = nn.Conv2d(ch, ch, 1)
        self.ch = ch

    def tokens(self, x):
        """Pre-attention k/v tokens for export to a consumer network."""
        q, k, v = self.qkv(self.norm(x)).chunk(3, dim=1)
        b, c, h, w = k.shape
        return (
            k.reshape(b, c, h * w).transpose(1, 2),
            v.reshape(b, c, h * w).transpose(1, 2),
        )

    def forward(self, x, ref_kv=None):
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).chunk(3, dim=1)
        q = q.reshape(b, c, h * w).transpose(1, 2)
        k = k.reshape(b, c, h * w).transpose(1, 2)
        v = v.reshape(b, c, h * w).transpose(1, 2)
        if ref_kv is not None:
            rk, rv = ref_kv
            k = torch.cat([k, rk], dim=1)
            v = torch.cat([v, rv], dim=1)
        attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(c), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, c, h, w)
        return x + self.out(out)


class CrossAttention(nn.Module):
    """Single-head cross-attention against a 768-dim token sequence."""

    def __init__(self, ch: int, token_dim: int = TOKEN_DIM):
        super().__init__()
        self.norm = nn.GroupNorm(8 if ch % 8 == 0 else 1, ch)
        self.q = nn.Conv2d(ch, ch, 1)
        self.kv = nn.Linear(token_dim, 2 * ch)
        self.out = nn.Conv2d(ch, ch, 1)
        self.ch = ch

    def forward(self, x, tokens):
        b, c, h, w = x.shape
        q = self.q(self.norm(x)).reshape(b, c, h * w).transpose(1, 2)
        k, v = self.kv(tokens).chunk(2, dim=-1)
        attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(c), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, c, h, w)
        return x + self.out(out)


class AttnBundle(nn.Module):
    """Self-attention plus optional cross-attention at one station."""

    def __init__(self, ch: int, cross: bool):
        super().__init__()
        self.self_attn = SelfAttention(ch)
        self.cross_attn = CrossAttention(ch) if cross else None

    def forward(self, x, tokens=None, ref_kv=None):
        x = self.self_attn(x, ref_kv)
        if self.cross_attn is not None and tokens is not None:
            x = self.cross_attn(x, tokens)
        return x


class UNetBackbone(nn.Module):
    """3-level encoder-decoder with skips; attention at the two coarsest
    levels. Self-attention stations are indexed so a twin network's
    feature tokens can be fused station by station.
    """

    def __init__(self, in_ch: int, out_ch: int, base: int = 64,
                 emb_dim: int | None = 256, cross: bool = True,
                 zero_out: bool = True):
        super().__init__()
        c1, c2 = base, base * 2
        self.emb_dim = emb_dim
        self.conv_in = nn.Conv2d(in_ch, c1, 3, padding=1)
        self.down0 = ResBlock(c1, c1, emb_dim)
        self.pool1 = nn.Conv2d(c1, c1, 3, stride=2, padding=1)
        self.down1 = ResBlock(c1, c2, emb_dim)
        self.attn_d1 = AttnBundle(c2, cross)
        self.pool2 = nn.Conv2d(c2, c2, 3, stride=2, padding=1)
        self.down2 = ResBlock(c2, c2, emb_dim)
        self.attn_d2 = AttnBundle(c2, cross)
        self.mid = ResBlock(c2, c2, emb_dim)
        self.attn_mid = AttnBundle(c2, cross)
        self.up2 = ResBlock(2 * c2, c2, emb_dim)
        self.attn_u2 = AttnBundle(c2, cross)
        self.up1 = ResBlock(2 * c2, c1, emb_dim)
        self.attn_u1 = AttnBundle(c1, cross)
        self.up0 = ResBlock(2 * c1, c1, emb_dim)
        self.norm_out = nn.GroupNorm(8 if c1 % 8 == 0 else 1, c1)
        self.conv_out = nn.Conv2d(c1, out_ch, 3, padding=1)
        if zero_out:
            nn.init.zeros_(self.conv_out.weight)
            nn.init.zeros_(self.conv_out.bias)

    def _stations(self):
        return [self.attn_d1, self.attn_d2, self.attn_mid, self.attn_u2, self.attn_u1]

    def export_reference(self, x, emb=None):
        """Run the encoder-decoder and export k/v tokens from every
        self-attention station, for fusion into a twin network."""
        feats = []
        hook = lambda attn, h: feats.append(attn.self_attn.tokens(h))
        self._forward(x, emb, None, None, tap=hook)
        return feats

    def forward(self, x, emb=None, tokens=None, ref_feats=None):
        return self._forward(x, emb, tokens, ref_feats, tap=None)

    def _forward(self, x, emb, tokens, ref_feats, tap):
        refs = list(ref_feats) if ref_feats is not None else [None] * 5
        station = iter(zip(self._stations(), refs))

        def attend(h):
            attn, ref = next(station)
            if tap is not None:
                tap(attn, h)
            return attn(h, tokens, ref)

        h0 = self.down0(self.conv_in(x), emb)
        h1 = attend(self.down1(self.pool1(h0), emb))
        h2 = attend(self.down2(self.pool2(h1), emb))
        m = attend(self.mid(h2, emb))
        u2 = attend(self.up2(torch.cat([m, h2], dim=1), emb))
        u2 = F.interpolate(u2, scale_factor=2, mode="nearest")
        u1 = attend(self.up1(torch.cat([u2, h1], dim=1), emb))
        u1 = F.interpolate(u1, scale_factor=2, mode="nearest")
        u0 = self.up0(torch.cat([u1, h0], dim=1), emb)
        return self.conv_out(F.silu(self.norm_out(u0)))


class CanvasFeatureEncoder(nn.Module):
    """9-convolution shallow encoder; 8x downscale. Input is the current
    image with the full-resolution focus mask as a fourth channel."""

    def __init__(self, out_ch: int = 32):
        super().__init__()
        chans = [4, 24, 24, 32, 32, 48, 48, 32, 32, out_ch]
        strides = [2, 1, 2, 1, 2, 1, 1, 1, 1]
        layers = []
        for i, (ci, co, st) in enumerate(zip(chans[:-1], chans[1:], strides)):
            layers.append(nn.Conv2d(ci, co, 3, stride=st, padding=1))
            if i < 8:
                layers.append(nn.SiLU())
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class NextEmbeddingPredictor(nn.Module):
    """Predicts the semantic embedding of the next frame from the current
    and target embeddings: 1536 -> 768 -> 384 -> 768, ReLU except last."""

    def __init__(self):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(2 * TOKEN_DIM, 768), nn.ReLU(),
            nn.Linear(768, 384), nn.ReLU(),
            nn.Linear(384, TOKEN_DIM),
        )

    def forward(self, emb_current, emb_target):
        return self.net(torch.cat([emb_current, emb_target], dim=1))


class LabelEmbedder(nn.Module):
    """Learned per-label embedding, tiled to 77 tokens of width 768."""

    N_TOKENS = 77

    def __init__(self, vocab_size: int):
        super().__init__()
        self.table = nn.Embedding(vocab_size, TOKEN_DIM)
        nn.init.normal_(self.table.weight, std=0.3)

    def forward(self, label_ids: torch.Tensor) -> torch.Tensor:
        e = self.table(label_ids)
        return e[:, None, :].expand(-1, self.N_TOKENS, -1)
