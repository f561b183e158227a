"""Latent image codec: pixels at HxW to a 4-channel (H/8)x(W/8) code.

Default is a fixed linear transform, no pretraining: per 8x8 block the
code holds the (scaled) mean RGB plus one vertical luma-gradient
coefficient; decoding replays them. A small trainable convolutional
autoencoder is available as an alternative.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .core import LATENT_FACTOR, ImageFrame

LATENT_CHANNELS = 4

# scale block means into roughly unit-variance diffusion latents
_MEAN_SCALE = 1.6
_GRAD_SCALE = 6.0
_LUMA = (0.299, 0.587, 0.114)


class BlockLinearCodec(nn.Module):
    """Fixed, deterministic codec (no learned parameters)."""

    trainable = False

    def __init__(self):
        super().__init__()
        f = LATENT_FACTOR
        enc = torch.zeros(LATENT_CHANNELS, 3, f, f)
        for c in range(3):
            enc[c, c] = _MEAN_SCALE / (f * f)
        ramp = (torch.arange(f, dtype=torch.float64) - (f - 1) / 2).double()
        ramp = (ramp / ramp.norm()).float()  # zero-mean, unit-norm column
        for c, wl in enumerate(_LUMA):
            enc[3, c] = _GRAD_SCALE * wl * ramp[:, None] / f
        self.register_buffer("enc_weight", enc)

        dec = torch.zeros(3, LATENT_CHANNELS, f, f)
        for c in range(3):
            dec[c, c] = 1.0 / _MEAN_SCALE
            dec[c, 3] = ramp[:, None] / _GRAD_SCALE * f
        self.register_buffer("dec_weight", dec)
        self.register_buffer("bias_shift", torch.tensor(0.5 * _MEAN_SCALE))

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """images: B x 3 x H x W in [0,1] -> B x 4 x H/8 x W/8."""
        z = torch.nn.functional.conv2d(images, self.enc_weight, stride=LATENT_FACTOR)
        z[:, :3] = z[:, :3] - self.bias_shift
        return z

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        z = latents.clone()
        z[:, :3] = z[:, :3] + self.bias_shift
        out = torch.nn.functional.conv_transpose2d(
            z, self.dec_weight.transpose(0, 1), stride=LATENT_FACTOR
        )
        return out.clamp(0.0, 1.0)


class ConvAutoencoderCodec(nn.Module):
    """Small trainable autoencoder with the same 8x downscale contract."""

    trainable = True

    # keep latents bounded so the diffusion prior sees a consistent scale
    LATENT_BOUND = 1.5

    def __init__(self, width: int = 32):
        super().__init__()
        self.width = width
        w = width
        self.encoder = nn.Sequential(
            nn.Conv2d(3, w, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(w, w, 3, padding=1), nn.SiLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 3, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, LATENT_CHANNELS, 1), nn.Tanh(),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(LATENT_CHANNELS, 2 * w, 3, padding=1), nn.SiLU(),
            nn.ConvTranspose2d(2 * w, 2 * w, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 3, padding=1), nn.SiLU(),
            nn.ConvTranspose2d(2 * w, w, 4, stride=2, padding=1), nn.SiLU(),
            nn.ConvTranspose2d(w, w, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(w, 3, 3, padding=1),
        )

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        return self.encoder(images) * self.LATENT_BOUND

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        return self.decoder(latents).clamp(0.0, 1.0)


def build_codec(kind: str = "block") -> nn.Module:
    if kind == "block":
        return BlockLinearCodec()
    if kind == "conv":
        return ConvAutoencoderCodec()
    raise ValueError(f"unknown codec kind: {kind}")


def frames_to_tensor(frames: list[ImageFrame] | ImageFrame) -> torch.Tensor:
    if isinstance(frames, ImageFrame):
        frames = [frames]
    arr = np.stack([f.pixels for f in frames]).astype(np.float32)
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def tensor_to_frames(t: torch.Tensor) -> list[ImageFrame]:
    arr = t.detach().permute(0, 2, 3, 1).numpy().astype(np.float64)
    return [ImageFrame(np.clip(a, 0, 1)) for a in arr]


def pretrain_codec(codec: nn.Module, images: torch.Tensor, steps: int = 500,
                   lr: float = 1e-3, batch: int = 32, seed: int = 0) -> list[float]:
    """L1 reconstruction pretraining for the conv codec."""
    if not codec.trainable:
        return []
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(codec.parameters(), lr=lr)
    losses = []
    for _ in range(steps):
        idx = torch.randint(0, images.shape[0], (batch,), generator=gen)
        x = images[idx]
        loss = (codec.decode(codec.encode(x)) - x).abs().mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    return losses


# lr staircase that reaches a sub-0.03 L1 floor on the synthetic corpus
PRETRAIN_PHASES = ((1500, 2e-3), (1500, 5e-4), (1000, 2e-4))


def train_conv_codec(images: torch.Tensor, seed: int = 0, width: int = 32,
                     phases=PRETRAIN_PHASES) -> nn.Module:
    """Build and pretrain a conv codec on a stack of frames."""
    torch.manual_seed(seed)
    codec = ConvAutoencoderCodec(width=width)
    for i, (steps, lr) in enumerate(phases):
        pretrain_codec(codec, images, steps=steps, lr=lr, seed=seed + i)
    codec.eval()
    return codec


def save_codec(path, codec: ConvAutoencoderCodec) -> None:
    import pathlib

    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {"kind": "codec", "config": {"width": codec.width},
         "state_dict": codec.state_dict()},
        path,
    )


def load_codec(path) -> ConvAutoencoderCodec:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("kind") != "codec":
        raise ValueError(f"{path}: not a codec checkpoint")
    codec = ConvAutoencoderCodec(**payload["config"])
    codec.load_state_dict(payload["state_dict"])
    codec.eval()
    return codec
