"""Fixed semantic image embedder: deterministic random-projection conv
features, 768-dim unit-norm. Stands in for a pretrained image encoder;
any callable ImageFrame-batch -> (B, 768) tensor can be substituted.
"""

from __future__ import annotations

import torch
import torch.nn as nn

EMBED_DIM = 768


class SemanticEmbedder(nn.Module):
    """Frozen conv stack with seeded Gaussian weights."""

    def __init__(self, seed: int = 1234, width: int = 48):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        w = width
        self.convs = nn.Sequential(
            nn.Conv2d(3, w, 5, stride=2, padding=2), nn.ReLU(),
            nn.Conv2d(w, w, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(2 * w, 2 * w, 3, stride=2, padding=1), nn.ReLU(),
        )
        self.proj = nn.Linear(2 * w * 2, EMBED_DIM)
        for p in self.parameters():
            nn.init.normal_(p, std=0.2, generator=gen)
            p.requires_grad_(False)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """images: B x 3 x H x W -> B x 768, L2-normalized."""
        h = self.convs(images)
        feat = torch.cat([h.mean(dim=(2, 3)), h.amax(dim=(2, 3))], dim=1)
        e = self.proj(feat)
        return e / e.norm(dim=1, keepdim=True).clamp_min(1e-8)
