"""Stage one: the text-instruction predictor and the conditional mask
generator, with their training loops.

The text predictor is a compact convolutional classifier over a closed
label vocabulary; an adapter slot (`TextAdapter`) lets an external
image-pair-to-string model replace it behind the same contract.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import (
    DEFAULT_ALPHA,
    ImageFrame,
    Instruction,
    RegionMask,
    Vocabulary,
    difference_mask,
    downsample_mask,
    positional_encode_interval,
    upsample_mask,
)
from .codec import frames_to_tensor
from .nets import IntervalMLP, LabelEmbedder, UNetBackbone
from .pairs import PairSet

log = logging.getLogger(__name__)


class TextAdapter(Protocol):
    """Anything that maps (target, current) image pair to a label string."""

    def __call__(self, target: ImageFrame, current: ImageFrame) -> str: ...


class TextGenerator(nn.Module):
    """Classifier over the horizontal concatenation [target | current].

    The concatenation is refolded into a 6-channel stack before the
    convolutions: deciding what to paint next hinges on per-pixel
    target/current comparisons, and a small CNN cannot relate pixels a
    half-canvas apart the way a large attention model can. The public
    input contract (one horizontally concatenated image) is unchanged.
    """

    def __init__(self, vocab: Vocabulary, width: int = 32):
        super().__init__()
        self.vocab = vocab
        w = width
        self.features = nn.Sequential(
            nn.Conv2d(6, w, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(w, w, 3, padding=1), nn.SiLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 3, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1), nn.SiLU(),
        )
        self.head = nn.Linear(8 * w, len(vocab))

    def forward(self, concat_images: torch.Tensor) -> torch.Tensor:
        """Log-probabilities; softmax of this sums to 1 by construction."""
        half = concat_images.shape[3] // 2
        x = torch.cat(
            [concat_images[..., :half], concat_images[..., half:]], dim=1
        )
        h = self.features(x)
        pooled = torch.cat([h.mean(dim=(2, 3)), h.amax(dim=(2, 3))], dim=1)
        return F.log_softmax(self.head(pooled), dim=1)

    def probabilities(self, target: ImageFrame, current: ImageFrame) -> np.ndarray:
        if not target.same_size(current):
            raise ValueError("target/current size mismatch")
        x = torch.cat(
            [frames_to_tensor(target), frames_to_tensor(current)], dim=3
        )
        with torch.no_grad():
            return torch.exp(self(x))[0].numpy().astype(np.float64)


def predict_text(gen: TextGenerator, target: ImageFrame, current: ImageFrame) -> Instruction:
    """Argmax label; ties resolve to the lowest label id (np.argmax)."""
    probs = gen.probabilities(target, current)
    return gen.vocab.by_id(int(np.argmax(probs)))


def _render_like(x: torch.Tensor, codec, rng: np.random.Generator) -> torch.Tensor:
    """Simulate an imperfect diffusion render of the same content: codec
    round trip plus channel gain/bias jitter and pixel noise, matched to
    the measured render error (~0.04 mean perceptual distance)."""
    g = torch.Generator().manual_seed(int(rng.integers(2**63)))
    out = codec.decode(codec.encode(x)) if codec is not None else x
    gain = 1.0 + (torch.rand((x.shape[0], 3, 1, 1), generator=g) - 0.5) * 0.10
    bias = (torch.rand((x.shape[0], 3, 1, 1), generator=g) - 0.5) * 0.06
    noise = torch.randn(out.shape, generator=g) * 0.02
    return (out * gain + bias + noise).clamp(0.0, 1.0)


@dataclass
class TextTrainConfig:
    steps: int = 2500
    batch: int = 64
    lr: float = 2e-3
    hflip: bool = True
    seed: int = 0
    log_every: int = 200


def train_text_generator(pairs: PairSet, cfg: TextTrainConfig = TextTrainConfig(),
                         val_pairs: PairSet | None = None,
                         aug_codec=None) -> TextGenerator:
    """Train the instruction classifier.

    At generation time the current canvas is a diffusion render, not an
    oracle frame; passing the latent codec as `aug_codec` round-trips a
    random half of the current frames through it so those canvases are
    in-distribution and the classifier does not stall on them."""
    if pairs.label_ids.numel() == 0:
        raise ValueError("dataset has no labeled transitions")
    torch.manual_seed(cfg.seed)
    gen = TextGenerator(pairs.vocab)
    opt = torch.optim.Adam(gen.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    n = len(pairs)
    for step in range(cfg.steps):
        idx = rng.integers(0, n, size=min(cfg.batch, n))
        batch = pairs.batch(idx)
        cur = batch["current"]
        if aug_codec is not None:
            sel = torch.from_numpy(rng.random(len(idx)) < 0.5)
            with torch.no_grad():
                rt = _render_like(cur, aug_codec, rng)
            cur = torch.where(sel[:, None, None, None], rt, cur)
        tgt = batch["target"]
        if cfg.hflip:
            flip = torch.from_numpy(rng.random(len(idx)) < 0.5)[:, None, None, None]
            cur = torch.where(flip, cur.flip(-1), cur)
            tgt = torch.where(flip, tgt.flip(-1), tgt)
        x = torch.cat([tgt, cur], dim=3)
        logp = gen(x)
        loss = F.nll_loss(logp, batch["label_ids"])
        opt.zero_grad()
        loss.backward()
        opt.step()
        if (step + 1) % cfg.log_every == 0 or step == cfg.steps - 1:
            msg = f"text step {step + 1}/{cfg.steps} loss {loss.item():.4f}"
            if val_pairs is not None:
                msg += f" val_acc {text_accuracy(gen, val_pairs):.3f}"
            log.info(msg)
    gen.eval()
    return gen


@torch.no_grad()
def text_accuracy(gen: TextGenerator, pairs: PairSet) -> float:
    hits = 0
    for i in range(len(pairs)):
        x = torch.cat([pairs.target(i), pairs.current(i)], dim=2)[None]
        pred = int(torch.exp(gen(x))[0].numpy().argmax())
        hits += pred == int(pairs.label_ids[i])
    return hits / max(len(pairs), 1)


# ---------------------------------------------------------------------------
# Mask generator


class MaskGenerator(nn.Module):
    """Encoder-decoder over the latent grid, cross-attending to 78 tokens
    (77 tiled label tokens + 1 interval token).

    Spatial input: 9 channels = 4 latent target + 4 latent current + 1
    downsampled difference mask. Output: 1-channel logits.
    """

    N_TOKENS = 78

    def __init__(self, vocab: Vocabulary, base: int = 48, use_text: bool = True):
        super().__init__()
        self.vocab = vocab
        self.use_text = use_text
        self.backbone = UNetBackbone(
            in_ch=9, out_ch=1, base=base, emb_dim=None, cross=True, zero_out=False
        )
        self.label_embedder = LabelEmbedder(len(vocab))
        self.time_mlp = IntervalMLP()

    def condition_tokens(self, label_ids: torch.Tensor, pe21: torch.Tensor) -> torch.Tensor:
        text = self.label_embedder(label_ids)
        if not self.use_text:
            text = torch.zeros_like(text)
        time_tok = self.time_mlp(pe21)[:, None, :]
        return torch.cat([text, time_tok], dim=1)

    def forward(self, spatial: torch.Tensor, label_ids: torch.Tensor,
                pe21: torch.Tensor) -> torch.Tensor:
        tokens = self.condition_tokens(label_ids, pe21)
        assert tokens.shape[1] == self.N_TOKENS
        return self.backbone(spatial, emb=None, tokens=tokens)


@dataclass
class MaskPrediction:
    latent: RegionMask
    full: RegionMask


@torch.no_grad()
def predict_mask(gen: MaskGenerator, codec, target: ImageFrame, current: ImageFrame,
                 label: Instruction, dt_s: float, alpha: float = DEFAULT_ALPHA,
                 metric=None) -> MaskPrediction:
    """Predict the next focus mask. The difference mask against the target
    is computed internally and fed as the ninth spatial channel."""
    if dt_s <= 0:
        raise ValueError("dt_s must be positive")
    md = downsample_mask(difference_mask(target, current, alpha, metric))
    zt = codec.encode(frames_to_tensor(target))
    zc = codec.encode(frames_to_tensor(current))
    md_t = torch.from_numpy(md.bits.astype(np.float32))[None, None]
    spatial = torch.cat([zt, zc, md_t], dim=1)
    pe = torch.from_numpy(
        positional_encode_interval(dt_s).pe21.astype(np.float32)
    )[None]
    label_ids = torch.as_tensor([label.label_id])
    logits = gen(spatial, label_ids, pe)[0, 0]
    soft = torch.sigmoid(logits).numpy().astype(np.float64)
    latent = RegionMask((soft > 0.5).astype(np.uint8), "latent", soft=soft)
    return MaskPrediction(latent=latent, full=upsample_mask(latent))


@dataclass
class MaskTrainConfig:
    # past ~1000 steps the no-text variant memorizes shape priors and the
    # text condition stops mattering; keep the budget short
    steps: int = 1000
    batch: int = 32
    lr: float = 4e-4
    weight_decay: float = 1e-4
    hflip: bool = True  # labels here are horizontally symmetric
    corrupt_p: float = 0.5  # render-like corruption of the current canvas
    terminal_p: float = 0.1  # current ~= target examples with empty masks
    irrelevant_p: float = 0.15  # label with no remaining work -> empty mask
    alpha: float = DEFAULT_ALPHA
    seed: int = 0
    use_text: bool = True
    base_width: int = 48
    log_every: int = 250


def _md_latent_batch(target: torch.Tensor, current: torch.Tensor,
                     alpha: float) -> torch.Tensor:
    """Recompute downsampled difference-to-target masks from pixels."""
    from .codec import tensor_to_frames

    tf, cf = tensor_to_frames(target), tensor_to_frames(current)
    mds = [
        downsample_mask(difference_mask(t, c, alpha)).bits
        for t, c in zip(tf, cf)
    ]
    return torch.from_numpy(np.stack(mds)[:, None].astype(np.float32))


def _mask_spatial(codec, batch: dict[str, torch.Tensor]) -> torch.Tensor:
    with torch.no_grad():
        zt = codec.encode(batch["target"])
        zc = codec.encode(batch["current"])
    return torch.cat([zt, zc, batch["md_latent"]], dim=1)


def train_mask_generator(pairs: PairSet, codec,
                         cfg: MaskTrainConfig = MaskTrainConfig()) -> MaskGenerator:
    """BCE on latent logits against the downsampled step mask, teacher
    forced on ground-truth labels and intervals."""
    if pairs.mt_latent.numel() == 0:
        raise ValueError("dataset has no masks")
    torch.manual_seed(cfg.seed)
    gen = MaskGenerator(pairs.vocab, base=cfg.base_width, use_text=cfg.use_text)
    opt = torch.optim.Adam(gen.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    n = len(pairs)
    for step in range(cfg.steps):
        idx = rng.integers(0, n, size=min(cfg.batch, n))
        batch = pairs.batch(idx)
        if cfg.hflip:
            flip = torch.from_numpy(rng.random(len(idx)) < 0.5)
            for key in ("current", "target", "mt_latent", "md_latent"):
                batch[key] = torch.where(
                    flip[:, None, None, None], batch[key].flip(-1), batch[key]
                )
        if cfg.corrupt_p > 0 or cfg.terminal_p > 0:
            # at generation time the canvas is an imperfect render, and the
            # loop must emit empty masks once the canvas matches the target
            term = rng.random(len(idx)) < cfg.terminal_p
            sel = (rng.random(len(idx)) < cfg.corrupt_p) & ~term
            with torch.no_grad():
                rt_cur = _render_like(batch["current"], codec, rng)
                rt_tgt = _render_like(batch["target"], codec, rng)
            cur = batch["current"]
            cur = torch.where(torch.from_numpy(sel)[:, None, None, None], rt_cur, cur)
            cur = torch.where(torch.from_numpy(term)[:, None, None, None], rt_tgt, cur)
            batch["current"] = cur
            batch["mt_latent"] = torch.where(
                torch.from_numpy(term)[:, None, None, None],
                torch.zeros_like(batch["mt_latent"]), batch["mt_latent"],
            )
            if (sel | term).any():
                batch["md_latent"] = _md_latent_batch(
                    batch["target"], batch["current"], cfg.alpha
                )
        if cfg.irrelevant_p > 0:
            # a label the painter will never apply again from this state
            # should produce an empty mask, otherwise the generation loop
            # happily paints regions that belong to other labels
            pend = pairs.pending[idx]
            for row in np.nonzero(rng.random(len(idx)) < cfg.irrelevant_p)[0]:
                absent = torch.nonzero(~pend[row]).flatten()
                if len(absent) == 0:
                    continue
                batch["label_ids"][row] = absent[int(rng.integers(len(absent)))]
                batch["mt_latent"][row].zero_()
        logits = gen(_mask_spatial(codec, batch), batch["label_ids"], batch["pe21"])
        loss = F.binary_cross_entropy_with_logits(logits, batch["mt_latent"])
        opt.zero_grad()
        loss.backward()
        opt.step()
        if (step + 1) % cfg.log_every == 0 or step == cfg.steps - 1:
            log.info(f"mask step {step + 1}/{cfg.steps} bce {loss.item():.4f}")
    gen.eval()
    return gen


def mask_iou(a: RegionMask, b: RegionMask) -> float:
    """IoU with the empty-vs-empty convention: both empty scores 1."""
    inter = int((a.bits & b.bits).sum())
    union = int((a.bits | b.bits).sum())
    if union == 0:
        return 1.0
    return inter / union
