"""Stage two: the multi-conditioned diffusion renderer.

The denoiser predicts noise on the 4-channel latent of the next frame.
Conditions: current canvas + focus mask (spatial, via the canvas feature
encoder), target image (reference features fused into self-attention),
text label tokens, predicted next-frame embedding token, and interval
token (cross-attention). Each condition can be nulled, which powers both
classifier-free guidance and the one-stage (no text/mask) variant.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .core import (
    ImageFrame,
    Instruction,
    RegionMask,
    Vocabulary,
    positional_encode_interval,
)
from .codec import build_codec, frames_to_tensor, tensor_to_frames
from .embedder import SemanticEmbedder
from .nets import (
    CanvasFeatureEncoder,
    IntervalMLP,
    LabelEmbedder,
    NextEmbeddingPredictor,
    UNetBackbone,
    timestep_embedding,
)
from .pairs import PairSet

log = logging.getLogger(__name__)

CONDITIONS = ("text", "mask", "time", "embed")


class NoiseSchedule:
    """Variance-preserving cosine schedule: signal^2 + noise^2 = 1."""

    def __init__(self, s_train: int = 1000, sampler_steps: int = 25):
        self.s_train = s_train
        self.sampler_steps = sampler_steps
        s = np.arange(s_train + 1) / s_train
        f = np.cos((s + 0.008) / 1.008 * np.pi / 2) ** 2
        alpha_bar = np.clip(f / f[0], 1e-8, 1.0)
        self.alpha_bar = alpha_bar[:-1]
        self.signal = np.sqrt(self.alpha_bar)
        self.noise = np.sqrt(1.0 - self.alpha_bar)

    def coeffs(self, s) -> tuple[torch.Tensor, torch.Tensor]:
        s = np.asarray(s)
        if (s < 0).any() or (s >= self.s_train).any():
            raise ValueError(f"step out of range [0, {self.s_train})")
        sig = torch.as_tensor(self.signal[s], dtype=torch.float32)
        noi = torch.as_tensor(self.noise[s], dtype=torch.float32)
        return sig, noi

    def sampler_schedule(self) -> np.ndarray:
        return np.unique(
            np.round(np.linspace(self.s_train - 1, 0, self.sampler_steps)).astype(int)
        )[::-1].copy()


def forward_diffuse(schedule: NoiseSchedule, z0: torch.Tensor, s,
                    noise: torch.Tensor) -> torch.Tensor:
    """z_s = signal(s) * z0 + noise(s) * eps under the VP schedule."""
    sig, noi = schedule.coeffs(s)
    shape = (-1,) + (1,) * (z0.ndim - 1)
    return sig.reshape(shape) * z0 + noi.reshape(shape) * noise


@dataclass
class GuidanceConfig:
    scale_text: float = 5.0
    scale_mask: float = 5.0
    scale_time: float = 5.0
    scale_embed: float = 2.0
    condition_dropout_p: float = 0.10

    def __post_init__(self):
        scales = (self.scale_text, self.scale_mask, self.scale_time, self.scale_embed)
        if any(w < 0 for w in scales):
            raise ValueError("guidance scales must be nonnegative")
        if not 0 <= self.condition_dropout_p < 1:
            raise ValueError("dropout must lie in [0, 1)")

    def scales(self) -> dict[str, float]:
        return {
            "text": self.scale_text,
            "mask": self.scale_mask,
            "time": self.scale_time,
            "embed": self.scale_embed,
        }


@dataclass
class RenderRequest:
    current: ImageFrame
    target: ImageFrame
    label: Instruction
    mask: RegionMask  # full resolution
    dt_s: float
    rng_seed: int = 0


class DenoiserBundle(nn.Module):
    """Denoiser + reference encoder + all condition encoders + codec."""

    def __init__(self, vocab: Vocabulary, base: int = 64, gf_channels: int = 32,
                 codec_kind: str = "block", embedder_seed: int = 1234):
        super().__init__()
        self.vocab = vocab
        self.g_u = UNetBackbone(
            in_ch=4 + gf_channels, out_ch=4, base=base, emb_dim=256, cross=True
        )
        self.g_r = UNetBackbone(in_ch=4, out_ch=4, base=base, emb_dim=256, cross=False)
        self.g_f = CanvasFeatureEncoder(out_ch=gf_channels)
        self.g_t = IntervalMLP()
        self.g_c = NextEmbeddingPredictor()
        self.label_embedder = LabelEmbedder(len(vocab))
        self.embedder = SemanticEmbedder(seed=embedder_seed)
        self.codec = build_codec(codec_kind)
        self.step_mlp = nn.Sequential(nn.Linear(128, 256), nn.SiLU(), nn.Linear(256, 256))
        self.register_buffer("trained_flag", torch.zeros(1))

    @property
    def trained(self) -> bool:
        return bool(self.trained_flag.item() > 0)

    def mark_trained(self):
        self.trained_flag.fill_(1.0)

    def condition_tokens(self, label_ids, pe21, emb_current, emb_target,
                         keep: dict[str, torch.Tensor]) -> torch.Tensor:
        """(B, 79, 768): 77 label tokens + next-embedding token + time token."""
        text = self.label_embedder(label_ids) * keep["text"][:, None, None]
        nxt = self.g_c(emb_current, emb_target)[:, None, :] * keep["embed"][:, None, None]
        time_tok = self.g_t(pe21)[:, None, :] * keep["time"][:, None, None]
        return torch.cat([text, nxt, time_tok], dim=1)

    def spatial_features(self, current, mask_full, keep_mask: torch.Tensor) -> torch.Tensor:
        x = torch.cat([current, mask_full * keep_mask[:, None, None, None]], dim=1)
        return self.g_f(x)

    def reference_features(self, target):
        return self.g_r.export_reference(self.codec.encode(target))

    def predict_noise(self, z_s, s, current, target, label_ids, pe21,
                      mask_full, keep: dict[str, torch.Tensor],
                      ref_feats=None) -> torch.Tensor:
        emb_c = self.embedder(current)
        emb_t = self.embedder(target)
        tokens = self.condition_tokens(label_ids, pe21, emb_c, emb_t, keep)
        gf = self.spatial_features(current, mask_full, keep["mask"])
        if ref_feats is None:
            ref_feats = self.reference_features(target)
        dtype = next(self.step_mlp.parameters()).dtype
        emb = self.step_mlp(timestep_embedding(s, 128).to(dtype))
        return self.g_u(torch.cat([z_s, gf], dim=1), emb=emb, tokens=tokens,
                        ref_feats=ref_feats)


def _keep_all(b: int) -> dict[str, torch.Tensor]:
    return {c: torch.ones(b) for c in CONDITIONS}


def training_step(bundle: DenoiserBundle, schedule: NoiseSchedule,
                  batch: dict[str, torch.Tensor], guidance_cfg: GuidanceConfig,
                  rng: torch.Generator, optimizer=None) -> float:
    """One denoising-score-matching step; returns the scalar MSE loss.

    Each of the four conditions is independently zeroed with the
    configured dropout probability. If an optimizer is passed, gradients
    are applied jointly to every trainable submodule.
    """
    b = batch["next"].shape[0]
    with torch.no_grad():
        z0 = bundle.codec.encode(batch["next"])
    s = torch.randint(0, schedule.s_train, (b,), generator=rng)
    eps = torch.randn(z0.shape, generator=rng)
    z_s = forward_diffuse(schedule, z0, s.numpy(), eps)
    p = guidance_cfg.condition_dropout_p
    keep = {
        c: (torch.rand(b, generator=rng) >= p).float() for c in CONDITIONS
    }
    eps_hat = bundle.predict_noise(
        z_s, s, batch["current"], batch["target"], batch["label_ids"],
        batch["pe21"], batch["mt_full"], keep,
    )
    loss = ((eps_hat - eps) ** 2).mean()
    if not torch.isfinite(loss):
        raise RuntimeError(
            f"non-finite loss at step s={s.tolist()}: z0 range "
            f"[{z0.min():.3f}, {z0.max():.3f}]"
        )
    if optimizer is not None:
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    return float(loss.detach())


@dataclass
class RendererTrainConfig:
    steps: int = 4000
    batch: int = 16
    lr: float = 2e-4
    seed: int = 0
    base_width: int = 64
    codec_kind: str = "block"
    log_every: int = 250
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)


def train_renderer(pairs: PairSet, cfg: RendererTrainConfig = RendererTrainConfig(),
                   schedule: NoiseSchedule | None = None,
                   codec: nn.Module | None = None) -> DenoiserBundle:
    """Train the denoiser bundle. A pretrained codec can be passed in; its
    weights are copied into the bundle and frozen. The codec is never
    trained here regardless."""
    schedule = schedule or NoiseSchedule()
    torch.manual_seed(cfg.seed)
    bundle = DenoiserBundle(pairs.vocab, base=cfg.base_width, codec_kind=cfg.codec_kind)
    if codec is not None:
        bundle.codec.load_state_dict(codec.state_dict())
    bundle.codec.requires_grad_(False)
    params = [p for p in bundle.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr)
    rng = torch.Generator().manual_seed(cfg.seed)
    idx_rng = np.random.default_rng(cfg.seed)
    n = len(pairs)
    for step in range(cfg.steps):
        idx = idx_rng.integers(0, n, size=min(cfg.batch, n))
        loss = training_step(bundle, schedule, pairs.batch(idx), cfg.guidance, rng, opt)
        if (step + 1) % cfg.log_every == 0 or step == cfg.steps - 1:
            log.info(f"renderer step {step + 1}/{cfg.steps} mse {loss:.4f}")
    bundle.mark_trained()
    bundle.eval()
    return bundle


def derive_seed(*parts) -> int:
    """Stable seed derivation (not Python hash) for reproducible traces."""
    h = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "big") % (2**63)


@torch.no_grad()
def sample_next(bundle: DenoiserBundle, schedule: NoiseSchedule,
                req: RenderRequest, guidance_cfg: GuidanceConfig) -> ImageFrame:
    """Generate the next keyframe with 25 ancestral denoising steps.

    Composed classifier-free guidance: a fully-unconditional pass plus
    one single-condition pass per nonzero scale,
    eps = eps_null + sum_i w_i (eps_i - eps_null).
    All five passes run as one batched forward per step. Deterministic
    given the request seed.
    """
    if not bundle.trained:
        raise RuntimeError("bundle is untrained; call train_renderer first")
    gen = torch.Generator().manual_seed(req.rng_seed % (2**63))
    current = frames_to_tensor(req.current)
    target = frames_to_tensor(req.target)
    mask_full = torch.from_numpy(req.mask.bits.astype(np.float32))[None, None]
    pe21 = torch.from_numpy(
        positional_encode_interval(req.dt_s).pe21.astype(np.float32)
    )[None]
    label_ids = torch.as_tensor([req.label.label_id])

    scales = guidance_cfg.scales()
    passes = [dict.fromkeys(CONDITIONS, 0.0)]  # the unconditional pass
    active = [c for c in CONDITIONS if scales[c] > 0]
    for c in active:
        cfg_pass = dict.fromkeys(CONDITIONS, 0.0)
        cfg_pass[c] = 1.0
        passes.append(cfg_pass)
    nb = len(passes)
    keep = {c: torch.tensor([p[c] for p in passes]) for c in CONDITIONS}

    rep = lambda t: t.expand(nb, *t.shape[1:]).contiguous() if t.shape[0] == 1 else t
    cur_b, tgt_b = rep(current), rep(target)
    mask_b, pe_b = rep(mask_full), rep(pe21)
    ids_b = label_ids.expand(nb).contiguous()
    ref_feats = bundle.reference_features(tgt_b)

    h, w = req.current.height // 8, req.current.width // 8
    z = torch.randn((1, 4, h, w), generator=gen)
    steps = schedule.sampler_schedule()
    for i, s in enumerate(steps):
        s_b = torch.full((nb,), int(s))
        eps_all = bundle.predict_noise(
            rep(z), s_b, cur_b, tgt_b, ids_b, pe_b, mask_b, keep, ref_feats
        )
        eps = eps_all[0]
        for j, c in enumerate(active, start=1):
            eps = eps + scales[c] * (eps_all[j] - eps_all[0])
        sig, noi = schedule.coeffs([int(s)])
        x0 = ((z[0] - noi * eps) / sig).clamp(-1.6, 1.6)
        if i == len(steps) - 1:
            z = x0[None]
        else:
            s_next = int(steps[i + 1])
            sig_n, noi_n = schedule.coeffs([s_next])
            ab, ab_n = float(sig**2), float(sig_n**2)
            sigma = math.sqrt(
                max((1 - ab_n) / (1 - ab), 0.0) * max(1 - ab / ab_n, 0.0)
            )
            dir_coef = math.sqrt(max(float(noi_n**2) - sigma**2, 0.0))
            z = (sig_n * x0 + dir_coef * eps)[None] + sigma * torch.randn(
                (1, 4, h, w), generator=gen
            )
    out = bundle.codec.decode(z)
    return tensor_to_frames(out)[0]
