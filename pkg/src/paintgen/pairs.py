"""Transition-pair extraction: turns a dataset of sequences into the
teacher-forced training arrays shared by the text, mask, and renderer
training loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .core import (
    DEFAULT_ALPHA,
    RegionMask,
    Vocabulary,
    difference_mask,
    downsample_mask,
    positional_encode_interval,
)
from .dataset import DatasetManifest, load_records


@dataclass
class PairSet:
    """All transitions of one split, tensorized.

    Frames are stored once per sequence; pairs index into them.
    """

    frames: list[torch.Tensor]  # per sequence: (T+1, 3, H, W)
    seq_ids: list[str]
    pair_seq: np.ndarray  # (N,) sequence index
    pair_t: np.ndarray  # (N,) transition index, 1-based
    label_ids: torch.Tensor  # (N,)
    dt_s: torch.Tensor  # (N,)
    pe21: torch.Tensor  # (N, 21)
    mt_full: torch.Tensor  # (N, 1, H, W) step mask from D(I_t, I_t-1)
    mt_latent: torch.Tensor  # (N, 1, h, w)
    md_latent: torch.Tensor  # (N, 1, h, w) difference-to-target mask
    gt_mask_full: torch.Tensor  # (N, 1, H, W) oracle mask when present
    pending: torch.Tensor  # (N, V) bool, label appears in remaining transitions
    vocab: Vocabulary
    # per sequence: oracle layer-index map (H, W) or None, and the label id
    # of each present layer in paint order as (layer_index, label_id) pairs
    layer_maps: list = None
    layer_labels: list = None

    def __len__(self) -> int:
        return len(self.pair_t)

    def current(self, i: int) -> torch.Tensor:
        return self.frames[self.pair_seq[i]][self.pair_t[i] - 1]

    def next(self, i: int) -> torch.Tensor:
        return self.frames[self.pair_seq[i]][self.pair_t[i]]

    def target(self, i: int) -> torch.Tensor:
        return self.frames[self.pair_seq[i]][-1]

    def batch(self, idx) -> dict[str, torch.Tensor]:
        idx = np.asarray(idx)
        return {
            "current": torch.stack([self.current(i) for i in idx]),
            "next": torch.stack([self.next(i) for i in idx]),
            "target": torch.stack([self.target(i) for i in idx]),
            "label_ids": self.label_ids[idx],
            "dt_s": self.dt_s[idx],
            "pe21": self.pe21[idx],
            "mt_full": self.mt_full[idx],
            "mt_latent": self.mt_latent[idx],
            "md_latent": self.md_latent[idx],
        }


def build_pairs(manifest: DatasetManifest, split: str,
                alpha: float = DEFAULT_ALPHA, metric=None) -> PairSet:
    frames_all, seq_ids = [], []
    pair_seq, pair_t, label_ids, dts = [], [], [], []
    pe21s, mt_full, mt_lat, md_lat, gt_full, pending = [], [], [], [], [], []
    n_labels = len(manifest.vocabulary.labels)

    layer_maps, layer_labels = [], []
    for si, (sid, seq) in enumerate(load_records(manifest, split)):
        if seq.labels is None:
            raise ValueError(f"{sid}: sequence has no labels")
        lmap = load_layer_map(manifest.root / split / sid)
        layer_maps.append(lmap)
        if lmap is None or seq.masks is None:
            layer_labels.append(None)
        else:
            # map each painted layer index to its label via the transition
            # masks (a layer is painted by consecutive same-label steps)
            per_layer: dict[int, int] = {}
            for ins, msk in zip(seq.labels, seq.masks):
                region = msk.bits.astype(bool)
                if region.any():
                    li = int(np.bincount(lmap[region]).argmax())
                    per_layer.setdefault(li, ins.label_id)
            layer_labels.append(sorted(per_layer.items()))
        stack = torch.from_numpy(
            np.stack([k.image.pixels for k in seq.keyframes]).astype(np.float32)
        ).permute(0, 3, 1, 2)
        frames_all.append(stack)
        seq_ids.append(sid)
        for t in range(1, seq.n_transitions + 1):
            cur, nxt = seq.keyframes[t - 1].image, seq.keyframes[t].image
            dt = seq.keyframes[t].timestamp_s - seq.keyframes[t - 1].timestamp_s
            mt = difference_mask(nxt, cur, alpha, metric)
            md = difference_mask(seq.target, cur, alpha, metric)
            pair_seq.append(si)
            pair_t.append(t)
            label_ids.append(seq.labels[t - 1].label_id)
            dts.append(dt)
            pe21s.append(positional_encode_interval(dt).pe21)
            mt_full.append(mt.bits)
            mt_lat.append(downsample_mask(mt).bits)
            md_lat.append(downsample_mask(md).bits)
            gt = seq.masks[t - 1] if seq.masks is not None else mt
            gt_full.append(gt.bits)
            pend = np.zeros(n_labels, dtype=bool)
            for ins in seq.labels[t - 1:]:
                pend[ins.label_id] = True
            pending.append(pend)

    def _f32(arrs, unsqueeze=True):
        t = torch.from_numpy(np.stack(arrs).astype(np.float32))
        return t[:, None] if unsqueeze else t

    return PairSet(
        frames=frames_all,
        seq_ids=seq_ids,
        pair_seq=np.asarray(pair_seq),
        pair_t=np.asarray(pair_t),
        label_ids=torch.as_tensor(label_ids, dtype=torch.long),
        dt_s=torch.as_tensor(dts, dtype=torch.float32),
        pe21=_f32(pe21s, unsqueeze=False),
        mt_full=_f32(mt_full),
        mt_latent=_f32(mt_lat),
        md_latent=_f32(md_lat),
        gt_mask_full=_f32(gt_full),
        pending=torch.from_numpy(np.stack(pending)),
        vocab=manifest.vocabulary,
    )


def gt_masks_as_regionmasks(pairs: PairSet) -> list[RegionMask]:
    return [
        RegionMask(pairs.gt_mask_full[i, 0].numpy().astype(np.uint8), "full")
        for i in range(len(pairs))
    ]
