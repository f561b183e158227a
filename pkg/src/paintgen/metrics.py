"""Evaluation suite for reconstructed painting sequences.

Covers time-aligned perceptual distance, difference-mask IoU, distance-curve
DTW cost (DDC), final-duration error (DTS), Frechet distance over frame
embeddings (FID-style, with a pluggable embedder), plus instruction-sequence
and single-update analyses.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    BlurredColorMetric,
    DEFAULT_ALPHA,
    ImageFrame,
    PaintingSequence,
    difference_mask,
    mean_perceptual_distance,
)


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class DistanceCurve:
    """Residual-vs-time curve: one (minutes, distance) point per keyframe."""

    points: tuple  # of (time_min, dist)

    def __post_init__(self):
        times = [p[0] for p in self.points]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise MetricError("curve times must be strictly increasing")
        if any(p[1] < 0 for p in self.points):
            raise MetricError("curve distances must be nonnegative")

    def as_arrays(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        return pts[:, 0], pts[:, 1]


def distance_curve(seq: PaintingSequence, target: ImageFrame, metric=None) -> DistanceCurve:
    metric = metric or BlurredColorMetric()
    pts = tuple(
        (kf.timestamp_s / 60.0, mean_perceptual_distance(target, kf.image, metric))
        for kf in seq.keyframes
    )
    return DistanceCurve(pts)


def lpips_timealigned(real_seq: PaintingSequence, gen_seq: PaintingSequence, metric=None) -> float:
    """For each real frame, compare against the generated keyframe whose
    timestamp is nearest, then average over real frames."""
    if not real_seq.keyframes or not gen_seq.keyframes:
        raise MetricError("both sequences must be non-empty")
    metric = metric or BlurredColorMetric()
    gen_times = np.array([kf.timestamp_s for kf in gen_seq.keyframes])
    total = 0.0
    for kf in real_seq.keyframes:
        j = int(np.argmin(np.abs(gen_times - kf.timestamp_s)))
        total += mean_perceptual_distance(kf.image, gen_seq.keyframes[j].image, metric)
    return total / len(real_seq.keyframes)


def _pair_iou(a: np.ndarray, b: np.ndarray) -> float:
    # empty-vs-empty means both agree nothing changed
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def _consecutive_masks(seq: PaintingSequence, alpha: float, metric) -> list:
    kfs = seq.keyframes
    return [
        difference_mask(kfs[i + 1].image, kfs[i].image, alpha, metric).bits.astype(bool)
        for i in range(len(kfs) - 1)
    ]


def diffmask_iou(
    real_seq: PaintingSequence,
    gen_seq: PaintingSequence,
    alpha: float = DEFAULT_ALPHA,
    metric=None,
) -> float:
    """Order-agnostic: each generated mask is scored by its best match over
    all real masks, then averaged over generated masks."""
    if len(real_seq.keyframes) < 2 or len(gen_seq.keyframes) < 2:
        raise MetricError("need at least 2 keyframes per sequence")
    metric = metric or BlurredColorMetric()
    real_masks = _consecutive_masks(real_seq, alpha, metric)
    gen_masks = _consecutive_masks(gen_seq, alpha, metric)
    scores = [max(_pair_iou(g, r) for r in real_masks) for g in gen_masks]
    return float(np.mean(scores))


def dtw_cost(a: np.ndarray, b: np.ndarray) -> float:
    """Classic DTW over point sequences with Euclidean local cost and steps
    {(1,0),(0,1),(1,1)}. Returns the unnormalized cumulative cost."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise MetricError("empty curve")
    local = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    acc = np.full((n, m), np.inf)
    acc[0, 0] = local[0, 0]
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                continue
            best = np.inf
            if i > 0:
                best = min(best, acc[i - 1, j])
            if j > 0:
                best = min(best, acc[i, j - 1])
            if i > 0 and j > 0:
                best = min(best, acc[i - 1, j - 1])
            acc[i, j] = local[i, j] + best
    return float(acc[n - 1, m - 1])


def ddc(
    real_seq: PaintingSequence,
    gen_seq: PaintingSequence,
    target: ImageFrame,
    metric=None,
) -> float:
    metric = metric or BlurredColorMetric()
    ca = distance_curve(real_seq, target, metric)
    cb = distance_curve(gen_seq, target, metric)
    pa = np.asarray(ca.points, dtype=np.float64).reshape(-1, 2)
    pb = np.asarray(cb.points, dtype=np.float64).reshape(-1, 2)
    return dtw_cost(pa, pb)


def dts(real_seq: PaintingSequence, gen_seq: PaintingSequence) -> float:
    if not real_seq.keyframes or not gen_seq.keyframes:
        raise MetricError("both sequences must be non-empty")
    return abs(real_seq.keyframes[-1].timestamp_s - gen_seq.keyframes[-1].timestamp_s) / 60.0


def _sqrtm_product(sigma_a: np.ndarray, sigma_b: np.ndarray) -> np.ndarray:
    # symmetric square-root trick: sqrt(A) B sqrt(A) is symmetric PSD, and
    # tr(sqrt(AB)) equals tr(sqrt(sqrt(A) B sqrt(A)))
    wa, va = np.linalg.eigh(sigma_a)
    wa = np.clip(wa, 0.0, None)
    sa = (va * np.sqrt(wa)) @ va.T
    inner = sa @ sigma_b @ sa
    w, v = np.linalg.eigh((inner + inner.T) / 2.0)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def fid(frames_a: Sequence, frames_b: Sequence, embedder: Callable) -> float:
    """Frechet distance between Gaussian fits of frame embeddings.

    `embedder` maps a frame to a 1D feature vector; the default pipeline
    embedder is a small fixed random-feature net, so absolute values are not
    comparable to Inception-based reports.
    """
    if len(frames_a) < 2 or len(frames_b) < 2:
        raise MetricError("need at least 2 frames per side for covariance")
    ea = np.stack([np.asarray(embedder(f), dtype=np.float64).ravel() for f in frames_a])
    eb = np.stack([np.asarray(embedder(f), dtype=np.float64).ravel() for f in frames_b])
    mu_a, mu_b = ea.mean(axis=0), eb.mean(axis=0)
    sig_a = np.cov(ea, rowvar=False)
    sig_b = np.cov(eb, rowvar=False)
    sig_a = np.atleast_2d(sig_a)
    sig_b = np.atleast_2d(sig_b)
    sqrt_ab = _sqrtm_product(sig_a, sig_b)
    val = float(np.sum((mu_a - mu_b) ** 2) + np.trace(sig_a + sig_b - 2.0 * sqrt_ab))
    return max(val, 0.0)


def lcs_length(a: Sequence, b: Sequence) -> int:
    n, m = len(a), len(b)
    dp = np.zeros((n + 1, m + 1), dtype=np.int64)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if a[i - 1] == b[j - 1]:
                dp[i, j] = dp[i - 1, j - 1] + 1
            else:
                dp[i, j] = max(dp[i - 1, j], dp[i, j - 1])
    return int(dp[n, m])


def text_sequence_eval(gt_labels: Sequence[str], gen_labels: Sequence[str]) -> tuple:
    """Returns (set_coverage, lcs_ratio), both normalized by the generated
    sequence length."""
    if not gen_labels:
        raise MetricError("generated label list must be non-empty")
    gt = [str(x) for x in gt_labels]
    gen = [str(x) for x in gen_labels]
    coverage = len(set(gen) & set(gt)) / len(set(gen))
    ratio = lcs_length(gt, gen) / len(gen)
    return float(coverage), float(ratio)


@dataclass
class MetricsReport:
    lpips_timealigned: float
    iou: float
    ddc: float
    dts_min: float
    fid: float
    per_painting: dict = field(default_factory=dict)
    lcs_ratio: Optional[float] = None
    set_coverage: Optional[float] = None
    text_accuracy: Optional[float] = None
    mask_iou_gt_text: Optional[float] = None
    mask_iou_pred_text: Optional[float] = None

    def validate(self):
        for name in ("lpips_timealigned", "iou", "ddc", "dts_min", "fid"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise MetricError(f"{name} is not finite: {v}")
        for name in ("iou", "lcs_ratio", "set_coverage"):
            v = getattr(self, name)
            if v is not None and not (0.0 <= v <= 1.0 + 1e-12):
                raise MetricError(f"{name} out of [0,1]: {v}")

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_pairs(
    pairs: Sequence[tuple],
    embedder: Callable,
    alpha: float = DEFAULT_ALPHA,
    metric=None,
) -> MetricsReport:
    """Averages the sequence metrics over (real_seq, gen_seq) pairs with
    equal weight per painting. FID pools all frames from each side."""
    if not pairs:
        raise MetricError("no sequence pairs to evaluate")
    metric = metric or BlurredColorMetric()
    per = {}
    frames_real, frames_gen = [], []
    for i, (real_seq, gen_seq) in enumerate(pairs):
        name = real_seq.metadata.get("seq_id", f"painting_{i}")
        per[name] = {
            "lpips_timealigned": lpips_timealigned(real_seq, gen_seq, metric),
            "iou": diffmask_iou(real_seq, gen_seq, alpha, metric),
            "ddc": ddc(real_seq, gen_seq, real_seq.target, metric),
            "dts_min": dts(real_seq, gen_seq),
        }
        frames_real.extend(kf.image for kf in real_seq.keyframes)
        frames_gen.extend(kf.image for kf in gen_seq.keyframes)
    agg = {k: float(np.mean([p[k] for p in per.values()])) for k in next(iter(per.values()))}
    report = MetricsReport(
        lpips_timealigned=agg["lpips_timealigned"],
        iou=agg["iou"],
        ddc=agg["ddc"],
        dts_min=agg["dts_min"],
        fid=fid(frames_real, frames_gen, embedder),
        per_painting=per,
    )
    report.validate()
    return report


def single_update_eval(
    text_gen,
    mask_gen,
    codec,
    pairset,
    alpha: float = DEFAULT_ALPHA,
    metric=None,
    max_pairs: Optional[int] = None,
) -> tuple:
    """Evaluates one canvas update at a time using ground-truth current
    frames and intervals. Returns (text_accuracy, mask_iou_gt_text,
    mask_iou_pred_text); mask IoU is scored on the latent grid, the
    generator's native resolution (nearest-neighbor upsampling caps the
    full-resolution IoU of even a perfect latent mask near 0.5)."""
    from .codec import tensor_to_frames
    from .instruction import predict_mask, predict_text

    n = len(pairset)
    if n == 0:
        raise MetricError("empty pair set")
    if max_pairs is not None:
        n = min(n, max_pairs)
    correct = 0
    iou_gt, iou_pred = [], []
    for i in range(n):
        current = tensor_to_frames(pairset.current(i)[None])[0]
        target = tensor_to_frames(pairset.target(i)[None])[0]
        dt_s = float(pairset.dt_s[i])
        gt_label = pairset.vocab.by_id(int(pairset.label_ids[i]))
        pred_label = predict_text(text_gen, target, current)
        correct += int(pred_label == gt_label)
        gt_latent = pairset.mt_latent[i, 0].numpy().astype(bool)
        for label, bucket in ((gt_label, iou_gt), (pred_label, iou_pred)):
            pred = predict_mask(
                mask_gen, codec, target, current, label, dt_s,
                alpha=alpha, metric=metric,
            )
            bucket.append(_pair_iou(pred.latent.bits.astype(bool), gt_latent))
    return correct / n, float(np.mean(iou_gt)), float(np.mean(iou_pred))
