"""Test-time autoregressive generation: blank canvas -> text -> mask ->
render -> repeat until updates become negligible, plus the emergent
time-map diagnostic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    DEFAULT_ALPHA,
    ImageFrame,
    Instruction,
    Keyframe,
    PaintingSequence,
    RegionMask,
    difference_mask,
    mean_perceptual_distance,
)
from .dataset import _write_json, frame_to_uint8
from .instruction import MaskGenerator, TextGenerator, predict_mask
from .renderer import (
    DenoiserBundle,
    GuidanceConfig,
    NoiseSchedule,
    RenderRequest,
    derive_seed,
    sample_next,
)

log = logging.getLogger(__name__)


@dataclass
class GenerationConfig:
    dt_s: float = 20.0
    max_steps: int = 60
    stop_epsilon: float = 1e-3
    min_progress: float = 1e-3
    alpha: float = DEFAULT_ALPHA
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 2:
            raise ValueError("max_steps must be >= 2")
        if self.stop_epsilon <= 0:
            raise ValueError("stop_epsilon must be positive")


@dataclass
class GenerationTrace:
    sequence: PaintingSequence
    per_step_change: list[float]
    termination: str  # "converged" | "max_steps"


def generate(target: ImageFrame, models, cfg: GenerationConfig = GenerationConfig(),
             schedule: NoiseSchedule | None = None, metric=None) -> GenerationTrace:
    """Run the full loop. `models` is (TextGenerator, MaskGenerator,
    DenoiserBundle); all three must share the same vocabulary."""
    text_gen, mask_gen, bundle = models
    if not (text_gen.vocab.labels == mask_gen.vocab.labels == bundle.vocab.labels):
        raise ValueError("models were trained on different vocabularies")
    schedule = schedule or NoiseSchedule()

    canvas = ImageFrame.blank(target.height, target.width)
    keyframes = [Keyframe(canvas, 0.0, 0)]
    labels: list[Instruction] = []
    masks: list[RegionMask] = []
    changes: list[float] = []
    termination = "max_steps"

    for t in range(1, cfg.max_steps + 1):
        probs = text_gen.probabilities(target, canvas)
        base = mean_perceptual_distance(canvas, target, metric)
        # Candidate instructions in classifier order; commit the first whose
        # rendered update actually moves the canvas toward the target. This
        # is the reconstruction setting, so checking progress against the
        # target is free; without it a label whose region renders at its
        # quality floor gets re-predicted forever.
        committed = None
        for label_id in np.argsort(-probs):
            candidate = text_gen.vocab.by_id(int(label_id))
            pred = predict_mask(
                mask_gen, bundle.codec, target, canvas, candidate, cfg.dt_s,
                cfg.alpha, metric,
            )
            if pred.latent.area == 0:
                continue
            req = RenderRequest(
                current=canvas, target=target, label=candidate, mask=pred.full,
                dt_s=cfg.dt_s, rng_seed=derive_seed(cfg.seed, t, int(label_id)),
            )
            rendered = sample_next(bundle, schedule, req, cfg.guidance)
            # the mask is a contract: pixels outside it keep the old canvas,
            # which removes sampler drift from regions not being painted
            keep = pred.full.bits.astype(bool)[..., None]
            cand_img = ImageFrame(np.where(keep, rendered.pixels, canvas.pixels))
            if mean_perceptual_distance(cand_img, target, metric) < base - cfg.min_progress:
                committed = (candidate, pred.full, cand_img)
                break
        if committed is None:
            # no instruction improves the canvas: the painting is done as far
            # as the models can take it, so the step is a no-op and the
            # stopping rule fires after two of these
            instruction = text_gen.vocab.by_id(int(np.argmax(probs)))
            mask_full = RegionMask(
                np.zeros((target.height, target.width), dtype=np.uint8), "full")
            nxt = canvas
        else:
            instruction, mask_full, nxt = committed
        change = mean_perceptual_distance(nxt, canvas, metric)
        changes.append(change)
        keyframes.append(Keyframe(nxt, t * cfg.dt_s, t))
        labels.append(instruction)
        masks.append(mask_full)
        canvas = nxt
        # needs the two most recent transitions, so fires from t >= 2
        if t >= 2 and changes[-1] < cfg.stop_epsilon and changes[-2] < cfg.stop_epsilon:
            termination = "converged"
            break

    sequence = PaintingSequence(
        keyframes=keyframes, target=target, labels=labels, masks=masks,
        metadata={"dt_s": str(cfg.dt_s), "seed": str(cfg.seed)},
    )
    return GenerationTrace(sequence=sequence, per_step_change=changes,
                           termination=termination)


def time_map(trace_or_seq, alpha: float = DEFAULT_ALPHA, metric=None) -> np.ndarray:
    """Per-pixel index of the last transition that touched it (0 = never).

    Masks are recomputed from consecutive frames with the difference
    function, so this works on any sequence, generated or real.
    """
    seq = trace_or_seq.sequence if isinstance(trace_or_seq, GenerationTrace) else trace_or_seq
    if seq.n_transitions < 1:
        raise ValueError("need at least one transition")
    out = np.zeros((seq.target.height, seq.target.width), dtype=np.int64)
    for t in range(1, seq.n_transitions + 1):
        d = difference_mask(seq.keyframes[t].image, seq.keyframes[t - 1].image,
                            alpha, metric)
        out[d.bits.astype(bool)] = t
    return out


def export_trace(trace: GenerationTrace, out_dir: Path | str) -> Path:
    """Write keyframe PNGs, mask PNGs, and trace.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    from PIL import Image

    seq = trace.sequence
    for kf in seq.keyframes:
        Image.fromarray(frame_to_uint8(kf.image)).save(
            out_dir / f"frame_{kf.index:04d}.png"
        )
    for t, mask in enumerate(seq.masks or [], start=1):
        Image.fromarray(mask.bits * np.uint8(255)).save(out_dir / f"mask_{t:04d}.png")
    Image.fromarray(frame_to_uint8(seq.target)).save(out_dir / "target.png")
    payload = {
        "timestamps_s": [kf.timestamp_s for kf in seq.keyframes],
        "labels": [i.label for i in (seq.labels or [])],
        "masks": [f"mask_{t:04d}.png" for t in range(1, seq.n_transitions + 1)],
        "per_step_change": trace.per_step_change,
        "termination": trace.termination,
        "target": "target.png",
    }
    path = out_dir / "trace.json"
    _write_json(path, payload)
    return path


def load_trace(trace_dir: Path | str, vocab) -> GenerationTrace:
    from PIL import Image

    from .dataset import uint8_to_frame

    trace_dir = Path(trace_dir)
    payload = json.loads((trace_dir / "trace.json").read_text())
    frames = sorted(trace_dir.glob("frame_*.png"))
    keyframes = [
        Keyframe(uint8_to_frame(np.asarray(Image.open(p))), float(ts), i)
        for i, (p, ts) in enumerate(zip(frames, payload["timestamps_s"]))
    ]
    masks = [
        RegionMask((np.asarray(Image.open(trace_dir / m)) > 127).astype(np.uint8), "full")
        for m in payload["masks"]
    ]
    target_path = trace_dir / payload["target"]
    target = (
        uint8_to_frame(np.asarray(Image.open(target_path)))
        if target_path.exists()
        else keyframes[-1].image
    )
    seq = PaintingSequence(
        keyframes=keyframes,
        target=target,
        labels=[vocab.instruction(l) for l in payload["labels"]],
        masks=masks,
        metadata={"source": str(trace_dir)},
    )
    return GenerationTrace(
        sequence=seq,
        per_step_change=payload["per_step_change"],
        termination=payload["termination"],
    )
