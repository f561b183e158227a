"""Procedural generator of layered landscape painting sequences.

Every sequence is painted back-to-front, one semantic region at a time,
in one or more steps per region. The generator doubles as the ground
truth oracle: labels, step masks, per-step durations, and a per-pixel
layer-index map are all recorded exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ImageFrame,
    Instruction,
    Keyframe,
    PaintingSequence,
    RegionMask,
    Vocabulary,
)

# Base colors keep every layer well separated (perceptual distance > 0.25)
# from white and from anything it can be painted over, so the alpha=0.2
# difference mask recovers the painted step even after the metric's blur.
BASE_PALETTE = {
    "sky": (0.25, 0.48, 0.82),
    "clouds": (0.78, 0.72, 0.70),
    "mountain": (0.42, 0.26, 0.18),
    "water": (0.15, 0.50, 0.80),
    "grass": (0.55, 0.68, 0.25),
    "trees": (0.05, 0.08, 0.04),
    "flowers": (0.85, 0.25, 0.40),
    "reflections": (0.72, 0.80, 0.90),
}

DETAIL_DARK = (0.08, 0.06, 0.10)
DETAIL_BRIGHT = (0.98, 0.92, 0.60)

MEAN_STEP_DURATION_S = 23.6  # matches the training-corpus average
DURATION_SIGMA = 0.3
DURATION_CLIP_S = (5.0, 120.0)
COLOR_JITTER = 0.05


@dataclass(frozen=True)
class LayerSpec:
    """One semantic layer: its label, region family, and step budget."""

    label: str
    region_generator: str  # band | ridge | blobs | speckle
    params: dict = field(default_factory=dict)
    n_steps: int = 2
    step_duration_s: float = MEAN_STEP_DURATION_S

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.step_duration_s <= 0:
            raise ValueError("step_duration_s must be positive")


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    layers: tuple[LayerSpec, ...]
    canvas_size: tuple[int, int] = (64, 64)
    palette: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("scene needs at least one layer")


@dataclass
class OracleRecord:
    """A generated sequence plus its exact ground truth."""

    sequence: PaintingSequence
    per_step_durations_s: list[float]
    layer_index_map: np.ndarray  # 0 = never painted, else 1-based layer index
    layer_order: list[str]


def default_scene_spec(seed: int = 0, canvas_size=(64, 64)) -> SceneSpec:
    """The canonical 5-layer scene: sky, mountain, water, trees, details."""
    return SceneSpec(
        seed=seed,
        canvas_size=canvas_size,
        layers=(
            LayerSpec("sky", "band", {"v0": 0.0, "v1": 0.55, "wave": 0.05}),
            LayerSpec("mountain", "ridge", {"v_top": 0.30, "v_base": 0.72}),
            LayerSpec("water", "band", {"v0": 0.60, "v1": 1.0, "wave": 0.04}),
            LayerSpec("trees", "blobs", {"v0": 0.45, "v1": 0.80, "n": 4, "r": 0.10}),
            LayerSpec("details", "speckle", {"n_dots": 14, "radius": 1.6}),
        ),
    )


# ---------------------------------------------------------------------------
# Region builders


def _band_region(h, w, rng, v0, v1, wave):
    rows = np.arange(h)[:, None]
    phase = rng.uniform(0, 2 * np.pi)
    freq = rng.uniform(1.0, 3.0)
    cols = np.arange(w)[None, :]
    wobble = wave * h * np.sin(2 * np.pi * freq * cols / w + phase)
    top = v0 * h + (wobble if v0 > 0 else 0.0)
    bottom = v1 * h + (wobble if v1 < 1 else 0.0)
    return (rows >= top) & (rows < bottom)


def _ridge_region(h, w, rng, v_top, v_base):
    xs = np.arange(w)
    n_knots = rng.integers(4, 8)
    knot_x = np.linspace(0, w - 1, n_knots)
    knot_y = rng.uniform(v_top * h, (v_top + 0.18) * h, n_knots)
    ridge = np.interp(xs, knot_x, knot_y)
    rows = np.arange(h)[:, None]
    return (rows >= ridge[None, :]) & (rows < v_base * h)


def _blobs_region(h, w, rng, v0, v1, n, r):
    yy, xx = np.mgrid[0:h, 0:w]
    region = np.zeros((h, w), dtype=bool)
    for _ in range(n):
        cy = rng.uniform(v0 * h, v1 * h)
        cx = rng.uniform(0.05 * w, 0.95 * w)
        ry = rng.uniform(0.6, 1.4) * r * h
        rx = rng.uniform(0.8, 2.0) * r * w
        region |= ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return region


def _speckle_region(h, w, rng, painted, n_dots, radius):
    yy, xx = np.mgrid[0:h, 0:w]
    rows, cols = np.nonzero(painted)
    region = np.zeros((h, w), dtype=bool)
    if len(rows) == 0:
        return region
    for _ in range(n_dots):
        i = rng.integers(len(rows))
        cy, cx = rows[i], cols[i]
        region |= (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    return region


def _build_region(layer: LayerSpec, h, w, rng, painted):
    p = layer.params
    if layer.region_generator == "band":
        return _band_region(h, w, rng, p["v0"], p["v1"], p.get("wave", 0.04))
    if layer.region_generator == "ridge":
        return _ridge_region(h, w, rng, p["v_top"], p["v_base"])
    if layer.region_generator == "blobs":
        return _blobs_region(h, w, rng, p["v0"], p["v1"], p.get("n", 3), p.get("r", 0.1))
    if layer.region_generator == "speckle":
        return _speckle_region(
            h, w, rng, painted, p.get("n_dots", 14), p.get("radius", 1.6)
        )
    raise ValueError(f"unknown region generator: {layer.region_generator}")


# ---------------------------------------------------------------------------
# Scene generation


def _sample_durations(rng, n, mean_s):
    mu = math.log(mean_s) - DURATION_SIGMA**2 / 2
    d = np.exp(rng.normal(mu, DURATION_SIGMA, size=n))
    return np.clip(d, *DURATION_CLIP_S)


def _partition_region(region, durations, rng):
    """Split a region into per-step chunks along a random sweep direction.

    Chunk areas are proportional to the step durations, so longer steps
    paint more canvas; the noisy sweep key keeps chunk borders irregular.
    """
    h, w = region.shape
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    key = np.cos(theta) * xx + np.sin(theta) * yy + rng.normal(0, 1.5, region.shape)
    rows, cols = np.nonzero(region)
    order = np.argsort(key[rows, cols], kind="stable")
    fractions = np.cumsum(durations) / np.sum(durations)
    chunks = []
    n_px = len(rows)
    start = 0
    for frac in fractions:
        stop = int(round(frac * n_px))
        chunk = np.zeros_like(region)
        idx = order[start:stop]
        chunk[rows[idx], cols[idx]] = True
        chunks.append(chunk)
        start = stop
    return chunks


def _layer_color(label, rng, palette, under=None):
    if label == "details":
        # High-contrast accents: dark on light underpaint, bright on dark.
        return None  # resolved per pixel when painting
    base = np.array(palette.get(label, BASE_PALETTE[label]))
    return np.clip(base + rng.uniform(-0.04, 0.04, 3), 0.02, 0.92)


def _paint_step(canvas, chunk, label, color, rng):
    out = canvas.copy()
    jitter = rng.uniform(-COLOR_JITTER, COLOR_JITTER, 3)
    if label == "details":
        luma = canvas @ np.array([0.299, 0.587, 0.114])
        dark = luma > 0.5
        for c in range(3):
            ch = out[..., c]
            ch[chunk & dark] = DETAIL_DARK[c] + jitter[c]
            ch[chunk & ~dark] = DETAIL_BRIGHT[c] + jitter[c]
    else:
        texture = rng.normal(0, 0.012, canvas.shape)
        out[chunk] = color + jitter + texture[chunk]
    return np.clip(out, 0.0, 1.0)


def generate_scene(spec: SceneSpec, vocab: Vocabulary | None = None) -> OracleRecord:
    """Render a full painting sequence from a scene spec, deterministically."""
    vocab = vocab or Vocabulary()
    for layer in spec.layers:
        if layer.label not in vocab.labels:
            raise ValueError(f"layer label {layer.label!r} not in vocabulary")
    h, w = spec.canvas_size
    rng = np.random.default_rng(spec.seed)

    canvas = np.ones((h, w, 3))
    frames = [canvas]
    labels: list[Instruction] = []
    masks: list[RegionMask] = []
    durations: list[float] = []
    layer_index_map = np.zeros((h, w), dtype=np.int32)
    painted = np.zeros((h, w), dtype=bool)

    for li, layer in enumerate(spec.layers, start=1):
        region = _build_region(layer, h, w, rng, painted)
        if not region.any():
            continue
        color = _layer_color(layer.label, rng, spec.palette)
        step_durs = _sample_durations(rng, layer.n_steps, layer.step_duration_s)
        for chunk, dur in zip(_partition_region(region, step_durs, rng), step_durs):
            if not chunk.any():
                continue
            canvas = _paint_step(canvas, chunk, layer.label, color, rng)
            frames.append(canvas)
            labels.append(vocab.instruction(layer.label))
            masks.append(RegionMask(chunk.astype(np.uint8), "full"))
            durations.append(float(dur))
            layer_index_map[chunk] = li
        painted |= region

    timestamps = np.concatenate([[0.0], np.cumsum(durations)])
    keyframes = [
        Keyframe(image=ImageFrame(f), timestamp_s=float(t), index=i)
        for i, (f, t) in enumerate(zip(frames, timestamps))
    ]
    sequence = PaintingSequence(
        keyframes=keyframes,
        target=ImageFrame(frames[-1]),
        labels=labels,
        masks=masks,
        metadata={"seed": str(spec.seed)},
    )
    return OracleRecord(
        sequence=sequence,
        per_step_durations_s=durations,
        layer_index_map=layer_index_map,
        layer_order=[l.label for l in spec.layers],
    )


def oracle_answer(record: OracleRecord, t: int):
    """Ground-truth (instruction, mask, dt) for transition t (1-based)."""
    seq = record.sequence
    if not 1 <= t <= seq.n_transitions:
        raise IndexError(f"transition {t} out of range 1..{seq.n_transitions}")
    return (
        seq.labels[t - 1],
        seq.masks[t - 1],
        float(record.per_step_durations_s[t - 1]),
    )


# ---------------------------------------------------------------------------
# Scene distribution for dataset emission


@dataclass(frozen=True)
class SceneDistribution:
    """Samples varied SceneSpecs: sky and details always, middle layers
    optional, step counts and durations randomized."""

    canvas_size: tuple[int, int] = (64, 64)
    mean_step_duration_s: float = MEAN_STEP_DURATION_S

    def sample(self, seed: int) -> SceneSpec:
        rng = np.random.default_rng(seed ^ 0x5CEE)
        layers = [
            LayerSpec(
                "sky",
                "band",
                {"v0": 0.0, "v1": float(rng.uniform(0.45, 0.62)), "wave": 0.05},
                n_steps=int(rng.integers(1, 4)),
                step_duration_s=self.mean_step_duration_s,
            )
        ]
        if rng.random() < 0.5:
            layers.append(
                LayerSpec(
                    "clouds",
                    "blobs",
                    {"v0": 0.05, "v1": 0.30, "n": int(rng.integers(2, 5)), "r": 0.06},
                    n_steps=1,
                    step_duration_s=self.mean_step_duration_s,
                )
            )
        if rng.random() < 0.85:
            layers.append(
                LayerSpec(
                    "mountain",
                    "ridge",
                    {"v_top": float(rng.uniform(0.25, 0.38)), "v_base": 0.72},
                    n_steps=int(rng.integers(1, 4)),
                    step_duration_s=self.mean_step_duration_s,
                )
            )
        has_grass = rng.random() < 0.6
        water_v1 = 0.85 if has_grass else 1.0
        layers.append(
            LayerSpec(
                "water",
                "band",
                {"v0": float(rng.uniform(0.55, 0.65)), "v1": water_v1, "wave": 0.04},
                n_steps=int(rng.integers(1, 4)),
                step_duration_s=self.mean_step_duration_s,
            )
        )
        if rng.random() < 0.4:
            layers.append(
                LayerSpec(
                    "reflections",
                    "blobs",
                    {"v0": 0.68, "v1": 0.88, "n": int(rng.integers(1, 4)), "r": 0.05},
                    n_steps=1,
                    step_duration_s=self.mean_step_duration_s,
                )
            )
        if has_grass:
            layers.append(
                LayerSpec(
                    "grass",
                    "band",
                    {"v0": 0.80, "v1": 1.0, "wave": 0.03},
                    n_steps=int(rng.integers(1, 3)),
                    step_duration_s=self.mean_step_duration_s,
                )
            )
            if rng.random() < 0.5:
                layers.append(
                    LayerSpec(
                        "flowers",
                        "blobs",
                        {"v0": 0.82, "v1": 0.96, "n": int(rng.integers(2, 5)), "r": 0.035},
                        n_steps=1,
                        step_duration_s=self.mean_step_duration_s,
                    )
                )
        if rng.random() < 0.6:
            layers.append(
                LayerSpec(
                    "trees",
                    "blobs",
                    {"v0": 0.45, "v1": 0.78, "n": int(rng.integers(2, 5)), "r": 0.09},
                    n_steps=int(rng.integers(1, 3)),
                    step_duration_s=self.mean_step_duration_s,
                )
            )
        layers.append(
            LayerSpec(
                "details",
                "speckle",
                {"n_dots": int(rng.integers(10, 20)), "radius": 1.6},
                n_steps=int(rng.integers(1, 3)),
                step_duration_s=self.mean_step_duration_s,
            )
        )
        return SceneSpec(seed=seed, layers=tuple(layers), canvas_size=self.canvas_size)
