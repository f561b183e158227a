"""Core domain types and shared pixel-level math.

Everything here is pure and numpy-based: image frames, binary region
masks, the perceptual difference mask used both for supervision and at
test time, the 21-dim interval encoding, and latent-resolution mask
resampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

LATENT_FACTOR = 8
DEFAULT_ALPHA = 0.2
DEFAULT_MAX_INTERVAL_S = 120.0

# Default label set, ordered back-to-front. "details" must stay present:
# it names the late-stage refinement steps.
DEFAULT_LABELS = (
    "sky",
    "clouds",
    "mountain",
    "water",
    "grass",
    "trees",
    "flowers",
    "reflections",
    "details",
)


class DimensionMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Ordered, duplicate-free closed label set."""

    labels: tuple[str, ...] = DEFAULT_LABELS

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels in vocabulary")
        if "details" not in self.labels:
            raise ValueError('vocabulary must contain "details"')

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def instruction(self, label: str) -> "Instruction":
        return Instruction(label=label, label_id=self.index(label))

    def by_id(self, label_id: int) -> "Instruction":
        return Instruction(label=self.labels[label_id], label_id=label_id)

    def content_hash(self) -> str:
        import hashlib

        return hashlib.sha256("\x00".join(self.labels).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Instruction:
    """A semantic painting label plus its vocabulary index."""

    label: str
    label_id: int

    def __post_init__(self):
        if self.label_id < 0:
            raise ValueError("label_id must be nonnegative")


@dataclass
class ImageFrame:
    """H x W x 3 image with values in [0, 1]; dims divisible by 8."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected HxWx3 pixels, got {px.shape}")
        if px.shape[0] % LATENT_FACTOR or px.shape[1] % LATENT_FACTOR:
            raise ValueError("image dims must be divisible by 8")
        if px.min() < -1e-9 or px.max() > 1 + 1e-9:
            raise ValueError("pixel values must lie in [0, 1]")
        self.pixels = np.clip(px, 0.0, 1.0)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def blank(cls, height: int = 64, width: int = 64) -> "ImageFrame":
        """The starting canvas: pure white."""
        return cls(np.ones((height, width, 3)))

    def same_size(self, other: "ImageFrame") -> bool:
        return self.pixels.shape == other.pixels.shape


@dataclass(frozen=True)
class Keyframe:
    image: ImageFrame
    timestamp_s: float
    index: int

    def __post_init__(self):
        if self.timestamp_s < 0:
            raise ValueError("timestamp must be nonnegative")
        if self.index < 0:
            raise ValueError("index must be nonnegative")


@dataclass
class RegionMask:
    """Binary focus mask, at full or latent (1/8) resolution."""

    bits: np.ndarray
    resolution_tag: str = "full"
    soft: np.ndarray | None = None

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError("mask must be 2-D")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("mask bits must be 0/1")
        if self.resolution_tag not in ("full", "latent"):
            raise ValueError("resolution_tag must be 'full' or 'latent'")
        self.bits = bits.astype(np.uint8)
        if self.soft is not None:
            soft = np.asarray(self.soft, dtype=np.float64)
            if soft.shape != self.bits.shape:
                raise ValueError("soft mask shape mismatch")
            self.soft = soft

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    @property
    def area_fraction(self) -> float:
        return float(self.bits.mean())


@dataclass
class PaintingSequence:
    """Ordered keyframes plus the target; the unit of training and eval."""

    keyframes: list[Keyframe]
    target: ImageFrame
    labels: list[Instruction] | None = None
    masks: list[RegionMask] | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        ts = [k.timestamp_s for k in self.keyframes]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("timestamps must be strictly increasing")
        n_trans = len(self.keyframes) - 1
        if self.labels is not None and len(self.labels) != n_trans:
            raise ValueError("need one label per transition")
        if self.masks is not None and len(self.masks) != n_trans:
            raise ValueError("need one mask per transition")

    @property
    def n_transitions(self) -> int:
        return len(self.keyframes) - 1

    @property
    def duration_s(self) -> float:
        return self.keyframes[-1].timestamp_s - self.keyframes[0].timestamp_s


@dataclass(frozen=True)
class TimeEncoding:
    """Interval in seconds plus its 21-entry positional encoding."""

    raw_interval_s: float
    pe21: np.ndarray


# ---------------------------------------------------------------------------
# Perceptual difference


def _rgb_to_weighted_ycbcr(px: np.ndarray, chroma_weight: float) -> np.ndarray:
    r, g, b = px[..., 0], px[..., 1], px[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = (b - y) * 0.564
    cr = (r - y) * 0.713
    return np.stack([y, chroma_weight * cb, chroma_weight * cr], axis=-1)


class BlurredColorMetric:
    """Default perceptual metric: per-pixel distance in a luma-chroma
    space after a small Gaussian blur, scaled so black vs. white reads 1.

    chroma_weight=0.6 keeps the black/white pair the farthest color pair,
    so the map stays in [0, 1] without per-image normalization.
    """

    def __init__(self, sigma: float = 1.0, chroma_weight: float = 0.6):
        self.sigma = sigma
        self.chroma_weight = chroma_weight

    def distance_map(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        fa = _rgb_to_weighted_ycbcr(a, self.chroma_weight)
        fb = _rgb_to_weighted_ycbcr(b, self.chroma_weight)
        if self.sigma > 0:
            for c in range(3):
                fa[..., c] = gaussian_filter(fa[..., c], self.sigma, mode="nearest")
                fb[..., c] = gaussian_filter(fb[..., c], self.sigma, mode="nearest")
        return np.sqrt(((fa - fb) ** 2).sum(axis=-1))


DEFAULT_METRIC = BlurredColorMetric()


def pixel_distance_map(a: ImageFrame, b: ImageFrame, metric=None) -> np.ndarray:
    """Per-pixel perceptual distance in [0, 1]; zero iff a == b."""
    if not a.same_size(b):
        raise DimensionMismatchError(
            f"frame sizes differ: {a.pixels.shape} vs {b.pixels.shape}"
        )
    metric = metric or DEFAULT_METRIC
    return np.clip(metric.distance_map(a.pixels, b.pixels), 0.0, 1.0)


def difference_mask(
    target: ImageFrame,
    current: ImageFrame,
    alpha: float = DEFAULT_ALPHA,
    metric=None,
) -> RegionMask:
    """Binary mask of pixels whose perceptual distance exceeds alpha."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    dist = pixel_distance_map(target, current, metric)
    return RegionMask((dist > alpha).astype(np.uint8), "full")


def mean_perceptual_distance(a: ImageFrame, b: ImageFrame, metric=None) -> float:
    return float(pixel_distance_map(a, b, metric).mean())


# ---------------------------------------------------------------------------
# Time interval encoding

N_PE_FREQS = 10  # sin/cos pairs -> 1 + 2*10 = 21 entries


def positional_encode_interval(
    dt_s: float, max_interval_s: float = DEFAULT_MAX_INTERVAL_S
) -> TimeEncoding:
    """NeRF-style encoding of a time interval into a 21-vector.

    Entry 0 is the clamped normalized interval; entries 2k+1 / 2k+2 are
    sin / cos of the frequency-2^k component.
    """
    if dt_s <= 0:
        raise ValueError("interval must be positive")
    if max_interval_s <= 0:
        raise ValueError("max interval must be positive")
    x = min(max(dt_s / max_interval_s, 0.0), 1.0)
    pe = np.empty(1 + 2 * N_PE_FREQS)
    pe[0] = x
    for k in range(N_PE_FREQS):
        arg = (2.0**k) * np.pi * x
        pe[2 * k + 1] = np.sin(arg)
        pe[2 * k + 2] = np.cos(arg)
    return TimeEncoding(raw_interval_s=float(dt_s), pe21=pe)


# ---------------------------------------------------------------------------
# Latent-resolution mask resampling


def downsample_mask(m: RegionMask) -> RegionMask:
    """Full -> latent by per-8x8-block max (painted if any pixel is)."""
    if m.resolution_tag != "full":
        raise ValueError("downsample expects a full-resolution mask")
    h, w = m.bits.shape
    if h % LATENT_FACTOR or w % LATENT_FACTOR:
        raise ValueError("mask dims must be divisible by 8")
    blocks = m.bits.reshape(
        h // LATENT_FACTOR, LATENT_FACTOR, w // LATENT_FACTOR, LATENT_FACTOR
    )
    return RegionMask(blocks.max(axis=(1, 3)), "latent")


def upsample_mask(m: RegionMask) -> RegionMask:
    """Latent -> full by nearest-neighbor block replication."""
    if m.resolution_tag != "latent":
        raise ValueError("upsample expects a latent-resolution mask")
    bits = np.repeat(np.repeat(m.bits, LATENT_FACTOR, axis=0), LATENT_FACTOR, axis=1)
    return RegionMask(bits, "full")
