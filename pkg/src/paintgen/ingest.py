"""Real-frame ingestion: crop, resize, change-filter, and write out the
standard dataset layout.

Timestamps default to frame_index / fps since screen-recorded time lapses
rarely carry a reliable clock; a timestamps.json file in the source
directory overrides, and so does an embedded-seconds filename pattern.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (
    BlurredColorMetric,
    ImageFrame,
    Keyframe,
    PaintingSequence,
    Vocabulary,
    mean_perceptual_distance,
)
from .dataset import DatasetManifest, save_sequence, uint8_to_frame


class IngestError(ValueError):
    pass


_TS_PATTERN = re.compile(r"t(\d+(?:\.\d+)?)s")


@dataclass(frozen=True)
class IngestSpec:
    source_dir: str
    roi: tuple | None = None  # (left, top, width, height) in source pixels
    canvas_size: int = 64
    min_change: float = 0.0  # mean perceptual change below this drops a frame
    fps: float = 1.0
    timestamp_source: str = "fps"  # "fps", "filename", or "file"
    skip_list: tuple = ()  # frame filenames to exclude outright

    def __post_init__(self):
        if not (0.0 <= self.min_change < 1.0):
            raise IngestError("min_change must be in [0, 1)")
        if self.fps <= 0:
            raise IngestError("fps must be positive")
        if self.timestamp_source not in ("fps", "filename", "file"):
            raise IngestError(f"unknown timestamp_source {self.timestamp_source}")
        if self.roi is not None and (len(self.roi) != 4 or min(self.roi[2:]) <= 0):
            raise IngestError("roi must be (left, top, width, height) with positive size")


def _load_frame(path: Path, spec: IngestSpec) -> ImageFrame | None:
    try:
        img = Image.open(path).convert("RGB")
    except Exception as exc:  # unreadable frames are skipped, not fatal
        warnings.warn(f"skipping unreadable frame {path.name}: {exc}")
        return None
    if spec.roi is not None:
        left, top, w, h = spec.roi
        if left < 0 or top < 0 or left + w > img.width or top + h > img.height:
            raise IngestError(f"roi {spec.roi} outside frame bounds {img.size}")
        img = img.crop((left, top, left + w, top + h))
    if img.size != (spec.canvas_size, spec.canvas_size):
        img = img.resize((spec.canvas_size, spec.canvas_size), Image.LANCZOS)
    return uint8_to_frame(np.asarray(img))


def _timestamps(names: list[str], spec: IngestSpec, src: Path) -> list[float]:
    if spec.timestamp_source == "file":
        ts_path = src / "timestamps.json"
        if not ts_path.exists():
            raise IngestError("timestamp_source='file' but timestamps.json missing")
        table = json.loads(ts_path.read_text(encoding="utf-8"))
        try:
            return [float(table[n]) for n in names]
        except KeyError as exc:
            raise IngestError(f"timestamps.json missing entry for {exc}") from None
    if spec.timestamp_source == "filename":
        out = []
        for n in names:
            m = _TS_PATTERN.search(n)
            if not m:
                raise IngestError(f"no t<seconds>s token in filename {n}")
            out.append(float(m.group(1)))
        return out
    return [i / spec.fps for i in range(len(names))]


def ingest(spec: IngestSpec, out_dir: str | Path, seq_id: str = "ingested_0000",
           split: str = "val", metric=None) -> DatasetManifest:
    """Reads ordered frames, filters small changes, and writes the standard
    dataset layout. Idempotent: identical inputs give identical bytes."""
    src = Path(spec.source_dir)
    if not src.is_dir():
        raise IngestError(f"source directory not found: {src}")
    names = sorted(
        p.name for p in src.iterdir()
        if p.suffix.lower() in (".png", ".jpg", ".jpeg") and p.name not in spec.skip_list
    )
    if not names:
        raise IngestError(f"no frames found in {src}")
    times = _timestamps(names, spec, src)
    metric = metric or BlurredColorMetric()

    kept_frames: list[ImageFrame] = []
    kept_times: list[float] = []
    for name, ts in zip(names, times):
        frame = _load_frame(src / name, spec)
        if frame is None:
            continue
        if kept_frames and spec.min_change > 0:
            change = mean_perceptual_distance(frame, kept_frames[-1], metric)
            if change < spec.min_change:
                continue
        kept_frames.append(frame)
        kept_times.append(ts)
    if len(kept_frames) < 2:
        raise IngestError("fewer than 2 usable frames after filtering")

    # re-anchor at zero so sequences from different recordings line up
    t0 = kept_times[0]
    keyframes = [
        Keyframe(f, ts - t0, i) for i, (f, ts) in enumerate(zip(kept_frames, kept_times))
    ]
    seq = PaintingSequence(
        keyframes=keyframes,
        target=kept_frames[-1],
        metadata={"seq_id": seq_id, "source": str(src)},
    )
    out_dir = Path(out_dir)
    save_sequence(out_dir / split / seq_id, seq)
    manifest = DatasetManifest(
        root=out_dir,
        train=[seq_id] if split == "train" else [],
        val=[seq_id] if split == "val" else [],
        vocabulary=Vocabulary(),
    )
    manifest.save()
    return manifest
