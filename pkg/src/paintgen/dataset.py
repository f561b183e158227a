"""On-disk dataset layout and manifest handling.

Layout:
    <root>/dataset.json                 {"train": [...], "val": [...], "vocabulary": [...]}
    <root>/<split>/<seq_id>/frame_%04d.png   8-bit RGB keyframes
    <root>/<split>/<seq_id>/mask_%04d.png    8-bit gray 0/255, transition masks
    <root>/<split>/<seq_id>/manifest.json    timestamps, labels, target pointer
    <root>/<split>/<seq_id>/layers.png       optional per-pixel layer index (oracle aux)
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import ImageFrame, Keyframe, PaintingSequence, RegionMask, Vocabulary
from .synth import OracleRecord, SceneDistribution, generate_scene


class DatasetError(RuntimeError):
    pass


@dataclass
class DatasetManifest:
    root: Path
    train: list[str]
    val: list[str]
    vocabulary: Vocabulary

    def sequence_dirs(self, split: str) -> list[Path]:
        ids = {"train": self.train, "val": self.val}[split]
        return [self.root / split / sid for sid in ids]

    def save(self) -> Path:
        path = self.root / "dataset.json"
        payload = {
            "train": self.train,
            "val": self.val,
            "vocabulary": list(self.vocabulary.labels),
        }
        _write_json(path, payload)
        return path

    @classmethod
    def load(cls, root: Path | str) -> "DatasetManifest":
        root = Path(root)
        path = root / "dataset.json"
        if not path.exists():
            raise DatasetError(f"no dataset.json under {root}")
        payload = json.loads(path.read_text())
        return cls(
            root=root,
            train=payload["train"],
            val=payload["val"],
            vocabulary=Vocabulary(tuple(payload["vocabulary"])),
        )


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _save_png(path: Path, arr: np.ndarray) -> None:
    Image.fromarray(arr).save(path)


def frame_to_uint8(frame: ImageFrame) -> np.ndarray:
    return np.round(frame.pixels * 255).astype(np.uint8)


def uint8_to_frame(arr: np.ndarray) -> ImageFrame:
    return ImageFrame(arr.astype(np.float64) / 255.0)


def save_sequence(seq_dir: Path, sequence: PaintingSequence,
                  layer_index_map: np.ndarray | None = None) -> None:
    seq_dir.mkdir(parents=True, exist_ok=True)
    for kf in sequence.keyframes:
        _save_png(seq_dir / f"frame_{kf.index:04d}.png", frame_to_uint8(kf.image))
    if sequence.masks is not None:
        for t, mask in enumerate(sequence.masks, start=1):
            _save_png(seq_dir / f"mask_{t:04d}.png", mask.bits * np.uint8(255))
    manifest = {
        "timestamps_s": [kf.timestamp_s for kf in sequence.keyframes],
        "labels": [ins.label for ins in sequence.labels]
        if sequence.labels is not None
        else [],
        "target": f"frame_{sequence.keyframes[-1].index:04d}",
    }
    _write_json(seq_dir / "manifest.json", manifest)
    if layer_index_map is not None:
        _save_png(seq_dir / "layers.png", layer_index_map.astype(np.uint8))


def load_sequence(seq_dir: Path | str, vocab: Vocabulary) -> PaintingSequence:
    seq_dir = Path(seq_dir)
    manifest_path = seq_dir / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"no manifest.json under {seq_dir}")
    manifest = json.loads(manifest_path.read_text())
    timestamps = manifest["timestamps_s"]
    frames = sorted(seq_dir.glob("frame_*.png"))
    if len(frames) != len(timestamps):
        raise DatasetError(
            f"{seq_dir}: {len(frames)} frames but {len(timestamps)} timestamps"
        )
    keyframes = [
        Keyframe(
            image=uint8_to_frame(np.asarray(Image.open(p))),
            timestamp_s=float(t),
            index=i,
        )
        for i, (p, t) in enumerate(zip(frames, timestamps))
    ]
    labels = [vocab.instruction(l) for l in manifest["labels"]] or None
    mask_paths = sorted(seq_dir.glob("mask_*.png"))
    masks = None
    if mask_paths:
        if len(mask_paths) != len(keyframes) - 1:
            raise DatasetError(f"{seq_dir}: mask count mismatch")
        masks = [
            RegionMask((np.asarray(Image.open(p)) > 127).astype(np.uint8), "full")
            for p in mask_paths
        ]
    target = keyframes[-1].image
    return PaintingSequence(
        keyframes=keyframes,
        target=target,
        labels=labels,
        masks=masks,
        metadata={"source": str(seq_dir)},
    )


def load_layer_map(seq_dir: Path | str) -> np.ndarray | None:
    path = Path(seq_dir) / "layers.png"
    if not path.exists():
        return None
    return np.asarray(Image.open(path)).astype(np.int32)


def emit_dataset(
    n_train: int,
    n_val: int,
    distribution: SceneDistribution,
    out_dir: Path | str,
    vocab: Vocabulary | None = None,
    seed: int = 0,
) -> DatasetManifest:
    """Generate i.i.d. scenes under distinct seeds and write the layout."""
    vocab = vocab or Vocabulary()
    out_dir = Path(out_dir)
    train_ids, val_ids = [], []
    for i in range(n_train + n_val):
        split, ids = ("train", train_ids) if i < n_train else ("val", val_ids)
        sid = f"seq_{i:04d}"
        record = generate_scene(distribution.sample(seed * 100003 + i), vocab)
        save_sequence(out_dir / split / sid, record.sequence, record.layer_index_map)
        ids.append(sid)
    manifest = DatasetManifest(root=out_dir, train=train_ids, val=val_ids, vocabulary=vocab)
    manifest.save()
    return manifest


def load_records(manifest: DatasetManifest, split: str):
    """Yield (seq_id, PaintingSequence) for a split."""
    for seq_dir in manifest.sequence_dirs(split):
        yield seq_dir.name, load_sequence(seq_dir, manifest.vocabulary)
