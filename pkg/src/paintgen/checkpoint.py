"""Self-describing checkpoint containers.

Each file stores parameter arrays, the builder config, and a hash of the
vocabulary the model was trained with; loading against a different
vocabulary is refused.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import torch

from .core import Vocabulary

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: Path | str, kind: str, state_dict: dict,
                    config: dict, vocab: Vocabulary) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "state_dict": state_dict,
        "config": config,
        "vocabulary": list(vocab.labels),
        "vocab_hash": vocab.content_hash(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: Path | str, kind: str, vocab: Vocabulary) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("kind") != kind:
        raise CheckpointError(
            f"{path}: expected a {kind!r} checkpoint, found {payload.get('kind')!r}"
        )
    if payload.get("vocab_hash") != vocab.content_hash():
        raise CheckpointError(
            f"{path}: vocabulary mismatch (checkpoint trained on "
            f"{payload.get('vocabulary')}, current {list(vocab.labels)})"
        )
    return payload


def file_sha256(path: Path | str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# Model-level wrappers: rebuild the module from its stored builder config,
# then load weights. Imports stay inside the functions so this module keeps
# no torch-model dependencies at import time.


def save_model(path: Path | str, kind: str, model, config: dict) -> None:
    save_checkpoint(path, kind, model.state_dict(), config, model.vocab)


def load_text_generator(path: Path | str, vocab: Vocabulary):
    from .instruction import TextGenerator

    payload = load_checkpoint(path, "text", vocab)
    gen = TextGenerator(vocab, **payload["config"])
    gen.load_state_dict(payload["state_dict"])
    gen.eval()
    return gen


def load_mask_generator(path: Path | str, vocab: Vocabulary):
    from .instruction import MaskGenerator

    payload = load_checkpoint(path, "mask", vocab)
    gen = MaskGenerator(vocab, **payload["config"])
    gen.load_state_dict(payload["state_dict"])
    gen.eval()
    return gen


def load_renderer(path: Path | str, vocab: Vocabulary):
    from .renderer import DenoiserBundle

    payload = load_checkpoint(path, "renderer", vocab)
    bundle = DenoiserBundle(vocab, **payload["config"])
    bundle.load_state_dict(payload["state_dict"])
    bundle.eval()
    return bundle
