"""Shared fixtures.

The heavyweight artifacts (synthetic dataset, trained checkpoints, generated
traces) are built once and cached on disk so repeated test runs are fast.
Set IP_CACHE_DIR to control the cache location; default is
~/.cache/paintgen-tests. Delete the cache to force a rebuild.
"""

from __future__ import annotations

import functools
import os
from pathlib import Path

import pytest

from paintgen.checkpoint import (
    load_mask_generator,
    load_renderer,
    load_text_generator,
    save_model,
)
from paintgen.codec import load_codec, save_codec, train_conv_codec
from paintgen.dataset import DatasetManifest, emit_dataset
from paintgen.inference import GenerationConfig, export_trace, generate, load_trace
from paintgen.synth import SceneDistribution

CACHE_VERSION = "v1"

N_TRAIN, N_VAL = 64, 8
TEXT_STEPS = 2500
MASK_STEPS = 1000
RENDERER_STEPS = 4000


def cache_root() -> Path:
    base = os.environ.get("IP_CACHE_DIR")
    root = Path(base) if base else Path.home() / ".cache" / "paintgen-tests"
    return root / CACHE_VERSION


@functools.lru_cache(maxsize=None)
def ensure_dataset() -> DatasetManifest:
    root = cache_root() / "dataset"
    if not (root / "dataset.json").exists():
        print(f"[cache] generating dataset ({N_TRAIN} train / {N_VAL} val) at {root}")
        emit_dataset(N_TRAIN, N_VAL, SceneDistribution(), root, seed=0)
    return DatasetManifest.load(root)


@functools.lru_cache(maxsize=None)
def ensure_pairs(split: str):
    from paintgen.pairs import build_pairs

    return build_pairs(ensure_dataset(), split)


@functools.lru_cache(maxsize=None)
def ensure_codec():
    import torch

    path = cache_root() / "codec.pt"
    if not path.exists():
        print("[cache] pretraining conv codec")
        frames = torch.cat(list(ensure_pairs("train").frames), dim=0)
        codec = train_conv_codec(frames, seed=0)
        save_codec(path, codec)
    return load_codec(path)


@functools.lru_cache(maxsize=None)
def ensure_text_generator():
    from paintgen.instruction import TextTrainConfig, train_text_generator

    path = cache_root() / "text.pt"
    manifest = ensure_dataset()
    if not path.exists():
        print(f"[cache] training text generator ({TEXT_STEPS} steps)")
        gen = train_text_generator(
            ensure_pairs("train"),
            TextTrainConfig(steps=TEXT_STEPS),
            ensure_pairs("val"),
            aug_codec=ensure_codec(),
        )
        save_model(path, "text", gen, {})
    return load_text_generator(path, manifest.vocabulary)


@functools.lru_cache(maxsize=None)
def ensure_mask_generator(use_text: bool = True):
    from paintgen.instruction import MaskTrainConfig, train_mask_generator

    name = "mask.pt" if use_text else "mask_notext.pt"
    path = cache_root() / name
    manifest = ensure_dataset()
    if not path.exists():
        print(f"[cache] training mask generator use_text={use_text} ({MASK_STEPS} steps)")
        cfg = MaskTrainConfig(steps=MASK_STEPS, use_text=use_text)
        gen = train_mask_generator(ensure_pairs("train"), ensure_codec(), cfg)
        save_model(path, "mask", gen, {"base": cfg.base_width, "use_text": use_text})
    return load_mask_generator(path, manifest.vocabulary)


@functools.lru_cache(maxsize=None)
def ensure_renderer():
    from paintgen.renderer import RendererTrainConfig, train_renderer

    path = cache_root() / "renderer.pt"
    manifest = ensure_dataset()
    if not path.exists():
        print(f"[cache] training renderer ({RENDERER_STEPS} steps)")
        cfg = RendererTrainConfig(steps=RENDERER_STEPS, codec_kind="conv")
        bundle = train_renderer(ensure_pairs("train"), cfg, codec=ensure_codec())
        save_model(path, "renderer", bundle,
                   {"base": cfg.base_width, "codec_kind": "conv"})
    return load_renderer(path, manifest.vocabulary)


def ensure_trace(scene_id: str, dt_s: float, seed: int, max_steps: int = 60):
    """Generate (or reload) a full trace for one validation scene."""
    from paintgen.dataset import load_sequence

    manifest = ensure_dataset()
    tdir = cache_root() / "traces" / f"dt{int(dt_s)}_s{seed}" / scene_id
    if not (tdir / "trace.json").exists():
        real = load_sequence(manifest.root / "val" / scene_id, manifest.vocabulary)
        models = (ensure_text_generator(), ensure_mask_generator(True), ensure_renderer())
        cfg = GenerationConfig(dt_s=dt_s, max_steps=max_steps, seed=seed)
        print(f"[cache] generating trace {scene_id} dt={dt_s} seed={seed}")
        trace = generate(real.target, models, cfg)
        export_trace(trace, tdir)
    return load_trace(tdir, manifest.vocabulary)


@pytest.fixture(scope="session")
def manifest():
    return ensure_dataset()


@pytest.fixture(scope="session")
def train_pairs():
    return ensure_pairs("train")


@pytest.fixture(scope="session")
def val_pairs():
    return ensure_pairs("val")


@pytest.fixture(scope="session")
def conv_codec():
    return ensure_codec()


@pytest.fixture(scope="session")
def text_gen():
    return ensure_text_generator()


@pytest.fixture(scope="session")
def mask_gen():
    return ensure_mask_generator(True)


@pytest.fixture(scope="session")
def mask_gen_notext():
    return ensure_mask_generator(False)


@pytest.fixture(scope="session")
def renderer_bundle():
    return ensure_renderer()
