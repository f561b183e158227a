"""Command-line surface.

Every command reads a RunConfig, runs one pipeline stage, and writes its
outputs plus the resolved config and a machine-readable exit summary into
the output directory. Exit codes: 0 ok, 2 config, 3 data, 4 model,
5 numeric.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
import torch

from .checkpoint import (
    CheckpointError,
    file_sha256,
    load_mask_generator,
    load_renderer,
    load_text_generator,
    save_model,
)
from .config import ConfigError, RunConfig, load_config, write_resolved_config
from .core import Vocabulary
from .dataset import DatasetError, DatasetManifest, emit_dataset, load_records
from .ingest import IngestError, IngestSpec, ingest as run_ingest
from .inference import GenerationConfig, export_trace, generate, load_trace, time_map
from .metrics import MetricError, distance_curve, evaluate_pairs, single_update_eval
from .renderer import GuidanceConfig, RendererTrainConfig, train_renderer
from .synth import SceneDistribution

log = logging.getLogger("paintgen")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_MODEL = 4
EXIT_NUMERIC = 5

_CATEGORY = {EXIT_CONFIG: "config", EXIT_DATA: "data",
             EXIT_MODEL: "model", EXIT_NUMERIC: "numeric"}


def _classify(exc: Exception) -> int:
    if isinstance(exc, (ConfigError, FileNotFoundError)):
        return EXIT_CONFIG
    if isinstance(exc, (DatasetError, IngestError, MetricError)):
        return EXIT_DATA
    if isinstance(exc, (CheckpointError,)):
        return EXIT_MODEL
    if isinstance(exc, (FloatingPointError, OverflowError)):
        return EXIT_NUMERIC
    if isinstance(exc, RuntimeError):
        msg = str(exc).lower()
        if "finite" in msg or "nan" in msg:
            return EXIT_NUMERIC
        return EXIT_MODEL
    if isinstance(exc, ValueError):
        return EXIT_CONFIG
    raise exc


def _write_summary(out_dir: Path, command: str, code: int, message: str,
                   outputs: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "status": "ok" if code == EXIT_OK else "error",
        "category": _CATEGORY.get(code),
        "message": message,
        "outputs": outputs or {},
    }
    (out_dir / "exit_summary.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _run_stage(command: str, cfg: RunConfig, out_dir: Path, fn) -> None:
    """Shared wrapper: run fn() -> (message, outputs dict), then persist the
    resolved config and exit summary."""
    try:
        message, outputs, provenance = fn()
    except Exception as exc:  # noqa: BLE001 - converted to exit categories
        code = _classify(exc)
        log.error(f"{command} failed ({_CATEGORY[code]}): {exc}")
        _write_summary(out_dir, command, code, str(exc))
        sys.exit(code)
    write_resolved_config(cfg, out_dir, extra=provenance)
    _write_summary(out_dir, command, EXIT_OK, message, outputs)
    click.echo(message)


def _checkpoint_hashes(cfg: RunConfig, *names: str) -> dict:
    paths = {
        "codec": cfg.paths.codec_checkpoint,
        "text": cfg.paths.text_checkpoint,
        "mask": cfg.paths.mask_checkpoint,
        "renderer": cfg.paths.renderer_checkpoint,
    }
    return {
        "checkpoint_hashes": {
            n: file_sha256(paths[n]) for n in names if Path(paths[n]).exists()
        }
    }


def _resolve_codec(cfg: RunConfig, pairs=None, train_if_missing: bool = False):
    """Get the latent codec the stage should use.

    A conv codec is loaded from its checkpoint when present; training
    stages may pretrain one on the fly and save it for later stages."""
    from .codec import build_codec, load_codec, save_codec, train_conv_codec

    if cfg.model.codec == "block":
        return build_codec("block")
    path = Path(cfg.paths.codec_checkpoint)
    if path.exists():
        return load_codec(path)
    if not train_if_missing or pairs is None:
        raise CheckpointError(
            f"codec checkpoint not found: {path}; run train-mask or "
            "train-renderer first"
        )
    log.info("pretraining conv codec (no checkpoint at %s)", path)
    frames = torch.cat(list(pairs.frames), dim=0)
    codec = train_conv_codec(frames, seed=cfg.model.seed)
    save_codec(path, codec)
    return codec


def _load_models(cfg: RunConfig, vocab: Vocabulary):
    text_gen = load_text_generator(cfg.paths.text_checkpoint, vocab)
    mask_gen = load_mask_generator(cfg.paths.mask_checkpoint, vocab)
    bundle = load_renderer(cfg.paths.renderer_checkpoint, vocab)
    return text_gen, mask_gen, bundle


def _generation_config(cfg: RunConfig, dt, seed, max_steps, alpha) -> GenerationConfig:
    g = cfg.generation
    return GenerationConfig(
        dt_s=dt if dt is not None else g.dt_s,
        max_steps=max_steps if max_steps is not None else g.max_steps,
        stop_epsilon=g.stop_epsilon,
        alpha=alpha if alpha is not None else g.alpha,
        guidance=GuidanceConfig(
            scale_text=g.text_scale, scale_mask=g.mask_scale,
            scale_time=g.time_scale, scale_embed=g.embed_scale,
        ),
        seed=seed if seed is not None else g.seed,
    )


def _config_option(f):
    return click.option(
        "--config", "config_path", required=True,
        type=click.Path(exists=False), help="Path to a YAML or JSON run config.",
    )(f)


def _out_option(f):
    return click.option("--out", "out", default=None,
                        type=click.Path(), help="Override output directory.")(f)


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose: bool):
    """Painting time-lapse reconstruction pipeline."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_cfg(config_path: str) -> RunConfig:
    try:
        return load_config(config_path)
    except Exception as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


@main.command()
@_config_option
@click.option("--seed", type=int, default=None)
@_out_option
def synth(config_path, seed, out):
    """Generate the synthetic training/validation dataset."""
    cfg = _load_cfg(config_path)
    root = Path(out or cfg.data.root)

    def stage():
        dist = SceneDistribution(canvas_size=(cfg.data.canvas_size,) * 2)
        manifest = emit_dataset(
            cfg.data.n_train, cfg.data.n_val, dist, root,
            seed=seed if seed is not None else cfg.data.seed,
        )
        msg = (f"wrote {len(manifest.train)} train / {len(manifest.val)} val "
               f"scenes to {root}")
        return msg, {"dataset": str(root)}, {}

    _run_stage("synth", cfg, root, stage)


def _training_pairs(cfg: RunConfig, split: str):
    from .pairs import build_pairs

    manifest = DatasetManifest.load(cfg.data.root)
    return manifest, build_pairs(manifest, split, alpha=cfg.metrics.alpha)


@main.command("train-text")
@_config_option
def train_text(config_path):
    """Train the instruction classifier."""
    cfg = _load_cfg(config_path)
    out_dir = Path(cfg.paths.text_checkpoint).parent

    def stage():
        from .instruction import TextTrainConfig, text_accuracy, train_text_generator

        manifest, pairs = _training_pairs(cfg, "train")
        _, val_pairs = _training_pairs(cfg, "val")
        tc = TextTrainConfig(steps=cfg.model.text_steps, batch=cfg.model.text_batch,
                             lr=cfg.model.text_lr, seed=cfg.model.seed)
        codec = _resolve_codec(cfg, pairs, train_if_missing=True)
        gen = train_text_generator(pairs, tc, val_pairs, aug_codec=codec)
        save_model(cfg.paths.text_checkpoint, "text", gen, {})
        acc = text_accuracy(gen, val_pairs)
        return (f"text generator saved to {cfg.paths.text_checkpoint} "
                f"(val accuracy {acc:.3f})",
                {"checkpoint": cfg.paths.text_checkpoint, "val_accuracy": acc},
                _checkpoint_hashes(cfg, "text", "codec"))

    _run_stage("train-text", cfg, out_dir, stage)


@main.command("train-mask")
@_config_option
def train_mask(config_path):
    """Train the region-mask generator."""
    cfg = _load_cfg(config_path)
    out_dir = Path(cfg.paths.mask_checkpoint).parent

    def stage():
        from .instruction import MaskTrainConfig, train_mask_generator

        manifest, pairs = _training_pairs(cfg, "train")
        mc = MaskTrainConfig(
            steps=cfg.model.mask_steps, batch=cfg.model.mask_batch,
            lr=cfg.model.mask_lr, seed=cfg.model.seed,
            use_text=cfg.model.mask_use_text, base_width=cfg.model.mask_base_width,
        )
        codec = _resolve_codec(cfg, pairs, train_if_missing=True)
        gen = train_mask_generator(pairs, codec, mc)
        save_model(cfg.paths.mask_checkpoint, "mask", gen,
                   {"base": mc.base_width, "use_text": mc.use_text})
        return (f"mask generator saved to {cfg.paths.mask_checkpoint}",
                {"checkpoint": cfg.paths.mask_checkpoint},
                _checkpoint_hashes(cfg, "mask", "codec"))

    _run_stage("train-mask", cfg, out_dir, stage)


@main.command("train-renderer")
@_config_option
def train_renderer_cmd(config_path):
    """Train the multi-conditioned diffusion renderer."""
    cfg = _load_cfg(config_path)
    out_dir = Path(cfg.paths.renderer_checkpoint).parent

    def stage():
        manifest, pairs = _training_pairs(cfg, "train")
        rc = RendererTrainConfig(
            steps=cfg.model.renderer_steps, batch=cfg.model.renderer_batch,
            lr=cfg.model.renderer_lr, seed=cfg.model.seed,
            base_width=cfg.model.renderer_base_width,
            codec_kind=cfg.model.codec,
        )
        codec = _resolve_codec(cfg, pairs, train_if_missing=True)
        bundle = train_renderer(pairs, rc, codec=codec)
        save_model(cfg.paths.renderer_checkpoint, "renderer", bundle,
                   {"base": rc.base_width, "codec_kind": cfg.model.codec})
        return (f"renderer saved to {cfg.paths.renderer_checkpoint}",
                {"checkpoint": cfg.paths.renderer_checkpoint},
                _checkpoint_hashes(cfg, "renderer", "codec"))

    _run_stage("train-renderer", cfg, out_dir, stage)


@main.command()
@_config_option
@click.option("--scene", default=None, help="Validation scene id (default: first).")
@click.option("--dt", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--max-steps", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@_out_option
def infer(config_path, scene, dt, seed, max_steps, alpha, out):
    """Generate a painting sequence for a validation-scene target."""
    cfg = _load_cfg(config_path)
    out_dir = Path(out or Path(cfg.paths.out_dir) / "trace")

    def stage():
        manifest = DatasetManifest.load(cfg.data.root)
        if not manifest.val:
            raise DatasetError("dataset has no validation scenes")
        sid = scene or manifest.val[0]
        seq = dict(load_records(manifest, "val")).get(sid)
        if seq is None:
            raise DatasetError(f"scene {sid} not in validation split")
        models = _load_models(cfg, manifest.vocabulary)
        gcfg = _generation_config(cfg, dt, seed, max_steps, alpha)
        trace = generate(seq.target, models, gcfg)
        export_trace(trace, out_dir)
        msg = (f"generated {trace.sequence.n_transitions} steps for {sid} "
               f"({trace.termination}); trace at {out_dir}")
        return msg, {"trace": str(out_dir), "scene": sid}, \
            _checkpoint_hashes(cfg, "text", "mask", "renderer")

    _run_stage("infer", cfg, out_dir, stage)


@main.command()
@_config_option
@click.option("--gen-dir", default=None, type=click.Path(),
              help="Directory of trace subdirectories named by scene id. "
                   "Omit to self-compare the oracle sequences.")
@click.option("--single-update/--no-single-update", default=False,
              help="Also run the one-step text/mask analysis (needs checkpoints).")
@click.option("--alpha", type=float, default=None)
@_out_option
def evaluate(config_path, gen_dir, single_update, alpha, out):
    """Score generated sequences against the validation oracle."""
    cfg = _load_cfg(config_path)
    out_dir = Path(out or Path(cfg.paths.out_dir) / "eval")
    a = alpha if alpha is not None else cfg.metrics.alpha

    def stage():
        from .embedder import SemanticEmbedder
        from .codec import frames_to_tensor

        manifest = DatasetManifest.load(cfg.data.root)
        records = list(load_records(manifest, "val"))
        if not records:
            raise DatasetError("dataset has no validation scenes")
        pairs_list = []
        gt_labels_all, gen_labels_all = [], []
        for sid, real_seq in records:
            real_seq.metadata["seq_id"] = sid
            if gen_dir is None:
                gen_seq = real_seq
            else:
                tdir = Path(gen_dir) / sid
                if not tdir.exists():
                    raise DatasetError(f"no trace for scene {sid} under {gen_dir}")
                gen_seq = load_trace(tdir, manifest.vocabulary).sequence
            pairs_list.append((real_seq, gen_seq))
            if real_seq.labels and gen_seq.labels:
                gt_labels_all.append([i.label for i in real_seq.labels])
                gen_labels_all.append([i.label for i in gen_seq.labels])

        emb_net = SemanticEmbedder()
        embedder = lambda f: emb_net(frames_to_tensor(f))[0].numpy()
        report = evaluate_pairs(pairs_list, embedder, alpha=a)

        if gt_labels_all:
            from .metrics import text_sequence_eval

            cov, lcs = zip(*(
                text_sequence_eval(gt, gen)
                for gt, gen in zip(gt_labels_all, gen_labels_all)
            ))
            report.set_coverage = float(np.mean(cov))
            report.lcs_ratio = float(np.mean(lcs))

        if single_update:
            from .pairs import build_pairs

            val_pairs = build_pairs(manifest, "val", alpha=a)
            text_gen = load_text_generator(cfg.paths.text_checkpoint,
                                           manifest.vocabulary)
            mask_gen = load_mask_generator(cfg.paths.mask_checkpoint,
                                           manifest.vocabulary)
            codec = _resolve_codec(cfg)
            cap = cfg.metrics.max_single_update_pairs or None
            acc, iou_gt, iou_pred = single_update_eval(
                text_gen, mask_gen, codec, val_pairs, alpha=a, max_pairs=cap,
            )
            report.text_accuracy = acc
            report.mask_iou_gt_text = iou_gt
            report.mask_iou_pred_text = iou_pred

        report.validate()
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        msg = (f"lpips {report.lpips_timealigned:.4f} iou {report.iou:.4f} "
               f"ddc {report.ddc:.4f} dts {report.dts_min:.4f} fid {report.fid:.4f}")
        return msg, {"report": str(out_dir / "report.json")}, \
            _checkpoint_hashes(cfg, "text", "mask", "renderer")

    _run_stage("evaluate", cfg, out_dir, stage)


@main.command()
@_config_option
@click.option("--trace", "trace_dir", required=True, type=click.Path(exists=True))
@_out_option
def timemap(config_path, trace_dir, out):
    """Render the per-pixel last-painted-step map for a trace."""
    cfg = _load_cfg(config_path)
    out_dir = Path(out or trace_dir)

    def stage():
        from PIL import Image

        manifest = DatasetManifest.load(cfg.data.root)
        trace = load_trace(trace_dir, manifest.vocabulary)
        tm = time_map(trace, alpha=cfg.metrics.alpha)
        np.save(out_dir / "timemap.npy", tm)
        hi = max(int(tm.max()), 1)
        Image.fromarray(np.round(tm / hi * 255).astype(np.uint8)).save(
            out_dir / "timemap.png"
        )
        return (f"time map ({tm.shape[0]}x{tm.shape[1]}, max step {hi}) "
                f"written to {out_dir}",
                {"timemap": str(out_dir / "timemap.npy")}, {})

    _run_stage("timemap", cfg, out_dir, stage)


@main.command()
@_config_option
@click.option("--source", required=True, type=click.Path(exists=True))
@click.option("--roi", default=None, help="left,top,width,height crop in source pixels.")
@click.option("--min-change", type=float, default=0.0)
@click.option("--fps", type=float, default=1.0)
@click.option("--timestamps", "ts_source", default="fps",
              type=click.Choice(["fps", "filename", "file"]))
@click.option("--seq-id", default="ingested_0000")
@_out_option
def ingest(config_path, source, roi, min_change, fps, ts_source, seq_id, out):
    """Ingest a directory of real frames into the dataset layout."""
    cfg = _load_cfg(config_path)
    out_dir = Path(out or Path(cfg.paths.out_dir) / "ingested")

    def stage():
        roi_t = tuple(int(x) for x in roi.split(",")) if roi else None
        spec = IngestSpec(
            source_dir=source, roi=roi_t, canvas_size=cfg.data.canvas_size,
            min_change=min_change, fps=fps, timestamp_source=ts_source,
        )
        manifest = run_ingest(spec, out_dir, seq_id=seq_id)
        return (f"ingested {seq_id} into {out_dir}",
                {"dataset": str(out_dir)}, {})

    _run_stage("ingest", cfg, out_dir, stage)


@main.command("plot-curves")
@_config_option
@click.option("--gen-dir", default=None, type=click.Path(),
              help="Optional directory of generated traces to overlay.")
@_out_option
def plot_curves(config_path, gen_dir, out):
    """Emit a residual-vs-time plot per validation painting."""
    cfg = _load_cfg(config_path)
    out_dir = Path(out or Path(cfg.paths.out_dir) / "curves")

    def stage():
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        manifest = DatasetManifest.load(cfg.data.root)
        written = []
        for sid, real_seq in load_records(manifest, "val"):
            curve = distance_curve(real_seq, real_seq.target)
            fig, ax = plt.subplots(figsize=(5, 3.5))
            t, d = curve.as_arrays()
            ax.plot(t, d, marker="o", label="reference")
            if gen_dir is not None:
                tdir = Path(gen_dir) / sid
                if tdir.exists():
                    gen_seq = load_trace(tdir, manifest.vocabulary).sequence
                    gt, gd = distance_curve(gen_seq, real_seq.target).as_arrays()
                    ax.plot(gt, gd, marker="s", label="generated")
            ax.set_xlabel("time (minutes)")
            ax.set_ylabel("distance to target")
            ax.set_title(sid)
            ax.legend()
            fig.tight_layout()
            out_dir.mkdir(parents=True, exist_ok=True)
            path = out_dir / f"curve_{sid}.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(str(path))
        if not written:
            raise DatasetError("dataset has no validation scenes")
        return f"wrote {len(written)} curve plots to {out_dir}", \
            {"plots": written}, {}

    _run_stage("plot-curves", cfg, out_dir, stage)


if __name__ == "__main__":
    main()
