"""End-to-end acceptance gates for the whole pipeline.

One test per criterion, each asserting the pinned thresholds:
1. core math (masks, interval encoding, diffusion schedule, DTW, FID)
2. single-pair overfit sanities for all three trainable stages
3. trained single-update quality on the validation split
4. full autoregressive generation quality at dt=20s
5. interval conditioning behavior (mask area and step count vs dt)
6. emergent time-map ordering vs the oracle layer map
7. metric self-consistency (self-comparison exact, blank strictly worse)
8. determinism and checkpoint vocabulary safety

The heavyweight artifacts come from the shared disk cache (see conftest).
"""

from __future__ import annotations

import dataclasses
import itertools

import numpy as np
import pytest
import scipy.stats
import torch

from paintgen.core import (
    ImageFrame,
    Keyframe,
    PaintingSequence,
    Vocabulary,
    difference_mask,
    downsample_mask,
    mean_perceptual_distance,
    positional_encode_interval,
    upsample_mask,
)
from paintgen.codec import build_codec, frames_to_tensor, tensor_to_frames
from paintgen.dataset import load_layer_map, load_sequence
from paintgen.embedder import SemanticEmbedder
from paintgen.inference import time_map
from paintgen.instruction import mask_iou, predict_mask
from paintgen.metrics import (
    dtw_cost,
    evaluate_pairs,
    fid,
    text_sequence_eval,
)
from paintgen.renderer import NoiseSchedule, forward_diffuse

from conftest import ensure_dataset, ensure_trace

DT_DEFAULT = 20.0
STEP_SEEDS = (0, 1, 2, 3, 4)
STEP_SCENES = 3  # scenes used for the step-count part of criterion 5


def _val_ids(manifest):
    return sorted(manifest.val)


def _subset(pairs, i: int):
    idx = np.asarray([i])
    return dataclasses.replace(
        pairs,
        pair_seq=pairs.pair_seq[idx],
        pair_t=pairs.pair_t[idx],
        label_ids=pairs.label_ids[idx],
        dt_s=pairs.dt_s[idx],
        pe21=pairs.pe21[idx],
        mt_full=pairs.mt_full[idx],
        mt_latent=pairs.mt_latent[idx],
        md_latent=pairs.md_latent[idx],
        gt_mask_full=pairs.gt_mask_full[idx],
        pending=pairs.pending[idx],
    )


# ---------------------------------------------------------------------------
# 1. core-math suite


def test_criterion_1_core_math():
    rng = np.random.default_rng(0)

    # difference mask: identity is empty, black vs white saturates at 1
    img = ImageFrame(rng.random((64, 64, 3)))
    assert difference_mask(img, img, 0.2).area == 0
    black = ImageFrame(np.zeros((64, 64, 3)))
    white = ImageFrame(np.ones((64, 64, 3)))
    assert mean_perceptual_distance(black, white) == pytest.approx(1.0)

    # interval encoding: 21 dims, injective below the clamp horizon
    dts = np.linspace(0.5, 119.5, 40)
    codes = np.stack([positional_encode_interval(d).pe21 for d in dts])
    assert codes.shape == (40, 21)
    dist = np.linalg.norm(codes[:, None] - codes[None], axis=-1)
    off_diag = dist[~np.eye(40, dtype=bool)]
    assert off_diag.min() > 1e-6

    # mask resampling round trip
    bits = (rng.random((64, 64)) < 0.2).astype(np.uint8)
    from paintgen.core import RegionMask

    m = RegionMask(bits, "full")
    down = downsample_mask(m)
    up = upsample_mask(down)
    assert ((m.bits == 1) <= (up.bits == 1)).all()  # superset
    assert (downsample_mask(up).bits == down.bits).all()  # identity on latent

    # forward diffusion is variance preserving (Monte Carlo)
    schedule = NoiseSchedule()
    g = torch.Generator().manual_seed(0)
    z0 = torch.randn((4096, 4), generator=g)
    for s in (1, 500, 998):
        eps = torch.randn(z0.shape, generator=g)
        zs = forward_diffuse(schedule, z0, np.full(4096, s), eps)
        assert abs(float(zs.var()) - 1.0) < 0.05

    # DTW equals brute force on all short curves
    def brute(a, b):
        best = [np.inf]

        def walk(i, j, acc):
            acc = acc + float(np.linalg.norm(a[i] - b[j]))
            if i == len(a) - 1 and j == len(b) - 1:
                best[0] = min(best[0], acc)
                return
            for di, dj in ((1, 0), (0, 1), (1, 1)):
                if i + di < len(a) and j + dj < len(b):
                    walk(i + di, j + dj, acc)

        walk(0, 0, 0.0)
        return best[0]

    for _ in range(100):
        a = rng.random((rng.integers(1, 6), 2))
        b = rng.random((rng.integers(1, 6), 2))
        assert dtw_cost(a, b) == pytest.approx(brute(a, b), abs=1e-9)

    # FID matches the analytic Gaussian value within 2%
    d = 8
    mu2 = np.full(d, 0.5)
    analytic = float(np.dot(mu2, mu2))  # same covariance, shifted mean
    xa = rng.standard_normal((20000, d))
    xb = rng.standard_normal((20000, d)) + mu2
    est = fid(list(xa), list(xb), lambda v: v)
    assert est == pytest.approx(analytic, rel=0.02)


# ---------------------------------------------------------------------------
# 2. overfit sanities


def test_criterion_2_overfit_text(train_pairs):
    from paintgen.instruction import TextTrainConfig, text_accuracy, train_text_generator

    one = _subset(train_pairs, 5)
    cfg = TextTrainConfig(steps=200, batch=1, seed=0, hflip=False)
    gen = train_text_generator(one, cfg)
    assert text_accuracy(gen, one) == 1.0


def test_criterion_2_overfit_mask(train_pairs):
    from paintgen.instruction import MaskTrainConfig, train_mask_generator

    one = _subset(train_pairs, 5)
    codec = build_codec("block")
    cfg = MaskTrainConfig(steps=500, batch=1, seed=0, hflip=False,
                          corrupt_p=0.0, terminal_p=0.0, irrelevant_p=0.0)
    gen = train_mask_generator(one, codec, cfg)
    target = tensor_to_frames(one.target(0)[None])[0]
    current = tensor_to_frames(one.current(0)[None])[0]
    label = one.vocab.by_id(int(one.label_ids[0]))
    pred = predict_mask(gen, codec, target, current, label, float(one.dt_s[0]))
    from paintgen.core import RegionMask

    gt_latent = RegionMask(one.mt_latent[0, 0].numpy().astype(np.uint8), "latent")
    assert mask_iou(pred.latent, gt_latent) >= 0.9


def test_criterion_2_overfit_renderer(train_pairs):
    from paintgen.renderer import (
        GuidanceConfig,
        RendererTrainConfig,
        train_renderer,
        training_step,
    )

    one = _subset(train_pairs, 5)
    cfg = RendererTrainConfig(
        steps=2000, batch=1, seed=0,
        guidance=GuidanceConfig(condition_dropout_p=0.0),
    )
    bundle = train_renderer(one, cfg)
    # measure the training objective on the memorized transition
    schedule = NoiseSchedule()
    rng = torch.Generator().manual_seed(123)
    losses = [
        training_step(bundle, schedule, one.batch(np.array([0])), cfg.guidance, rng)
        for _ in range(16)
    ]
    assert float(np.mean(losses)) < 0.1


# ---------------------------------------------------------------------------
# 3. trained single-update quality


def test_criterion_3_single_update(text_gen, mask_gen, mask_gen_notext,
                                   conv_codec, val_pairs):
    from paintgen.metrics import single_update_eval

    acc, iou_gt, iou_pred = single_update_eval(text_gen, mask_gen, conv_codec, val_pairs)
    _, iou_notext, _ = single_update_eval(text_gen, mask_gen_notext, conv_codec, val_pairs)
    print(f"\nacc={acc:.3f} iou_gt={iou_gt:.3f} iou_pred={iou_pred:.3f} "
          f"iou_notext={iou_notext:.3f}")
    assert acc >= 0.85
    assert iou_gt >= 0.6
    assert iou_pred >= iou_gt - 0.1
    assert iou_notext <= iou_gt - 0.05


# ---------------------------------------------------------------------------
# 4. end-to-end generation at dt=20


def test_criterion_4_end_to_end(manifest):
    for sid in _val_ids(manifest):
        trace = ensure_trace(sid, DT_DEFAULT, seed=0)
        seq = trace.sequence
        real = load_sequence(manifest.root / "val" / sid, manifest.vocabulary)

        assert trace.termination == "converged", sid
        final = mean_perceptual_distance(seq.keyframes[-1].image, seq.target)
        assert final < 0.1, (sid, final)

        dists = [
            mean_perceptual_distance(kf.image, seq.target) for kf in seq.keyframes
        ]
        deltas = np.diff(dists)
        frac_nonincreasing = float((deltas <= 1e-6).mean())
        assert frac_nonincreasing >= 0.9, (sid, frac_nonincreasing)

        gt_labels = [i.label for i in real.labels]
        gen_labels = [i.label for i in seq.labels]
        coverage, lcs_ratio = text_sequence_eval(gt_labels, gen_labels)
        assert lcs_ratio >= 0.6, (sid, lcs_ratio)
        assert coverage >= 0.8, (sid, coverage)


# ---------------------------------------------------------------------------
# 5. interval behavior


def test_criterion_5_mask_area_vs_dt(mask_gen, conv_codec, val_pairs):
    means = {}
    for dt in (10.0, 20.0, 30.0):
        areas = []
        for i in range(len(val_pairs)):
            target = tensor_to_frames(val_pairs.target(i)[None])[0]
            current = tensor_to_frames(val_pairs.current(i)[None])[0]
            label = val_pairs.vocab.by_id(int(val_pairs.label_ids[i]))
            pred = predict_mask(mask_gen, conv_codec, target, current, label, dt)
            areas.append(pred.latent.area_fraction)
        means[dt] = float(np.mean(areas))
    print(f"\nmask area means: {means}")
    assert means[30.0] > means[20.0] > means[10.0]


def test_criterion_5_step_count_vs_dt(manifest):
    ids = _val_ids(manifest)[:STEP_SCENES]
    steps = {10.0: [], 30.0: []}
    for dt, sid, seed in itertools.product(steps, ids, STEP_SEEDS):
        trace = ensure_trace(sid, dt, seed=seed)
        steps[dt].append(trace.sequence.n_transitions)
    m10, m30 = float(np.mean(steps[10.0])), float(np.mean(steps[30.0]))
    print(f"\nmean steps dt10={m10:.2f} dt30={m30:.2f}")
    assert m10 > m30


# ---------------------------------------------------------------------------
# 6. time-map ordering


def test_criterion_6_time_map(manifest):
    corrs = []
    for sid in _val_ids(manifest):
        trace = ensure_trace(sid, DT_DEFAULT, seed=0)
        tm = time_map(trace)
        layer = load_layer_map(manifest.root / "val" / sid)
        assert layer is not None
        painted = layer > 0
        rho = scipy.stats.spearmanr(tm[painted], layer[painted]).statistic
        corrs.append(float(rho))
    mean_rho = float(np.mean(corrs))
    print(f"\nspearman per scene: {[round(c, 3) for c in corrs]} mean {mean_rho:.3f}")
    assert mean_rho >= 0.8


# ---------------------------------------------------------------------------
# 7. metric self-consistency


def test_criterion_7_metric_self_consistency(manifest):
    sid = _val_ids(manifest)[0]
    real = load_sequence(manifest.root / "val" / sid, manifest.vocabulary)
    emb_net = SemanticEmbedder()
    embedder = lambda f: emb_net(frames_to_tensor(f))[0].numpy()

    self_report = evaluate_pairs([(real, real)], embedder)
    assert self_report.lpips_timealigned == 0.0
    assert self_report.ddc == 0.0
    assert self_report.dts_min == 0.0
    assert self_report.iou == 1.0

    blank = ImageFrame.blank(real.target.height, real.target.width)
    blank_seq = PaintingSequence(
        keyframes=[Keyframe(blank, 0.0, 0), Keyframe(blank, DT_DEFAULT, 1)],
        target=real.target,
        metadata={"seq_id": "blank"},
    )
    blank_report = evaluate_pairs([(real, blank_seq)], embedder)
    assert blank_report.lpips_timealigned > self_report.lpips_timealigned
    assert blank_report.iou < self_report.iou
    assert blank_report.ddc > self_report.ddc
    assert blank_report.dts_min > self_report.dts_min
    assert blank_report.fid > self_report.fid


# ---------------------------------------------------------------------------
# 8. determinism and vocabulary safety


def test_criterion_8_infer_determinism(manifest, tmp_path):
    from click.testing import CliRunner

    from conftest import cache_root
    from paintgen.cli import main

    cfg = tmp_path / "config.json"
    cfg.write_text(
        '{"data": {"root": "%s"}, "model": {"codec": "conv"}, "paths": {'
        '"codec_checkpoint": "%s", "text_checkpoint": "%s", '
        '"mask_checkpoint": "%s", "renderer_checkpoint": "%s", '
        '"out_dir": "%s"}}'
        % (
            ensure_dataset().root,
            cache_root() / "codec.pt",
            cache_root() / "text.pt",
            cache_root() / "mask.pt",
            cache_root() / "renderer.pt",
            tmp_path,
        )
    )
    runner = CliRunner()
    outputs = []
    for run in ("a", "b"):
        res = runner.invoke(
            main,
            ["infer", "--config", str(cfg), "--seed", "7", "--max-steps", "3",
             "--out", str(tmp_path / run)],
        )
        assert res.exit_code == 0, res.output
        outputs.append((tmp_path / run / "trace.json").read_bytes())
    assert outputs[0] == outputs[1]


def test_criterion_8_vocab_mismatch_refused():
    from paintgen.checkpoint import CheckpointError, load_text_generator

    from conftest import cache_root

    other = Vocabulary(("sky", "sea"))
    with pytest.raises(CheckpointError, match="vocabulary mismatch"):
        load_text_generator(cache_root() / "text.pt", other)
