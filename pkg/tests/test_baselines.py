"""Baselines: multitask heads and decode, two-stage pipeline, dispatch."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from conftest import make_video, small_train_config
from osmsl.baselines import (
    MultiTaskModel,
    TwoStageModel,
    build_model,
    train_multitask,
    train_twostage,
)
from osmsl.data import shot_boundary_targets, shot_category_indices
from osmsl.scheme import LabelScheme, validate_partition
from osmsl.synth import SynthConfig, generate_corpus
from osmsl.train import (
    TrainConfig,
    init_parameters,
    load_checkpoint,
    save_checkpoint,
    video_tensors,
)

BIG = 1e4


def make_multitask(scheme, d_vis=4, d_aud=3, seed=0, **kwargs):
    cfg = small_train_config()
    model = MultiTaskModel(scheme, d_vis, d_aud, cfg.diffcorr, cfg.encoder, **kwargs)
    init_parameters(model, seed)
    return model


def make_twostage(scheme, d_vis=4, d_aud=3, seed=0):
    cfg = small_train_config()
    model = TwoStageModel(scheme, d_vis, d_aud, cfg.diffcorr, cfg.encoder)
    init_parameters(model, seed)
    return model


def plant_logits(model, b_logits, c_logits):
    planted = (
        torch.as_tensor(b_logits, dtype=torch.float64),
        torch.as_tensor(c_logits, dtype=torch.float64),
    )
    model.head_logits = lambda batch, train_mode: planted


def separable_corpus():
    return generate_corpus(
        SynthConfig(
            seed=21,
            n_videos=4,
            shots_min=8,
            shots_max=10,
            scene_len_max=4,
            n_categories=2,
            d_vis=4,
            d_aud=4,
            sigma_scene=0.2,
            sigma_shot=0.02,
        )
    )


# ------------------------------------------------------------------ multitask


def test_multitask_requires_categories(ss_scheme):
    with pytest.raises(ValueError, match="category-typed"):
        MultiTaskModel(ss_scheme, 4, 3)


def test_multitask_head_shapes(ssc3):
    model = make_multitask(ssc3)
    videos = [
        make_video("a", [2, 2], ["A", "B"], ssc3, seed=1),
        make_video("b", [3], ["C"], ssc3, seed=2),
    ]
    b_logits, c_logits = model.head_logits(
        [video_tensors(v) for v in videos], train_mode=True
    )
    assert b_logits.shape == (7,)
    assert c_logits.shape == (7, 3)


def test_multitask_perfect_logits_zero_loss(ssc2):
    video = make_video("v", [2, 3], ["A", "B"], ssc2, seed=3)
    model = make_multitask(ssc2)
    b = BIG * (2.0 * torch.from_numpy(shot_boundary_targets(video)) - 1.0)
    c = BIG * torch.eye(2, dtype=torch.float64)[shot_category_indices(video)]
    plant_logits(model, b, c)
    loss, diag = model.forward_loss([video])
    assert float(loss.detach()) == pytest.approx(0.0, abs=1e-8)
    assert set(diag["tasks"]) == {"segmentation", "classification"}


def test_multitask_zero_class_weight_reduces_to_segmentation(ssc2):
    video = make_video("v", [2, 2], ["A", "B"], ssc2, seed=4)
    model = make_multitask(ssc2, lambda_class=0.0)
    loss, diag = model.forward_loss([video])
    assert float(loss.detach()) == diag["tasks"]["segmentation"]
    assert diag["tasks"]["classification"] > 0.0


def test_multitask_loss_weights_scale_components(ssc2):
    video = make_video("v", [2, 2], ["A", "B"], ssc2, seed=4)
    model = make_multitask(ssc2, lambda_boundary=2.0, lambda_class=0.5)
    loss, diag = model.forward_loss([video])
    expected = 2.0 * diag["tasks"]["segmentation"] + 0.5 * diag["tasks"]["classification"]
    assert float(loss.detach()) == pytest.approx(expected, rel=1e-12)


def test_multitask_decode_forces_final_boundary(ssc2):
    model = make_multitask(ssc2)
    video = make_video("v", [4], ["A"], ssc2, seed=5)
    vis, aud = video_tensors(video)
    plant_logits(model, [-3.0, -3.0, -3.0, -3.0], [[BIG, 0]] * 4)
    (scene,) = model.predict_scenes(vis, aud)
    assert (scene.start_shot, scene.end_shot, scene.category.name) == (0, 3, "A")


def test_multitask_decode_all_boundaries(ssc2):
    model = make_multitask(ssc2)
    video = make_video("v", [3], ["A"], ssc2, seed=6)
    vis, aud = video_tensors(video)
    plant_logits(model, [3.0, 3.0, 3.0], [[BIG, 0], [0, BIG], [BIG, 0]])
    scenes = model.predict_scenes(vis, aud)
    assert [(s.start_shot, s.end_shot) for s in scenes] == [(0, 0), (1, 1), (2, 2)]
    assert [s.category.name for s in scenes] == ["A", "B", "A"]


def test_multitask_decode_majority_vote(ssc2):
    model = make_multitask(ssc2)
    video = make_video("v", [3], ["A"], ssc2, seed=7)
    vis, aud = video_tensors(video)
    # per-shot argmax A, A, B in one segment: A wins 2-1
    plant_logits(model, [-1.0, -1.0, 5.0], [[1, 0], [1, 0], [0, 1]])
    (scene,) = model.predict_scenes(vis, aud)
    assert scene.category.name == "A"


def test_multitask_decode_vote_tie_takes_lower_index(ssc2):
    model = make_multitask(ssc2)
    video = make_video("v", [2], ["A"], ssc2, seed=8)
    vis, aud = video_tensors(video)
    # votes split 1-1 between B and A: index 0 (A) wins
    plant_logits(model, [-1.0, 5.0], [[0, 1], [1, 0]])
    (scene,) = model.predict_scenes(vis, aud)
    assert scene.category.name == "A"


def test_multitask_boundary_threshold_at_zero_logit(ssc2):
    model = make_multitask(ssc2)
    video = make_video("v", [3], ["A"], ssc2, seed=9)
    vis, aud = video_tensors(video)
    # sigmoid(0) = 0.5 counts as a boundary; -0.01 does not
    plant_logits(model, [0.0, -0.01, 1.0], [[BIG, 0]] * 3)
    scenes = model.predict_scenes(vis, aud)
    assert [(s.start_shot, s.end_shot) for s in scenes] == [(0, 0), (1, 2)]


def test_multitask_random_models_emit_valid_partitions(ssc3):
    videos = [
        make_video("a", [1], ["B"], ssc3, seed=10),
        make_video("b", [3, 2], ["A", "C"], ssc3, seed=11),
        make_video("c", [2, 1, 4], ["C", "C", "A"], ssc3, seed=12),
    ]
    rng = torch.Generator().manual_seed(55)
    for trial in range(6):
        model = make_multitask(ssc3, seed=trial)
        with torch.no_grad():
            for p in model.parameters():
                p.add_(2.0 * torch.randn(p.shape, generator=rng, dtype=p.dtype))
        for video in videos:
            scenes = model.predict_scenes(*video_tensors(video))
            validate_partition(scenes, video.n_shots, ssc3)


def test_train_multitask_logs_both_tasks():
    corpus = separable_corpus()
    model, curve = train_multitask(corpus, small_train_config(epochs=2))
    assert isinstance(model, MultiTaskModel)
    assert set(curve.tasks()) == {"segmentation", "classification"}
    for task in ("segmentation", "classification"):
        iters, normalized = curve.series(task)
        assert normalized[0] == 1.0
        assert len(iters) == len(curve.series("segmentation")[0])


# ------------------------------------------------------------------ two-stage


def test_twostage_requires_categories(ss_scheme):
    with pytest.raises(ValueError, match="category-typed"):
        TwoStageModel(ss_scheme, 4, 3)


def test_twostage_stage1_is_category_free(ssc2):
    model = make_twostage(ssc2)
    assert model.stage1.scheme.n_tags == 5
    assert model.stage1.scheme.n_categories == 0


def test_twostage_segment_features_mean_pool(ssc2):
    model = make_twostage(ssc2)
    video = make_video("v", [2, 3], ["A", "B"], ssc2, seed=13)
    vis, aud = video_tensors(video)
    with torch.no_grad():
        pooled = model.segment_features(vis, aud, [(0, 1), (2, 4)])
        fused = model.stage1.trunk.fused_batch([(vis, aud)], train_mode=False)[0]
    assert torch.allclose(pooled[0], fused[0:2].mean(dim=0), atol=1e-12)
    assert torch.allclose(pooled[1], fused[2:5].mean(dim=0), atol=1e-12)


def test_twostage_random_models_emit_valid_partitions(ssc2):
    videos = [
        make_video("a", [1], ["A"], ssc2, seed=14),
        make_video("b", [4, 2], ["B", "A"], ssc2, seed=15),
    ]
    rng = torch.Generator().manual_seed(77)
    for trial in range(6):
        model = make_twostage(ssc2, seed=trial)
        with torch.no_grad():
            for p in model.parameters():
                p.add_(2.0 * torch.randn(p.shape, generator=rng, dtype=p.dtype))
        for video in videos:
            scenes = model.predict_scenes(*video_tensors(video))
            validate_partition(scenes, video.n_shots, ssc2)


def test_twostage_classifies_gold_segments():
    corpus = separable_corpus()
    config = small_train_config(epochs=25, lr=5e-3)
    model, curve = train_twostage(corpus, config)
    correct = total = 0
    with torch.no_grad():
        for video in corpus.videos:
            vis, aud = video_tensors(video)
            spans = [(s.start_shot, s.end_shot) for s in video.scenes]
            logits = model.stage2(model.segment_features(vis, aud, spans))
            pred = np.argmax(logits.numpy(), axis=1)
            gold = np.array([s.category.index for s in video.scenes])
            correct += int((pred == gold).sum())
            total += len(gold)
    assert correct / total >= 0.9


def test_twostage_curve_appends_classifier_iterations():
    corpus = separable_corpus()
    model, curve = train_twostage(corpus, small_train_config(epochs=2))
    seg_iters, seg_norm = curve.series("segmentation")
    cls_iters, cls_norm = curve.series("classification")
    assert seg_norm[0] == 1.0 and cls_norm[0] == 1.0
    assert max(seg_iters) < min(cls_iters)


def test_train_twostage_is_deterministic():
    corpus = separable_corpus()
    runs = [train_twostage(corpus, small_train_config(epochs=2)) for _ in range(2)]
    assert runs[0][1].points == runs[1][1].points
    a, b = runs[0][0].state_dict(), runs[1][0].state_dict()
    for name in a:
        assert torch.equal(a[name], b[name]), name


# ----------------------------------------------------------- dispatch, saving


def test_build_model_rejects_unknown_type(ssc2):
    with pytest.raises(ValueError, match="unknown model type"):
        build_model("mystery", ssc2, {})


@pytest.mark.parametrize("factory", [make_multitask, make_twostage])
def test_baseline_checkpoint_round_trip(tmp_path, ssc2, factory):
    model = factory(ssc2, seed=1)
    video = make_video("v", [2, 2, 1], ["A", "B", "A"], ssc2, seed=16)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert type(loaded) is type(model)
    vis, aud = video_tensors(video)
    assert loaded.predict_scenes(vis, aud) == model.predict_scenes(vis, aud)
    original = model.state_dict()
    for name, tensor in loaded.state_dict().items():
        assert torch.equal(tensor, original[name]), name
