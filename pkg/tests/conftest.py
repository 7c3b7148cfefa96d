"""Shared fixtures: schemes, tiny feature corpora, and train configs."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from osmsl.data import Corpus, ShotRecord, VideoSequence
from osmsl.diffcorr import DiffCorrConfig
from osmsl.fusion import EncoderConfig
from osmsl.scheme import LabelScheme, SceneAnnotation
from osmsl.synth import SynthConfig, generate_corpus
from osmsl.train import TrainConfig

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def ss_scheme() -> LabelScheme:
    return LabelScheme.ss()


@pytest.fixture(scope="session")
def ssc3() -> LabelScheme:
    return LabelScheme.ssc(["A", "B", "C"])


@pytest.fixture(scope="session")
def ssc2() -> LabelScheme:
    return LabelScheme.ssc(["A", "B"])


def make_video(
    video_id: str,
    scene_lengths: list[int],
    categories: list[str] | None,
    scheme: LabelScheme,
    d_vis: int = 4,
    d_aud: int = 3,
    seed: int = 0,
) -> VideoSequence:
    """A video with random features and the given scene layout."""
    rng = np.random.default_rng(seed)
    n = sum(scene_lengths)
    shots = [
        ShotRecord(
            video_id=video_id,
            shot_index=i,
            start_sec=float(i),
            end_sec=float(i + 1),
            vis=rng.normal(size=d_vis),
            aud=rng.normal(size=d_aud),
        )
        for i in range(n)
    ]
    scenes = []
    start = 0
    for i, length in enumerate(scene_lengths):
        cat = scheme.category_by_name(categories[i]) if categories else None
        scenes.append(SceneAnnotation(start, start + length - 1, cat))
        start += length
    return VideoSequence(video_id, shots, scenes)


@pytest.fixture(scope="session")
def small_synth_config() -> SynthConfig:
    return SynthConfig(
        seed=11,
        n_videos=8,
        shots_min=10,
        shots_max=14,
        scene_len_max=5,
        n_categories=2,
        d_vis=6,
        d_aud=5,
        sigma_scene=0.3,
        sigma_shot=0.05,
    )


@pytest.fixture(scope="session")
def small_corpus(small_synth_config) -> Corpus:
    return generate_corpus(small_synth_config)


def small_train_config(**overrides) -> TrainConfig:
    """A config sized for test-speed training runs."""
    base = dict(
        seed=3,
        epochs=2,
        batch_size=4,
        threads=1,
        diffcorr=DiffCorrConfig(k=1),
        encoder=EncoderConfig(d_m=16, n_heads=2, n_layers=1, d_ff=32, n_max=64),
    )
    base.update(overrides)
    return TrainConfig(**base)
