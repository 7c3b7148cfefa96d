"""Synthetic shot-feature corpora with known scene structure.

Each category owns a random center per modality.  A scene samples an anchor
(center plus within-scene drift), and every shot in the scene samples
features around w * anchor with small noise, where w is the modality's
informativeness weight (w = 0 turns the modality into pure noise).  Scene
lengths are i.i.d. uniform on [1, scene_len_max]; lengths are drawn until a
video's shot target is reached, and the video takes the full sum, so every
drawn length keeps the uniform distribution.

Everything derives deterministically from the config seed via spawned seed
sequences, one per video.  The optional drift rotation makes a second corpus
whose within-class drift lives in rotated coordinates while centers stay
put, for generalization experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Corpus, ShotRecord, VideoSequence, shot_category_indices
from .scheme import LabelScheme, SceneAnnotation


@dataclass
class SynthConfig:
    seed: int = 0
    n_videos: int = 60
    shots_min: int = 30
    shots_max: int = 50
    scene_len_max: int = 8
    n_categories: int = 4
    d_vis: int = 16
    d_aud: int = 16
    center_scale: float = 1.0
    sigma_scene: float = 0.5
    sigma_shot: float = 0.1
    vis_weight: float = 1.0
    aud_weight: float = 1.0
    drift_rotation_seed: int | None = None
    category_names: list[str] | None = None
    shot_seconds: float = 1.0

    def validate(self) -> None:
        if self.n_videos < 1:
            raise ValueError("need at least one video")
        if not 1 <= self.shots_min <= self.shots_max:
            raise ValueError("need 1 <= shots_min <= shots_max")
        if self.scene_len_max < 1:
            raise ValueError("scene_len_max must be >= 1")
        if self.n_categories < 1:
            raise ValueError("need at least one category")
        if self.d_vis < 1 or self.d_aud < 1:
            raise ValueError("feature dims must be >= 1")
        if self.sigma_scene < 0 or self.sigma_shot < 0:
            raise ValueError("noise scales must be >= 0")
        if self.category_names is not None and len(self.category_names) != self.n_categories:
            raise ValueError("category_names length must equal n_categories")

    def names(self) -> list[str]:
        if self.category_names is not None:
            return list(self.category_names)
        return [f"cat{i}" for i in range(self.n_categories)]


def _rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Random orthogonal matrix (QR of a Gaussian, sign-fixed for determinism)."""
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


@dataclass
class _SceneDraw:
    length: int
    category: int
    anchor_vis: np.ndarray
    anchor_aud: np.ndarray


def _draw_scenes(
    cfg: SynthConfig,
    rng: np.random.Generator,
    centers_vis: np.ndarray,
    centers_aud: np.ndarray,
    rot_vis: np.ndarray | None,
    rot_aud: np.ndarray | None,
) -> list[_SceneDraw]:
    target = int(rng.integers(cfg.shots_min, cfg.shots_max + 1))
    lengths: list[int] = []
    while sum(lengths) < target:
        lengths.append(int(rng.integers(1, cfg.scene_len_max + 1)))
    scenes = []
    for length in lengths:
        cat = int(rng.integers(cfg.n_categories))
        drift_vis = rng.normal(size=cfg.d_vis)
        drift_aud = rng.normal(size=cfg.d_aud)
        if rot_vis is not None:
            drift_vis = rot_vis @ drift_vis
        if rot_aud is not None:
            drift_aud = rot_aud @ drift_aud
        scenes.append(
            _SceneDraw(
                length=length,
                category=cat,
                anchor_vis=centers_vis[cat] + cfg.sigma_scene * drift_vis,
                anchor_aud=centers_aud[cat] + cfg.sigma_scene * drift_aud,
            )
        )
    return scenes


def generate_corpus(cfg: SynthConfig) -> Corpus:
    """Generate a labeled corpus under the category-typed scheme."""
    cfg.validate()
    scheme = LabelScheme.ssc(cfg.names())
    root = np.random.SeedSequence(cfg.seed)
    center_rng = np.random.default_rng(root.spawn(1)[0])
    centers_vis = cfg.center_scale * center_rng.normal(size=(cfg.n_categories, cfg.d_vis))
    centers_aud = cfg.center_scale * center_rng.normal(size=(cfg.n_categories, cfg.d_aud))
    rot_vis = rot_aud = None
    if cfg.drift_rotation_seed is not None:
        rot_rng = np.random.default_rng(cfg.drift_rotation_seed)
        rot_vis = _rotation(cfg.d_vis, rot_rng)
        rot_aud = _rotation(cfg.d_aud, rot_rng)

    videos = []
    for i, child in enumerate(root.spawn(cfg.n_videos + 1)[1:]):
        rng = np.random.default_rng(child)
        video_id = f"v{i:03d}"
        draws = _draw_scenes(cfg, rng, centers_vis, centers_aud, rot_vis, rot_aud)
        shots: list[ShotRecord] = []
        scenes: list[SceneAnnotation] = []
        shot_idx = 0
        for draw in draws:
            start = shot_idx
            for _ in range(draw.length):
                vis = cfg.vis_weight * draw.anchor_vis + cfg.sigma_shot * rng.normal(size=cfg.d_vis)
                aud = cfg.aud_weight * draw.anchor_aud + cfg.sigma_shot * rng.normal(size=cfg.d_aud)
                shots.append(
                    ShotRecord(
                        video_id=video_id,
                        shot_index=shot_idx,
                        start_sec=shot_idx * cfg.shot_seconds,
                        end_sec=(shot_idx + 1) * cfg.shot_seconds,
                        vis=vis.astype(np.float64),
                        aud=aud.astype(np.float64),
                    )
                )
                shot_idx += 1
            scenes.append(
                SceneAnnotation(
                    start_shot=start,
                    end_shot=shot_idx - 1,
                    category=scheme.categories[draw.category],
                )
            )
        videos.append(VideoSequence(video_id=video_id, shots=shots, scenes=scenes))
    return Corpus(videos=videos, scheme=scheme)


def split_corpus(
    corpus: Corpus, fractions: tuple[float, float, float] = (2 / 3, 1 / 6, 1 / 6), seed: int = 0
) -> tuple[Corpus, Corpus, Corpus]:
    """Deterministic video-level train/val/test split, disjoint by video id."""
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must be non-negative and sum to 1")
    n = len(corpus.videos)
    perm = np.random.default_rng(seed).permutation(n)
    # the 1e-9 absorbs float error in fractions like 2/3 + 1/6
    b1 = int(np.floor(fractions[0] * n + 1e-9))
    b2 = int(np.floor((fractions[0] + fractions[1]) * n + 1e-9))
    groups = (perm[:b1], perm[b1:b2], perm[b2:])
    for frac, group in zip(fractions, groups):
        if frac > 0 and len(group) == 0:
            raise ValueError("a split with positive fraction received no videos")
    return tuple(
        Corpus(videos=[corpus.videos[i] for i in sorted(group)], scheme=corpus.scheme)
        for group in groups
    )


def linear_probe_accuracy(corpus: Corpus) -> float:
    """Accuracy of a least-squares linear classifier on raw per-shot features.

    A sanity oracle for generated corpora: if this is low, the features do
    not carry the scene categories and no model should be expected to.
    """
    xs, ys = [], []
    for video in corpus.videos:
        xs.append(np.concatenate([video.vis_matrix, video.aud_matrix], axis=1))
        ys.append(shot_category_indices(video))
    x = np.concatenate(xs, axis=0)
    y = np.concatenate(ys, axis=0)
    x1 = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    onehot = np.eye(int(y.max()) + 1)[y]
    w, _, _, _ = np.linalg.lstsq(x1, onehot, rcond=None)
    return float((np.argmax(x1 @ w, axis=1) == y).mean())
