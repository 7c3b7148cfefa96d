"""Reference baselines sharing the fusion trunk.

multitask: one trunk with two per-shot heads, a binary boundary head and a
category head, trained jointly with weighted BCE + cross-entropy.  Decoding
thresholds the boundary probability at 0.5, forces the final shot to close a
scene, and labels each resulting segment by majority vote over per-shot
argmax categories (ties to the lower category index).

twostage: first a segmentation-only link-tag model, then a separate segment
classifier (an MLP on mean-pooled fused features) trained on gold segments
and applied to predicted ones.  Errors in stage one propagate to stage two,
which is exactly the failure mode the one-stage model avoids.
"""

from __future__ import annotations

from dataclasses import asdict

import numpy as np
import torch
from torch import nn

from .data import (
    Corpus,
    VideoSequence,
    shot_boundary_targets,
    shot_category_indices,
    strip_categories,
)
from .diffcorr import DiffCorrConfig
from .fusion import EncoderConfig, FusionTrunk
from .scheme import LabelScheme, SceneAnnotation
from .train import (
    CurveLog,
    OsmslModel,
    TrainConfig,
    fit,
    init_parameters,
    video_tensors,
)


class MultiTaskModel(nn.Module):
    """Trunk + boundary head + category head, no structured decoding."""

    model_type = "multitask"

    def __init__(
        self,
        scheme: LabelScheme,
        d_vis: int,
        d_aud: int,
        diffcorr_cfg: DiffCorrConfig | None = None,
        encoder_cfg: EncoderConfig | None = None,
        use_visual: bool = True,
        use_audio: bool = True,
        lambda_boundary: float = 1.0,
        lambda_class: float = 1.0,
    ):
        super().__init__()
        if scheme.mode != "ssc":
            raise ValueError("the multi-task baseline needs a category-typed scheme")
        self.scheme = scheme
        self.diffcorr_cfg = diffcorr_cfg or DiffCorrConfig()
        self.encoder_cfg = encoder_cfg or EncoderConfig()
        self.lambda_boundary = lambda_boundary
        self.lambda_class = lambda_class
        self.trunk = FusionTrunk(
            d_vis, d_aud, self.diffcorr_cfg, self.encoder_cfg, use_visual, use_audio
        )
        d_m = self.encoder_cfg.d_m
        self.boundary_head = nn.Linear(d_m, 1, dtype=torch.float64)
        self.class_head = nn.Linear(d_m, scheme.n_categories, dtype=torch.float64)

    def config_doc(self) -> dict:
        return {
            "d_vis": self.trunk.d_vis,
            "d_aud": self.trunk.d_aud,
            "use_visual": self.trunk.use_visual,
            "use_audio": self.trunk.use_audio,
            "lambda_boundary": self.lambda_boundary,
            "lambda_class": self.lambda_class,
            "diffcorr": asdict(self.diffcorr_cfg),
            "encoder": asdict(self.encoder_cfg),
        }

    @classmethod
    def from_config(cls, scheme: LabelScheme, doc: dict) -> "MultiTaskModel":
        return cls(
            scheme,
            doc["d_vis"],
            doc["d_aud"],
            DiffCorrConfig(**doc["diffcorr"]),
            EncoderConfig(**doc["encoder"]),
            doc["use_visual"],
            doc["use_audio"],
            doc["lambda_boundary"],
            doc["lambda_class"],
        )

    def head_logits(
        self, batch: list[tuple[torch.Tensor, torch.Tensor]], train_mode: bool
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """(pooled boundary logits (n,), pooled category logits (n, C))."""
        hidden = torch.cat(self.trunk.hidden_batch(batch, train_mode), dim=0)
        return self.boundary_head(hidden).squeeze(-1), self.class_head(hidden)

    def forward_loss(
        self, videos: list[VideoSequence], train_mode: bool = True
    ) -> tuple[torch.Tensor, dict]:
        b_logits, c_logits = self.head_logits([video_tensors(v) for v in videos], train_mode)
        b_target = torch.from_numpy(
            np.concatenate([shot_boundary_targets(v) for v in videos])
        )
        c_target = torch.from_numpy(
            np.concatenate([shot_category_indices(v) for v in videos])
        )
        seg = nn.functional.binary_cross_entropy_with_logits(b_logits, b_target)
        cls = nn.functional.cross_entropy(c_logits, c_target)
        total = self.lambda_boundary * seg + self.lambda_class * cls
        diagnostics = {
            "tasks": {
                "segmentation": float(seg.detach()),
                "classification": float(cls.detach()),
            }
        }
        return total, diagnostics

    def predict_scenes(self, vis: torch.Tensor, aud: torch.Tensor) -> list[SceneAnnotation]:
        self.eval()
        with torch.no_grad():
            b_logits, c_logits = self.head_logits([(vis, aud)], train_mode=False)
        # sigmoid(x) >= 0.5 iff x >= 0; the last shot always closes a scene
        ends = [j for j, logit in enumerate(b_logits.numpy()) if logit >= 0.0]
        n = vis.shape[0]
        if not ends or ends[-1] != n - 1:
            ends.append(n - 1)
        shot_cats = np.argmax(c_logits.numpy(), axis=1)
        scenes = []
        start = 0
        for end in ends:
            votes = np.bincount(shot_cats[start : end + 1], minlength=self.scheme.n_categories)
            category = self.scheme.categories[int(np.argmax(votes))]
            scenes.append(SceneAnnotation(start, end, category))
            start = end + 1
        return scenes


class TwoStageModel(nn.Module):
    """Segment first with a link-tag model, then classify each segment.

    Stage one is a segmentation-only model (5-tag scheme); stage two is an
    MLP over each segment's mean-pooled fused features.  At prediction time
    stage two runs on the segments stage one produced.
    """

    model_type = "twostage"

    def __init__(
        self,
        scheme: LabelScheme,
        d_vis: int,
        d_aud: int,
        diffcorr_cfg: DiffCorrConfig | None = None,
        encoder_cfg: EncoderConfig | None = None,
        use_visual: bool = True,
        use_audio: bool = True,
        stage2_hidden: int = 64,
    ):
        super().__init__()
        if scheme.mode != "ssc":
            raise ValueError("the two-stage baseline needs a category-typed scheme")
        self.scheme = scheme
        self.stage2_hidden = stage2_hidden
        self.stage1 = OsmslModel(
            LabelScheme.ss(),
            d_vis,
            d_aud,
            diffcorr_cfg,
            encoder_cfg,
            use_visual,
            use_audio,
            hard_mask=True,
        )
        self.stage2 = nn.Sequential(
            nn.Linear(self.stage1.trunk.d_fused, stage2_hidden, dtype=torch.float64),
            nn.ReLU(),
            nn.Linear(stage2_hidden, scheme.n_categories, dtype=torch.float64),
        )

    def config_doc(self) -> dict:
        return {
            "d_vis": self.stage1.trunk.d_vis,
            "d_aud": self.stage1.trunk.d_aud,
            "use_visual": self.stage1.trunk.use_visual,
            "use_audio": self.stage1.trunk.use_audio,
            "stage2_hidden": self.stage2_hidden,
            "diffcorr": asdict(self.stage1.diffcorr_cfg),
            "encoder": asdict(self.stage1.encoder_cfg),
        }

    @classmethod
    def from_config(cls, scheme: LabelScheme, doc: dict) -> "TwoStageModel":
        return cls(
            scheme,
            doc["d_vis"],
            doc["d_aud"],
            DiffCorrConfig(**doc["diffcorr"]),
            EncoderConfig(**doc["encoder"]),
            doc["use_visual"],
            doc["use_audio"],
            doc["stage2_hidden"],
        )

    def segment_features(
        self, vis: torch.Tensor, aud: torch.Tensor, segments: list[tuple[int, int]]
    ) -> torch.Tensor:
        """Mean-pooled fused features per (start, end) segment, eval-mode BN."""
        fused = self.stage1.trunk.fused_batch([(vis, aud)], train_mode=False)[0]
        return torch.stack([fused[s : e + 1].mean(dim=0) for s, e in segments])

    def predict_scenes(self, vis: torch.Tensor, aud: torch.Tensor) -> list[SceneAnnotation]:
        self.eval()
        with torch.no_grad():
            spans = [
                (s.start_shot, s.end_shot) for s in self.stage1.predict_scenes(vis, aud)
            ]
            logits = self.stage2(self.segment_features(vis, aud, spans))
        return [
            SceneAnnotation(start, end, self.scheme.categories[int(np.argmax(row))])
            for (start, end), row in zip(spans, logits.numpy())
        ]


def build_model(model_type: str, scheme: LabelScheme, config: dict) -> nn.Module:
    if model_type == MultiTaskModel.model_type:
        return MultiTaskModel.from_config(scheme, config)
    if model_type == TwoStageModel.model_type:
        return TwoStageModel.from_config(scheme, config)
    raise ValueError(f"unknown model type {model_type!r}")


def train_multitask(corpus: Corpus, config: TrainConfig) -> tuple[MultiTaskModel, CurveLog]:
    model = MultiTaskModel(
        corpus.scheme,
        corpus.d_vis,
        corpus.d_aud,
        config.diffcorr,
        config.encoder,
        config.use_visual,
        config.use_audio,
        config.lambda_boundary,
        config.lambda_class,
    )
    init_parameters(model, config.seed)
    curve = fit(model, corpus.videos, config)
    return model, curve


def train_twostage(corpus: Corpus, config: TrainConfig) -> tuple[TwoStageModel, CurveLog]:
    """Train stage one on stripped labels, then stage two on gold segments."""
    model = TwoStageModel(
        corpus.scheme,
        corpus.d_vis,
        corpus.d_aud,
        config.diffcorr,
        config.encoder,
        config.use_visual,
        config.use_audio,
    )
    init_parameters(model, config.seed)

    ss_videos = strip_categories(corpus).videos

    def stage1_loss(batch):
        loss, diagnostics = model.stage1.forward_loss(batch)
        return loss, {"tasks": {"segmentation": diagnostics["tasks"]["osmsl"]}}

    curve = fit(model.stage1, ss_videos, config, batch_loss=stage1_loss)
    offset = curve.points[-1].iteration if curve.points else 0

    # freeze the trunk's eval-time behavior and fit the segment classifier
    with torch.no_grad():
        feats, labels = [], []
        for video in corpus.videos:
            vis, aud = video_tensors(video)
            spans = [(s.start_shot, s.end_shot) for s in video.scenes]
            feats.append(model.segment_features(vis, aud, spans))
            labels.extend(s.category.index for s in video.scenes)
    x = torch.cat(feats, dim=0)
    y = torch.tensor(labels, dtype=torch.long)

    opt = torch.optim.Adam(
        model.stage2.parameters(), lr=config.lr, betas=config.betas, eps=config.adam_eps
    )
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 2)))
    iteration = offset
    batch_size = 32
    for _ in range(config.epochs):
        order = rng.permutation(x.shape[0])
        for lo in range(0, len(order), batch_size):
            idx = torch.from_numpy(order[lo : lo + batch_size])
            loss = nn.functional.cross_entropy(model.stage2(x[idx]), y[idx])
            if not bool(torch.isfinite(loss)):
                raise FloatingPointError("non-finite loss in segment classifier; aborting")
            opt.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.stage2.parameters(), config.clip_norm)
            opt.step()
            iteration += 1
            curve.add(iteration, "classification", float(loss.detach()))
    return model, curve
