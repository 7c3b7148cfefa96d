"""Shot difference/correlation feature enhancement.

For each shot j, two local signals are computed from its 2k-wide neighborhood
and concatenated onto the raw feature:

  boundary feature g  -- how much the k shots before j differ from the k shots
                         after it (cosine of the pooled embeddings plus their
                         difference vector, projected);
  aggregated feature h -- an attention-weighted sum of the neighboring raw
                         features, with weights derived from embedded shot
                         differences.

Each modality gets its own instance; parameters are never shared across
modalities.  Window indices clamp to the sequence (replicate padding), so the
enhancement of shot j depends only on shots within distance k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class DiffCorrConfig:
    """Dimensions for one DiffCorrNet; None fields default from the input dim.

    k is the window half-count: k shots before and k after the candidate
    boundary at the end of shot j.
    """

    k: int = 2
    d_e: int | None = None  # embedding dim (shared by both branches)
    d_a: int | None = None  # attention MLP hidden dim
    d_g: int | None = None  # boundary feature dim
    attention_normalize: bool = True

    def resolve(self, d_in: int) -> "ResolvedDiffCorrConfig":
        if self.k < 1:
            raise ValueError(f"window half-count k must be >= 1, got {self.k}")
        return ResolvedDiffCorrConfig(
            k=self.k,
            d_e=self.d_e if self.d_e is not None else d_in,
            d_a=self.d_a if self.d_a is not None else d_in,
            d_g=self.d_g if self.d_g is not None else math.ceil(d_in / 2),
            attention_normalize=self.attention_normalize,
        )


@dataclass
class ResolvedDiffCorrConfig:
    k: int
    d_e: int
    d_a: int
    d_g: int
    attention_normalize: bool


def window(j: int, n: int, k: int) -> tuple[list[int], list[int], list[int]]:
    """Window index lists for shot j in a sequence of length n.

    former  = [j-(k-1) .. j], latter = [j+1 .. j+k], each clamped to [0, n-1];
    neighbors = the full window minus j itself, clamped afterwards, so edge
    shots keep 2k-1 neighbor slots (with repeats).
    """
    if not 0 <= j < n:
        raise ValueError(f"shot index {j} out of range [0, {n})")

    def clamp(i: int) -> int:
        return min(max(i, 0), n - 1)

    former = [clamp(i) for i in range(j - (k - 1), j + 1)]
    latter = [clamp(i) for i in range(j + 1, j + k + 1)]
    neighbors = [clamp(i) for i in range(j - (k - 1), j + k + 1) if i != j]
    return former, latter, neighbors


def window_index_arrays(n: int, k: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """window() for all shots at once, as (n, k), (n, k), (n, 2k-1) index tensors."""
    j = torch.arange(n).unsqueeze(1)
    former = (j + torch.arange(-(k - 1), 1)).clamp_(0, n - 1)
    latter = (j + torch.arange(1, k + 1)).clamp_(0, n - 1)
    offsets = torch.tensor([o for o in range(-(k - 1), k + 1) if o != 0])
    neighbors = (j + offsets).clamp_(0, n - 1)
    return former, latter, neighbors


def _safe_cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Row-wise cosine with the convention cos(0, .) = 0."""
    denom = a.norm(dim=-1) * b.norm(dim=-1)
    nonzero = denom > 0
    safe = torch.where(nonzero, denom, torch.ones_like(denom))
    return torch.where(nonzero, (a * b).sum(dim=-1) / safe, torch.zeros_like(denom))


class DiffCorrNet(nn.Module):
    """Per-modality feature enhancer: rows of the output are [f, g, h]."""

    def __init__(self, d_in: int, config: DiffCorrConfig | None = None):
        super().__init__()
        cfg = (config or DiffCorrConfig()).resolve(d_in)
        self.d_in = d_in
        self.cfg = cfg
        self.embed = nn.Linear(d_in, cfg.d_e)
        self.boundary_proj = nn.Linear(cfg.d_e + 1, cfg.d_g)
        self.attn_hidden = nn.Linear(cfg.d_e, cfg.d_a)
        self.attn_out = nn.Linear(cfg.d_a, 1)
        self.double()

    @property
    def d_out(self) -> int:
        return self.d_in + self.cfg.d_g + self.d_in

    def _pooled(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        n = features.shape[0]
        former, latter, _ = window_index_arrays(n, self.cfg.k)
        embedded = self.embed(features)
        return embedded[former].mean(dim=1), embedded[latter].mean(dim=1)

    def boundary_terms(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-shot (cosine, pooled-difference) pair feeding the projection."""
        p_former, p_latter = self._pooled(features)
        return _safe_cosine(p_former, p_latter), p_former - p_latter

    def boundary_features(self, features: torch.Tensor) -> torch.Tensor:
        cos, diff = self.boundary_terms(features)
        return self.boundary_proj(torch.cat([cos.unsqueeze(1), diff], dim=1))

    def boundary_feature(self, features: torch.Tensor, j: int) -> torch.Tensor:
        """g for a single shot."""
        window(j, features.shape[0], self.cfg.k)  # bounds check
        return self.boundary_features(features)[j]

    def attention_logit(self, f_j: torch.Tensor, f_i: torch.Tensor) -> torch.Tensor:
        """Unnormalized attention weight between a shot and one neighbor."""
        diff = self.embed(f_j) - self.embed(f_i)
        return self.attn_out(torch.relu(self.attn_hidden(diff))).squeeze(-1)

    def attention_weights(self, features: torch.Tensor) -> torch.Tensor:
        """(n, 2k-1) neighbor weights, softmax-normalized unless configured raw."""
        n = features.shape[0]
        _, _, neighbors = window_index_arrays(n, self.cfg.k)
        embedded = self.embed(features)
        diffs = embedded.unsqueeze(1) - embedded[neighbors]
        logits = self.attn_out(torch.relu(self.attn_hidden(diffs))).squeeze(-1)
        if self.cfg.attention_normalize:
            return torch.softmax(logits, dim=1)
        return logits

    def aggregated_features(self, features: torch.Tensor) -> torch.Tensor:
        n = features.shape[0]
        _, _, neighbors = window_index_arrays(n, self.cfg.k)
        weights = self.attention_weights(features)
        return (weights.unsqueeze(-1) * features[neighbors]).sum(dim=1)

    def aggregated_feature(self, features: torch.Tensor, j: int) -> torch.Tensor:
        """h for a single shot."""
        window(j, features.shape[0], self.cfg.k)  # bounds check
        return self.aggregated_features(features)[j]

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """Enhance an (n, d_in) sequence to (n, d_in + d_g + d_in)."""
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValueError("expected a non-empty (n, d_in) feature matrix")
        g = self.boundary_features(features)
        h = self.aggregated_features(features)
        return torch.cat([features, g, h], dim=1)
