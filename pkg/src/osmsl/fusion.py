"""Modality fusion and sequence encoding.

Enhanced per-modality features are batch-normalized per dimension, fused by
concatenation, projected into the model width, and run through a small
pre-norm transformer encoder with learned positions.  Sequences longer than
the position table are encoded in overlapping chunks whose interiors are
stitched back together, so downstream decoding still sees one sequence.

Batch statistics pool shots across all videos of a training step; in eval
mode running statistics are used, so single videos (or single shots) can be
encoded deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .diffcorr import DiffCorrNet


@dataclass
class EncoderConfig:
    d_m: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    n_max: int = 512
    dropout: float = 0.0
    chunk_overlap: int = 32

    def validate(self) -> None:
        if self.d_m % self.n_heads != 0:
            raise ValueError(f"d_m={self.d_m} not divisible by n_heads={self.n_heads}")
        if not 0 <= self.chunk_overlap < self.n_max:
            raise ValueError("chunk_overlap must lie in [0, n_max)")


class SelfAttention(nn.Module):
    """Multi-head scaled dot-product self-attention (full bidirectional)."""

    def __init__(self, d_m: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_m // n_heads
        self.qkv = nn.Linear(d_m, 3 * d_m)
        self.out = nn.Linear(d_m, d_m)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        n, d_m = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        # (heads, n, d_head)
        q = q.view(n, self.n_heads, self.d_head).transpose(0, 1)
        k = k.view(n, self.n_heads, self.d_head).transpose(0, 1)
        v = v.view(n, self.n_heads, self.d_head).transpose(0, 1)
        weights = torch.softmax(q @ k.transpose(1, 2) / self.d_head**0.5, dim=-1)
        mixed = (weights @ v).transpose(0, 1).reshape(n, d_m)
        out = self.out(mixed)
        if return_weights:
            return out, weights
        return out


class EncoderBlock(nn.Module):
    """Pre-norm block: x + attn(LN(x)), then x + ff(LN(x))."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_m)
        self.attn = SelfAttention(cfg.d_m, cfg.n_heads)
        self.norm2 = nn.LayerNorm(cfg.d_m)
        self.ff = nn.Sequential(
            nn.Linear(cfg.d_m, cfg.d_ff),
            nn.ReLU(),
            nn.Linear(cfg.d_ff, cfg.d_m),
        )
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        attn_out = self.attn(self.norm1(x), return_weights=return_weights)
        if return_weights:
            attn_out, weights = attn_out
        x = x + self.drop(attn_out)
        x = x + self.drop(self.ff(self.norm2(x)))
        if return_weights:
            return x, weights
        return x


class TransformerEncoder(nn.Module):
    """Input projection + learned positions + pre-norm blocks + final norm.

    forward() handles sequences up to n_max positions; encode() chunks longer
    ones.  Attention never crosses chunk boundaries, which is the intended
    locality compromise for very long inputs.
    """

    def __init__(self, d_in: int, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.input_proj = nn.Linear(d_in, cfg.d_m)
        self.positions = nn.Embedding(cfg.n_max, cfg.d_m)
        self.blocks = nn.ModuleList(EncoderBlock(cfg) for _ in range(cfg.n_layers))
        self.final_norm = nn.LayerNorm(cfg.d_m)
        self.double()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n = x.shape[0]
        if n > self.cfg.n_max:
            raise ValueError(f"sequence length {n} exceeds position table {self.cfg.n_max}")
        h = self.input_proj(x) + self.positions.weight[:n]
        for block in self.blocks:
            h = block(h)
        return self.final_norm(h)

    def attention_maps(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Per-layer (heads, n, n) attention weights for inspection."""
        n = x.shape[0]
        if n > self.cfg.n_max:
            raise ValueError(f"sequence length {n} exceeds position table {self.cfg.n_max}")
        h = self.input_proj(x) + self.positions.weight[:n]
        maps = []
        for block in self.blocks:
            h, weights = block(h, return_weights=True)
            maps.append(weights)
        return maps

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """Encode a sequence of any length, chunking past n_max."""
        n = x.shape[0]
        n_max = self.cfg.n_max
        if n <= n_max:
            return self.forward(x)
        overlap = self.cfg.chunk_overlap
        stride = n_max - overlap
        pieces: list[torch.Tensor] = []
        start = 0
        while start < n:
            end = min(start + n_max, n)
            encoded = self.forward(x[start:end])
            # keep the interior: drop half the overlap on each stitched edge
            lo = 0 if start == 0 else overlap // 2
            hi = end - start if end == n else (end - start) - (overlap - overlap // 2)
            pieces.append(encoded[lo:hi])
            if end == n:
                break
            start += stride
        out = torch.cat(pieces, dim=0)
        if out.shape[0] != n:
            raise AssertionError("chunk stitching produced wrong length")
        return out


def batch_normalize(
    pooled: torch.Tensor, bn: nn.BatchNorm1d, train_mode: bool
) -> torch.Tensor:
    """Apply BN to shots pooled across a batch of videos.

    Training mode requires at least 2 rows so batch variance is defined.
    """
    if train_mode and pooled.shape[0] < 2:
        raise ValueError("batch normalization in training mode needs >= 2 pooled shots")
    bn.train(train_mode)
    return bn(pooled)


class FusionTrunk(nn.Module):
    """DiffCorrNet per modality -> BN -> concat -> transformer encoder.

    Modalities can be disabled for ablations; at least one must remain.  All
    batch entries share BN statistics within a training step, so the trunk
    consumes a list of per-video (vis, aud) matrices at once.
    """

    def __init__(
        self,
        d_vis: int,
        d_aud: int,
        diffcorr_cfg,
        encoder_cfg: EncoderConfig,
        use_visual: bool = True,
        use_audio: bool = True,
    ):
        super().__init__()
        if not (use_visual or use_audio):
            raise ValueError("at least one modality must be enabled")
        self.d_vis = d_vis
        self.d_aud = d_aud
        self.use_visual = use_visual
        self.use_audio = use_audio
        d_fused = 0
        if use_visual:
            self.diffcorr_vis = DiffCorrNet(d_vis, diffcorr_cfg)
            self.bn_vis = nn.BatchNorm1d(self.diffcorr_vis.d_out, dtype=torch.float64)
            d_fused += self.diffcorr_vis.d_out
        if use_audio:
            self.diffcorr_aud = DiffCorrNet(d_aud, diffcorr_cfg)
            self.bn_aud = nn.BatchNorm1d(self.diffcorr_aud.d_out, dtype=torch.float64)
            d_fused += self.diffcorr_aud.d_out
        self.d_fused = d_fused
        self.encoder = TransformerEncoder(d_fused, encoder_cfg)

    def _modality_stream(
        self,
        matrices: list[torch.Tensor],
        net,
        bn: nn.BatchNorm1d,
        train_mode: bool,
    ) -> list[torch.Tensor]:
        enhanced = [net(m) for m in matrices]
        pooled = batch_normalize(torch.cat(enhanced, dim=0), bn, train_mode)
        return list(pooled.split([e.shape[0] for e in enhanced], dim=0))

    def fused_batch(
        self, batch: list[tuple[torch.Tensor, torch.Tensor]], train_mode: bool
    ) -> list[torch.Tensor]:
        """Fused (n_i, d_fused) features for each video in the batch."""
        if not batch:
            return []
        for i, (vis, aud) in enumerate(batch):
            if vis.shape[0] != aud.shape[0]:
                raise ValueError(
                    f"batch entry {i}: {vis.shape[0]} visual rows vs "
                    f"{aud.shape[0]} audio rows"
                )
        parts: list[list[torch.Tensor]] = []
        if self.use_visual:
            parts.append(
                self._modality_stream([v for v, _ in batch], self.diffcorr_vis, self.bn_vis, train_mode)
            )
        if self.use_audio:
            parts.append(
                self._modality_stream([a for _, a in batch], self.diffcorr_aud, self.bn_aud, train_mode)
            )
        return [torch.cat(per_video, dim=1) for per_video in zip(*parts)]

    def hidden_batch(
        self, batch: list[tuple[torch.Tensor, torch.Tensor]], train_mode: bool
    ) -> list[torch.Tensor]:
        """Encoder outputs (n_i, d_m) for each video in the batch."""
        return [self.encoder.encode(f) for f in self.fused_batch(batch, train_mode)]
