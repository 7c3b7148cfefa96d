"""Model assembly, deterministic training, checkpoints, and prediction.

Determinism contract: given the same corpus, config, and seed, training is
bit-reproducible on CPU.  All floating point work runs in float64 with a
fixed thread count; parameter init draws from an explicit seeded generator
in module-definition order; batch order comes from a seeded numpy generator.

Checkpoints are a self-describing single file: an 8-byte magic, a little-
endian uint64 manifest length, a JSON manifest (model type, label-scheme
fingerprint, construction config, tensor table), then raw little-endian
tensor bytes in manifest order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .crf import LinkCRF
from .data import Corpus, VideoSequence
from .diffcorr import DiffCorrConfig
from .fusion import EncoderConfig, FusionTrunk
from .metrics import EvalReport, evaluate
from .scheme import LabelScheme, LinkTag, SceneAnnotation, decode, encode, repair

CHECKPOINT_MAGIC = b"OSMSLCK1"


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 4
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    threads: int = 1
    mode: str = "ssc"
    curves_path: str | None = None
    hard_mask: bool = True
    use_visual: bool = True
    use_audio: bool = True
    # weights for the two heads of the multi-task baseline
    lambda_boundary: float = 1.0
    lambda_class: float = 1.0
    diffcorr: DiffCorrConfig = field(default_factory=DiffCorrConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)


@dataclass(frozen=True)
class CurvePoint:
    iteration: int
    task: str
    raw_loss: float
    normalized_loss: float


class CurveLog:
    """Per-iteration training losses, raw and normalized.

    The normalized series divides each task's raw loss by that task's value
    at its first logged iteration, so every series starts at 1.0 and curves
    of different scales can share an axis.
    """

    HEADER = "iteration,task,raw_loss,normalized_loss"

    def __init__(self) -> None:
        self.points: list[CurvePoint] = []
        self._first: dict[str, float] = {}

    def add(self, iteration: int, task: str, raw: float) -> None:
        first = self._first.setdefault(task, raw)
        normalized = raw / first if first != 0 else 1.0
        self.points.append(CurvePoint(iteration, task, raw, normalized))

    def tasks(self) -> list[str]:
        return list(self._first)

    def series(self, task: str, normalized: bool = True) -> tuple[list[int], list[float]]:
        xs, ys = [], []
        for p in self.points:
            if p.task == task:
                xs.append(p.iteration)
                ys.append(p.normalized_loss if normalized else p.raw_loss)
        return xs, ys

    def to_csv(self, path: str | Path) -> None:
        lines = [self.HEADER]
        lines.extend(
            f"{p.iteration},{p.task},{p.raw_loss!r},{p.normalized_loss!r}"
            for p in self.points
        )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path: str | Path) -> "CurveLog":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != cls.HEADER:
            raise ValueError(f"{path}: not a loss-curve CSV (bad header)")
        log = cls()
        for line_no, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"{path}: line {line_no}: expected 4 fields")
            iteration, task, raw, normalized = parts
            log._first.setdefault(task, float(raw) / float(normalized) if float(normalized) else 0.0)
            log.points.append(
                CurvePoint(int(iteration), task, float(raw), float(normalized))
            )
        return log


def video_tensors(video: VideoSequence) -> tuple[torch.Tensor, torch.Tensor]:
    return (
        torch.from_numpy(np.ascontiguousarray(video.vis_matrix)),
        torch.from_numpy(np.ascontiguousarray(video.aud_matrix)),
    )


def gold_tag_indices(video: VideoSequence, scheme: LabelScheme) -> list[int]:
    if video.scenes is None:
        raise ValueError(f"video {video.video_id} has no scene annotations")
    tags = encode(video.scenes, video.n_shots, scheme)
    return [scheme.tag_index(t) for t in tags]


class OsmslModel(nn.Module):
    """Full one-stage model: fusion trunk -> emission head -> constrained CRF."""

    model_type = "osmsl"

    def __init__(
        self,
        scheme: LabelScheme,
        d_vis: int,
        d_aud: int,
        diffcorr_cfg: DiffCorrConfig | None = None,
        encoder_cfg: EncoderConfig | None = None,
        use_visual: bool = True,
        use_audio: bool = True,
        hard_mask: bool = True,
    ):
        super().__init__()
        self.scheme = scheme
        self.diffcorr_cfg = diffcorr_cfg or DiffCorrConfig()
        self.encoder_cfg = encoder_cfg or EncoderConfig()
        self.trunk = FusionTrunk(
            d_vis, d_aud, self.diffcorr_cfg, self.encoder_cfg, use_visual, use_audio
        )
        self.emission = nn.Linear(self.encoder_cfg.d_m, scheme.n_tags, dtype=torch.float64)
        self.crf = LinkCRF(scheme, hard_mask=hard_mask)

    def config_doc(self) -> dict:
        return {
            "d_vis": self.trunk.d_vis,
            "d_aud": self.trunk.d_aud,
            "use_visual": self.trunk.use_visual,
            "use_audio": self.trunk.use_audio,
            "hard_mask": self.crf.hard_mask,
            "diffcorr": asdict(self.diffcorr_cfg),
            "encoder": asdict(self.encoder_cfg),
        }

    @classmethod
    def from_config(cls, scheme: LabelScheme, doc: dict) -> "OsmslModel":
        return cls(
            scheme,
            doc["d_vis"],
            doc["d_aud"],
            DiffCorrConfig(**doc["diffcorr"]),
            EncoderConfig(**doc["encoder"]),
            doc["use_visual"],
            doc["use_audio"],
            doc["hard_mask"],
        )

    def emissions_batch(
        self, batch: list[tuple[torch.Tensor, torch.Tensor]], train_mode: bool
    ) -> list[torch.Tensor]:
        return [self.emission(h) for h in self.trunk.hidden_batch(batch, train_mode)]

    def forward_loss(
        self, videos: Sequence[VideoSequence], train_mode: bool = True
    ) -> tuple[torch.Tensor, dict]:
        """Mean per-video CRF NLL over the batch, with per-video diagnostics."""
        emissions = self.emissions_batch([video_tensors(v) for v in videos], train_mode)
        nlls = [
            self.crf.nll(em, gold_tag_indices(v, self.scheme))
            for em, v in zip(emissions, videos)
        ]
        loss = torch.stack(nlls).mean()
        diagnostics = {
            "tasks": {"osmsl": float(loss.detach())},
            "per_video_nll": {
                v.video_id: float(nll.detach()) for v, nll in zip(videos, nlls)
            },
        }
        return loss, diagnostics

    def predict_tags(self, vis: torch.Tensor, aud: torch.Tensor) -> list[LinkTag]:
        self.eval()
        with torch.no_grad():
            em = self.emissions_batch([(vis, aud)], train_mode=False)[0]
        path, _ = self.crf.viterbi(em)
        tags = [self.scheme.tag_at(i) for i in path]
        if not self.crf.hard_mask:
            tags = repair(tags, self.scheme)
        return tags

    def predict_scenes(self, vis: torch.Tensor, aud: torch.Tensor) -> list[SceneAnnotation]:
        return decode(self.predict_tags(vis, aud), self.scheme)


def init_parameters(model: nn.Module, seed: int) -> None:
    """Deterministic init: scaled-uniform weights, zero biases, unit norms.

    Linear and embedding weights draw U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from
    one seeded generator in module-definition order; normalization layers
    reset to identity; CRF scores start at zero (uniform over legal paths).
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Linear):
                bound = 1.0 / math.sqrt(module.weight.shape[1])
                module.weight.uniform_(-bound, bound, generator=gen)
                if module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.Embedding):
                bound = 1.0 / math.sqrt(module.weight.shape[1])
                module.weight.uniform_(-bound, bound, generator=gen)
            elif isinstance(module, (nn.LayerNorm, nn.BatchNorm1d)):
                module.weight.fill_(1.0)
                module.bias.zero_()
                if isinstance(module, nn.BatchNorm1d):
                    module.reset_running_stats()
            elif isinstance(module, LinkCRF):
                module.transitions.zero_()
                module.start.zero_()
                module.end.zero_()


BatchLoss = Callable[[Sequence[VideoSequence]], tuple[torch.Tensor, dict]]


def fit(
    model: nn.Module,
    videos: Sequence[VideoSequence],
    config: TrainConfig,
    batch_loss: BatchLoss | None = None,
) -> CurveLog:
    """Adam training over video minibatches; returns the loss curve.

    batch_loss returns (scalar loss, diagnostics) where diagnostics["tasks"]
    maps task tags to raw loss values for the curve.  Aborts with
    FloatingPointError the moment any loss is non-finite rather than
    training through NaNs.
    """
    if not videos:
        raise ValueError("no training videos")
    for v in videos:
        if v.scenes is None:
            raise ValueError(f"video {v.video_id} has no scene annotations")
    if batch_loss is None:
        batch_loss = model.forward_loss
    torch.set_num_threads(config.threads)
    opt = torch.optim.Adam(
        model.parameters(), lr=config.lr, betas=config.betas, eps=config.adam_eps
    )
    shuffle_rng = np.random.default_rng(config.seed)
    curve = CurveLog()
    iteration = 0
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(len(videos))
        for lo in range(0, len(order), config.batch_size):
            batch = [videos[i] for i in order[lo : lo + config.batch_size]]
            model.train()
            loss, diagnostics = batch_loss(batch)
            if not bool(torch.isfinite(loss)):
                raise FloatingPointError(
                    f"non-finite loss at iteration {iteration + 1}; aborting"
                )
            opt.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
            opt.step()
            iteration += 1
            for task, raw in diagnostics["tasks"].items():
                curve.add(iteration, task, raw)
    return curve


def train_osmsl(corpus: Corpus, config: TrainConfig) -> tuple[OsmslModel, CurveLog]:
    model = OsmslModel(
        corpus.scheme,
        corpus.d_vis,
        corpus.d_aud,
        config.diffcorr,
        config.encoder,
        config.use_visual,
        config.use_audio,
        config.hard_mask,
    )
    init_parameters(model, config.seed)
    curve = fit(model, corpus.videos, config)
    return model, curve


def predict_corpus(model: nn.Module, videos: Sequence[VideoSequence]) -> list[VideoSequence]:
    """Attach predicted scenes to each video (existing scenes are replaced)."""
    out = []
    for v in videos:
        vis, aud = video_tensors(v)
        _check_dims(model, vis.shape[1], aud.shape[1])
        out.append(v.with_scenes(model.predict_scenes(vis, aud)))
    return out


def _check_dims(model: nn.Module, d_vis: int, d_aud: int) -> None:
    trunk = getattr(model, "trunk", None)
    if trunk is None:
        return
    if trunk.use_visual and d_vis != trunk.d_vis:
        raise ValueError(f"visual dim {d_vis} does not match model ({trunk.d_vis})")
    if trunk.use_audio and d_aud != trunk.d_aud:
        raise ValueError(f"audio dim {d_aud} does not match model ({trunk.d_aud})")


def evaluate_model(model: nn.Module, corpus: Corpus) -> EvalReport:
    for v in corpus.videos:
        if v.scenes is None:
            raise ValueError(f"video {v.video_id} has no gold scenes to score against")
    preds = predict_corpus(model, corpus.videos)
    pairs = [(p.scenes, v.scenes) for p, v in zip(preds, corpus.videos)]
    cats = list(corpus.scheme.categories) if corpus.scheme.categories else None
    return evaluate(pairs, cats)


def save_checkpoint(model: nn.Module, path: str | Path) -> None:
    state = model.state_dict()
    entries = []
    blobs = []
    offset = 0
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        if arr.dtype == np.float64:
            dtype, data = "float64", arr.astype("<f8", copy=False).tobytes(order="C")
        elif arr.dtype == np.int64:
            dtype, data = "int64", arr.astype("<i8", copy=False).tobytes(order="C")
        else:
            raise ValueError(f"cannot serialize tensor {name!r} of dtype {arr.dtype}")
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": dtype, "offset": offset}
        )
        blobs.append(data)
        offset += len(data)
    manifest = {
        "format_version": 1,
        "model_type": model.model_type,
        "scheme": model.scheme.fingerprint(),
        "config": model.config_doc(),
        "tensors": entries,
    }
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)
        for blob in blobs:
            f.write(blob)


def read_manifest(path: str | Path) -> dict:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a recognized model checkpoint")
    (length,) = struct.unpack("<Q", raw[8:16])
    if 16 + length > len(raw):
        raise ValueError(f"{path}: truncated checkpoint manifest")
    manifest = json.loads(raw[16 : 16 + length].decode("utf-8"))
    if manifest.get("format_version") != 1:
        raise ValueError(f"{path}: unsupported checkpoint version")
    return manifest


def build_model(model_type: str, scheme: LabelScheme, config: dict) -> nn.Module:
    if model_type == OsmslModel.model_type:
        return OsmslModel.from_config(scheme, config)
    from . import baselines  # late import: baselines build on this module

    return baselines.build_model(model_type, scheme, config)


def load_checkpoint(path: str | Path) -> nn.Module:
    raw = Path(path).read_bytes()
    manifest = read_manifest(path)
    (length,) = struct.unpack("<Q", raw[8:16])
    base = 16 + length
    scheme = LabelScheme.from_fingerprint(manifest["scheme"])
    model = build_model(manifest["model_type"], scheme, manifest["config"])
    np_dtypes = {"float64": "<f8", "int64": "<i8"}
    state = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(
            raw, dtype=np_dtypes[entry["dtype"]], count=count, offset=base + entry["offset"]
        ).reshape(shape)
        state[entry["name"]] = torch.from_numpy(arr.copy())
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise ValueError(f"{path}: checkpoint does not match its declared model: {exc}")
    return model
