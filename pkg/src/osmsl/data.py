"""Loading, validation and serialization of shot features, scenes and reports.

Features arrive precomputed per shot (one visual and one audio vector); this
module enforces the partition constraints and the corpus-wide dimension
contract but never touches raw video or audio.

File formats:
  features.jsonl   one JSON object per shot:
                   {"video_id", "shot_index", "start_sec", "end_sec",
                    "vis": [...], "aud": [...]}
  features.npz     packed binary sidecar with identical content (bit-exact)
  scenes.json      {"videos": [{"video_id", "scenes": [{"start_shot",
                    "end_shot", "category": str|null}]}]}
  predictions.json same schema as scenes.json
  report.json      seg / seg_cls_micro / seg_cls_macro / per_category blocks
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .scheme import (
    LabelScheme,
    PartitionError,
    SceneAnnotation,
    validate_partition,
)


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class ShotRecord:
    """One shot: identity, time span and the two unimodal feature vectors."""

    video_id: str
    shot_index: int
    start_sec: float
    end_sec: float
    vis: np.ndarray
    aud: np.ndarray


@dataclass
class VideoSequence:
    """All shots of one video, optionally with gold or predicted scenes."""

    video_id: str
    shots: list[ShotRecord]
    scenes: list[SceneAnnotation] | None = None

    @property
    def n_shots(self) -> int:
        return len(self.shots)

    @cached_property
    def vis_matrix(self) -> np.ndarray:
        return np.stack([s.vis for s in self.shots])

    @cached_property
    def aud_matrix(self) -> np.ndarray:
        return np.stack([s.aud for s in self.shots])

    def with_scenes(self, scenes: list[SceneAnnotation] | None) -> "VideoSequence":
        return VideoSequence(self.video_id, self.shots, scenes)


@dataclass
class Corpus:
    videos: list[VideoSequence]
    scheme: LabelScheme

    @property
    def d_vis(self) -> int:
        return int(self.videos[0].shots[0].vis.shape[0])

    @property
    def d_aud(self) -> int:
        return int(self.videos[0].shots[0].aud.shape[0])

    def video_by_id(self, video_id: str) -> VideoSequence:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise DataError(f"unknown video {video_id!r}")


def strip_categories(corpus: Corpus) -> Corpus:
    """Drop all category labels, turning an ssc corpus into an ss one."""
    videos = []
    for v in corpus.videos:
        scenes = None
        if v.scenes is not None:
            scenes = [SceneAnnotation(s.start_shot, s.end_shot, None) for s in v.scenes]
        videos.append(v.with_scenes(scenes))
    return Corpus(videos, LabelScheme.ss())


def shot_category_indices(video: VideoSequence) -> np.ndarray:
    """Per-shot category index array from the video's scene annotations."""
    if video.scenes is None:
        raise DataError(f"video {video.video_id} has no scene annotations")
    labels = np.empty(video.n_shots, dtype=np.int64)
    for scene in video.scenes:
        if scene.category is None:
            raise DataError("per-shot category labels need category-typed scenes")
        labels[scene.start_shot : scene.end_shot + 1] = scene.category.index
    return labels


def shot_boundary_targets(video: VideoSequence) -> np.ndarray:
    """Per-shot 0/1 array marking shots that end a scene."""
    if video.scenes is None:
        raise DataError(f"video {video.video_id} has no scene annotations")
    targets = np.zeros(video.n_shots, dtype=np.float64)
    for scene in video.scenes:
        targets[scene.end_shot] = 1.0
    return targets


def _feature_vector(obj, key: str, line_no: int) -> np.ndarray:
    raw = obj.get(key)
    if not isinstance(raw, list) or not raw:
        raise DataError(f"line {line_no}: field {key!r} must be a non-empty list")
    vec = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise DataError(f"line {line_no}: non-finite value in {key!r}")
    return vec


def _build_videos(records: list[ShotRecord]) -> list[VideoSequence]:
    by_video: dict[str, dict[int, ShotRecord]] = {}
    for rec in records:
        shots = by_video.setdefault(rec.video_id, {})
        if rec.shot_index in shots:
            raise DataError(
                f"duplicate shot ({rec.video_id!r}, {rec.shot_index})"
            )
        shots[rec.shot_index] = rec
    d_vis = records[0].vis.shape[0]
    d_aud = records[0].aud.shape[0]
    videos = []
    for video_id in sorted(by_video):
        shots = by_video[video_id]
        for idx in range(len(shots)):
            if idx not in shots:
                raise DataError(
                    f"video {video_id!r}: gap in shot_index at {idx}"
                )
        ordered = [shots[i] for i in range(len(shots))]
        for rec in ordered:
            if rec.vis.shape[0] != d_vis:
                raise DataError(
                    f"video {video_id!r} shot {rec.shot_index}: vis dim "
                    f"{rec.vis.shape[0]} != corpus dim {d_vis}"
                )
            if rec.aud.shape[0] != d_aud:
                raise DataError(
                    f"video {video_id!r} shot {rec.shot_index}: aud dim "
                    f"{rec.aud.shape[0]} != corpus dim {d_aud}"
                )
            if not rec.start_sec < rec.end_sec:
                raise DataError(
                    f"video {video_id!r} shot {rec.shot_index}: "
                    f"start_sec {rec.start_sec} is not before end_sec {rec.end_sec}"
                )
        videos.append(VideoSequence(video_id, ordered))
    return videos


def load_features(path: str | Path) -> list[VideoSequence]:
    """Load shot features from a .jsonl file or the .npz binary sidecar."""
    path = Path(path)
    if path.suffix == ".npz":
        return _load_features_npz(path)
    records: list[ShotRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
            try:
                records.append(
                    ShotRecord(
                        video_id=str(obj["video_id"]),
                        shot_index=int(obj["shot_index"]),
                        start_sec=float(obj["start_sec"]),
                        end_sec=float(obj["end_sec"]),
                        vis=_feature_vector(obj, "vis", line_no),
                        aud=_feature_vector(obj, "aud", line_no),
                    )
                )
            except KeyError as exc:
                raise DataError(f"line {line_no}: missing field {exc.args[0]!r}") from exc
    if not records:
        raise DataError(f"{path}: no shot records")
    return _build_videos(records)


def save_features(path: str | Path, videos: Sequence[VideoSequence]) -> None:
    """Write features as JSONL (or as the binary sidecar if path ends in .npz)."""
    path = Path(path)
    if path.suffix == ".npz":
        _save_features_npz(path, videos)
        return
    with open(path, "w", encoding="utf-8") as fh:
        for video in videos:
            for shot in video.shots:
                fh.write(
                    json.dumps(
                        {
                            "video_id": shot.video_id,
                            "shot_index": shot.shot_index,
                            "start_sec": shot.start_sec,
                            "end_sec": shot.end_sec,
                            "vis": shot.vis.tolist(),
                            "aud": shot.aud.tolist(),
                        }
                    )
                    + "\n"
                )


def _save_features_npz(path: Path, videos: Sequence[VideoSequence]) -> None:
    meta = []
    arrays: dict[str, np.ndarray] = {}
    for i, video in enumerate(videos):
        meta.append(
            {
                "video_id": video.video_id,
                "start_sec": [s.start_sec for s in video.shots],
                "end_sec": [s.end_sec for s in video.shots],
            }
        )
        arrays[f"vis_{i}"] = video.vis_matrix
        arrays[f"aud_{i}"] = video.aud_matrix
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    # written by hand instead of np.savez so the zip timestamps are fixed
    # and identical runs produce byte-identical files
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr))
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def _load_features_npz(path: Path) -> list[VideoSequence]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        records: list[ShotRecord] = []
        for i, video_meta in enumerate(meta):
            vis = data[f"vis_{i}"]
            aud = data[f"aud_{i}"]
            for j in range(vis.shape[0]):
                records.append(
                    ShotRecord(
                        video_id=video_meta["video_id"],
                        shot_index=j,
                        start_sec=float(video_meta["start_sec"][j]),
                        end_sec=float(video_meta["end_sec"][j]),
                        vis=vis[j].astype(np.float64),
                        aud=aud[j].astype(np.float64),
                    )
                )
    if not records:
        raise DataError(f"{path}: no shot records")
    return _build_videos(records)


def read_scene_file(path: str | Path) -> dict[str, list[tuple[int, int, str | None]]]:
    """Read a scenes/predictions file into raw (start, end, category-name) spans."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: malformed JSON ({exc.msg})") from exc
    out: dict[str, list[tuple[int, int, str | None]]] = {}
    for entry in doc.get("videos", []):
        video_id = str(entry["video_id"])
        if video_id in out:
            raise DataError(f"duplicate video {video_id!r} in {path}")
        spans = []
        for s in entry["scenes"]:
            cat = s.get("category")
            spans.append((int(s["start_shot"]), int(s["end_shot"]), cat))
        out[video_id] = spans
    return out


def resolve_scenes(
    spans: Sequence[tuple[int, int, str | None]],
    n_shots: int,
    scheme: LabelScheme,
) -> list[SceneAnnotation]:
    """Resolve raw spans against a scheme and validate the partition.

    Spans are sorted by start shot first, so file order does not matter.
    """
    scenes = []
    for start, end, cat_name in sorted(spans, key=lambda s: (s[0], s[1])):
        cat = None
        if cat_name is not None:
            if scheme.mode == "ss":
                raise DataError(f"category {cat_name!r} given in ss mode")
            try:
                cat = scheme.category_by_name(cat_name)
            except ValueError as exc:
                raise DataError(str(exc)) from exc
        scenes.append(SceneAnnotation(start, end, cat))
    try:
        validate_partition(scenes, n_shots, scheme)
    except PartitionError as exc:
        raise DataError(str(exc)) from exc
    return scenes


def load_scenes(
    path: str | Path, videos: Sequence[VideoSequence], scheme: LabelScheme
) -> list[VideoSequence]:
    """Attach scene annotations to loaded videos, validating every partition."""
    raw = read_scene_file(path)
    by_id = {v.video_id: v for v in videos}
    for video_id in raw:
        if video_id not in by_id:
            raise DataError(f"scene file references unknown video {video_id!r}")
    out = []
    for video in videos:
        if video.video_id not in raw:
            raise DataError(f"no scenes for video {video.video_id!r}")
        try:
            scenes = resolve_scenes(raw[video.video_id], video.n_shots, scheme)
        except DataError as exc:
            raise DataError(f"video {video.video_id!r}: {exc}") from exc
        out.append(video.with_scenes(scenes))
    return out


def scenes_to_doc(videos: Sequence[VideoSequence]) -> dict:
    entries = []
    for video in videos:
        if video.scenes is None:
            raise DataError(f"video {video.video_id!r} has no scenes to save")
        entries.append(
            {
                "video_id": video.video_id,
                "scenes": [
                    {
                        "start_shot": s.start_shot,
                        "end_shot": s.end_shot,
                        "category": None if s.category is None else s.category.name,
                    }
                    for s in video.scenes
                ],
            }
        )
    return {"videos": entries}


def save_scenes(path: str | Path, videos: Sequence[VideoSequence]) -> None:
    save_json(path, scenes_to_doc(videos))


# Predictions use the same schema as gold scenes.
save_predictions = save_scenes


def save_report(path: str | Path, report_doc: dict) -> None:
    save_json(path, report_doc)


def save_json(path: str | Path, doc: dict) -> None:
    """Write JSON with a stable layout (insertion order, 2-space indent)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
