"""Link-tag vocabulary, scene partition encoding/decoding, and the tag grammar.

A link tag describes the relation between a shot and its successor.  The five
kinds are B-I, I-I, I-E, B-E and N (B = beginning, I = intermediate, E = end,
N = no link, i.e. the shot closes its scene).  A scene of length L maps to the
kind pattern

    L == 1:  [N]
    L == 2:  [B-E, N]
    L >= 3:  [B-I, I-I * (L - 3), I-E, N]

In classification mode every tag additionally carries the scene's category,
giving 5 * C composite tags.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np


class LinkKind(IntEnum):
    """The five link kinds, in canonical order."""

    B_TO_I = 0
    I_TO_I = 1
    I_TO_E = 2
    B_TO_E = 3
    N = 4


_KIND_NAMES = {
    LinkKind.B_TO_I: "B-I",
    LinkKind.I_TO_I: "I-I",
    LinkKind.I_TO_E: "I-E",
    LinkKind.B_TO_E: "B-E",
    LinkKind.N: "N",
}
_KIND_BY_NAME = {v: k for k, v in _KIND_NAMES.items()}

# Kinds that may open a tag sequence / close one.  The first tag of a video
# always opens a scene and the last shot has no successor, so it must be N.
_START_KINDS = frozenset({LinkKind.B_TO_I, LinkKind.B_TO_E, LinkKind.N})
_END_KINDS = frozenset({LinkKind.N})


@dataclass(frozen=True)
class CategoryId:
    """A dense scene-category index with a display name."""

    index: int
    name: str


@dataclass(frozen=True)
class LinkTag:
    """A link kind, optionally bound to a category (classification mode)."""

    kind: LinkKind
    category: CategoryId | None = None

    def __str__(self) -> str:
        if self.category is None:
            return _KIND_NAMES[self.kind]
        return f"{self.category.name}_{_KIND_NAMES[self.kind]}"


@dataclass(frozen=True)
class SceneAnnotation:
    """A contiguous shot span [start_shot, end_shot] with an optional category."""

    start_shot: int
    end_shot: int
    category: CategoryId | None = None

    @property
    def length(self) -> int:
        return self.end_shot - self.start_shot + 1


class PartitionError(ValueError):
    """A scene list violates the exclusive-and-exhaustive partition constraints."""


class GrammarError(ValueError):
    """A tag sequence violates the link grammar.

    ``position`` is the index of the first offending tag.
    """

    def __init__(self, message: str, position: int):
        super().__init__(message)
        self.position = position


class LabelScheme:
    """The tag vocabulary for one task mode.

    ``mode`` is "ss" (segmentation only, 5 tags) or "ssc" (segmentation and
    classification, 5 * C tags).  The tag table is ordered category-major,
    kind-minor and is stable across runs, so tag indices are safe to persist.
    """

    def __init__(self, mode: str, categories: Sequence[CategoryId] = ()):
        if mode not in ("ss", "ssc"):
            raise ValueError(f"unknown scheme mode {mode!r}")
        if mode == "ss" and categories:
            raise ValueError("ss mode takes no categories")
        if mode == "ssc":
            if not categories:
                raise ValueError("ssc mode needs at least one category")
            names = [c.name for c in categories]
            if len(set(names)) != len(names):
                raise ValueError("category names must be unique")
            for i, c in enumerate(categories):
                if c.index != i:
                    raise ValueError(
                        f"category indices must be dense: got {c.index} at slot {i}"
                    )
        self.mode = mode
        self.categories = tuple(categories)
        if mode == "ss":
            self._tags = tuple(LinkTag(kind) for kind in LinkKind)
        else:
            self._tags = tuple(
                LinkTag(kind, cat) for cat in self.categories for kind in LinkKind
            )
        self._index = {tag: i for i, tag in enumerate(self._tags)}
        self._cat_by_name = {c.name: c for c in self.categories}

    @classmethod
    def ss(cls) -> "LabelScheme":
        return cls("ss")

    @classmethod
    def ssc(cls, names: Iterable[str]) -> "LabelScheme":
        cats = [CategoryId(i, n) for i, n in enumerate(names)]
        return cls("ssc", cats)

    @property
    def n_tags(self) -> int:
        return len(self._tags)

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def tag_table(self) -> tuple[LinkTag, ...]:
        """The canonical ordered tag list (category-major, kind-minor)."""
        return self._tags

    def tag_index(self, tag: LinkTag) -> int:
        try:
            return self._index[tag]
        except KeyError:
            raise ValueError(f"tag {tag} does not belong to this scheme") from None

    def tag_at(self, index: int) -> LinkTag:
        return self._tags[index]

    def category_by_name(self, name: str) -> CategoryId:
        try:
            return self._cat_by_name[name]
        except KeyError:
            raise ValueError(f"unknown category {name!r}") from None

    def fingerprint(self) -> dict:
        """A JSON-safe identity for checkpoint/corpus compatibility checks."""
        return {"mode": self.mode, "categories": [c.name for c in self.categories]}

    @classmethod
    def from_fingerprint(cls, fp: dict) -> "LabelScheme":
        if fp["mode"] == "ss":
            return cls.ss()
        return cls.ssc(fp["categories"])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LabelScheme)
            and self.mode == other.mode
            and self.categories == other.categories
        )

    def __repr__(self) -> str:
        if self.mode == "ss":
            return "LabelScheme(ss)"
        return f"LabelScheme(ssc, C={self.n_categories})"


@dataclass(frozen=True)
class TransitionMask:
    """The hard grammar, materialized for CRF use.

    ``allowed[i, j]`` is True iff tag j may follow tag i; ``start`` / ``end``
    flag the tags that may open / close a sequence.
    """

    allowed: np.ndarray
    start: np.ndarray
    end: np.ndarray


def _scene_kind_pattern(length: int) -> list[LinkKind]:
    if length == 1:
        return [LinkKind.N]
    if length == 2:
        return [LinkKind.B_TO_E, LinkKind.N]
    return (
        [LinkKind.B_TO_I]
        + [LinkKind.I_TO_I] * (length - 3)
        + [LinkKind.I_TO_E, LinkKind.N]
    )


def validate_partition(
    scenes: Sequence[SceneAnnotation], n_shots: int, scheme: LabelScheme | None = None
) -> None:
    """Check that ``scenes`` covers [0, n_shots) contiguously without overlap.

    With a scheme given, also checks category presence: required in ssc mode,
    forbidden in ss mode, and always drawn from the scheme's category set.
    """
    if n_shots < 1:
        raise PartitionError(f"need at least one shot, got {n_shots}")
    if not scenes:
        raise PartitionError("empty scene list")
    if scenes[0].start_shot != 0:
        raise PartitionError(
            f"first scene starts at shot {scenes[0].start_shot}, expected 0"
        )
    prev_end = -1
    for i, scene in enumerate(scenes):
        if scene.start_shot > scene.end_shot:
            raise PartitionError(
                f"scene {i} has start {scene.start_shot} > end {scene.end_shot}"
            )
        if scene.start_shot < prev_end + 1:
            raise PartitionError(
                f"scene {i} overlaps its predecessor: shot {scene.start_shot} assigned twice"
            )
        if scene.start_shot > prev_end + 1:
            raise PartitionError(f"gap in partition at shot {prev_end + 1}")
        prev_end = scene.end_shot
        if scheme is not None:
            if scheme.mode == "ssc":
                if scene.category is None:
                    raise PartitionError(f"scene {i} is missing a category (ssc mode)")
                if (
                    scene.category.index >= scheme.n_categories
                    or scheme.categories[scene.category.index] != scene.category
                ):
                    raise PartitionError(
                        f"scene {i} category {scene.category.name!r} not in scheme"
                    )
            elif scene.category is not None:
                raise PartitionError(f"scene {i} carries a category in ss mode")
    if prev_end != n_shots - 1:
        raise PartitionError(
            f"last scene ends at shot {prev_end}, expected {n_shots - 1}"
        )


def encode(
    scenes: Sequence[SceneAnnotation], n_shots: int, scheme: LabelScheme
) -> list[LinkTag]:
    """Turn a valid scene partition into the per-shot link-tag sequence."""
    validate_partition(scenes, n_shots, scheme)
    tags: list[LinkTag] = []
    for scene in scenes:
        cat = scene.category if scheme.mode == "ssc" else None
        tags.extend(LinkTag(kind, cat) for kind in _scene_kind_pattern(scene.length))
    return tags


def is_legal_transition(scheme: LabelScheme, a: LinkTag, b: LinkTag) -> bool:
    """True iff tag ``b`` may immediately follow tag ``a``.

    Within a scene the category must not change; after an N tag a new scene
    opens and may take any category.
    """
    if a.kind == LinkKind.N:
        return b.kind in (LinkKind.B_TO_I, LinkKind.B_TO_E, LinkKind.N)
    if a.category != b.category:
        return False
    if a.kind in (LinkKind.B_TO_I, LinkKind.I_TO_I):
        return b.kind in (LinkKind.I_TO_I, LinkKind.I_TO_E)
    # a.kind in (I_TO_E, B_TO_E): the scene must close next.
    return b.kind == LinkKind.N


def transition_mask(scheme: LabelScheme) -> TransitionMask:
    """Materialize the grammar as boolean matrices over the tag table."""
    tags = scheme.tag_table()
    n = len(tags)
    allowed = np.zeros((n, n), dtype=bool)
    for i, a in enumerate(tags):
        for j, b in enumerate(tags):
            allowed[i, j] = is_legal_transition(scheme, a, b)
    start = np.array([t.kind in _START_KINDS for t in tags], dtype=bool)
    end = np.array([t.kind in _END_KINDS for t in tags], dtype=bool)
    return TransitionMask(allowed=allowed, start=start, end=end)


def check_grammatical(tags: Sequence[LinkTag], scheme: LabelScheme) -> None:
    """Raise GrammarError at the first position where the grammar is violated."""
    if not tags:
        raise GrammarError("empty tag sequence", 0)
    if tags[0].kind not in _START_KINDS:
        raise GrammarError(f"sequence may not start with {tags[0]}", 0)
    for j in range(len(tags) - 1):
        if not is_legal_transition(scheme, tags[j], tags[j + 1]):
            raise GrammarError(
                f"illegal transition {tags[j]} -> {tags[j + 1]} at shot {j + 1}",
                j + 1,
            )
    if tags[-1].kind not in _END_KINDS:
        raise GrammarError(
            f"sequence may not end with {tags[-1]}", len(tags) - 1
        )


def decode(tags: Sequence[LinkTag], scheme: LabelScheme) -> list[SceneAnnotation]:
    """Turn a grammatical tag sequence back into the scene partition.

    Scenes split after every N tag; in ssc mode the scene takes the category
    shared by its tags (the grammar forbids mixing, but it is re-checked here
    because repaired baseline outputs also pass through).
    """
    check_grammatical(tags, scheme)
    scenes: list[SceneAnnotation] = []
    start = 0
    for j, tag in enumerate(tags):
        if tag.kind != LinkKind.N:
            continue
        cat = None
        if scheme.mode == "ssc":
            cats = {t.category for t in tags[start : j + 1]}
            if len(cats) != 1:
                raise GrammarError(f"mixed categories in scene ending at {j}", j)
            cat = tag.category
        scenes.append(SceneAnnotation(start, j, cat))
        start = j + 1
    return scenes


def _block_category(block: Sequence[LinkTag]) -> CategoryId | None:
    # Majority vote over the block's categories, ties to the lower index.
    counts: dict[CategoryId, int] = {}
    for tag in block:
        if tag.category is not None:
            counts[tag.category] = counts.get(tag.category, 0) + 1
    if not counts:
        return None
    return max(counts, key=lambda c: (counts[c], -c.index))


def repair(tags: Sequence[LinkTag], scheme: LabelScheme) -> list[LinkTag]:
    """Make an arbitrary tag sequence grammatical, deterministically.

    The predicted boundaries (N positions) are kept exactly, the final shot is
    forced to close its scene, and the kinds inside each boundary-delimited
    block are rewritten to the unique grammatical pattern for the block
    length.  In ssc mode a block's category is the majority category of its
    tags (ties to the lower index).  Grammatical input comes back unchanged.
    """
    if not tags:
        return []
    out = list(tags)
    if out[-1].kind != LinkKind.N:
        out[-1] = LinkTag(LinkKind.N, out[-1].category)
    start = 0
    for j in range(len(out)):
        if out[j].kind != LinkKind.N:
            continue
        block = out[start : j + 1]
        cat = _block_category(block) if scheme.mode == "ssc" else None
        pattern = _scene_kind_pattern(len(block))
        out[start : j + 1] = [LinkTag(kind, cat) for kind in pattern]
        start = j + 1
    return out


def tag_to_string(tag: LinkTag) -> str:
    return str(tag)


def tag_from_string(text: str, scheme: LabelScheme) -> LinkTag:
    """Parse "KIND" (ss) or "Category_KIND" (ssc) back into a tag."""
    if scheme.mode == "ss":
        if text not in _KIND_BY_NAME:
            raise ValueError(f"unknown link kind {text!r}")
        return LinkTag(_KIND_BY_NAME[text])
    name, _, kind_text = text.rpartition("_")
    if not name or kind_text not in _KIND_BY_NAME:
        raise ValueError(f"malformed ssc tag {text!r}")
    return LinkTag(_KIND_BY_NAME[kind_text], scheme.category_by_name(name))


def tags_to_strings(tags: Sequence[LinkTag]) -> list[str]:
    return [str(t) for t in tags]


def tags_from_strings(texts: Sequence[str], scheme: LabelScheme) -> list[LinkTag]:
    return [tag_from_string(t, scheme) for t in texts]
