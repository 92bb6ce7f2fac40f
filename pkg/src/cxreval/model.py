"""Study/read data model and majority-vote reference standard."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from . import taxonomy
from .taxonomy import NO_FINDING, LabelClass

AI_RATER = "AI"


class Session(str, Enum):
    UNASSISTED = "unassisted"
    ASSISTED = "assisted"
    MODEL = "model"


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite: {coords}")
        if min(coords) < 0:
            raise ValueError(f"box coordinates must be >= 0: {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"box must have x_min < x_max and y_min < y_max: {coords}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def scaled(self, factor: float) -> "BBox":
        return BBox(self.x_min * factor, self.y_min * factor, self.x_max * factor, self.y_max * factor)


@dataclass(frozen=True)
class RaterRead:
    """One reader's (or the model's) labels for one image.

    Construction does not enforce the read-level rules; use
    :func:`validate_read` so malformed inputs can be reported rather than
    crashing the loader.
    """

    image_id: str
    rater_id: str
    session: Session = Session.UNASSISTED
    global_labels: frozenset[LabelClass] = frozenset()
    findings: tuple[tuple[LabelClass, BBox], ...] = ()
    site: str = ""

    def __post_init__(self):
        object.__setattr__(self, "global_labels", frozenset(self.global_labels))
        object.__setattr__(self, "findings", tuple(self.findings))
        object.__setattr__(self, "session", Session(self.session))

    def label_names(self) -> frozenset[str]:
        """Every label this read marks as present at image level."""
        names = {c.name for c in self.global_labels}
        names.update(c.name for c, _ in self.findings)
        return frozenset(names)

    def has(self, label: str | LabelClass) -> bool:
        name = label.name if isinstance(label, LabelClass) else label
        return name in self.label_names()


@dataclass(frozen=True)
class StudyMetadata:
    age: float | None = None
    sex: str | None = None
    source: str | None = None


@dataclass(frozen=True)
class StudyRecord:
    study_id: str
    image_ids: tuple[str, ...]
    reads: tuple[RaterRead, ...] = ()
    metadata: StudyMetadata | None = None

    def __post_init__(self):
        object.__setattr__(self, "image_ids", tuple(self.image_ids))
        object.__setattr__(self, "reads", tuple(self.reads))
        stray = sorted({r.image_id for r in self.reads} - set(self.image_ids))
        if stray:
            raise ValueError(f"study {self.study_id}: reads reference unknown images {stray}")


@dataclass(frozen=True)
class ConsensusPolicy:
    quorum: int
    mode: str = "majority"

    def __post_init__(self):
        if self.mode != "majority":
            raise ValueError(f"unsupported consensus mode {self.mode!r}")
        if self.quorum < 1 or self.quorum % 2 == 0:
            raise ValueError(f"majority quorum must be a positive odd count, got {self.quorum}")


def _check_panel(reads: Sequence[RaterRead], policy: ConsensusPolicy) -> None:
    if not reads:
        raise ValueError("no reads given")
    images = {r.image_id for r in reads}
    if len(images) > 1:
        raise ValueError(f"reads refer to different images: {sorted(images)}")
    dup = [r for r, n in Counter(r.rater_id for r in reads).items() if n > 1]
    if dup:
        raise ValueError(f"duplicate rater_id(s) for image {reads[0].image_id}: {sorted(dup)}")
    if len(reads) != policy.quorum:
        raise ValueError(
            f"image {reads[0].image_id}: {len(reads)} raters but quorum is {policy.quorum}"
        )


def consensus_labels(reads: Sequence[RaterRead], policy: ConsensusPolicy) -> frozenset[str]:
    """Majority vote of binarized image-level presence over every label.

    A label survives when strictly more than half of the panel marked it.
    No Finding is kept only when no other label survives.
    """
    _check_panel(reads, policy)
    votes = Counter()
    for r in reads:
        votes.update(r.label_names())
    winners = {name for name, n in votes.items() if 2 * n > policy.quorum}
    if winners - {NO_FINDING}:
        winners.discard(NO_FINDING)
    return frozenset(winners)


def consensus_global(reads: Sequence[RaterRead], policy: ConsensusPolicy) -> frozenset[LabelClass]:
    """Reference-standard global labels for one image."""
    _check_panel(reads, policy)
    votes = Counter()
    for r in reads:
        votes.update(c for c in r.global_labels if c.is_global)
    winners = {c for c, n in votes.items() if 2 * n > policy.quorum}
    if any(c.name != NO_FINDING for c in winners):
        winners = {c for c in winners if c.name != NO_FINDING}
    return frozenset(winners)


def validate_read(read: RaterRead, taxonomy_labels: Iterable[LabelClass] | None = None) -> list[str]:
    """List every broken read-level rule; empty means the read is well formed."""
    known = set(taxonomy_labels) if taxonomy_labels is not None else set(taxonomy.build_label_taxonomy())
    problems = []
    names = {c.name for c in read.global_labels}
    if NO_FINDING in names:
        if read.findings:
            problems.append("findings: No Finding excludes findings")
        if len(names) > 1:
            problems.append("global_labels: No Finding excludes other global labels")
    for c in sorted(read.global_labels, key=lambda c: c.name):
        if not c.is_global:
            problems.append(f"global_labels: {c.name} is a local label")
        if c not in known:
            problems.append(f"global_labels: {c.name} is not in the taxonomy")
    for c, _ in read.findings:
        if not c.is_local:
            problems.append(f"findings: {c.name} is a global label")
        if c not in known:
            problems.append(f"findings: {c.name} is not in the taxonomy")
    return problems


def group_by_image(reads: Iterable[RaterRead]) -> dict[str, list[RaterRead]]:
    out: dict[str, list[RaterRead]] = {}
    for r in reads:
        out.setdefault(r.image_id, []).append(r)
    return dict(sorted(out.items()))


def reference_standard(
    reads: Iterable[RaterRead], quorum: int | None = None
) -> dict[str, frozenset[str]]:
    """Per-image consensus label names; quorum defaults to each image's panel size."""
    out = {}
    for image_id, panel in group_by_image(reads).items():
        policy = ConsensusPolicy(quorum if quorum is not None else len(panel))
        out[image_id] = consensus_labels(panel, policy)
    return out
