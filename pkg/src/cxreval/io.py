"""Annotation and prediction files.

Annotation CSV columns (layout of the public dataset release)::

    image_id,rad_id,class_name,x_min,y_min,x_max,y_max[,session][,site]

Box columns are empty for global labels and "No finding". Prediction files
are CSV or JSON lines with ``image_id,class_name,score`` plus the optional
box columns; a row with a box is a detection, a row without one is an
image-level score.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from . import taxonomy
from .detection import DetectionRecord, GroundTruthBox
from .errors import DataError
from .model import AI_RATER, BBox, RaterRead, Session
from .taxonomy import NO_FINDING, LabelClass, LabelKind

BOX_FIELDS = ("x_min", "y_min", "x_max", "y_max")
ANNOTATION_FIELDS = ("image_id", "rad_id", "class_name") + BOX_FIELDS


def _parse_box(row: dict, path, line) -> BBox | None:
    raw = [(row.get(k) or "").strip() for k in BOX_FIELDS]
    present = [bool(v) for v in raw]
    if not any(present):
        return None
    if not all(present):
        missing = [k for k, p in zip(BOX_FIELDS, present) if not p]
        raise DataError(f"box fields must be all present or all absent (missing {missing})", path, line)
    try:
        coords = [float(v) for v in raw]
    except ValueError:
        raise DataError(f"non-numeric box coordinate in {raw}", path, line) from None
    try:
        return BBox(*coords)
    except ValueError as exc:
        raise DataError(f"malformed box: {exc}", path, line) from None


def _resolve_label(name: str, has_box: bool, strict: bool, path, line) -> LabelClass:
    name = (name or "").strip()
    if not name:
        raise DataError("empty class_name", path, line)
    cls = taxonomy.lookup(name)
    if cls is None:
        if strict:
            raise DataError(f"unknown class {name!r}", path, line)
        return taxonomy.untyped(name, LabelKind.LOCAL if has_box else LabelKind.GLOBAL)
    return cls


def _csv_rows(path) -> Iterator[tuple[int, dict]]:
    try:
        fh = open(path, newline="", encoding="utf-8-sig")
    except OSError as exc:
        raise DataError(f"cannot open: {exc.strerror}", os.fspath(path)) from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError("empty file", os.fspath(path), 1)
        reader.fieldnames = [f.strip() for f in reader.fieldnames]
        yield 1, {f: f for f in reader.fieldnames}
        for row in reader:
            yield reader.line_num, row


def load_annotations(path, strict: bool = True, session: str | None = None) -> list[RaterRead]:
    """Group annotation rows into one :class:`RaterRead` per (image, rater).

    Reads from rater ``AI`` get the ``model`` session; other rows use the
    ``session`` column, else ``session``, else ``unassisted``.
    """
    path = os.fspath(path)
    rows = _csv_rows(path)
    _, header = next(rows)
    need = {"image_id", "rad_id", "class_name"}
    if not need <= set(header):
        raise DataError(f"header must contain {sorted(need)}, got {list(header)}", path, 1)
    groups: dict[tuple[str, str], dict] = {}
    for line, row in rows:
        image_id = (row.get("image_id") or "").strip()
        rater = (row.get("rad_id") or "").strip()
        if not image_id or not rater:
            raise DataError("image_id and rad_id are required", path, line)
        box = _parse_box(row, path, line)
        cls = _resolve_label(row.get("class_name"), box is not None, strict, path, line)
        if cls.is_global and box is not None:
            raise DataError(f"global label {cls.name!r} cannot carry a box", path, line)
        if cls.is_local and box is None:
            raise DataError(f"local label {cls.name!r} needs a box", path, line)
        sess = (row.get("session") or "").strip() or session or "unassisted"
        if rater == AI_RATER:
            sess = Session.MODEL.value
        try:
            sess = Session(sess)
        except ValueError:
            raise DataError(f"unknown session {sess!r}", path, line) from None
        site = (row.get("site") or "").strip()
        g = groups.setdefault(
            (image_id, rater, sess, site), {"globals": set(), "findings": [], "line": line}
        )
        if box is None:
            g["globals"].add(cls)
        else:
            g["findings"].append((cls, box))

    reads = []
    seen: dict[tuple, int] = {}
    for (image_id, rater, sess, site), g in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value, kv[0][3])):
        key = (image_id, rater, sess)
        if key in seen:
            raise DataError(f"image {image_id!r} rater {rater!r} appears under two sites", path, g["line"])
        seen[key] = g["line"]
        reads.append(RaterRead(image_id, rater, sess, frozenset(g["globals"]), tuple(g["findings"]), site))
    return reads


def _fmt(x: float) -> str:
    return repr(float(x))


def write_annotations(reads: Iterable[RaterRead], path, with_session: bool = True) -> None:
    """Inverse of :func:`load_annotations` for reads that mark at least one label."""
    cols = list(ANNOTATION_FIELDS) + (["session", "site"] if with_session else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in reads:
            extra = [r.session.value, r.site] if with_session else []
            for c in sorted(r.global_labels, key=lambda c: c.name):
                w.writerow([r.image_id, r.rater_id, c.name, "", "", "", ""] + extra)
            for c, b in r.findings:
                w.writerow([r.image_id, r.rater_id, c.name] + [_fmt(v) for v in (b.x_min, b.y_min, b.x_max, b.y_max)] + extra)


# ---------------------------------------------------------------- predictions


@dataclass
class Predictions:
    scores: dict[str, dict[str, float]] = field(default_factory=dict)
    detections: list[DetectionRecord] = field(default_factory=list)

    @property
    def image_ids(self) -> list[str]:
        return sorted(set(self.scores) | {d.image_id for d in self.detections})

    def image_scores(self, labels: Sequence[str], image_ids: Iterable[str] | None = None) -> dict[str, dict[str, float]]:
        """Per-image score for each label.

        Global labels use the explicit score rows. A lesion-level label with no
        explicit score takes the image's highest detection score for that
        class, or 0 when nothing was detected.
        """
        ids = sorted(set(image_ids) if image_ids is not None else set(self.image_ids))
        best: dict[tuple[str, str], float] = {}
        for d in self.detections:
            k = (d.image_id, d.label)
            best[k] = max(best.get(k, 0.0), d.score)
        out = {}
        for img in ids:
            row = {}
            for lab in labels:
                if lab in self.scores.get(img, {}):
                    row[lab] = self.scores[img][lab]
                else:
                    cls = taxonomy.lookup(lab)
                    if cls is not None and cls.is_local:
                        row[lab] = best.get((img, lab), 0.0)
            out[img] = row
        return out


def _json_rows(path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for n, text in enumerate(fh, start=1):
            text = text.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON: {exc.msg}", path, n) from None
            if not isinstance(obj, dict):
                raise DataError("each line must be a JSON object", path, n)
            yield n, {k: ("" if v is None else str(v) if not isinstance(v, str) else v) for k, v in obj.items()}


def load_predictions(path, strict: bool = True) -> Predictions:
    path = os.fspath(path)
    if Path(path).suffix.lower() in (".jsonl", ".ndjson", ".json"):
        rows = _json_rows(path)
    else:
        rows = _csv_rows(path)
        _, header = next(rows)
        need = {"image_id", "class_name", "score"}
        if not need <= set(header):
            raise DataError(f"header must contain {sorted(need)}, got {list(header)}", path, 1)
    out = Predictions()
    for line, row in rows:
        image_id = (row.get("image_id") or "").strip()
        if not image_id:
            raise DataError("image_id is required", path, line)
        raw = (row.get("score") or "").strip()
        try:
            score = float(raw)
        except ValueError:
            raise DataError(f"non-numeric score {raw!r}", path, line) from None
        if not (math.isfinite(score) and 0.0 <= score <= 1.0):
            raise DataError(f"score {raw} out of range [0, 1]", path, line)
        box = _parse_box(row, path, line)
        cls = _resolve_label(row.get("class_name"), box is not None, strict, path, line)
        if cls.is_global and box is not None:
            raise DataError(f"global label {cls.name!r} cannot carry a box", path, line)
        if cls.is_local and box is None:
            raise DataError(f"local label {cls.name!r} needs a box", path, line)
        if box is None:
            per = out.scores.setdefault(image_id, {})
            if cls.name in per:
                raise DataError(f"duplicate score for {image_id!r} / {cls.name!r}", path, line)
            per[cls.name] = score
        else:
            out.detections.append(DetectionRecord(image_id, cls.name, box, score))
    return out


def write_predictions(pred: Predictions, path) -> None:
    """CSV or JSON lines, chosen by the file extension."""
    rows = []
    for img in sorted(pred.scores):
        for lab in sorted(pred.scores[img]):
            rows.append({"image_id": img, "class_name": lab, "score": pred.scores[img][lab]})
    for d in pred.detections:
        rows.append(
            {"image_id": d.image_id, "class_name": d.label, "score": d.score,
             "x_min": d.box.x_min, "y_min": d.box.y_min, "x_max": d.box.x_max, "y_max": d.box.y_max}
        )
    if Path(path).suffix.lower() in (".jsonl", ".ndjson", ".json"):
        with open(path, "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps(r) + "\n")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "class_name", "score", *BOX_FIELDS])
        for r in rows:
            w.writerow([r["image_id"], r["class_name"], _fmt(r["score"])] + [_fmt(r[k]) if k in r else "" for k in BOX_FIELDS])


def ground_truth_boxes(reads: Iterable[RaterRead], rater: str | None = None) -> list[GroundTruthBox]:
    """Ground-truth boxes from annotation reads.

    With ``rater`` only that reader's boxes are used. Without it every image
    must carry exactly one rater (pre-fused boxes).
    """
    reads = list(reads)
    if rater is not None:
        reads = [r for r in reads if r.rater_id == rater]
        if not reads:
            raise DataError(f"no reads from ground-truth rater {rater!r}")
    else:
        per_image: dict[str, set] = {}
        for r in reads:
            per_image.setdefault(r.image_id, set()).add(r.rater_id)
        multi = sorted(i for i, s in per_image.items() if len(s) > 1)
        if multi:
            raise DataError(
                f"{len(multi)} images have several raters (e.g. {multi[0]!r}); choose one with --gt-rater"
            )
    return [GroundTruthBox(r.image_id, c.name, b) for r in reads for c, b in r.findings]
