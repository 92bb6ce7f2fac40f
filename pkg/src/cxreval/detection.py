"""Lesion-level evaluation: IoU matching and FROC analysis."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .bootstrap import BootstrapConfig, Interval, bootstrap_many
from .classification import CurveSeries, mean_row
from .errors import NoPositives
from .model import BBox
from .taxonomy import DETECTION_FINDINGS, NO_FINDING

DEFAULT_FPPI = (0.25, 0.5, 1.0, 2.0, 4.0)
DEFAULT_IOU = 0.4


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    label: str
    box: BBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    label: str
    box: BBox


@dataclass(frozen=True)
class MatchResult:
    matches: tuple[tuple[int, int, float], ...]
    false_positives: tuple[int, ...]
    false_negatives: tuple[int, ...]

    @property
    def tp(self) -> int:
        return len(self.matches)


@dataclass(frozen=True)
class FrocPoint:
    fppi: float
    sensitivity: float
    threshold: float


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _score_order(dets: Sequence[DetectionRecord]) -> list[int]:
    # sorted() is stable, so equal scores keep input order
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def match_detections(
    dets: Sequence[DetectionRecord],
    gts: Sequence[GroundTruthBox],
    iou_threshold: float = DEFAULT_IOU,
) -> MatchResult:
    """Greedy one-to-one matching for a single image.

    Detections are visited by descending score; each takes the unmatched
    ground truth of its own class with the highest IoU, provided that IoU is
    strictly above ``iou_threshold``. Everything left over is a false
    positive (detections) or a miss (ground truths).
    """
    images = {d.image_id for d in dets} | {g.image_id for g in gts}
    if len(images) > 1:
        raise ValueError(f"match_detections expects one image, got {sorted(images)}")
    taken = [False] * len(gts)
    matches = []
    fps = []
    for i in _score_order(dets):
        d = dets[i]
        best, best_iou = -1, iou_threshold
        for j, g in enumerate(gts):
            if taken[j] or g.label != d.label:
                continue
            v = iou(d.box, g.box)
            if v > best_iou:
                best, best_iou = j, v
        if best < 0:
            fps.append(i)
        else:
            taken[best] = True
            matches.append((i, best, best_iou))
    misses = tuple(j for j, t in enumerate(taken) if not t)
    return MatchResult(tuple(matches), tuple(sorted(fps)), misses)


def _group(items, key) -> dict[str, list]:
    out: dict[str, list] = {}
    for x in items:
        out.setdefault(key(x), []).append(x)
    return out


class _ClassSweep:
    """Greedy outcome of every detection of one class, in sweep order.

    Lowering the score threshold only appends detections to the end of the
    greedy visiting order, so one full greedy pass per image gives the
    match status of each detection at every threshold.
    """

    def __init__(self, label, dets_by_image, gts_by_image, image_ids, iou_threshold):
        self.label = label
        index = {img: k for k, img in enumerate(image_ids)}
        scores, is_tp, img_idx = [], [], []
        self.gt_count = np.zeros(len(image_ids), dtype=np.int64)
        for img in image_ids:
            d = [x for x in dets_by_image.get(img, ()) if x.label == label]
            g = [x for x in gts_by_image.get(img, ()) if x.label == label]
            self.gt_count[index[img]] = len(g)
            if not d:
                continue
            res = match_detections(d, g, iou_threshold)
            hit = {m[0] for m in res.matches}
            for i, x in enumerate(d):
                scores.append(x.score)
                is_tp.append(i in hit)
                img_idx.append(index[img])
        order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
        self.scores = np.asarray(scores, dtype=float)[order]
        self.is_tp = np.asarray(is_tp, dtype=bool)[order]
        self.img = np.asarray(img_idx, dtype=np.int64)[order]
        s = self.scores
        self.last = np.r_[np.nonzero(s[1:] != s[:-1])[0], len(s) - 1] if len(s) else np.array([], dtype=np.int64)
        self.n_images = len(image_ids)

    def counts(self, weights: np.ndarray):
        """Cumulative weighted (tp, fp) at each unique threshold, and total GT."""
        w = weights[self.img]
        tp = np.cumsum(w * self.is_tp)[self.last]
        fp = np.cumsum(w * ~self.is_tp)[self.last]
        return tp, fp, int(weights @ self.gt_count)

    def sensitivities(self, weights: np.ndarray, rates: Sequence[float]) -> list[float] | None:
        tp, fp, total = self.counts(weights)
        if total == 0:
            return None
        n = int(weights.sum())
        fppi = np.r_[0.0, fp / n]
        sens = np.r_[0.0, tp / total]
        idx = np.searchsorted(fppi, np.asarray(rates, dtype=float), side="right") - 1
        return [float(sens[k]) for k in idx]


def _image_universe(dets, gts, image_ids) -> list[str]:
    ids = set(image_ids or ())
    ids.update(d.image_id for d in dets)
    ids.update(g.image_id for g in gts)
    return sorted(ids)


def froc_curve(
    dets: Iterable[DetectionRecord],
    gts: Iterable[GroundTruthBox],
    label: str,
    image_ids: Iterable[str] | None = None,
    iou_threshold: float = DEFAULT_IOU,
) -> CurveSeries:
    """FROC polyline (FPPI, sensitivity) for one class.

    ``image_ids`` lists every evaluated image, including ones with neither
    boxes nor detections; they still count in the FPPI denominator. The
    curve starts at (0, 0) and has one point per unique detection score.
    """
    dets, gts = list(dets), list(gts)
    images = _image_universe(dets, gts, image_ids)
    if not any(g.label == label for g in gts):
        raise NoPositives(f"no positives for class {label!r}")
    sweep = _ClassSweep(
        label, _group(dets, lambda d: d.image_id), _group(gts, lambda g: g.image_id), images, iou_threshold
    )
    tp, fp, total = sweep.counts(np.ones(len(images), dtype=np.int64))
    n = len(images)
    points = [(0.0, 0.0)] + [(f / n, t / total) for t, f in zip(tp.tolist(), fp.tolist())]
    thresholds = [float("inf")] + [float(sweep.scores[k]) for k in sweep.last]
    return CurveSeries(tuple(points), "froc", label, tuple(thresholds))


def froc_points(curve: CurveSeries) -> list[FrocPoint]:
    return [FrocPoint(x, y, t) for (x, y), t in zip(curve.points, curve.thresholds)]


def sensitivity_at_fppi(
    curve: CurveSeries, rates: Sequence[float] = DEFAULT_FPPI
) -> list[tuple[float, float]]:
    """Step reading: sensitivity of the lowest-threshold point with FPPI <= rate."""
    out = []
    for rate in rates:
        best = 0.0
        for x, y in curve.points:
            if x <= rate:
                best = y
            else:
                break
        out.append((rate, best))
    return out


def froc_score(values: Sequence[float]) -> float:
    """Mean sensitivity over the five standard false-positive rates."""
    values = list(values)
    if len(values) != len(DEFAULT_FPPI):
        raise ValueError(f"froc_score needs exactly {len(DEFAULT_FPPI)} values, got {len(values)}")
    return sum(values) / len(values)


# ---------------------------------------------------------------- report


class _DetectionSample:
    """Bootstrap view: per-image multiplicities over a fixed evaluation set."""

    def __init__(self, owner: "_DetectionData", weights: np.ndarray):
        self.owner = owner
        self.weights = weights
        self._cache: dict = {}

    def __len__(self) -> int:
        return len(self.weights)

    def take(self, indices) -> "_DetectionSample":
        w = np.bincount(np.asarray(indices), minlength=len(self.weights)).astype(np.int64)
        return _DetectionSample(self.owner, w)

    def row(self, finding: str) -> list[float] | None:
        if finding not in self._cache:
            if finding == NO_FINDING:
                self._cache[finding] = self.owner.no_finding(self.weights)
            else:
                self._cache[finding] = self.owner.sweeps[finding].sensitivities(
                    self.weights, self.owner.rates
                )
        return self._cache[finding]

    def sensitivity(self, finding: str, k: int) -> float | None:
        r = self.row(finding)
        return None if r is None else r[k]

    def froc(self, finding: str) -> float | None:
        r = self.row(finding)
        return None if r is None else sum(r) / len(r)

    def mean(self, k: int | None) -> float | None:
        return mean_row(self.sensitivity(f, k) if k is not None else self.froc(f) for f in self.owner.rows)


class _DetectionData:
    def __init__(self, dets, gts, images, findings, rates, iou_threshold):
        by_img_d = _group(dets, lambda d: d.image_id)
        by_img_g = _group(gts, lambda g: g.image_id)
        self.rates = tuple(rates)
        self.rows = tuple(findings)
        self.sweeps = {
            f: _ClassSweep(f, by_img_d, by_img_g, images, iou_threshold)
            for f in findings
            if f != NO_FINDING
        }
        self.finding_free = np.array([img not in by_img_g for img in images])
        self.silent = np.array([img not in by_img_d for img in images])

    def no_finding(self, weights):
        total = int(weights @ self.finding_free)
        if total == 0:
            return None
        ok = int(weights @ (self.finding_free & self.silent))
        return [ok / total] * len(self.rates)


@dataclass
class DetectionReport:
    findings: tuple[str, ...]
    rates: tuple[float, ...]
    iou_threshold: float
    rows: dict[str, dict[float, Interval | None]]
    froc: dict[str, Interval | None]
    mean: dict[float, Interval | None]
    mean_froc: Interval | None
    curves: dict[str, CurveSeries] = field(default_factory=dict)
    n_images: int = 0


def per_finding_detection_report(
    dets: Iterable[DetectionRecord],
    gts: Iterable[GroundTruthBox],
    image_ids: Iterable[str] | None = None,
    findings: Sequence[str] = DETECTION_FINDINGS + (NO_FINDING,),
    rates: Sequence[float] = DEFAULT_FPPI,
    iou_threshold: float = DEFAULT_IOU,
    config: BootstrapConfig = BootstrapConfig(),
) -> DetectionReport:
    """Sensitivity at each FPPI rate per finding, with image-level bootstrap CIs.

    The No Finding row is the fraction of finding-free images on which no
    detection was emitted; it does not vary with the rate.
    """
    dets, gts = list(dets), list(gts)
    images = _image_universe(dets, gts, image_ids)
    if not images:
        raise ValueError("empty dataset")
    data = _DetectionData(dets, gts, images, findings, rates, iou_threshold)
    full = _DetectionSample(data, np.ones(len(images), dtype=np.int64))
    with_froc = len(rates) == len(DEFAULT_FPPI)

    metrics = {}
    for f in findings:
        if full.row(f) is None:
            continue
        for k in range(len(rates)):
            metrics[(f, k)] = lambda s, f=f, k=k: s.sensitivity(f, k)
        if with_froc:
            metrics[(f, "froc")] = lambda s, f=f: s.froc(f)
    if any(full.row(f) is not None for f in findings):
        for k in range(len(rates)):
            metrics[("Mean", k)] = lambda s, k=k: s.mean(k)
        if with_froc:
            metrics[("Mean", "froc")] = lambda s: s.mean(None)

    iv = bootstrap_many(metrics, full, config, on_unstable="skip") if metrics else {}
    curves = {}
    for f in findings:
        if f != NO_FINDING and full.row(f) is not None:
            curves[f] = froc_curve(dets, gts, f, images, iou_threshold)
    return DetectionReport(
        findings=tuple(findings),
        rates=tuple(rates),
        iou_threshold=iou_threshold,
        rows={f: {r: iv.get((f, k)) for k, r in enumerate(rates)} for f in findings},
        froc={f: iv.get((f, "froc")) for f in findings},
        mean={r: iv.get(("Mean", k)) for k, r in enumerate(rates)},
        mean_froc=iv.get(("Mean", "froc")),
        curves=curves,
        n_images=len(images),
    )


def column_mean(values: Mapping[str, float] | Sequence[float]) -> float:
    """Mean row of a results table: arithmetic mean of the per-finding values."""
    vals = list(values.values()) if isinstance(values, Mapping) else list(values)
    if not vals:
        raise ValueError("no values to average")
    return mean_row(vals)
