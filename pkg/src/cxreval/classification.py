"""Per-label classification metrics: ROC, AUROC, operating points, Youden."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .bootstrap import BootstrapConfig, Interval, bootstrap_many, nearest_rank, replicate_stream
from .errors import DataError, DegenerateClassBalance


class ScoredLabelSet:
    """Scores of one label against the reference standard, one row per unit."""

    def __init__(self, items: Sequence[tuple[str, float, bool]] = (), *, check: bool = True):
        ids = [str(u) for u, _, _ in items]
        self.unit_ids = np.asarray(ids, dtype=object)
        self.scores = np.asarray([float(s) for _, s, _ in items], dtype=float)
        self.truth = np.asarray([bool(t) for _, _, t in items], dtype=bool)
        if check:
            if len(set(ids)) != len(ids):
                raise ValueError("unit_ids must be unique")
            if np.any(~np.isfinite(self.scores)) or np.any((self.scores < 0) | (self.scores > 1)):
                raise ValueError("scores must lie in [0, 1]")

    @classmethod
    def from_arrays(cls, scores, truth, unit_ids=None) -> "ScoredLabelSet":
        obj = cls.__new__(cls)
        obj.scores = np.asarray(scores, dtype=float)
        obj.truth = np.asarray(truth, dtype=bool)
        if unit_ids is None:
            unit_ids = np.arange(len(obj.scores)).astype(str).astype(object)
        obj.unit_ids = np.asarray(unit_ids, dtype=object)
        return obj

    def __len__(self) -> int:
        return len(self.scores)

    def take(self, indices) -> "ScoredLabelSet":
        return ScoredLabelSet.from_arrays(
            self.scores[indices], self.truth[indices], self.unit_ids[indices]
        )

    @property
    def n_pos(self) -> int:
        return int(self.truth.sum())

    @property
    def n_neg(self) -> int:
        return int(len(self.truth) - self.truth.sum())

    def require_both_classes(self) -> None:
        if self.n_pos == 0 or self.n_neg == 0:
            raise DegenerateClassBalance(
                f"degenerate class balance: {self.n_pos} positives, {self.n_neg} negatives"
            )


@dataclass(frozen=True)
class CurveSeries:
    points: tuple[tuple[float, float], ...]
    kind: str
    label: str = ""
    thresholds: tuple[float, ...] = ()

    @property
    def xs(self):
        return [p[0] for p in self.points]

    @property
    def ys(self):
        return [p[1] for p in self.points]


@dataclass(frozen=True)
class OperatingPoint:
    """Confusion counts and rates at one threshold. ``None`` marks an undefined rate."""

    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int
    sensitivity: float | None
    specificity: float | None
    f1: float | None
    fpr: float | None
    fnr: float | None

    @property
    def youden(self) -> float | None:
        if self.sensitivity is None or self.specificity is None:
            return None
        return self.sensitivity + self.specificity - 1.0


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def _complement(v: float | None) -> float | None:
    return None if v is None else 1.0 - v


def confusion_point(tp: int, fp: int, fn: int, tn: int, threshold: float = float("nan")) -> OperatingPoint:
    sens = _ratio(tp, tp + fn)
    spec = _ratio(tn, tn + fp)
    return OperatingPoint(
        threshold=threshold,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        sensitivity=sens,
        specificity=spec,
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
        fpr=_complement(spec),
        fnr=_complement(sens),
    )


def operating_point(data: ScoredLabelSet, threshold: float) -> OperatingPoint:
    """Metrics of the rule ``score >= threshold`` means positive."""
    pred = data.scores >= threshold
    t = data.truth
    tp = int(np.sum(pred & t))
    fp = int(np.sum(pred & ~t))
    fn = int(np.sum(~pred & t))
    tn = int(np.sum(~pred & ~t))
    return confusion_point(tp, fp, fn, tn, float(threshold))


def _sweep(data: ScoredLabelSet):
    """Cumulative (threshold, tp, fp) at every unique score, descending."""
    order = np.argsort(-data.scores, kind="stable")
    s = data.scores[order]
    t = data.truth[order]
    tp = np.cumsum(t)
    fp = np.cumsum(~t)
    # last index of each run of equal scores
    last = np.r_[np.nonzero(s[1:] != s[:-1])[0], len(s) - 1]
    return s[last], tp[last], fp[last]


def roc_curve(data: ScoredLabelSet, exact: bool = False, label: str = "") -> CurveSeries:
    """ROC polyline over tie-collapsed thresholds, from (0,0) to (1,1).

    With ``exact=True`` the coordinates are :class:`fractions.Fraction`.
    """
    data.require_both_classes()
    thr, tp, fp = _sweep(data)
    P, N = data.n_pos, data.n_neg
    conv = (lambda a, b: Fraction(int(a), b)) if exact else (lambda a, b: a / b)
    zero = Fraction(0) if exact else 0.0
    one = Fraction(1) if exact else 1.0
    points = [(zero, zero)]
    thresholds = [float("inf")]
    for th, a, b in zip(thr, tp, fp):
        points.append((conv(b, N), conv(a, P)))
        thresholds.append(float(th))
    if points[-1] != (one, one):
        points.append((one, one))
        thresholds.append(float("-inf"))
    return CurveSeries(tuple(points), "roc", label, tuple(thresholds))


def trapezoid_area(curve: CurveSeries):
    pts = curve.points
    area = pts[0][0] * 0
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2
    return area


def _twice_u(data: ScoredLabelSet) -> int:
    """2 * Mann-Whitney U: pairs with pos > neg count 2, ties count 1."""
    neg = np.sort(data.scores[~data.truth])
    pos = data.scores[data.truth]
    below = np.searchsorted(neg, pos, side="left")
    not_above = np.searchsorted(neg, pos, side="right")
    return int(below.sum() + not_above.sum())


def auroc(data: ScoredLabelSet, exact: bool = False):
    """Area under the ROC curve; ties between a positive and a negative count 1/2."""
    data.require_both_classes()
    den = 2 * data.n_pos * data.n_neg
    u2 = _twice_u(data)
    return Fraction(u2, den) if exact else u2 / den


def youden_threshold(data: ScoredLabelSet) -> tuple[float, OperatingPoint]:
    """Observed score maximizing sensitivity + specificity - 1 (ties: larger threshold)."""
    data.require_both_classes()
    thr, tp, fp = _sweep(data)
    P, N = data.n_pos, data.n_neg
    # J = tp/P - fp/N; compare on the common denominator P*N to stay exact
    j_scaled = tp * N - fp * P
    best = int(np.argmax(j_scaled))  # first max = largest threshold
    t = float(thr[best])
    return t, operating_point(data, t)


def roc_band(
    data: ScoredLabelSet,
    grid: Sequence[float],
    config: BootstrapConfig = BootstrapConfig(),
) -> tuple[list[float], list[float]]:
    """Pointwise percentile band of the bootstrap ROC, read as a step function
    (best TPR with FPR <= x) at each grid FPR value."""
    data.require_both_classes()
    grid = np.asarray(grid, dtype=float)
    n = len(data)
    rows = []
    for r in range(config.replications):
        rng = replicate_stream(config.seed, r)
        for _ in range(101):
            sample = data.take(rng.integers(0, n, size=n))
            if sample.n_pos and sample.n_neg:
                break
        else:
            continue
        _, tp, fp = _sweep(sample)
        fpr = np.r_[0.0, fp / sample.n_neg]
        tpr = np.r_[0.0, tp / sample.n_pos]
        idx = np.searchsorted(fpr, grid, side="right") - 1
        rows.append(tpr[idx])
    mat = np.sort(np.asarray(rows), axis=0)
    alpha = (100.0 - config.level) / 2.0
    lo = [float(nearest_rank(mat[:, j], alpha)) for j in range(len(grid))]
    hi = [float(nearest_rank(mat[:, j], 100.0 - alpha)) for j in range(len(grid))]
    return lo, hi


# ---------------------------------------------------------------- report

METRICS = ("auroc", "sensitivity", "specificity", "f1", "fpr", "fnr")


def mean_row(values) -> float | None:
    """Mean row of a results table: arithmetic mean of the defined cells."""
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


class ImageScoreTable:
    """Images x labels score and truth matrices; the bootstrap resampling unit."""

    def __init__(self, image_ids, labels, scores, truth):
        self.image_ids = np.asarray(image_ids, dtype=object)
        self.labels = tuple(labels)
        self.scores = np.asarray(scores, dtype=float).reshape(len(self.image_ids), len(self.labels))
        self.truth = np.asarray(truth, dtype=bool).reshape(self.scores.shape)
        self._cache: dict = {}

    def __len__(self) -> int:
        return len(self.image_ids)

    def take(self, indices) -> "ImageScoreTable":
        return ImageScoreTable(
            self.image_ids[indices], self.labels, self.scores[indices], self.truth[indices]
        )

    def column(self, label: str) -> ScoredLabelSet:
        j = self.labels.index(label)
        return ScoredLabelSet.from_arrays(self.scores[:, j], self.truth[:, j], self.image_ids)

    def metric(self, label: str, name: str, threshold: float) -> float | None:
        key = (label, name, threshold)
        if key not in self._cache:
            col = self.column(label)
            if name == "auroc":
                v = auroc(col) if col.n_pos and col.n_neg else None
            else:
                v = getattr(operating_point(col, threshold), name)
            self._cache[key] = v
        return self._cache[key]

    def mean(self, name: str, thresholds: Mapping[str, float]) -> float | None:
        return mean_row(self.metric(l, name, thresholds[l]) for l in self.labels)


@dataclass
class ClassificationReport:
    labels: tuple[str, ...]
    thresholds: dict[str, float]
    rows: dict[str, dict[str, Interval | None]]
    mean: dict[str, Interval | None]
    excluded_from_mean: dict[str, int] = field(default_factory=dict)
    unstable: list[tuple[str, str]] = field(default_factory=list)
    n_images: int = 0


def build_score_table(
    predictions: Mapping[str, Mapping[str, float]],
    truth: Mapping[str, frozenset[str] | set[str]],
    labels: Sequence[str],
) -> ImageScoreTable:
    missing_truth = sorted(set(predictions) - set(truth))
    if missing_truth:
        raise DataError(f"images without reference labels: {missing_truth}")
    image_ids = sorted(truth)
    missing = sorted(
        i for i in image_ids if any(l not in predictions.get(i, {}) for l in labels)
    )
    if missing:
        raise DataError(f"missing scores for images: {missing}")
    scores = [[float(predictions[i][l]) for l in labels] for i in image_ids]
    flags = [[l in truth[i] for l in labels] for i in image_ids]
    return ImageScoreTable(image_ids, labels, scores, flags)


def per_label_classification_report(
    predictions: Mapping[str, Mapping[str, float]],
    truth: Mapping[str, frozenset[str] | set[str]],
    thresholds: Mapping[str, float] | str,
    labels: Sequence[str],
    config: BootstrapConfig = BootstrapConfig(),
) -> ClassificationReport:
    """Per-label AUROC/sensitivity/specificity/F1/FPR/FNR with bootstrap CIs.

    ``thresholds`` maps label to a decision threshold, or is ``"youden"``
    to pick each label's Youden-optimal threshold on the full data. The
    threshold is held fixed inside the bootstrap. The Mean row averages
    defined per-label point estimates; its interval bootstraps that mean.
    """
    table = build_score_table(predictions, truth, labels)
    if isinstance(thresholds, str):
        if thresholds != "youden":
            raise ValueError(f"unknown threshold policy {thresholds!r}")
        thr = {}
        for l in labels:
            col = table.column(l)
            thr[l] = youden_threshold(col)[0] if col.n_pos and col.n_neg else 0.5
    else:
        absent = [l for l in labels if l not in thresholds]
        if absent:
            raise DataError(f"no threshold for labels {absent}")
        thr = {l: float(thresholds[l]) for l in labels}

    metrics = {}
    for l in labels:
        for m in METRICS:
            if table.metric(l, m, thr[l]) is not None:
                metrics[(l, m)] = (lambda t, l=l, m=m: t.metric(l, m, thr[l]))
    excluded = {}
    for m in METRICS:
        excluded[m] = sum(table.metric(l, m, thr[l]) is None for l in labels)
        if excluded[m] < len(labels):
            metrics[("Mean", m)] = lambda t, m=m: t.mean(m, thr)

    intervals = bootstrap_many(metrics, table, config, on_unstable="skip")
    unstable = sorted(k for k, v in intervals.items() if v.lo is None)
    rows = {l: {m: intervals.get((l, m)) for m in METRICS} for l in labels}
    mean = {m: intervals.get(("Mean", m)) for m in METRICS}
    return ClassificationReport(
        labels=tuple(labels),
        thresholds=thr,
        rows=rows,
        mean=mean,
        excluded_from_mean=excluded,
        unstable=unstable,
        n_images=len(table),
    )
