"""Inter-rater agreement: percent agreement, Cohen's and Fleiss' kappa.

Both kappas are evaluated as a single division of two exact integers, so a
result is the correctly rounded value of the underlying rational number.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .bootstrap import BootstrapConfig, Interval, bootstrap_many
from .errors import DataError, StructureMismatch
from .model import AI_RATER, RaterRead
from .taxonomy import AGREEMENT_LABELS


class Band(str, Enum):
    POOR = "poor"
    NONE_TO_SLIGHT = "none-to-slight"
    FAIR = "fair"
    MODERATE = "moderate"
    SUBSTANTIAL = "substantial"
    ALMOST_PERFECT = "almost-perfect"

    @property
    def rank(self) -> int:
        return list(Band).index(self)


# Lower edges; cuts sit midway between the published band edges (0.20 | 0.21 ...).
_BAND_EDGES = (
    (0.805, Band.ALMOST_PERFECT),
    (0.605, Band.SUBSTANTIAL),
    (0.405, Band.MODERATE),
    (0.205, Band.FAIR),
    (0.0, Band.NONE_TO_SLIGHT),
)


def interpret_kappa(value: float) -> Band:
    """Landis-Koch band of a kappa value in [-1, 1]."""
    if math.isnan(value) or not -1.0 <= value <= 1.0:
        raise ValueError(f"kappa must lie in [-1, 1], got {value}")
    for edge, band in _BAND_EDGES:
        if value >= edge:
            return band
    return Band.POOR


@dataclass(frozen=True)
class KappaResult:
    kappa: float
    p_o: float
    p_e: float
    degenerate: bool = False
    ci: Interval | None = None

    @property
    def band(self) -> Band:
        return interpret_kappa(self.kappa)


def _as_bool(v, name) -> np.ndarray:
    arr = np.asarray(v)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return arr.astype(bool)


def percent_agreement(a: Sequence[bool], b: Sequence[bool]) -> float:
    a, b = _as_bool(a, "a"), _as_bool(b, "b")
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("need at least one unit")
    return int(np.sum(a == b)) / len(a)


def _kappa_from_ints(num: int, den: int, agree_full: bool) -> tuple[float, bool]:
    if den == 0:
        return (1.0 if agree_full else 0.0), True
    return num / den, False


def cohen_kappa(a: Sequence[bool], b: Sequence[bool]) -> KappaResult:
    """Cohen's kappa for two raters on binary presence.

    If chance agreement is 1 (both raters constant and identical) the result
    is flagged degenerate with kappa 1 when observed agreement is 1, else 0.
    """
    a, b = _as_bool(a, "a"), _as_bool(b, "b")
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    n = len(a)
    if n == 0:
        raise ValueError("need at least one unit")
    agree = int(np.sum(a == b))
    ap, bp = int(a.sum()), int(b.sum())
    chance = ap * bp + (n - ap) * (n - bp)
    k, degenerate = _kappa_from_ints(n * agree - chance, n * n - chance, agree == n)
    return KappaResult(k, agree / n, chance / (n * n), degenerate)


def fleiss_kappa(matrix, n: int | None = None) -> KappaResult:
    """Fleiss' kappa from a units x categories count matrix.

    Every row must sum to the same number of ratings ``n`` (inferred from
    the first row when not given).
    """
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 2:
        raise ValueError("matrix must be units x categories with >= 1 unit and >= 2 categories")
    if not np.issubdtype(m.dtype, np.integer):
        if not np.all(m == np.round(m)):
            raise ValueError("counts must be integers")
        m = m.astype(np.int64)
    if np.any(m < 0):
        raise ValueError("counts must be non-negative")
    sums = m.sum(axis=1)
    n = int(sums[0]) if n is None else int(n)
    bad = np.nonzero(sums != n)[0]
    if len(bad):
        raise ValueError(f"unit {int(bad[0])} has {int(sums[bad[0]])} ratings, expected {n}")
    if n < 2:
        raise ValueError("need at least two ratings per unit")
    N = m.shape[0]
    cells = [[int(x) for x in row] for row in m]
    S = sum(x * x for row in cells for x in row) - N * n
    D = N * n * (n - 1)
    totals = [sum(col) for col in zip(*cells)]
    Q = sum(t * t for t in totals)
    M = (N * n) ** 2
    k, degenerate = _kappa_from_ints(S * M - Q * D, D * (M - Q), S == D)
    return KappaResult(k, S / D, Q / M, degenerate)


def fleiss_from_votes(votes: np.ndarray) -> KappaResult:
    """Fleiss' kappa for binary presence given a units x raters boolean array."""
    votes = np.asarray(votes, dtype=bool)
    pos = votes.sum(axis=1)
    return fleiss_kappa(np.stack([pos, votes.shape[1] - pos], axis=1), votes.shape[1])


# ---------------------------------------------------------------- tables


def pair_key(a: str, b: str) -> str:
    return f"{a} vs {b}"


@dataclass(frozen=True)
class PairCell:
    agreement: Interval
    kappa: KappaResult


@dataclass(frozen=True)
class AgreementRow:
    pairs: dict[str, PairCell]
    fleiss: KappaResult | None = None


@dataclass(frozen=True)
class MeanRow:
    agreement: dict[str, Interval]
    kappa: dict[str, Interval]
    fleiss: Interval | None = None


@dataclass
class AgreementTable:
    kind: str  # "inter_rater" or "model_vs_rater"
    labels: tuple[str, ...]
    pairs: tuple[tuple[str, str], ...]
    rows: dict[str, AgreementRow]
    mean: MeanRow
    n_images: int = 0

    @property
    def pair_keys(self) -> list[str]:
        return [pair_key(a, b) for a, b in self.pairs]


class _VoteCube:
    """images x raters x labels presence; resampled over images."""

    def __init__(self, cube: np.ndarray):
        self.cube = cube
        self._cache: dict = {}

    def __len__(self) -> int:
        return self.cube.shape[0]

    def take(self, indices) -> "_VoteCube":
        return _VoteCube(self.cube[indices])

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def agree(self, j, a, b):
        return self._memo(("agree", j, a, b), lambda: percent_agreement(self.cube[:, a, j], self.cube[:, b, j]))

    def cohen(self, j, a, b):
        return self._memo(("cohen", j, a, b), lambda: cohen_kappa(self.cube[:, a, j], self.cube[:, b, j]).kappa)

    def fleiss(self, j):
        return self._memo(("fleiss", j), lambda: fleiss_from_votes(self.cube[:, :, j]).kappa)


def _vote_cube(reads: Sequence[RaterRead], raters: Sequence[str], labels: Sequence[str]):
    by_key = {}
    for r in reads:
        key = (r.rater_id, r.image_id)
        if key in by_key:
            raise DataError(f"duplicate read for rater {r.rater_id!r}, image {r.image_id!r}")
        by_key[key] = r
    images = sorted({r.image_id for r in reads})
    missing = [(ra, im) for ra in raters for im in images if (ra, im) not in by_key]
    if missing:
        raise DataError(f"coverage mismatch, missing (rater, image) pairs: {missing}")
    cube = np.zeros((len(images), len(raters), len(labels)), dtype=bool)
    for i, im in enumerate(images):
        for k, ra in enumerate(raters):
            names = by_key[(ra, im)].label_names()
            for j, lab in enumerate(labels):
                cube[i, k, j] = lab in names
    return images, cube


def _build_table(kind, reads, raters, pairs, labels, config, with_fleiss) -> AgreementTable:
    images, cube = _vote_cube(reads, raters, labels)
    data = _VoteCube(cube)
    idx = {r: k for k, r in enumerate(raters)}
    L = len(labels)
    metrics = {}
    for j, lab in enumerate(labels):
        for a, b in pairs:
            ia, ib = idx[a], idx[b]
            metrics[("agree", lab, a, b)] = lambda d, j=j, ia=ia, ib=ib: d.agree(j, ia, ib)
            metrics[("cohen", lab, a, b)] = lambda d, j=j, ia=ia, ib=ib: d.cohen(j, ia, ib)
        if with_fleiss:
            metrics[("fleiss", lab)] = lambda d, j=j: d.fleiss(j)
    for a, b in pairs:
        ia, ib = idx[a], idx[b]
        metrics[("agree", "Mean", a, b)] = lambda d, ia=ia, ib=ib: sum(d.agree(j, ia, ib) for j in range(L)) / L
        metrics[("cohen", "Mean", a, b)] = lambda d, ia=ia, ib=ib: sum(d.cohen(j, ia, ib) for j in range(L)) / L
    if with_fleiss:
        metrics[("fleiss", "Mean")] = lambda d: sum(d.fleiss(j) for j in range(L)) / L
    iv = bootstrap_many(metrics, data, config)

    rows = {}
    for j, lab in enumerate(labels):
        cells = {}
        for a, b in pairs:
            k = cohen_kappa(cube[:, idx[a], j], cube[:, idx[b], j])
            cells[pair_key(a, b)] = PairCell(
                iv[("agree", lab, a, b)], _with_ci(k, iv[("cohen", lab, a, b)])
            )
        fl = _with_ci(fleiss_from_votes(cube[:, :, j]), iv[("fleiss", lab)]) if with_fleiss else None
        rows[lab] = AgreementRow(cells, fl)
    mean = MeanRow(
        agreement={pair_key(a, b): iv[("agree", "Mean", a, b)] for a, b in pairs},
        kappa={pair_key(a, b): iv[("cohen", "Mean", a, b)] for a, b in pairs},
        fleiss=iv[("fleiss", "Mean")] if with_fleiss else None,
    )
    return AgreementTable(kind, tuple(labels), tuple(pairs), rows, mean, len(images))


def _with_ci(k: KappaResult, ci: Interval) -> KappaResult:
    return KappaResult(k.kappa, k.p_o, k.p_e, k.degenerate, ci)


def agreement_table(
    reads: Sequence[RaterRead],
    labels: Sequence[str] = AGREEMENT_LABELS,
    config: BootstrapConfig = BootstrapConfig(),
) -> AgreementTable:
    """Pairwise agreement/Cohen's kappa and group Fleiss' kappa per label.

    ``reads`` are one site's reads from one session. All raters must have
    read every image. Intervals come from an image-level bootstrap; the Mean
    row averages the per-label values and bootstraps that average.
    """
    reads = [r for r in reads if r.rater_id != AI_RATER]
    raters = sorted({r.rater_id for r in reads})
    if len(raters) < 2:
        raise DataError(f"agreement needs at least two raters, got {raters}")
    pairs = list(itertools.combinations(raters, 2))
    return _build_table("inter_rater", reads, raters, pairs, labels, config, with_fleiss=True)


def model_vs_rater_table(
    model_reads: Sequence[RaterRead],
    rater_reads: Sequence[RaterRead],
    labels: Sequence[str] = AGREEMENT_LABELS,
    config: BootstrapConfig = BootstrapConfig(),
) -> AgreementTable:
    """Agreement of each rater with the model (pairwise only, no Fleiss)."""
    model_reads = [
        RaterRead(r.image_id, AI_RATER, r.session, r.global_labels, r.findings, r.site) for r in model_reads
    ]
    rater_reads = [r for r in rater_reads if r.rater_id != AI_RATER]
    raters = sorted({r.rater_id for r in rater_reads})
    if not raters or not model_reads:
        raise DataError("model-vs-rater agreement needs model reads and at least one rater")
    pairs = [(r, AI_RATER) for r in raters]
    return _build_table(
        "model_vs_rater", list(rater_reads) + model_reads, raters + [AI_RATER], pairs, labels, config, False
    )


# ---------------------------------------------------------------- deltas


@dataclass
class TableDelta:
    """after - before, in kappa points x 100."""

    kind: str
    rows: dict[str, dict[str, float]]
    fleiss: dict[str, float]
    mean_pairs: dict[str, float]
    mean_fleiss: float | None


def _points(x: float) -> float:
    return 100.0 * x


def reader_study_delta(before: AgreementTable, after: AgreementTable) -> TableDelta:
    if before.kind != after.kind:
        raise StructureMismatch(f"table kinds differ: {before.kind} vs {after.kind}")
    if before.labels != after.labels:
        raise StructureMismatch("label rows differ between sessions")
    if tuple(before.pairs) != tuple(after.pairs):
        raise StructureMismatch(f"rater pairs differ: {before.pair_keys} vs {after.pair_keys}")
    rows, fleiss = {}, {}
    for lab in before.labels:
        b, a = before.rows[lab], after.rows[lab]
        rows[lab] = {p: _points(a.pairs[p].kappa.kappa - b.pairs[p].kappa.kappa) for p in before.pair_keys}
        if b.fleiss is not None and a.fleiss is not None:
            fleiss[lab] = _points(a.fleiss.kappa - b.fleiss.kappa)
    mean_pairs = {p: _points(after.mean.kappa[p].point - before.mean.kappa[p].point) for p in before.pair_keys}
    mean_fleiss = None
    if before.mean.fleiss is not None and after.mean.fleiss is not None:
        mean_fleiss = _points(after.mean.fleiss.point - before.mean.fleiss.point)
    return TableDelta(before.kind, rows, fleiss, mean_pairs, mean_fleiss)


@dataclass
class DeltaSummary:
    """Site-level and overall means of mean-row kappa deltas.

    ``by_site`` averages each site's mean first; ``by_cell`` pools every
    rater-pair cell across sites. They coincide when sites have equal pair counts.
    """

    site_cohen: dict[str, float] = field(default_factory=dict)
    site_fleiss: dict[str, float] = field(default_factory=dict)
    cohen_by_site: float | None = None
    cohen_by_cell: float | None = None
    fleiss_mean: float | None = None


def _mean(xs):
    xs = list(xs)
    return sum(xs) / len(xs) if xs else None


def summarize_deltas(deltas: Mapping[str, TableDelta]) -> DeltaSummary:
    out = DeltaSummary()
    cells = []
    for site, d in sorted(deltas.items()):
        vals = list(d.mean_pairs.values())
        if vals:
            out.site_cohen[site] = _mean(vals)
            cells.extend(vals)
        if d.mean_fleiss is not None:
            out.site_fleiss[site] = d.mean_fleiss
    out.cohen_by_site = _mean(out.site_cohen.values())
    out.cohen_by_cell = _mean(cells)
    out.fleiss_mean = _mean(out.site_fleiss.values())
    return out
