"""Percentile bootstrap with counter-based, order-independent seeding.

Replicate ``r`` of a run with seed ``s`` draws its resample indices from a
Philox stream keyed by ``(s, r)``. The values of a run therefore depend only
on the seed, never on how the replicates are scheduled across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import DegenerateClassBalance, UndefinedMetric, UnstableMetric

MAX_REDRAWS = 100
MAX_FAILURE_RATE = 0.01
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class Interval:
    point: float
    lo: float | None
    hi: float | None
    level: float = 95.0
    replications: int = 0
    failures: int = 0

    def as_dict(self) -> dict:
        return {"point": self.point, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class BootstrapConfig:
    replications: int = 10_000
    seed: int = 0
    level: float = 95.0
    workers: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0 < self.level < 100:
            raise ValueError("level must be in (0, 100)")
        if not 0 <= self.seed <= _U64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def replicate_stream(seed: int, replicate: int) -> np.random.Generator:
    """Independent generator for one replicate, keyed by ``(seed, replicate)``."""
    return np.random.Generator(np.random.Philox(key=(seed & _U64) | (replicate << 64)))


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile of already sorted values."""
    m = len(sorted_values)
    k = math.ceil(pct / 100.0 * m - 1e-12)
    return sorted_values[min(max(k, 1), m) - 1]


def evaluate(metric: Callable[[Any], Any], data: Any) -> float | None:
    """Run ``metric``; ``None`` when it is undefined on ``data``."""
    try:
        value = metric(data)
    except (UndefinedMetric, DegenerateClassBalance, ZeroDivisionError):
        return None
    if value is None:
        return None
    value = float(value)
    if math.isnan(value):
        return None
    return value


def resample(data: Any, indices: np.ndarray) -> Any:
    if hasattr(data, "take"):
        return data.take(indices)
    return [data[i] for i in indices]


def _run_replicates(
    metrics: Mapping[str, Callable], data: Any, n: int, seed: int, replicates: range
) -> dict[str, list[float | None]]:
    out: dict[str, list[float | None]] = {name: [] for name in metrics}
    for r in replicates:
        rng = replicate_stream(seed, r)
        pending = dict(metrics)
        found: dict[str, float | None] = {}
        # Attempt k uses the k-th block of the replicate's stream, so a metric's
        # values do not depend on which other metrics share the run.
        for _ in range(1 + MAX_REDRAWS):
            sample = resample(data, rng.integers(0, n, size=n))
            for name, fn in list(pending.items()):
                v = evaluate(fn, sample)
                if v is not None:
                    found[name] = v
                    del pending[name]
            if not pending:
                break
        for name in metrics:
            out[name].append(found.get(name))
    return out


def bootstrap_many(
    metrics: Mapping[str, Callable[[Any], Any]],
    data: Any,
    config: BootstrapConfig = BootstrapConfig(),
    on_unstable: str = "raise",
) -> dict[Any, Interval]:
    """Percentile intervals for several metrics over shared resamples.

    Each entry equals what :func:`bootstrap_ci` returns for that metric alone.
    With ``on_unstable="skip"`` an unstable metric keeps its point estimate
    and gets ``lo = hi = None`` instead of raising.
    """
    n = len(data)
    if n == 0:
        raise UndefinedMetric("cannot bootstrap an empty dataset")
    points = {}
    for name, fn in metrics.items():
        p = evaluate(fn, data)
        if p is None:
            raise UndefinedMetric(f"metric {name!r} is undefined on the full data")
        points[name] = p

    reps = config.replications
    workers = max(1, min(config.workers, reps))
    bounds = np.linspace(0, reps, workers + 1).astype(int)
    chunks = [range(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    if workers == 1:
        parts = [_run_replicates(metrics, data, n, config.seed, chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(lambda c: _run_replicates(metrics, data, n, config.seed, c), chunks)
            )

    alpha = (100.0 - config.level) / 2.0
    result = {}
    for name in metrics:
        values = [v for part in parts for v in part[name]]
        ok = sorted(v for v in values if v is not None)
        failures = len(values) - len(ok)
        if failures / reps > MAX_FAILURE_RATE or not ok:
            if on_unstable == "raise":
                raise UnstableMetric(failures / reps)
            result[name] = Interval(points[name], None, None, config.level, reps, failures)
            continue
        result[name] = Interval(
            point=points[name],
            lo=nearest_rank(ok, alpha),
            hi=nearest_rank(ok, 100.0 - alpha),
            level=config.level,
            replications=reps,
            failures=failures,
        )
    return result


def bootstrap_ci(
    metric: Callable[[Any], Any],
    data: Any,
    replications: int = 10_000,
    seed: int = 0,
    level: float = 95.0,
    workers: int = 1,
) -> Interval:
    """Percentile bootstrap interval of ``metric`` over unit-level resamples.

    ``data`` is a sequence of units, or any object with ``__len__`` and
    ``take(indices)``. A metric signals "undefined on this resample" by
    returning ``None``/NaN or raising :class:`UndefinedMetric`; such
    resamples are redrawn up to 100 times.
    """
    cfg = BootstrapConfig(replications=replications, seed=seed, level=level, workers=workers)
    return bootstrap_many({"metric": metric}, data, cfg)["metric"]
