"""Confidence-weighted blending of staggered forecast snapshots.

Each day a fresh snapshot enters the pool.  Once five past snapshots exist,
every one of them is judged day by day against realized data (a day counts
as correct when its cross-unit RMSE is below the threshold mu), scored

    con = m * log10(d + 1) / (m + n)

with m hits out of d = m + n judged days, and the scores are normalized
into blending weights.  The blended output covers the 10 days all five
snapshots share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .forecast import ForecastModel, PredictionSnapshot, rmse

DEFAULT_MU = 5.0
POOL_WINDOW = 5
BLEND_DAYS = 10


class ConfidenceError(ValueError):
    pass


@dataclass
class ConfidenceRecord:
    issue_time: int
    age: int        # d, days since issue (1..5)
    correct: int    # m
    incorrect: int  # n
    con: float
    weight: float = 0.0


class SnapshotPool:
    """Ring of recent snapshots keyed by issue time (one per day)."""

    def __init__(self, capacity: int = 16):
        if capacity < POOL_WINDOW:
            raise ConfidenceError(f"capacity must be >= {POOL_WINDOW}")
        self.capacity = capacity
        self._by_time: dict[int, PredictionSnapshot] = {}

    def add(self, snap: PredictionSnapshot) -> None:
        self._by_time[snap.issue_time] = snap
        while len(self._by_time) > self.capacity:
            del self._by_time[min(self._by_time)]

    def get(self, issue_time: int) -> PredictionSnapshot:
        try:
            return self._by_time[issue_time]
        except KeyError:
            raise ConfidenceError(f"no snapshot issued at t={issue_time} in the pool") from None

    def has(self, issue_time: int) -> bool:
        return issue_time in self._by_time

    def __len__(self):
        return len(self._by_time)


def judge_day(pred_row: np.ndarray, real_row: np.ndarray, mu: float = DEFAULT_MU) -> bool:
    """A day's forecast is correct when its RMSE across units is < mu."""
    pred_row = np.asarray(pred_row, dtype=np.float64)
    real_row = np.asarray(real_row, dtype=np.float64)
    if pred_row.shape != real_row.shape:
        raise ConfidenceError(f"row shapes differ: {pred_row.shape} vs {real_row.shape}")
    if mu <= 0:
        raise ConfidenceError(f"mu must be positive, got {mu}")
    return float(np.sqrt(np.mean((pred_row - real_row) ** 2))) < mu


def score_snapshot(snap: PredictionSnapshot, realized: np.ndarray, t0: int,
                   mu: float = DEFAULT_MU) -> ConfidenceRecord:
    """Judge the elapsed days of a snapshot against realized data.

    ``realized`` is the full series matrix; days issue_time+1 .. t0 are
    compared row by row, so age d = t0 - issue_time must be in 1..5.
    """
    d = t0 - snap.issue_time
    if not 1 <= d <= POOL_WINDOW:
        raise ConfidenceError(f"snapshot age must be in 1..{POOL_WINDOW}, got {d}")
    realized = np.asarray(realized, dtype=np.float64)
    m = 0
    for i in range(d):
        day = snap.issue_time + 1 + i
        if judge_day(snap.values[i], realized[day], mu):
            m += 1
    n = d - m
    con = m * math.log10(d + 1) / (m + n)
    return ConfidenceRecord(issue_time=snap.issue_time, age=d, correct=m, incorrect=n, con=con)


def normalize(records: list[ConfidenceRecord]) -> np.ndarray:
    """Blend weights from confidences; all-zero confidence puts all weight
    on the newest snapshot."""
    if len(records) != POOL_WINDOW:
        raise ConfidenceError(f"need exactly {POOL_WINDOW} records, got {len(records)}")
    con = np.array([r.con for r in records], dtype=np.float64)
    total = con.sum()
    if total > 0:
        w = con / total
    else:
        w = np.zeros(POOL_WINDOW)
        newest = int(np.argmax([r.issue_time for r in records]))
        w[newest] = 1.0
    for r, wi in zip(records, w):
        r.weight = float(wi)
    return w


def ensemble_forecast(t0: int, pool: SnapshotPool, model: ForecastModel,
                      realized: np.ndarray, mu: float = DEFAULT_MU,
                      rel_t0: int | None = None, blend_days: int = BLEND_DAYS):
    """Issue today's snapshot, then blend the last five into a 10-day forecast.

    ``realized`` holds the series through day ``t0`` (later rows, if present,
    are never read).  ``rel_t0`` is the step counter controlling the cold
    start; it defaults to ``t0`` and, while < 5, the fresh snapshot's first
    ``blend_days`` rows are returned directly.  ``blend_days`` may not exceed
    the model horizon minus the pool window (10 for a 15-day horizon).

    Returns ``(forecast blend_days x units, records)`` where records is None
    during the cold start.
    """
    if blend_days > model.cfg.horizon - POOL_WINDOW:
        raise ConfidenceError(
            f"blend_days {blend_days} too long for a {model.cfg.horizon}-day horizon")
    snap = model.predict(realized, t0)
    pool.add(snap)
    counter = t0 if rel_t0 is None else rel_t0
    if counter < POOL_WINDOW:
        return snap.values[:blend_days].copy(), None
    records = []
    for i in range(t0 - POOL_WINDOW, t0):
        if not pool.has(i):
            raise ConfidenceError(f"pool is missing the snapshot issued at t={i}")
        records.append(score_snapshot(pool.get(i), realized, t0, mu))
    weights = normalize(records)
    out = np.zeros((blend_days, model.num_units))
    for rec, w in zip(records, weights):
        s = pool.get(rec.issue_time)
        offset = t0 - rec.issue_time  # rows covering days t0+1 .. t0+blend_days
        out += w * s.values[offset : offset + blend_days]
    return out, records


def blend_rows(pool: SnapshotPool, records: list[ConfidenceRecord], t0: int,
               blend_days: int = BLEND_DAYS) -> dict[int, np.ndarray]:
    """The shared forecast block of each pooled snapshot (issue_time -> rows)."""
    return {
        r.issue_time: pool.get(r.issue_time).values[t0 - r.issue_time : t0 - r.issue_time + blend_days]
        for r in records
    }
