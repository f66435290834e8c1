"""Daily renewable maximum-output series: synthesis, CSV I/O, and windowing.

A series is a days x units matrix of megawatt values.  Windowing cuts it
into (encoder history, decoder history, forecast target) samples and splits
them chronologically so no test target overlaps any training target.
"""

from __future__ import annotations

import csv
import datetime
from dataclasses import dataclass, field

import numpy as np

# calendar epoch for the 4-dim time codes; day index 0 maps to this date
_EPOCH = datetime.date(2015, 1, 1).toordinal()


class DataError(ValueError):
    pass


@dataclass
class RenewableSeries:
    """Daily maximum active output per renewable unit, in MW."""

    values: np.ndarray  # (num_days, num_units), nonnegative

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise DataError(f"series must be days x units, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("series contains non-finite entries")
        if np.any(self.values < 0):
            raise DataError("series contains negative output values")

    @property
    def num_days(self) -> int:
        return self.values.shape[0]

    @property
    def num_units(self) -> int:
        return self.values.shape[1]


@dataclass
class WindowSample:
    """One training/evaluation sample cut from a series.

    ``decoder_known`` is always the last ``decoder_len`` rows of
    ``encoder_input``; ``target`` starts the day after the encoder input ends.
    ``time_codes`` covers the full span (input_len + horizon rows).
    """

    start: int
    encoder_input: np.ndarray   # (input_len, units)
    decoder_known: np.ndarray   # (decoder_len, units)
    target: np.ndarray          # (horizon, units)
    time_codes: np.ndarray      # (input_len + horizon, 4)


@dataclass
class WindowSplit:
    train: list[WindowSample]
    test: list[WindowSample]
    split_day: int


def time_codes(day_indices: np.ndarray) -> np.ndarray:
    """4-dim code per day: annual phase (sin, cos), day-of-month and weekday
    both scaled to [-0.5, 0.5]."""
    out = np.empty((len(day_indices), 4))
    for i, d in enumerate(np.asarray(day_indices, dtype=int)):
        date = datetime.date.fromordinal(_EPOCH + int(d))
        doy = date.timetuple().tm_yday
        phase = 2.0 * np.pi * (doy - 1) / 365.25
        out[i, 0] = np.sin(phase)
        out[i, 1] = np.cos(phase)
        out[i, 2] = (date.day - 1) / 30.0 - 0.5
        out[i, 3] = date.weekday() / 6.0 - 0.5
    return out


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def save_series(path, series: RenewableSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day"] + [f"unit_{i + 1}" for i in range(series.num_units)])
        for d in range(series.num_days):
            w.writerow([d] + [repr(float(v)) for v in series.values[d]])


def load_series(path) -> RenewableSeries:
    """Parse a ``day,unit_1,...,unit_n`` CSV; malformed rows name their row number."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2 or header[0] != "day":
            raise DataError(f"{path}: expected header 'day,unit_1,...', got {header!r}")
        n_units = len(header) - 1
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_units + 1:
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {n_units + 1}")
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError:
                raise DataError(f"{path}: row {lineno} has a non-numeric cell") from None
            bad = [v for v in vals if v < 0]
            if bad:
                raise DataError(f"{path}: row {lineno} has a negative value {bad[0]}")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return RenewableSeries(np.array(rows))


# ---------------------------------------------------------------------------
# synthetic series
# ---------------------------------------------------------------------------

@dataclass
class SynthProfile:
    """Shape of the synthetic availability signal.

    Each unit's series is
        base * (level + seasonal sinusoid + weekly ripple + AR(1) noise - lulls)
    clipped at zero.  ``noise_rho`` is the target lag-1 autocorrelation of the
    noise term; lulls are multi-day depressions occurring at ``lull_rate`` per
    day.
    """

    base_capacity: float = 90.0
    base_spread: float = 0.25       # per-unit base drawn in base*(1 +/- spread)
    level: float = 0.62
    seasonal_amp: float = 0.22
    weekly_amp: float = 0.05
    noise_amp: float = 0.12
    noise_rho: float = 0.72
    lull_rate: float = 0.012        # per-day probability a lull starts
    lull_depth: float = 0.55
    lull_days_min: int = 3
    lull_days_max: int = 7


def synth_series(seed: int, num_units: int, num_days: int, profile: SynthProfile | None = None) -> RenewableSeries:
    """Seeded synthetic daily availability series (stand-in for field data)."""
    if num_days < 200:
        raise DataError(f"need num_days >= 200, got {num_days}")
    if num_units < 1:
        raise DataError("need at least one unit")
    prof = profile or SynthProfile()
    rng = np.random.default_rng(seed)
    days = np.arange(num_days)
    values = np.empty((num_days, num_units))
    for u in range(num_units):
        base = prof.base_capacity * (1.0 + prof.base_spread * rng.uniform(-1.0, 1.0))
        phase_a = rng.uniform(0, 2 * np.pi)
        phase_w = rng.uniform(0, 2 * np.pi)
        seasonal = prof.seasonal_amp * np.sin(2 * np.pi * days / 365.25 + phase_a)
        weekly = prof.weekly_amp * np.sin(2 * np.pi * days / 7.0 + phase_w)
        noise = np.zeros(num_days)
        if prof.noise_amp > 0:
            eps = rng.standard_normal(num_days)
            noise[0] = eps[0]
            c = np.sqrt(1.0 - prof.noise_rho**2)
            for t in range(1, num_days):
                noise[t] = prof.noise_rho * noise[t - 1] + c * eps[t]
            noise *= prof.noise_amp
        else:
            rng.standard_normal(num_days)  # keep the stream position stable
        lull = np.zeros(num_days)
        if prof.lull_rate > 0:
            starts = rng.random(num_days) < prof.lull_rate
            lengths = rng.integers(prof.lull_days_min, prof.lull_days_max + 1, size=num_days)
            for t in np.nonzero(starts)[0]:
                lull[t : t + lengths[t]] = np.maximum(lull[t : t + lengths[t]], prof.lull_depth)
        else:
            rng.random(num_days)
            rng.integers(prof.lull_days_min, prof.lull_days_max + 1, size=num_days)
        sig = prof.level + seasonal + weekly + noise - lull
        values[:, u] = base * np.clip(sig, 0.0, None)
    return RenewableSeries(values)


# ---------------------------------------------------------------------------
# windowing and the chronological split
# ---------------------------------------------------------------------------

def window_count(num_days: int, input_len: int, horizon: int) -> int:
    return max(0, num_days - input_len - horizon + 1)


def make_windows(
    series: RenewableSeries,
    input_len: int = 56,
    decoder_len: int = 28,
    horizon: int = 15,
    train_fraction: float = 0.9,
) -> WindowSplit:
    """Cut all windows and split them chronologically.

    Train windows must end (target included) before the split day; test
    windows must have their whole target at or after it.  Windows straddling
    the boundary are dropped, so every test window is strictly later than
    every train window.
    """
    if decoder_len > input_len:
        raise DataError(f"decoder_len {decoder_len} exceeds input_len {input_len}")
    n = series.num_days
    total = window_count(n, input_len, horizon)
    if total < 1:
        raise DataError(
            f"series of {n} days too short for input_len={input_len}, horizon={horizon}"
        )
    split_day = int(np.floor(train_fraction * n))
    train, test = [], []
    vals = series.values
    for s in range(total):
        sample = WindowSample(
            start=s,
            encoder_input=vals[s : s + input_len],
            decoder_known=vals[s + input_len - decoder_len : s + input_len],
            target=vals[s + input_len : s + input_len + horizon],
            time_codes=time_codes(np.arange(s, s + input_len + horizon)),
        )
        if s + input_len + horizon <= split_day:
            train.append(sample)
        elif s + input_len >= split_day:
            test.append(sample)
    return WindowSplit(train=train, test=test, split_day=split_day)


def all_windows(series: RenewableSeries, input_len: int = 56, decoder_len: int = 28, horizon: int = 15) -> list[WindowSample]:
    """Every window regardless of split (helper for enumeration checks)."""
    split = make_windows(series, input_len, decoder_len, horizon, train_fraction=2.0)
    return split.train
