"""Synthetic cities, CSV ingestion and chronological splitting."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .domain import RoadNetwork, TrafficSeries
from .errors import ConfigError, DataError, InvalidInputError

STEPS_PER_DAY = 288  # 5-minute cadence


@dataclass
class SyntheticSpec:
    """A city whose regions differ in sensor count and signal difficulty.

    Each region has a daily sinusoid ``level + amplitude * sin(2 pi t / period + phase)``.
    A sensor's series is that sinusoid times a per-sensor gain drawn from
    ``[gain_low, gain_high]`` plus Gaussian noise with standard deviation
    ``noise_sigma * tier``.
    """

    region_sizes: List[int] = field(default_factory=lambda: [40, 30, 8, 6])
    steps: int = 2016
    # sparse-tier regions cycle faster and harder than the dense ones
    amplitudes: List[float] = field(default_factory=lambda: [25.0, 25.0, 35.0, 35.0])
    periods: List[float] = field(
        default_factory=lambda: [float(STEPS_PER_DAY)] * 2 + [STEPS_PER_DAY / 6.0] * 2)
    phases: List[float] = field(default_factory=lambda: [0.0, 0.8, 1.6, 2.4])
    levels: List[float] = field(default_factory=lambda: [60.0, 60.0, 60.0, 60.0])
    noise_sigma: float = 2.0
    tiers: List[float] = field(default_factory=lambda: [1.0, 1.0, 2.0, 2.0])
    gain_low: float = 0.8
    gain_high: float = 1.2
    seed: int = 0

    def __post_init__(self):
        m = len(self.region_sizes)
        if m < 1:
            raise InvalidInputError("at least one region is required")
        if any(int(s) < 1 for s in self.region_sizes):
            raise InvalidInputError("every region needs at least one sensor")
        for name in ("amplitudes", "periods", "phases", "levels", "tiers"):
            if len(getattr(self, name)) != m:
                raise InvalidInputError(f"{name} must have one entry per region ({m})")
        if any(p <= 0 for p in self.periods):
            raise InvalidInputError("periods must be positive")
        if self.noise_sigma < 0:
            raise InvalidInputError("noise_sigma must be non-negative")
        if any(t < 0 for t in self.tiers):
            raise InvalidInputError("tier multipliers must be non-negative")
        if self.steps < 2:
            raise InvalidInputError("steps must be at least 2")
        if self.gain_low > self.gain_high:
            raise InvalidInputError("gain_low exceeds gain_high")

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown synthetic spec field(s): {', '.join(unknown)}")
        try:
            return cls(**doc)
        except (TypeError, InvalidInputError) as exc:
            raise ConfigError(f"invalid synthetic spec: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


def region_patterns(spec: SyntheticSpec) -> np.ndarray:
    """Noise-free base signal of each region, ``[steps, m]``."""
    t = np.arange(spec.steps, dtype=np.float64)[:, None]
    amp = np.asarray(spec.amplitudes, dtype=np.float64)
    per = np.asarray(spec.periods, dtype=np.float64)
    ph = np.asarray(spec.phases, dtype=np.float64)
    lvl = np.asarray(spec.levels, dtype=np.float64)
    return lvl + amp * np.sin(2.0 * np.pi * t / per + ph)


def generate(spec: SyntheticSpec, lookback: int = 12, horizon: int = 12):
    """Build ``(RoadNetwork, TrafficSeries)``; deterministic per ``spec.seed``.

    Edges chain consecutive sensor ids inside each region.
    """
    rng = np.random.default_rng(spec.seed)
    sizes = [int(s) for s in spec.region_sizes]
    region_of = np.repeat(np.arange(len(sizes)), sizes)
    edges = set()
    start = 0
    for s in sizes:
        edges.update((v, v + 1) for v in range(start, start + s - 1))
        start += s
    network = RoadNetwork(region_of, frozenset(edges), len(sizes))

    base = region_patterns(spec)[:, region_of]
    gains = rng.uniform(spec.gain_low, spec.gain_high, region_of.size)
    sigma = spec.noise_sigma * np.asarray(spec.tiers, dtype=np.float64)[region_of]
    noise = rng.standard_normal(base.shape) * sigma
    return network, TrafficSeries(base * gains + noise, lookback, horizon)


def default_city(seed: int = 0, lookback: int = 12, horizon: int = 12, **overrides):
    return generate(SyntheticSpec(seed=seed, **overrides), lookback, horizon)


def scaled_city_spec(factor: int, seed: int = 0, steps: int = 2016) -> SyntheticSpec:
    """The default city with every region ``factor`` times larger."""
    base = SyntheticSpec()
    return SyntheticSpec(region_sizes=[s * factor for s in base.region_sizes],
                         steps=steps, seed=seed)


# ---------------------------------------------------------------------------
# CSV files


def write_series_csv(series: TrafficSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in series.values:
            w.writerow([repr(float(x)) for x in row])


def write_partition_csv(network: RoadNetwork, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sensor_id", "region_id"])
        for v in range(network.n_sensors):
            w.writerow([v, int(network.region_of[v])])


def _read_series(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}:{lineno}: ragged row with {len(row)} cells, expected {width}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise DataError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
            if not all(np.isfinite(vals)):
                raise DataError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def _read_partition(path, n_sensors: int) -> np.ndarray:
    region_of = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["sensor_id", "region_id"]:
            raise DataError(f"{path}:1: header must be 'sensor_id,region_id'")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 cells, got {len(row)}")
            try:
                v, r = int(row[0]), int(row[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer cell in {row!r}") from None
            if v in region_of:
                raise DataError(f"{path}:{lineno}: sensor {v} assigned twice")
            if not 0 <= v < n_sensors:
                raise DataError(f"{path}:{lineno}: sensor {v} has no column in the series file")
            if r < 0:
                raise DataError(f"{path}:{lineno}: negative region id {r}")
            region_of[v] = r
    missing = [v for v in range(n_sensors) if v not in region_of]
    if missing:
        raise DataError(f"{path}: sensor {missing[0]} missing from partition"
                        + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
    regions = np.array([region_of[v] for v in range(n_sensors)])
    present = set(regions.tolist())
    gap = [r for r in range(max(present) + 1) if r not in present]
    if gap:
        raise DataError(f"{path}: region ids not contiguous from 0, missing {gap}")
    return regions


def ingest_csv(series_path, partition_path, lookback: int = 12, horizon: int = 12):
    """Read a wide series CSV and a partition CSV into validated domain objects."""
    values = _read_series(series_path)
    regions = _read_partition(partition_path, values.shape[1])
    try:
        return RoadNetwork(regions), TrafficSeries(values, lookback, horizon)
    except InvalidInputError as exc:
        raise DataError(str(exc)) from exc


# ---------------------------------------------------------------------------
# splitting


def split_sizes(steps: int, ratios: Sequence[float] = (0.6, 0.2, 0.2)) -> Tuple[int, int, int]:
    """Floor the train and validation lengths; the remainder goes to test."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise InvalidInputError("ratios must be three positive numbers")
    fr = [Fraction(str(r)) for r in ratios]
    total = sum(fr)
    n_train = int(steps * fr[0] / total)
    n_val = int(steps * fr[1] / total)
    return n_train, n_val, steps - n_train - n_val


def split(series: TrafficSeries, ratios: Sequence[float] = (0.6, 0.2, 0.2)):
    """Chronological, contiguous, non-overlapping train / validation / test."""
    sizes = split_sizes(series.step_count, ratios)
    need = series.lookback + series.horizon
    if min(sizes) < need:
        raise InvalidInputError(
            f"{series.step_count} steps split into {sizes}; each split needs >= {need}"
        )
    a, b = sizes[0], sizes[0] + sizes[1]
    v = series.values
    return (series.with_values(v[:a]), series.with_values(v[a:b]), series.with_values(v[b:]))


def save_spec(spec: SyntheticSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
