"""Core data model: the sensor graph, its region partition and time series."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import EmptyRegionError, InvalidInputError


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RoadNetwork:
    """Sensors ``0..n-1``, undirected edges and a total sensor -> region map.

    ``region_of[v]`` is the region id of sensor ``v``. Region ids are dense,
    ``0..m-1``, and every region owns at least one sensor.
    """

    region_of: np.ndarray
    edges: frozenset = frozenset()
    region_count: Optional[int] = None
    _members: tuple = field(init=False, repr=False)

    def __post_init__(self):
        region_of = np.asarray(self.region_of)
        if region_of.ndim != 1 or region_of.size == 0:
            raise InvalidInputError("region_of must be a non-empty 1-D sequence")
        if not np.issubdtype(region_of.dtype, np.integer):
            if not np.all(np.equal(np.mod(region_of, 1), 0)):
                raise InvalidInputError("region ids must be integers")
        region_of = region_of.astype(np.int64)
        if region_of.min() < 0:
            raise InvalidInputError("region ids must be non-negative")
        m = int(region_of.max()) + 1 if self.region_count is None else int(self.region_count)
        if m < 1:
            raise InvalidInputError("region_count must be positive")
        if region_of.max() >= m:
            raise InvalidInputError(f"region id {int(region_of.max())} outside [0, {m})")
        counts = np.bincount(region_of, minlength=m)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            raise InvalidInputError(f"regions without sensors: {empty.tolist()}")

        n = region_of.size
        edges = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise InvalidInputError(f"self-loop on sensor {a}")
            if not (0 <= a < n and 0 <= b < n):
                raise InvalidInputError(f"edge ({a}, {b}) references a missing sensor")
            edges.add((min(a, b), max(a, b)))

        object.__setattr__(self, "region_of", _readonly(region_of))
        object.__setattr__(self, "edges", frozenset(edges))
        object.__setattr__(self, "region_count", m)
        members = tuple(_readonly(np.flatnonzero(region_of == r)) for r in range(m))
        object.__setattr__(self, "_members", members)

    @property
    def n_sensors(self) -> int:
        return int(self.region_of.size)

    @property
    def sensors(self) -> np.ndarray:
        return np.arange(self.n_sensors)

    @property
    def m(self) -> int:
        return int(self.region_count)

    def members(self, region: int) -> np.ndarray:
        """Sorted sensor ids belonging to ``region``."""
        return self._members[region]

    def region_sizes(self) -> np.ndarray:
        return np.array([len(mm) for mm in self._members], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class TrafficSeries:
    """Observations indexed ``values[t, sensor]`` plus the forecasting window shape."""

    values: np.ndarray
    lookback: int = 12
    horizon: int = 12

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise InvalidInputError("values must be a non-empty [time, sensor] array")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("values must be finite")
        if self.lookback < 1 or self.horizon < 1:
            raise InvalidInputError("lookback and horizon must be positive")
        if self.lookback + self.horizon > values.shape[0]:
            raise InvalidInputError(
                f"lookback + horizon = {self.lookback + self.horizon} exceeds "
                f"{values.shape[0]} steps"
            )
        object.__setattr__(self, "values", _readonly(values))

    @property
    def step_count(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_sensors(self) -> int:
        return int(self.values.shape[1])

    def with_values(self, values: np.ndarray) -> "TrafficSeries":
        return TrafficSeries(values, lookback=self.lookback, horizon=self.horizon)

    def window_count(self) -> int:
        return self.step_count - self.lookback - self.horizon + 1

    def windows(self, starts: Optional[Iterable[int]] = None):
        """Stack input/target windows: ``x[b, T_in, n]`` and ``y[b, T_out, n]``."""
        if starts is None:
            starts = range(self.window_count())
        starts = np.asarray(list(starts), dtype=np.int64)
        lb, hz = self.lookback, self.horizon
        x = np.stack([self.values[s:s + lb] for s in starts]) if starts.size else \
            np.empty((0, lb, self.n_sensors))
        y = np.stack([self.values[s + lb:s + lb + hz] for s in starts]) if starts.size else \
            np.empty((0, hz, self.n_sensors))
        return x, y


@dataclass(frozen=True, eq=False)
class RegionSeries:
    """Region means indexed ``values[t, region]``."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(np.asarray(self.values, dtype=np.float64)))


def region_means(values: np.ndarray, network: RoadNetwork, sampled=None) -> np.ndarray:
    """Mean over the last axis within each region, optionally over ``sampled`` only.

    Works on any leading shape, e.g. ``[t, sensor]`` or ``[batch, t, sensor]``.
    The last axis must be indexed by sensor id over the full network.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != network.n_sensors:
        raise InvalidInputError(
            f"sensor axis has {values.shape[-1]} entries, network has {network.n_sensors}"
        )
    keep = None
    if sampled is not None:
        keep = np.zeros(network.n_sensors, dtype=bool)
        idx = np.asarray(sorted(int(v) for v in sampled), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= network.n_sensors):
            raise InvalidInputError("sampled set references a missing sensor")
        keep[idx] = True
    out = np.empty(values.shape[:-1] + (network.m,))
    for r in range(network.m):
        mem = network.members(r)
        if keep is not None:
            mem = mem[keep[mem]]
            if mem.size == 0:
                raise EmptyRegionError(f"region {r} has no sampled sensors")
        # np.sum on a contiguous copy uses pairwise summation
        block = np.ascontiguousarray(values[..., mem])
        out[..., r] = block.sum(axis=-1) / mem.size
    return out


def regionalize(series: TrafficSeries, network: RoadNetwork) -> RegionSeries:
    if series.n_sensors != network.n_sensors:
        raise InvalidInputError(
            f"series has {series.n_sensors} sensors, network has {network.n_sensors}"
        )
    return RegionSeries(region_means(series.values, network))


def regionalize_subset(series: TrafficSeries, network: RoadNetwork, sampled) -> RegionSeries:
    """Region means over sampled member sensors only.

    Raises EmptyRegionError if some region has no sampled member.
    """
    if series.n_sensors != network.n_sensors:
        raise InvalidInputError(
            f"series has {series.n_sensors} sensors, network has {network.n_sensors}"
        )
    return RegionSeries(region_means(series.values, network, sampled))
