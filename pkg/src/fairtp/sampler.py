"""State-guided balanced sampling.

Each round picks ``N_sam`` sensors. The first round is stratified by region
size. Later rounds favour sensors whose recent states were poor (low
accumulated state means low sampling probability, and the greedy loop takes
the lowest) while a softmax over region counts keeps regions balanced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Tuple

import numpy as np

from .domain import RoadNetwork
from .errors import CoverageError, InvalidInputError
from .statekit import logistic

IN_PROGRESS = "in_progress"
PREVIOUS_ROUND = "previous_round"


@dataclass(frozen=True, eq=False)
class StateLedger:
    """Rolling window of per-batch sensor states.

    Each entry is a length-``n_sensors`` array holding the state ``d`` of
    every sampled sensor and NaN for sensors not sampled in that batch.
    """

    T_d: int
    n_sensors: int
    entries: Tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        if self.T_d < 1:
            raise InvalidInputError("T_d must be >= 1")
        if len(self.entries) > self.T_d:
            object.__setattr__(self, "entries", tuple(self.entries[-self.T_d:]))

    @classmethod
    def empty(cls, T_d: int, n_sensors: int) -> "StateLedger":
        return cls(T_d, n_sensors, ())

    @property
    def is_full(self) -> bool:
        return len(self.entries) == self.T_d

    def accumulated(self) -> np.ndarray:
        """Sum over the window of ``d - 0.5`` for sampled batches, 0 otherwise."""
        total = np.zeros(self.n_sensors)
        for e in self.entries:
            total += np.where(np.isnan(e), 0.0, e - 0.5)
        return total

    def sampled_union(self) -> np.ndarray:
        """Sorted ids of sensors sampled in at least one batch of the window."""
        if not self.entries:
            return np.empty(0, dtype=np.int64)
        seen = np.zeros(self.n_sensors, dtype=bool)
        for e in self.entries:
            seen |= ~np.isnan(e)
        return np.flatnonzero(seen)


def accumulate(ledger: StateLedger, batch_states: Mapping[int, float], sampled) -> StateLedger:
    """Append one batch of states; evicts the oldest entry beyond ``T_d``."""
    sampled = {int(v) for v in sampled}
    extra = set(int(k) for k in batch_states) - sampled
    if extra:
        raise InvalidInputError(f"states given for unsampled sensors {sorted(extra)[:5]}")
    missing = sampled - set(int(k) for k in batch_states)
    if missing:
        raise InvalidInputError(f"no state for sampled sensors {sorted(missing)[:5]}")
    entry = np.full(ledger.n_sensors, np.nan)
    for v, d in batch_states.items():
        if not 0 <= int(v) < ledger.n_sensors:
            raise InvalidInputError(f"sensor {v} outside the network")
        entry[int(v)] = float(d)
    entry.setflags(write=False)
    return StateLedger(ledger.T_d, ledger.n_sensors, ledger.entries + (entry,))


def accumulate_array(ledger: StateLedger, sampled: np.ndarray, states: np.ndarray) -> StateLedger:
    """Array form of ``accumulate``: ``states[k]`` belongs to ``sampled[k]``."""
    return accumulate(ledger, dict(zip(np.asarray(sampled).tolist(),
                                       np.asarray(states, dtype=np.float64).tolist())), sampled)


def sensor_probs(ledger: StateLedger, all_sensors=None) -> np.ndarray:
    """Logistic of the accumulated state for every sensor in the network."""
    if not ledger.entries:
        raise InvalidInputError("ledger window is empty")
    p = logistic(ledger.accumulated())
    if all_sensors is not None:
        p = p[np.asarray(all_sensors, dtype=np.int64)]
    return p


def region_probs(region_counts, N_sam: int, m: int) -> np.ndarray:
    """Softmax over ``count - N_sam / m``, stabilised by subtracting the max."""
    counts = np.asarray(region_counts, dtype=np.float64)
    if m < 1 or counts.size != m:
        raise InvalidInputError(f"expected {m} region counts, got {counts.size}")
    if np.any(counts < 0):
        raise InvalidInputError("region counts must be non-negative")
    z = counts - N_sam / m
    e = np.exp(z - z.max())
    return e / e.sum()


def fuse_probs(region_p, sensor_p, network: RoadNetwork) -> np.ndarray:
    """Broadcast each region's probability onto its members and multiply."""
    region_p = np.asarray(region_p, dtype=np.float64)
    sensor_p = np.asarray(sensor_p, dtype=np.float64)
    if region_p.size != network.m or sensor_p.size != network.n_sensors:
        raise InvalidInputError("probability maps do not cover the network")
    return region_p[network.region_of] * sensor_p


@dataclass(frozen=True, eq=False)
class SamplingRound:
    round_index: int
    sampled: Tuple[int, ...]
    sensor_probs: np.ndarray
    region_probs: np.ndarray
    region_counts: np.ndarray
    target: float
    repaired: Tuple[Tuple[int, int], ...] = field(default=())

    @property
    def n_sampled(self) -> int:
        return len(self.sampled)

    def sampled_array(self) -> np.ndarray:
        return np.asarray(self.sampled, dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "round": int(self.round_index),
            "sampled": [int(v) for v in self.sampled],
            "region_counts": [int(c) for c in self.region_counts],
        }


def _check_budget(network: RoadNetwork, N_sam: int):
    if N_sam < network.m:
        raise InvalidInputError(
            f"N_sam={N_sam} is below the region count {network.m}; coverage impossible"
        )
    if N_sam > network.n_sensors:
        raise InvalidInputError(f"N_sam={N_sam} exceeds the {network.n_sensors} sensors")


def proportional_quotas(region_sizes, N_sam: int) -> np.ndarray:
    """Largest-remainder allocation of ``N_sam`` seats with at least one per region."""
    sizes = np.asarray(region_sizes, dtype=np.int64)
    m = sizes.size
    if N_sam < m or N_sam > sizes.sum():
        raise InvalidInputError(f"cannot allocate {N_sam} seats over sizes {sizes.tolist()}")
    raw = N_sam * sizes / sizes.sum()
    quota = np.maximum(np.floor(raw).astype(np.int64), 1)
    rem = raw - np.floor(raw)
    leftover = N_sam - int(quota.sum())
    # stable sort on -remainder: ties go to the lower region id
    for r in np.argsort(-rem, kind="stable"):
        if leftover <= 0:
            break
        if quota[r] < sizes[r] and raw[r] >= 1:
            quota[r] += 1
            leftover -= 1
    while leftover > 0:
        # every region with raw >= 1 is full; fill whatever has room
        r = int(np.flatnonzero(quota < sizes)[0])
        quota[r] += 1
        leftover -= 1
    while leftover < 0:
        # the floor of 1 overshot: take seats back where quota most exceeds raw
        excess = np.where(quota > 1, quota - raw, -np.inf)
        r = int(np.argmax(excess))
        quota[r] -= 1
        leftover += 1
    return quota


def stratified_init(network: RoadNetwork, N_sam: int, seed: int = 0) -> SamplingRound:
    """Round 0: region quotas proportional to region size, members drawn at random."""
    _check_budget(network, N_sam)
    quota = proportional_quotas(network.region_sizes(), N_sam)
    rng = np.random.default_rng(seed)
    chosen = []
    for r in range(network.m):
        chosen.extend(rng.choice(network.members(r), size=int(quota[r]), replace=False).tolist())
    return SamplingRound(
        round_index=0,
        sampled=tuple(sorted(int(v) for v in chosen)),
        sensor_probs=np.full(network.n_sensors, 0.5),
        region_probs=region_probs(quota, N_sam, network.m),
        region_counts=quota,
        target=N_sam / network.m,
    )


def greedy_select(ledger: StateLedger, network: RoadNetwork, N_sam: int,
                  round_index: int = 1,
                  region_counts_source: str = IN_PROGRESS,
                  previous_counts=None,
                  require_full_window: bool = True) -> SamplingRound:
    """Pick ``N_sam`` sensors one at a time, lowest fused probability first.

    Sensor probabilities stay fixed for the whole round. With the default
    ``in_progress`` source the region probabilities are recomputed from the
    running selection after every pick; ``previous_round`` uses the counts of
    the last round throughout. Ties go to the lowest sensor id. A region left
    empty at the end is repaired by a swap (see ``_repair_coverage``).
    """
    _check_budget(network, N_sam)
    if ledger.n_sensors != network.n_sensors:
        raise InvalidInputError("ledger and network disagree on sensor count")
    if require_full_window and not ledger.is_full:
        raise InvalidInputError(
            f"ledger holds {len(ledger.entries)} of {ledger.T_d} batches"
        )
    m = network.m
    p_sensor = sensor_probs(ledger)
    if region_counts_source == IN_PROGRESS:
        fixed_region = None
    elif region_counts_source == PREVIOUS_ROUND:
        if previous_counts is None:
            raise InvalidInputError("previous_round source needs previous_counts")
        fixed_region = region_probs(previous_counts, N_sam, m)
    else:
        raise InvalidInputError(f"unknown region_counts_source {region_counts_source!r}")

    counts = np.zeros(m, dtype=np.int64)
    taken = np.zeros(network.n_sensors, dtype=bool)
    for _ in range(N_sam):
        p_region = fixed_region if fixed_region is not None else region_probs(counts, N_sam, m)
        fused = np.where(taken, np.inf, fuse_probs(p_region, p_sensor, network))
        v = int(np.argmin(fused))
        taken[v] = True
        counts[network.region_of[v]] += 1

    final_region = fixed_region if fixed_region is not None else region_probs(counts, N_sam, m)
    taken, counts, swaps = _repair_coverage(taken, counts, fuse_probs(final_region, p_sensor, network),
                                            network)
    if swaps:
        final_region = fixed_region if fixed_region is not None else region_probs(counts, N_sam, m)
    selected = tuple(np.flatnonzero(taken).tolist())
    return SamplingRound(round_index, selected, p_sensor, final_region, counts, N_sam / m,
                         tuple(swaps))


def _repair_coverage(taken, counts, fused, network: RoadNetwork):
    """Swap a sensor into every empty region.

    The empty region's lowest-probability sensor replaces the highest
    probability selected sensor from a region holding more than one.
    """
    taken = taken.copy()
    counts = counts.copy()
    swaps = []
    for r in range(network.m):
        if counts[r] > 0:
            continue
        mem = network.members(r)
        incoming = int(mem[np.argmin(fused[mem])])
        donors = taken & (counts[network.region_of] > 1)
        if not donors.any():
            raise CoverageError(f"cannot cover region {r}: no region can spare a sensor")
        cand = np.flatnonzero(donors)
        outgoing = int(cand[np.argmax(fused[cand])])
        taken[outgoing] = False
        counts[network.region_of[outgoing]] -= 1
        taken[incoming] = True
        counts[r] += 1
        swaps.append((outgoing, incoming))
    return taken, counts, swaps
