"""Accuracy metrics and the region / sensor fairness measures.

RSF compares regional MAPEs pairwise, SDF compares accumulated sensor states
pairwise. Both losses are the mean absolute difference over unordered pairs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, Mapping, Tuple, Union

import numpy as np

from .errors import InvalidInputError

DEFAULT_MASK_EPSILON = 1e-3

ValuesLike = Union[Mapping[int, float], np.ndarray, list, tuple]


def _as_array(values: ValuesLike) -> np.ndarray:
    if isinstance(values, Mapping):
        values = [values[k] for k in sorted(values)]
    return np.asarray(values, dtype=np.float64).ravel()


def _paired(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise InvalidInputError("empty input")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(truth))):
        raise InvalidInputError("non-finite values")
    return pred, truth


def mae(pred, truth) -> float:
    pred, truth = _paired(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def rmse(pred, truth) -> float:
    pred, truth = _paired(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def mape(pred, truth, mask_epsilon: float = DEFAULT_MASK_EPSILON) -> Tuple[float, int]:
    """Mean of ``|pred - truth| / |truth|`` over entries with ``|truth| >= mask_epsilon``.

    Returns ``(mape, masked_count)``. MAPE is a fraction, not a percentage. If
    every entry is masked the result is ``(0.0, size)``.
    """
    pred, truth = _paired(pred, truth)
    if mask_epsilon <= 0:
        raise InvalidInputError("mask_epsilon must be positive")
    keep = np.abs(truth) >= mask_epsilon
    masked = int(truth.size - np.count_nonzero(keep))
    if masked == truth.size:
        return 0.0, masked
    return float(np.mean(np.abs(pred[keep] - truth[keep]) / np.abs(truth[keep]))), masked


@dataclass(frozen=True)
class AccuracySummary:
    mae: float
    rmse: float
    mape: float
    masked_count: int = 0


def accuracy_summary(pred, truth, mask_epsilon: float = DEFAULT_MASK_EPSILON) -> AccuracySummary:
    m, masked = mape(pred, truth, mask_epsilon)
    return AccuracySummary(mae(pred, truth), rmse(pred, truth), m, masked)


def rsf_pair(mape_p: float, mape_q: float) -> float:
    return abs(float(mape_p) - float(mape_q))


def sdf_pair(d_i: float, d_j: float) -> float:
    return abs(float(d_i) - float(d_j))


def pairwise_mean_abs_diff(x) -> float:
    """O(n log n) mean of ``|x_i - x_j|`` over unordered pairs, via sorting."""
    x = np.sort(_as_array(x))
    n = x.size
    if n < 2:
        raise InvalidInputError("need at least two values")
    # the gap x_{k+1} - x_k lies between (k+1) * (n-1-k) pairs; gaps are
    # non-negative, so a constant map sums to exactly zero
    k = np.arange(n - 1)
    weight = (k + 1.0) * (n - 1.0 - k)
    return float(np.dot(weight, np.diff(x)) / (n * (n - 1) / 2.0))


def pairwise_mean_abs_diff_grad(x) -> Tuple[float, np.ndarray]:
    """Quadratic pairwise form with its subgradient, sign(0) taken as 0.

    Returns ``(value, d value / d x)``.
    """
    x = _as_array(x)
    n = x.size
    if n < 2:
        raise InvalidInputError("need at least two values")
    diff = x[:, None] - x[None, :]
    norm = 2.0 / (n * (n - 1))
    value = 0.5 * norm * float(np.abs(diff).sum())
    grad = norm * np.sign(diff).sum(axis=1)
    return value, grad


def rsf_loss(region_mapes: ValuesLike) -> float:
    """Mean absolute MAPE gap over all unordered region pairs."""
    x = _as_array(region_mapes)
    if x.size < 2:
        raise InvalidInputError(f"rsf_loss needs at least 2 regions, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("region MAPEs must be finite")
    m = x.size
    total = 0.0
    for p in range(m):
        total += float(np.abs(x[p] - x[p + 1:]).sum())
    return 2.0 * total / (m * (m - 1))


def sdf_loss(accumulated: ValuesLike) -> float:
    """Mean absolute gap in accumulated state over all unordered sensor pairs."""
    x = _as_array(accumulated)
    if x.size < 2:
        raise InvalidInputError(f"sdf_loss needs at least 2 sensors, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("accumulated states must be finite")
    return pairwise_mean_abs_diff(x)


@dataclass
class FairnessReport:
    per_region: Dict[int, AccuracySummary]
    per_sensor: Dict[int, AccuracySummary]
    rsf_loss: float
    sdf_loss: float
    loss_components: Dict[str, float] = field(default_factory=dict)
    overall: AccuracySummary = None

    def to_dict(self) -> dict:
        return {
            "overall": asdict(self.overall) if self.overall is not None else None,
            "rsf_loss": self.rsf_loss,
            "sdf_loss": self.sdf_loss,
            "loss_components": dict(self.loss_components),
            "per_region": {str(k): asdict(v) for k, v in sorted(self.per_region.items())},
            "per_sensor": {str(k): asdict(v) for k, v in sorted(self.per_sensor.items())},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FairnessReport":
        return cls(
            per_region={int(k): AccuracySummary(**v) for k, v in doc["per_region"].items()},
            per_sensor={int(k): AccuracySummary(**v) for k, v in doc["per_sensor"].items()},
            rsf_loss=doc["rsf_loss"],
            sdf_loss=doc["sdf_loss"],
            loss_components=dict(doc.get("loss_components", {})),
            overall=AccuracySummary(**doc["overall"]) if doc.get("overall") else None,
        )
