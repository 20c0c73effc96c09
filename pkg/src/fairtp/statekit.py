"""Sensor state identification.

Sensors whose MAPE beats the epoch threshold are labelled 1 ("benefit"),
the rest 0 ("sacrifice"). A logistic discriminator learns to predict these
labels from the predictor's hidden representation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError

DEFAULT_PROB_EPSILON = 1e-7


@dataclass(frozen=True)
class ThresholdSchedule:
    """One MAPE threshold per training epoch."""

    per_epoch: Tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.per_epoch)
        if not vals:
            raise InvalidInputError("threshold schedule is empty")
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise InvalidInputError("threshold schedule entries must be finite and > 0")
        object.__setattr__(self, "per_epoch", vals)

    def __len__(self):
        return len(self.per_epoch)

    def threshold(self, epoch: int) -> float:
        """Entry for ``epoch``, clamped to the last recorded entry."""
        return self.per_epoch[min(epoch, len(self.per_epoch) - 1)]

    def extended(self, epochs: int) -> "ThresholdSchedule":
        if epochs <= len(self.per_epoch):
            return self
        pad = (self.per_epoch[-1],) * (epochs - len(self.per_epoch))
        return ThresholdSchedule(self.per_epoch + pad)

    def to_json(self) -> str:
        return json.dumps(list(self.per_epoch))

    @classmethod
    def from_json(cls, text: str) -> "ThresholdSchedule":
        doc = json.loads(text)
        if not isinstance(doc, list):
            raise InvalidInputError("threshold schedule JSON must be an array of reals")
        return cls(tuple(doc))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "ThresholdSchedule":
        return cls.from_json(Path(path).read_text())


def label_states(per_sensor_mape: Mapping[int, float], threshold: float) -> dict:
    """1 where the sensor's MAPE is strictly below ``threshold``, else 0."""
    return {int(v): int(float(m) < threshold) for v, m in per_sensor_mape.items()}


def label_array(mapes: np.ndarray, threshold: float) -> np.ndarray:
    return (np.asarray(mapes, dtype=np.float64) < threshold).astype(np.float64)


def logistic(z):
    """Numerically stable logistic function, elementwise."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class Discriminator:
    weights: np.ndarray
    bias: float = 0.0
    learning_rate: float = 0.1
    prob_epsilon: float = DEFAULT_PROB_EPSILON

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        if w.size < 1:
            raise InvalidInputError("discriminator needs at least one weight")
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def hidden_dim(self) -> int:
        return int(self.weights.size)

    @classmethod
    def initial(cls, hidden_dim: int, rng: np.random.Generator = None, scale: float = 0.1,
                learning_rate: float = 0.1, prob_epsilon: float = DEFAULT_PROB_EPSILON):
        w = np.zeros(hidden_dim) if rng is None else rng.normal(0.0, scale, hidden_dim)
        return cls(w, 0.0, learning_rate, prob_epsilon)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias,
                "learning_rate": self.learning_rate, "prob_epsilon": self.prob_epsilon}

    @classmethod
    def from_dict(cls, doc: dict) -> "Discriminator":
        return cls(np.asarray(doc["weights"]), doc["bias"], doc["learning_rate"],
                   doc.get("prob_epsilon", DEFAULT_PROB_EPSILON))


def _pre_activation(disc: Discriminator, hidden) -> np.ndarray:
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.shape[-1] != disc.hidden_dim:
        raise InvalidInputError(
            f"hidden dimension {hidden.shape[-1]} does not match discriminator {disc.hidden_dim}"
        )
    return hidden @ disc.weights + disc.bias


def discriminate(disc: Discriminator, hidden):
    """Logistic output for one hidden vector (scalar) or a stack of them.

    The raw logistic value is returned; callers clip with ``clip_prob`` where a
    bounded state is needed.
    """
    return logistic(_pre_activation(disc, hidden))


def clip_prob(d, prob_epsilon: float = DEFAULT_PROB_EPSILON):
    return np.clip(d, prob_epsilon, 1.0 - prob_epsilon)


def discriminate_clipped(disc: Discriminator, hidden):
    """Clipped states and their derivative w.r.t. the pre-activation.

    The derivative is zero wherever the clip is active.
    """
    raw = np.atleast_1d(discriminate(disc, hidden))
    d = clip_prob(raw, disc.prob_epsilon)
    dd_dz = np.where(d == raw, raw * (1.0 - raw), 0.0)
    return d, dd_dz


def discriminator_loss(d, y, prob_epsilon: float = DEFAULT_PROB_EPSILON):
    """Binary cross-entropy with label ``y`` as target and ``d`` as prediction."""
    d = clip_prob(np.asarray(d, dtype=np.float64), prob_epsilon)
    y = np.asarray(y, dtype=np.float64)
    out = -(y * np.log(d) + (1.0 - y) * np.log(1.0 - d))
    return out if out.ndim else float(out)


def batch_loss(disc: Discriminator, hidden: np.ndarray, labels: np.ndarray) -> float:
    """Mean discriminator loss over a stack of hidden vectors."""
    d = discriminate(disc, np.atleast_2d(hidden))
    return float(np.mean(discriminator_loss(d, labels, disc.prob_epsilon)))


def discriminator_gradient(disc: Discriminator, hidden: np.ndarray, labels: np.ndarray):
    """Gradient of the mean loss: ``(d - Y) * hidden`` for weights, ``d - Y`` for bias."""
    hidden = np.atleast_2d(np.asarray(hidden, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if hidden.shape[0] != labels.size:
        raise InvalidInputError("hidden and labels disagree on batch size")
    resid = np.atleast_1d(discriminate(disc, hidden)) - labels
    return hidden.T @ resid / labels.size, float(resid.mean())


def discriminator_step(disc: Discriminator, batch) -> Discriminator:
    """One gradient-descent step on the mean loss of ``batch``.

    ``batch`` is either a list of ``(hidden, label)`` pairs or a
    ``(hidden_matrix, labels)`` tuple of arrays.
    """
    hidden, labels = _unpack_batch(batch)
    if labels.size == 0:
        raise InvalidInputError("empty discriminator batch")
    gw, gb = discriminator_gradient(disc, hidden, labels)
    return replace(disc, weights=disc.weights - disc.learning_rate * gw,
                   bias=disc.bias - disc.learning_rate * gb)


def _unpack_batch(batch) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray) \
            and np.ndim(batch[0]) == 2:
        return batch[0], np.asarray(batch[1], dtype=np.float64)
    batch = list(batch)
    if not batch:
        return np.empty((0, 0)), np.empty(0)
    hidden = np.stack([np.asarray(h, dtype=np.float64) for h, _ in batch])
    labels = np.asarray([y for _, y in batch], dtype=np.float64)
    return hidden, labels


def accuracy(disc: Discriminator, hidden: np.ndarray, labels: Sequence[float]) -> float:
    pred = np.atleast_1d(discriminate(disc, np.atleast_2d(hidden))) >= 0.5
    return float(np.mean(pred == (np.asarray(labels) >= 0.5)))
