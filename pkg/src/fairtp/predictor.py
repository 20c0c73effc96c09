"""Forecasting model contract, the reference per-sensor network, and the composite loss.

Any model that implements ``PredictorContract`` can be trained by the
harness. The loss functions here only need gradients w.r.t. the model's
predictions and hidden vectors; the model backpropagates those into its own
parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, NamedTuple, Optional, Protocol, Tuple, runtime_checkable

import numpy as np

from . import metrics
from .domain import RoadNetwork
from .errors import EmptyRegionError, InvalidInputError
from .sampler import StateLedger
from .statekit import Discriminator, discriminate_clipped

CHECKPOINT_FORMAT = "fairtp-reference-predictor"
CHECKPOINT_VERSION = 1

Gradients = Dict[str, np.ndarray]


class PredictorOutput(NamedTuple):
    predictions: np.ndarray  # [T_out, S]
    hidden: np.ndarray  # [S, hidden_dim]


class BatchForward(NamedTuple):
    predictions: np.ndarray  # [B, T_out, S], data units
    hidden: np.ndarray  # [B, S, hidden_dim]
    cache: tuple


@runtime_checkable
class PredictorContract(Protocol):
    lookback: int
    horizon: int
    hidden_dim: int

    def forward(self, window: np.ndarray) -> PredictorOutput: ...

    def forward_batch(self, windows: np.ndarray) -> BatchForward: ...

    def backward_batch(self, fwd: BatchForward, d_predictions: np.ndarray,
                       d_hidden: Optional[np.ndarray] = None) -> Gradients: ...

    def apply_gradients(self, grads: Gradients, learning_rate: float) -> "PredictorContract": ...

    @property
    def parameter_count(self) -> int: ...


@dataclass(frozen=True, eq=False)
class ReferencePredictor:
    """One hidden layer applied to every sensor's lookback with shared weights.

    ``h = tanh(W_in^T z + b_in)`` and ``y = W_out^T h + b_out`` where ``z`` is
    the sensor's input window after ``(x - loc) / scale``; predictions are
    mapped back with ``y * scale + loc``. With ``loc=0, scale=1`` this is the
    plain network.
    """

    w_in: np.ndarray  # [T_in, H]
    b_in: np.ndarray  # [H]
    w_out: np.ndarray  # [H, T_out]
    b_out: np.ndarray  # [T_out]
    loc: float = 0.0
    scale: float = 1.0

    PARAMS = ("w_in", "b_in", "w_out", "b_out")

    def __post_init__(self):
        for name in self.PARAMS:
            a = np.array(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(a)):
                raise InvalidInputError(f"parameter {name} is not finite")
            object.__setattr__(self, name, a)
        t_in, h = self.w_in.shape
        if h < 1 or self.b_in.shape != (h,) or self.w_out.shape[0] != h \
                or self.b_out.shape != (self.w_out.shape[1],):
            raise InvalidInputError("inconsistent parameter shapes")
        if not self.scale > 0:
            raise InvalidInputError("scale must be positive")

    @classmethod
    def initial(cls, lookback: int, horizon: int, hidden_dim: int,
                rng: np.random.Generator, loc: float = 0.0, scale: float = 1.0):
        return cls(
            rng.normal(0.0, 1.0 / np.sqrt(lookback), (lookback, hidden_dim)),
            np.zeros(hidden_dim),
            rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), (hidden_dim, horizon)),
            np.zeros(horizon),
            loc, scale,
        )

    @classmethod
    def zeros(cls, lookback: int, horizon: int, hidden_dim: int):
        return cls(np.zeros((lookback, hidden_dim)), np.zeros(hidden_dim),
                   np.zeros((hidden_dim, horizon)), np.zeros(horizon))

    @property
    def lookback(self) -> int:
        return int(self.w_in.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.w_out.shape[1])

    @property
    def hidden_dim(self) -> int:
        return int(self.w_in.shape[1])

    @property
    def parameter_count(self) -> int:
        return sum(getattr(self, n).size for n in self.PARAMS)

    def params(self) -> Gradients:
        return {n: getattr(self, n) for n in self.PARAMS}

    def forward(self, window: np.ndarray) -> PredictorOutput:
        window = np.asarray(window, dtype=np.float64)
        if window.ndim != 2:
            raise InvalidInputError("window must be [T_in, sensors]")
        fwd = self.forward_batch(window[None])
        return PredictorOutput(fwd.predictions[0], fwd.hidden[0])

    def forward_batch(self, windows: np.ndarray) -> BatchForward:
        x = np.asarray(windows, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.lookback:
            raise InvalidInputError(
                f"expected windows shaped [B, {self.lookback}, S], got {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("input window is not finite")
        z = (x - self.loc) / self.scale
        h = np.tanh(np.einsum("bts,th->bsh", z, self.w_in) + self.b_in)
        out = np.einsum("bsh,hk->bks", h, self.w_out) + self.b_out[None, :, None]
        return BatchForward(out * self.scale + self.loc, h, (z, h))

    def backward_batch(self, fwd: BatchForward, d_predictions: np.ndarray,
                       d_hidden: Optional[np.ndarray] = None) -> Gradients:
        z, h = fwd.cache
        d_out = np.asarray(d_predictions, dtype=np.float64) * self.scale
        g_b_out = d_out.sum(axis=(0, 2))
        g_w_out = np.einsum("bsh,bks->hk", h, d_out)
        d_h = np.einsum("bks,hk->bsh", d_out, self.w_out)
        if d_hidden is not None:
            d_h = d_h + d_hidden
        d_a = d_h * (1.0 - h * h)
        g_w_in = np.einsum("bts,bsh->th", z, d_a)
        g_b_in = d_a.sum(axis=(0, 1))
        return {"w_in": g_w_in, "b_in": g_b_in, "w_out": g_w_out, "b_out": g_b_out}

    def apply_gradients(self, grads: Gradients, learning_rate: float) -> "ReferencePredictor":
        new = {n: getattr(self, n) - learning_rate * grads[n] for n in self.PARAMS}
        return ReferencePredictor(**new, loc=self.loc, scale=self.scale)

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "T_in": self.lookback,
            "T_out": self.horizon,
            "hidden_dim": self.hidden_dim,
            "loc": self.loc,
            "scale": self.scale,
            "params": {n: getattr(self, n).tolist() for n in self.PARAMS},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ReferencePredictor":
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise InvalidInputError(f"not a reference predictor checkpoint: {doc.get('format')!r}")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint version {doc.get('version')!r}")
        p = doc["params"]
        model = cls(np.asarray(p["w_in"]), np.asarray(p["b_in"]), np.asarray(p["w_out"]),
                    np.asarray(p["b_out"]), doc.get("loc", 0.0), doc.get("scale", 1.0))
        if (model.lookback, model.horizon, model.hidden_dim) != \
                (doc["T_in"], doc["T_out"], doc["hidden_dim"]):
            raise InvalidInputError("checkpoint header disagrees with parameter shapes")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ReferencePredictor":
        return cls.from_dict(json.loads(Path(path).read_text()))


def gradient_norm(grads: Gradients) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: Gradients, max_norm: float) -> Gradients:
    norm = gradient_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads
    return {k: g * (max_norm / norm) for k, g in grads.items()}


# ---------------------------------------------------------------------------
# composite loss


@dataclass(frozen=True)
class LossConfig:
    lambda_rsf: float = 0.01
    lambda_sdf: float = 0.1
    mask_epsilon: float = metrics.DEFAULT_MASK_EPSILON

    def __post_init__(self):
        if self.lambda_rsf < 0 or self.lambda_sdf < 0:
            raise InvalidInputError("loss weights must be non-negative")


class LossTerms(NamedTuple):
    total: float
    acc: float
    rsf: float
    sdf: float


def weighted_total(acc: float, rsf: float, sdf: float, lambda_rsf: float,
                   lambda_sdf: float) -> float:
    return acc + lambda_rsf * rsf + lambda_sdf * sdf


def _as_batch(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[None] if a.ndim == 2 else a


def _region_columns(network: RoadNetwork, sampled: np.ndarray):
    regions = network.region_of[sampled]
    cols = []
    for r in range(network.m):
        c = np.flatnonzero(regions == r)
        if c.size == 0:
            raise EmptyRegionError(f"region {r} has no sampled sensors")
        cols.append(c)
    return cols


def region_mapes(pred, truth, network: RoadNetwork, sampled, mask_epsilon: float,
                 with_grad: bool = False):
    """Per-region MAPE of subset region means, optionally with d mape / d pred.

    ``pred`` and ``truth`` are ``[B, T_out, S]`` with the sensor axis ordered
    like ``sampled``. The region value at each step is the mean over the
    region's sampled sensors.
    """
    pred, truth = _as_batch(pred), _as_batch(truth)
    sampled = np.asarray(sampled, dtype=np.int64)
    cols = _region_columns(network, sampled)
    values = np.empty(network.m)
    grads = np.zeros((network.m,) + pred.shape) if with_grad else None
    for r, c in enumerate(cols):
        yhat = pred[..., c].mean(axis=-1)
        y = truth[..., c].mean(axis=-1)
        keep = np.abs(y) >= mask_epsilon
        cnt = int(np.count_nonzero(keep))
        if cnt == 0:
            values[r] = 0.0
            continue
        rel = np.where(keep, np.abs(yhat - y) / np.where(keep, np.abs(y), 1.0), 0.0)
        values[r] = rel.sum() / cnt
        if with_grad:
            g = np.where(keep, np.sign(yhat - y) / np.where(keep, np.abs(y), 1.0), 0.0) / cnt
            grads[r][..., c] = (g / c.size)[..., None]
    return (values, grads) if with_grad else values


def sensor_mapes(pred, truth, mask_epsilon: float) -> np.ndarray:
    """MAPE of each sensor column over batch and horizon; masked-out columns get 0."""
    pred, truth = _as_batch(pred), _as_batch(truth)
    keep = np.abs(truth) >= mask_epsilon
    rel = np.where(keep, np.abs(pred - truth) / np.where(keep, np.abs(truth), 1.0), 0.0)
    cnt = keep.sum(axis=(0, 1))
    return np.where(cnt > 0, rel.sum(axis=(0, 1)) / np.maximum(cnt, 1), 0.0)


def _sdf_values(prior: StateLedger, sampled: np.ndarray, states: np.ndarray):
    """Accumulated states over the window's sampled union, including this batch.

    Returns ``(D, positions)`` where ``positions[k]`` is the index into ``D``
    of ``sampled[k]``.
    """
    base = prior.accumulated()
    base[sampled] += states - 0.5
    union = np.union1d(prior.sampled_union(), sampled)
    return base[union], np.searchsorted(union, sampled)


def composite_loss(O_st, truth, network: RoadNetwork, sampled, states_d,
                   ledger: StateLedger, lambda_rsf: float, lambda_sdf: float,
                   include_sdf: bool, mask_epsilon: float = metrics.DEFAULT_MASK_EPSILON):
    """Weighted sum of MAE, the region fairness loss and (when gated in) the state loss.

    ``ledger`` is the window *before* this batch; ``states_d`` are this
    batch's states for ``sampled``. Returns ``(L, (L_acc, L_RSF, L_SDF))``.
    """
    if lambda_rsf < 0 or lambda_sdf < 0:
        raise InvalidInputError("loss weights must be non-negative")
    pred, y = _as_batch(O_st), _as_batch(truth)
    sampled = np.asarray(sampled, dtype=np.int64)
    acc = metrics.mae(pred, y)
    rsf = metrics.rsf_loss(region_mapes(pred, y, network, sampled, mask_epsilon))
    sdf = 0.0
    if include_sdf:
        D, _ = _sdf_values(ledger, sampled, np.asarray(states_d, dtype=np.float64))
        sdf = metrics.sdf_loss(D)
    return weighted_total(acc, rsf, sdf, lambda_rsf, lambda_sdf), (acc, rsf, sdf)


class StepResult(NamedTuple):
    terms: LossTerms
    grads: Gradients
    forward: BatchForward
    states: np.ndarray  # clipped discriminator states for the sampled sensors
    sensor_mape: np.ndarray
    last_hidden: np.ndarray


def loss_and_gradients(model, windows, truth, network: RoadNetwork, sampled,
                       config: LossConfig, include_sdf: bool = False,
                       disc: Optional[Discriminator] = None,
                       prior: Optional[StateLedger] = None,
                       fixed_states: Optional[np.ndarray] = None,
                       fwd: Optional[BatchForward] = None) -> StepResult:
    """Composite loss of one batch and its gradient w.r.t. every model parameter.

    ``windows`` is ``[B, T_in, S]`` and ``truth`` ``[B, T_out, S]`` over the
    sampled sensors. The state loss reaches the model through the hidden
    vector of the batch's last window, the discriminator (held fixed) and this
    batch's contribution to the accumulated states; earlier batches of the
    window are constants. Passing ``fixed_states`` (e.g. binarized labels)
    replaces the discriminator states and cuts that gradient path.
    """
    sampled = np.asarray(sampled, dtype=np.int64)
    truth = _as_batch(truth)
    if fwd is None:
        fwd = model.forward_batch(windows)
    pred = fwd.predictions
    if pred.shape != truth.shape:
        raise InvalidInputError(f"prediction shape {pred.shape} vs truth {truth.shape}")

    diff = pred - truth
    acc = float(np.mean(np.abs(diff)))
    d_pred = np.sign(diff) / diff.size

    mapes, mape_grads = region_mapes(pred, truth, network, sampled, config.mask_epsilon,
                                     with_grad=True)
    rsf, g_rsf = metrics.pairwise_mean_abs_diff_grad(mapes)
    if config.lambda_rsf > 0:
        d_pred = d_pred + config.lambda_rsf * np.tensordot(g_rsf, mape_grads, axes=1)

    last_hidden = fwd.hidden[-1]
    states = np.full(sampled.size, 0.5)
    dd_dz = np.zeros(sampled.size)
    if disc is not None:
        states, dd_dz = discriminate_clipped(disc, last_hidden)
    if fixed_states is not None:
        states = np.asarray(fixed_states, dtype=np.float64)
        dd_dz = np.zeros(sampled.size)

    sdf = 0.0
    d_hidden = None
    if include_sdf:
        if prior is None:
            prior = StateLedger.empty(1, network.n_sensors)
        D, pos = _sdf_values(prior, sampled, states)
        sdf, g_D = metrics.pairwise_mean_abs_diff_grad(D)
        if config.lambda_sdf > 0 and disc is not None and np.any(dd_dz):
            d_z = config.lambda_sdf * g_D[pos] * dd_dz
            d_hidden = np.zeros_like(fwd.hidden)
            d_hidden[-1] = d_z[:, None] * disc.weights[None, :]

    total = weighted_total(acc, rsf, sdf, config.lambda_rsf, config.lambda_sdf)
    grads = model.backward_batch(fwd, d_pred, d_hidden)
    return StepResult(LossTerms(total, acc, rsf, sdf), grads, fwd, states,
                      sensor_mapes(pred, truth, config.mask_epsilon), last_hidden)


def backward(model, windows, truth, network: RoadNetwork, sampled, config: LossConfig,
             **kwargs) -> Gradients:
    """Gradient bundle of the composite loss; see ``loss_and_gradients``."""
    return loss_and_gradients(model, windows, truth, network, sampled, config, **kwargs).grads
