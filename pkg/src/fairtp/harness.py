"""Training orchestration: reference run, fairness-aware training, evaluation, sweeps."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import metrics
from .dataio import split, split_sizes
from .domain import RoadNetwork, TrafficSeries, region_means
from .errors import ConfigError, InvalidInputError, TrainingDivergenceError
from .metrics import AccuracySummary, FairnessReport
from .predictor import (LossConfig, ReferencePredictor, clip_gradients, loss_and_gradients,
                        sensor_mapes)
from .sampler import (IN_PROGRESS, PREVIOUS_ROUND, SamplingRound, StateLedger,
                      accumulate_array, greedy_select, stratified_init)
from .statekit import (Discriminator, ThresholdSchedule, clip_prob, discriminate,
                       discriminator_loss, discriminator_step, label_array)

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    N_sam: int = 200
    T_d: int = 3
    lambda_rsf: float = 0.01
    lambda_sdf: float = 0.1
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-2
    disc_learning_rate: float = 0.1
    seed: int = 0
    mask_epsilon: float = 1e-3
    prob_epsilon: float = 1e-7
    noS: bool = False
    noD: bool = False
    noAS: bool = False
    binarize_states: bool = False
    region_counts_source: str = IN_PROGRESS
    lookback: int = 12
    horizon: int = 12
    hidden_dim: int = 16
    grad_clip: float = 5.0
    split_ratios: List[float] = field(default_factory=lambda: [0.6, 0.2, 0.2])
    eval_sensors: str = "all"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(f"{name}: {msg}")

        for name in ("N_sam", "T_d", "epochs", "batch_size", "seed", "lookback", "horizon",
                     "hidden_dim"):
            v = getattr(self, name)
            need(isinstance(v, (int, np.integer)) and not isinstance(v, bool), name,
                 "must be an integer")
        for name in ("noS", "noD", "noAS", "binarize_states"):
            need(isinstance(getattr(self, name), bool), name, "must be a boolean")
        need(self.T_d >= 1, "T_d", "must be >= 1")
        need(self.N_sam >= 1, "N_sam", "must be >= 1")
        need(self.epochs >= 1, "epochs", "must be >= 1")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.lookback >= 1 and self.horizon >= 1, "lookback", "window lengths must be >= 1")
        need(self.hidden_dim >= 1, "hidden_dim", "must be >= 1")
        for name in ("learning_rate", "disc_learning_rate", "mask_epsilon", "prob_epsilon",
                     "grad_clip"):
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0, name,
                 "must be a positive number")
        for name in ("lambda_rsf", "lambda_sdf"):
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0, name,
                 "must be a non-negative number")
        need(self.prob_epsilon < 0.5, "prob_epsilon", "must be below 0.5")
        need(self.region_counts_source in (IN_PROGRESS, PREVIOUS_ROUND), "region_counts_source",
             f"must be '{IN_PROGRESS}' or '{PREVIOUS_ROUND}'")
        need(self.eval_sensors in ("all", "sampled"), "eval_sensors",
             "must be 'all' or 'sampled'")
        need(len(self.split_ratios) == 3 and all(r > 0 for r in self.split_ratios),
             "split_ratios", "must be three positive numbers")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainingConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "TrainingConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainingConfig":
        return dataclasses.replace(self, **changes)

    def loss_config(self) -> LossConfig:
        return LossConfig(0.0 if self.noS else self.lambda_rsf,
                          0.0 if self.noD else self.lambda_sdf,
                          self.mask_epsilon)


def ablation_configs(base: TrainingConfig) -> Dict[str, TrainingConfig]:
    """The full configuration and one variant per ablation switch."""
    return {
        "full": base.replace(noS=False, noD=False, noAS=False),
        "noS": base.replace(noS=True, noD=False, noAS=False),
        "noD": base.replace(noS=False, noD=True, noAS=False),
        "noAS": base.replace(noS=False, noD=False, noAS=True),
    }


# ---------------------------------------------------------------------------
# shared plumbing


@dataclass
class _Prepared:
    train: TrafficSeries
    val: TrafficSeries
    test: TrafficSeries
    loc: float
    scale: float
    sizes: tuple


def _prepare(series: TrafficSeries, network: RoadNetwork, config: TrainingConfig) -> _Prepared:
    if series.n_sensors != network.n_sensors:
        raise InvalidInputError(
            f"series has {series.n_sensors} sensors, network has {network.n_sensors}"
        )
    series = TrafficSeries(series.values, config.lookback, config.horizon)
    train, val, test = split(series, config.split_ratios)
    loc = float(train.values.mean())
    scale = float(train.values.std()) or 1.0
    return _Prepared(train, val, test, loc, scale,
                     split_sizes(series.step_count, config.split_ratios))


def _streams(seed: int):
    """Independent generators for model init, batch order, sampling, discriminator."""
    children = np.random.SeedSequence(seed).spawn(4)
    init, order, sampling, disc = (np.random.default_rng(c) for c in children)
    return init, order, int(sampling.integers(2**31)), disc


def _epoch_batches(n_windows: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n_windows)
    return [order[i:i + batch_size] for i in range(0, n_windows, batch_size)]


def effective_n_sam(config: TrainingConfig, network: RoadNetwork) -> int:
    """``N_sam`` clamped to the number of sensors."""
    if config.N_sam < network.m:
        raise ConfigError(f"N_sam: {config.N_sam} is below the region count {network.m}")
    if config.N_sam > network.n_sensors:
        log.warning("N_sam=%d exceeds %d sensors; sampling every sensor",
                    config.N_sam, network.n_sensors)
        return network.n_sensors
    return config.N_sam


def _check_finite(value: float, epoch: int, what: str = "loss"):
    if not np.isfinite(value):
        raise TrainingDivergenceError(f"non-finite {what} in epoch {epoch}", epoch=epoch)


def _descend(model, grads, config: TrainingConfig, epoch: int):
    """One clipped gradient-descent step; overflowing parameters count as divergence."""
    with np.errstate(over="ignore", invalid="ignore"):
        step = clip_gradients(grads, config.grad_clip)
        fresh = {n: p - config.learning_rate * step[n] for n, p in model.params().items()}
    if not all(np.all(np.isfinite(p)) for p in fresh.values()):
        raise TrainingDivergenceError(f"non-finite parameters in epoch {epoch}", epoch=epoch)
    return model.apply_gradients(step, config.learning_rate)


# ---------------------------------------------------------------------------
# reference run


@dataclass
class ReferenceResult:
    schedule: ThresholdSchedule
    history: List[dict]
    model: ReferencePredictor


def fit_reference(series: TrafficSeries, network: RoadNetwork, config: TrainingConfig,
                  sensors: Optional[Sequence[int]] = None) -> ReferenceResult:
    """Train the bare predictor with MAE only and record per-epoch training MAPE.

    ``sensors`` restricts training to a fixed subset (default: every sensor).
    """
    prep = _prepare(series, network, config)
    init_rng, order_rng, _, _ = _streams(config.seed)
    model = ReferencePredictor.initial(config.lookback, config.horizon, config.hidden_dim,
                                       init_rng, prep.loc, prep.scale)
    sensors = np.arange(network.n_sensors) if sensors is None else \
        np.asarray(sorted(int(v) for v in sensors), dtype=np.int64)
    loss_cfg = LossConfig(0.0, 0.0, config.mask_epsilon)
    xw, yw = prep.train.windows()
    thresholds, history = [], []
    for epoch in range(config.epochs):
        mapes, accs = [], []
        for idx in _epoch_batches(xw.shape[0], config.batch_size, order_rng):
            x, y = xw[idx][..., sensors], yw[idx][..., sensors]
            res = loss_and_gradients(model, x, y, network, sensors, loss_cfg)
            _check_finite(res.terms.total, epoch)
            model = _descend(model, res.grads, config, epoch)
            accs.append(res.terms.acc)
            mapes.append(float(res.sensor_mape.mean()))
        thr = float(np.mean(mapes))
        _check_finite(thr, epoch, "MAPE")
        if thr <= 0.0:
            # a perfect fit; keep the schedule positive so exact fits still label as benefit
            log.warning("training MAPE is 0 in epoch %d; flooring the threshold", epoch)
            thr = float(np.finfo(np.float64).tiny)
        thresholds.append(thr)
        history.append({"epoch": epoch, "L_acc": float(np.mean(accs)), "mape": thr})
    return ReferenceResult(ThresholdSchedule(tuple(thresholds)), history, model)


def reference_run(series: TrafficSeries, network: RoadNetwork,
                  config: TrainingConfig) -> ThresholdSchedule:
    return fit_reference(series, network, config).schedule


# ---------------------------------------------------------------------------
# checkpoints and evaluation


@dataclass
class Checkpoint:
    predictor: ReferencePredictor
    discriminator: Discriminator
    sampled: tuple
    threshold: float

    def to_dict(self) -> dict:
        return {
            "predictor": self.predictor.to_dict(),
            "discriminator": self.discriminator.to_dict(),
            "sampled": [int(v) for v in self.sampled],
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Checkpoint":
        return cls(ReferencePredictor.from_dict(doc["predictor"]),
                   Discriminator.from_dict(doc["discriminator"]),
                   tuple(int(v) for v in doc["sampled"]), float(doc["threshold"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_dict(json.loads(Path(path).read_text()))


def evaluate(checkpoint: Checkpoint, data: TrafficSeries, network: RoadNetwork,
             config: TrainingConfig) -> FairnessReport:
    """Accuracy and fairness of a checkpoint on one chronological split.

    ``config.eval_sensors`` picks the forecast sensors: ``"all"`` or the
    checkpoint's ``"sampled"`` set. Predicted region values average those
    forecasts per region; true region values always average every sensor.
    SDF sums discriminator states over consecutive chunks of ``T_d``
    chronological batches and reports the mean over chunks.
    """
    if data.n_sensors != network.n_sensors:
        raise InvalidInputError("split and network disagree on sensor count")
    model, disc = checkpoint.predictor, checkpoint.discriminator
    if data.step_count < model.lookback + model.horizon:
        raise InvalidInputError("evaluation split holds no complete window")
    data = TrafficSeries(data.values, model.lookback, model.horizon)
    eps = config.mask_epsilon
    if config.eval_sensors == "all":
        sensors = np.arange(network.n_sensors)
    else:
        sensors = np.asarray(checkpoint.sampled, dtype=np.int64)
    xw, yw = data.windows()
    fwd = model.forward_batch(xw[..., sensors])
    pred = fwd.predictions
    truth = yw[..., sensors]

    per_sensor = {int(v): metrics.accuracy_summary(pred[..., k], truth[..., k], eps)
                  for k, v in enumerate(sensors)}
    full_pred = np.zeros(yw.shape)
    full_pred[..., sensors] = pred
    region_pred = region_means(full_pred, network, sensors)
    region_true = region_means(yw, network)
    per_region = {r: metrics.accuracy_summary(region_pred[..., r], region_true[..., r], eps)
                  for r in range(network.m)}
    rsf = metrics.rsf_loss([per_region[r].mape for r in range(network.m)]) \
        if network.m >= 2 else 0.0

    chunk_sdf, dis_losses, chunk = [], [], []
    for start in range(0, xw.shape[0], config.batch_size):
        stop = min(start + config.batch_size, xw.shape[0])
        d = clip_prob(np.atleast_1d(discriminate(disc, fwd.hidden[stop - 1])), disc.prob_epsilon)
        labels = label_array(sensor_mapes(pred[start:stop], truth[start:stop], eps),
                             checkpoint.threshold)
        dis_losses.append(float(np.mean(discriminator_loss(d, labels, disc.prob_epsilon))))
        chunk.append(d - 0.5)
        if len(chunk) == config.T_d:
            chunk_sdf.append(_sdf_or_zero(np.sum(chunk, axis=0)))
            chunk = []
    if not chunk_sdf:
        # stream shorter than one window: score the partial chunk
        chunk_sdf.append(_sdf_or_zero(np.sum(chunk, axis=0)))
    sdf = float(np.mean(chunk_sdf))

    overall = metrics.accuracy_summary(pred, truth, eps)
    lam_rsf = 0.0 if config.noS else config.lambda_rsf
    lam_sdf = 0.0 if config.noD else config.lambda_sdf
    components = {
        "L_acc": overall.mae,
        "L_RSF": rsf,
        "L_SDF": sdf,
        "L_dis": float(np.mean(dis_losses)),
        "L": overall.mae + lam_rsf * rsf + lam_sdf * sdf,
    }
    return FairnessReport(per_region, per_sensor, rsf, sdf, components, overall)


def _sdf_or_zero(acc: np.ndarray) -> float:
    return metrics.sdf_loss(acc) if acc.size >= 2 else 0.0


# ---------------------------------------------------------------------------
# fairness-aware training


@dataclass
class RunRecord:
    config: TrainingConfig
    effective_n_sam: int
    schedule: ThresholdSchedule
    split_sizes: tuple
    epoch_reports: List[FairnessReport]
    test_report: FairnessReport
    traces: List[dict]
    train_history: List[dict]
    checkpoint: Checkpoint
    duration_s: float = 0.0

    def to_dict(self) -> dict:
        """Deterministic JSON view; wall-clock time is deliberately left out."""
        return {
            "config": self.config.to_dict(),
            "effective_N_sam": self.effective_n_sam,
            "schedule": list(self.schedule.per_epoch),
            "split_sizes": list(self.split_sizes),
            "train_history": self.train_history,
            "epoch_reports": [r.to_dict() for r in self.epoch_reports],
            "test_report": self.test_report.to_dict(),
            "final_sampled": list(self.checkpoint.sampled),
        }


def train_fairtp(series: TrafficSeries, network: RoadNetwork, schedule: ThresholdSchedule,
                 config: TrainingConfig) -> RunRecord:
    """Co-train the predictor and the discriminator with state-guided re-sampling.

    Per batch: forward on the sampled sensors, label states against the
    epoch's threshold, one discriminator step, then one predictor step on the
    composite loss with the discriminator frozen. The state-fairness term is
    included on the last batch of every ``T_d`` window; at that boundary a new
    sampled set is drawn (unless ``noAS``) and the state window is cleared.
    """
    t0 = time.perf_counter()
    prep = _prepare(series, network, config)
    schedule = schedule.extended(config.epochs)
    n_sam = effective_n_sam(config, network)
    init_rng, order_rng, sampling_seed, disc_rng = _streams(config.seed)
    model = ReferencePredictor.initial(config.lookback, config.horizon, config.hidden_dim,
                                       init_rng, prep.loc, prep.scale)
    disc = Discriminator.initial(config.hidden_dim, disc_rng,
                                 learning_rate=config.disc_learning_rate,
                                 prob_epsilon=config.prob_epsilon)
    loss_cfg = config.loss_config()
    include_sdf_term = not config.noD

    current = stratified_init(network, n_sam, seed=sampling_seed)
    traces = [{"batch": 0, "epoch": 0, **current.to_dict()}]
    ledger = StateLedger.empty(config.T_d, network.n_sensors)
    xw, yw = prep.train.windows()
    reports, history = [], []
    global_batch = 0

    for epoch in range(config.epochs):
        threshold = schedule.threshold(epoch)
        sums = np.zeros(4)
        n_batches, n_sdf = 0, 0
        for idx in _epoch_batches(xw.shape[0], config.batch_size, order_rng):
            sampled = current.sampled_array()
            x, y = xw[idx][..., sampled], yw[idx][..., sampled]
            fwd = model.forward_batch(x)
            labels = label_array(sensor_mapes(fwd.predictions, y, config.mask_epsilon), threshold)
            disc = discriminator_step(disc, (fwd.hidden[-1], labels))

            at_boundary = (global_batch + 1) % config.T_d == 0
            res = loss_and_gradients(
                model, x, y, network, sampled, loss_cfg,
                include_sdf=include_sdf_term and at_boundary,
                disc=disc, prior=ledger,
                fixed_states=labels if config.binarize_states else None,
                fwd=fwd,
            )
            _check_finite(res.terms.total, epoch)
            ledger = accumulate_array(ledger, sampled, res.states)
            model = _descend(model, res.grads, config, epoch)
            sums += (res.terms.total, res.terms.acc, res.terms.rsf, res.terms.sdf)
            n_batches += 1
            n_sdf += int(include_sdf_term and at_boundary)
            global_batch += 1

            if at_boundary:
                if not config.noAS:
                    current = greedy_select(
                        ledger, network, n_sam, round_index=current.round_index + 1,
                        region_counts_source=config.region_counts_source,
                        previous_counts=current.region_counts,
                    )
                    traces.append({"batch": global_batch, "epoch": epoch, **current.to_dict()})
                ledger = StateLedger.empty(config.T_d, network.n_sensors)

        history.append({
            "epoch": epoch,
            "L": sums[0] / n_batches,
            "L_acc": sums[1] / n_batches,
            "L_RSF": sums[2] / n_batches,
            "L_SDF": sums[3] / n_sdf if n_sdf else 0.0,
            "threshold": threshold,
        })
        ckpt = Checkpoint(model, disc, current.sampled, threshold)
        reports.append(evaluate(ckpt, prep.val, network, config))

    ckpt = Checkpoint(model, disc, current.sampled, schedule.threshold(config.epochs - 1))
    test_report = evaluate(ckpt, prep.test, network, config)
    return RunRecord(config, n_sam, schedule, prep.sizes, reports, test_report, traces,
                     history, ckpt, time.perf_counter() - t0)


def run_pipeline(series: TrafficSeries, network: RoadNetwork, config: TrainingConfig,
                 schedule: Optional[ThresholdSchedule] = None) -> RunRecord:
    """Reference run (unless a schedule is given) followed by fairness-aware training."""
    if schedule is None:
        schedule = reference_run(series, network, config)
    return train_fairtp(series, network, schedule, config)


# ---------------------------------------------------------------------------
# sweeps

SWEEP_PARAMS = ("T_d", "N_sam")


@dataclass
class SweepRow:
    value: int
    seed: int
    report: FairnessReport

    def flat(self, param: str) -> dict:
        o = self.report.overall
        return {param: self.value, "seed": self.seed, "mae": o.mae, "rmse": o.rmse,
                "mape": o.mape, "rsf": self.report.rsf_loss, "sdf": self.report.sdf_loss}


def sweep(param: str, values: Sequence[int], base: TrainingConfig, series: TrafficSeries,
          network: RoadNetwork) -> List[SweepRow]:
    """One independent seeded pipeline per value; run ``i`` uses seed ``base.seed + i``."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"param: sweep supports {SWEEP_PARAMS}, got {param!r}")
    if not values:
        raise ConfigError("values: at least one value is required")
    rows = []
    for i, value in enumerate(values):
        cfg = base.replace(**{param: int(value), "seed": base.seed + i})
        record = run_pipeline(series, network, cfg)
        rows.append(SweepRow(int(value), cfg.seed, record.test_report))
    return rows
