"""Mini-batch training, accuracy metric, recursive multi-step forecasting,
and hyperparameter sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError, MetricError, NumericError, ShapeError
from .losses import composite_loss, speed_loss
from .model import PredictionPair
from .optim import RmsProp
from .pipeline import CorridorShape, NormalizationParams, denormalize

DEFAULT_MIN_TARGET = 1.0  # mph; slower targets are excluded from percentage errors


@dataclass(frozen=True)
class TrainConfig:
    """Loss weighting, optimizer constants and loop bookkeeping for one run."""

    volume_weight: float = 0.1
    learning_rate: float = 1e-4
    rho: float = 0.9
    epsilon: float = 1e-8
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must be in [0, 1), got {self.rho}")
        if self.epsilon <= 0.0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    test_loss: float | None = None


@dataclass
class EvalReport:
    """Accuracy per horizon plus per-lane / per-detector breakdowns.

    Breakdown entries are NaN where every value of that slice was excluded.
    evaluated + skipped equals the test sample count at each horizon.
    loss_curve carries the per-epoch training history when the caller has
    one (evaluation alone cannot produce it).
    """

    horizons: list[int]
    accuracy: dict[int, float]
    per_lane: dict[int, list[float]]
    per_detector: dict[int, list[float]]
    evaluated: dict[int, int]
    skipped: dict[int, int]
    excluded: dict[int, int]
    loss_curve: list[EpochStats] | None = None


def _stack(samples):
    return (
        np.stack([s.speed_history for s in samples]),
        np.stack([s.volume_history for s in samples]),
        np.stack([s.speed_target for s in samples]),
        np.stack([s.volume_target for s in samples]),
    )


def _loss_and_grads(model, xu, xq, yu, yq, volume_weight, rng):
    if model.uses_volume:
        pred_u, pred_q, cache = model.forward_batch(xu, xq, mode="train", rng=rng)
        loss, grad_u, grad_q = composite_loss(pred_u, pred_q, yu, yq, volume_weight)
        return loss, model.backward_batch(cache, grad_u, grad_q)
    pred_u, _, cache = model.forward_batch(xu, None, mode="train", rng=rng)
    loss, grad_u = speed_loss(pred_u, yu)
    return loss, model.backward_batch(cache, grad_u, None)


def dataset_loss(model, samples, volume_weight, chunk: int = 1024) -> float:
    """Deterministic (infer-mode) loss over a sample collection."""
    if not samples:
        raise DataError("cannot compute the loss of an empty sample set")
    xu, xq, yu, yq = _stack(samples)
    sum_u = sum_q = 0.0
    count_u = count_q = 0
    for start in range(0, len(samples), chunk):
        stop = start + chunk
        pred_u, pred_q = model.predict_batch(xu[start:stop], xq[start:stop])
        du = pred_u - yu[start:stop]
        sum_u += float(np.sum(du * du))
        count_u += du.size
        if model.uses_volume and pred_q is not None:
            dq = pred_q - yq[start:stop]
            sum_q += float(np.sum(dq * dq))
            count_q += dq.size
    loss = sum_u / count_u
    if count_q:
        loss += volume_weight * (sum_q / count_q)
    return loss


def train(model, samples, config: TrainConfig, eval_samples=None) -> list[EpochStats]:
    """Epochs of shuffled mini-batches: forward, composite loss, backward,
    optimizer step. Deterministic under config.seed. Aborts with a
    diagnostic if the loss stops being finite."""
    if not samples:
        raise DataError("no training samples")
    if not hasattr(model, "forward_batch"):
        raise ConfigError(f"model kind {getattr(model, 'kind', '?')!r} is not trainable")
    rng = np.random.default_rng(config.seed)
    optimizer = RmsProp(config.learning_rate, config.rho, config.epsilon)
    params = model.param_arrays()
    xu, xq, yu, yq = _stack(samples)
    total = len(samples)
    curve: list[EpochStats] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(total) if config.shuffle else np.arange(total)
        weighted = 0.0
        for batch_num, start in enumerate(range(0, total, config.batch_size), start=1):
            idx = order[start:start + config.batch_size]
            loss, grads = _loss_and_grads(
                model, xu[idx], xq[idx], yu[idx], yq[idx], config.volume_weight, rng
            )
            if not math.isfinite(loss):
                raise NumericError(
                    f"training diverged: non-finite loss at epoch {epoch}, batch {batch_num}"
                )
            optimizer.step(params, grads)
            weighted += loss * len(idx)
        stats = EpochStats(epoch=epoch, train_loss=weighted / total)
        if eval_samples:
            stats.test_loss = dataset_loss(model, eval_samples, config.volume_weight)
        curve.append(stats)
    return curve


# -- accuracy ---------------------------------------------------------------------


def _ape_stats(predicted, actual, min_target):
    """(accuracy-or-NaN, values used, values excluded)."""
    mask = actual >= min_target
    used = int(mask.sum())
    excluded = actual.size - used
    if used == 0:
        return float("nan"), 0, excluded
    ape = np.abs(predicted[mask] - actual[mask]) / actual[mask]
    return 100.0 * (1.0 - float(np.mean(ape))), used, excluded


def accuracy(predicted, actual, *, min_target: float = DEFAULT_MIN_TARGET,
             metric: str = "mape_complement") -> float:
    """Percent accuracy of denormalized speed predictions.

    mape_complement (default): 100 * (1 - mean(|p - a| / a)), the complement
    of the mean absolute percentage error. rmse_complement:
    100 * (1 - rmse / mean(a)). Targets below min_target (mph) are excluded
    from either mean; if that excludes everything, the metric is undefined.
    """
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1)
    actual = np.asarray(actual, dtype=np.float64).reshape(-1)
    if predicted.shape != actual.shape:
        raise ShapeError(
            f"prediction shape {predicted.shape} != target shape {actual.shape}"
        )
    mask = actual >= min_target
    if not mask.any():
        raise MetricError(
            f"every target is below {min_target}; the percentage metric is undefined"
        )
    if metric == "mape_complement":
        return _ape_stats(predicted, actual, min_target)[0]
    if metric == "rmse_complement":
        diff = predicted[mask] - actual[mask]
        return 100.0 * (1.0 - math.sqrt(float(np.mean(diff * diff))) / float(np.mean(actual[mask])))
    raise ConfigError(f"unknown accuracy metric {metric!r}")


# -- multi-step forecasting ---------------------------------------------------------


def _rollout(model, speed_x, volume_x, horizon: int):
    """Recursive forecast: each later step feeds the previous predictions
    back as the newest input column (both quantities, clipped to [0, 1])."""
    steps = []
    batch, detectors, _, lanes = speed_x.shape
    for h in range(horizon):
        pred_u, pred_q = model.predict_batch(speed_x, volume_x)
        steps.append((pred_u, pred_q))
        if h + 1 == horizon:
            break
        fed_u = np.clip(pred_u, 0.0, 1.0).reshape(batch, detectors, 1, lanes)
        speed_x = np.concatenate([speed_x[:, :, 1:, :], fed_u], axis=2)
        if pred_q is not None and volume_x is not None:
            fed_q = np.clip(pred_q, 0.0, 1.0).reshape(batch, detectors, 1, lanes)
            volume_x = np.concatenate([volume_x[:, :, 1:, :], fed_q], axis=2)
    return steps


def predict_multistep(model, sample, horizon: int) -> list[PredictionPair]:
    """Forecast `horizon` steps ahead from one sample (inference mode)."""
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    steps = _rollout(
        model, sample.speed_history[np.newaxis], sample.volume_history[np.newaxis], horizon
    )
    return [
        PredictionPair(pu[0], pq[0] if pq is not None else None) for pu, pq in steps
    ]


# -- evaluation ---------------------------------------------------------------------


def evaluate(model, samples, horizons, norm: NormalizationParams,
             shape: CorridorShape, *, min_target: float = DEFAULT_MIN_TARGET) -> EvalReport:
    """Score step-h rollouts against the true targets h steps ahead.

    The horizon-h truth for a sample is the target of the sample whose
    origin lies h-1 intervals later; samples without that look-ahead are
    skipped and counted. Predictions and targets are denormalized to mph
    before the percentage metric.
    """
    if not samples:
        raise DataError("cannot evaluate an empty sample set")
    horizons = sorted(set(int(h) for h in horizons))
    if not horizons or horizons[0] < 1:
        raise ConfigError(f"horizons must be >= 1, got {horizons}")
    index = {s.origin_timestamp: i for i, s in enumerate(samples)}
    xu, xq, yu, yq = _stack(samples)
    del yq
    rollout_steps = _rollout(model, xu, xq, horizons[-1])
    report = EvalReport(
        horizons=horizons, accuracy={}, per_lane={}, per_detector={},
        evaluated={}, skipped={}, excluded={},
    )
    for h in horizons:
        pairs = []
        for j, sample in enumerate(samples):
            t = index.get(sample.origin_timestamp + (h - 1) * shape.interval)
            if t is not None:
                pairs.append((j, t))
        if not pairs:
            raise DataError(f"no sample has a horizon-{h} target; not enough look-ahead")
        source = np.array([j for j, _ in pairs])
        target = np.array([t for _, t in pairs])
        pred = denormalize(rollout_steps[h - 1][0][source], norm.speed_min, norm.speed_max)
        truth = denormalize(yu[target], norm.speed_min, norm.speed_max)
        overall, used, excluded = _ape_stats(pred, truth, min_target)
        if used == 0:
            raise MetricError(f"horizon {h}: every target is below {min_target} mph")
        pred_grid = pred.reshape(-1, shape.detectors, shape.lanes)
        truth_grid = truth.reshape(-1, shape.detectors, shape.lanes)
        report.accuracy[h] = overall
        report.per_lane[h] = [
            _ape_stats(pred_grid[:, :, l], truth_grid[:, :, l], min_target)[0]
            for l in range(shape.lanes)
        ]
        report.per_detector[h] = [
            _ape_stats(pred_grid[:, i, :], truth_grid[:, i, :], min_target)[0]
            for i in range(shape.detectors)
        ]
        report.evaluated[h] = len(pairs)
        report.skipped[h] = len(samples) - len(pairs)
        report.excluded[h] = excluded
    return report


# -- hyperparameter sweeps --------------------------------------------------------------


@dataclass
class SweepRow:
    value: float
    accuracy_h1: float
    final_train_loss: float
    status: str


SWEEP_AXES = ("lambda", "lr")


def sweep(axis: str, values, build_model, train_samples, test_samples,
          base_config: TrainConfig, norm: NormalizationParams, shape: CorridorShape) -> list[SweepRow]:
    """One independent training run per value of the swept parameter.

    `build_model` must return a freshly initialized model; with a fixed
    architecture seed every run then starts from identical weights and the
    rows isolate the effect of the swept value. A diverging run is recorded
    and the sweep continues.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    for value in values:
        if axis == "lambda":
            config = replace(base_config, volume_weight=float(value))
        else:
            config = replace(base_config, learning_rate=float(value))
        model = build_model()
        try:
            curve = train(model, train_samples, config)
            report = evaluate(model, test_samples, [1], norm, shape)
            final_loss = curve[-1].train_loss if curve else float("nan")
            rows.append(SweepRow(float(value), report.accuracy[1], final_loss, "ok"))
        except NumericError:
            rows.append(SweepRow(float(value), float("nan"), float("nan"), "diverged"))
    return rows
