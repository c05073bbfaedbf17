"""RMSProp training loop, evaluation and scale statistics."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import graph as G
from .cells import Model, matched_hidden_size, run_sequence
from .config import ConfigError
from .rng import RngStream

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "split", "loss", "accuracy", "scale_min", "scale_max",
                 "scale_mean", "seconds")


class DivergenceError(FloatingPointError):
    pass


@dataclass
class RmsPropState:
    lr: float = 0.001
    decay: float = 0.9
    eps: float = 1e-8
    v: dict = field(default_factory=dict)


def rmsprop_step(params, grads, state):
    """In-place update ``p -= lr * g / (sqrt(v) + eps)`` after
    ``v = decay * v + (1 - decay) * g**2``.

    ``params`` and ``grads`` map names to arrays; a missing gradient counts
    as zero.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {name}")
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        v = state.v.get(name)
        if v is None:
            v = np.zeros_like(p)
        v = state.decay * v + (1.0 - state.decay) * g * g
        state.v[name] = v
        p -= state.lr * g / (np.sqrt(v) + state.eps)
    return params, state


@dataclass
class RunMetrics:
    step: int
    split: str
    loss: float
    accuracy: float
    scale_min: float
    scale_max: float
    scale_mean: float
    seconds: float | None = None

    def row(self):
        def num(x):
            return repr(float(x))
        return [str(self.step), self.split, num(self.loss), num(self.accuracy),
                num(self.scale_min), num(self.scale_max), num(self.scale_mean),
                "" if self.seconds is None else f"{self.seconds:.6f}"]


class ScaleStats:
    """Running min/max/mean of hard scales."""

    def __init__(self):
        self.min = np.inf
        self.max = -np.inf
        self.total = 0.0
        self.count = 0

    def add(self, traces):
        for tr in traces:
            hard = np.asarray(tr.hard)
            self.min = min(self.min, hard.min())
            self.max = max(self.max, hard.max())
            self.total += float(hard.sum())
            self.count += hard.size

    @property
    def mean(self):
        return self.total / self.count if self.count else float("nan")

    def as_tuple(self):
        if not self.count:
            return (float("nan"),) * 3
        return float(self.min), float(self.max), self.mean


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    scale_min: float
    scale_max: float
    scale_mean: float
    count: int
    traces: list | None = None


@dataclass
class TrainResult:
    model: Model
    metrics: list
    rng_state: dict


def build_model(config, dataset, rng=None):
    """Freshly initialized model for ``config`` sized to ``dataset``."""
    mode = config.scale_mode()
    hidden = config.hidden
    if config.match_params and mode.kind != "adaptive":
        hidden = parity_hidden(config, dataset.num_inputs, dataset.num_classes)
    rng = rng or RngStream.named(config.seed, "init")
    return Model.create(config.cell, hidden, dataset.num_inputs, dataset.num_classes,
                        mode, num_scales=config.J, kernel_size=config.K,
                        tau=config.tau, rng=rng, hard_forward=config.hard_forward)


def parity_hidden(config, num_inputs, num_classes):
    """Hidden size giving a non-adaptive model about as many weights as the
    adaptive model of size ``config.hidden``."""
    return matched_hidden_size(config.cell, config.hidden, num_inputs, num_classes,
                               config.J)


def check_compatible(model, dataset):
    if not len(dataset):
        raise ConfigError("dataset is empty")
    if dataset.num_inputs != model.inputs or dataset.num_classes != model.classes:
        raise ConfigError(
            f"dataset has {dataset.num_inputs} inputs / {dataset.num_classes} classes, "
            f"model expects {model.inputs} / {model.classes}")
    lengths = {len(ex.inputs) for ex in dataset.examples}
    if len(lengths) != 1:
        raise ConfigError("all sequences in a dataset must share one length")


def _stack(examples):
    X = np.stack([ex.inputs for ex in examples])
    if examples[0].per_step:
        target = np.stack([np.asarray(ex.target) for ex in examples])
        mask = np.stack([np.ones(len(ex.target)) if ex.mask is None
                         else np.asarray(ex.mask, dtype=np.float64) for ex in examples])
    else:
        target = np.array([ex.target for ex in examples])
        mask = None
    return X, target, mask


def _correct(outputs, target, mask):
    """(number correct, number scored) for one batch."""
    pred = np.argmax(outputs, axis=-1)
    if mask is None:
        return int((pred == target).sum()), len(target)
    hit = (pred == target) * (mask > 0)
    return int(hit.sum()), int((mask > 0).sum())


def evaluate(model, dataset, batch=100, rng=None, argmax_scale=False, limit=0,
             keep_traces=False, force_scale=None):
    """Mean loss, accuracy and hard-scale statistics over ``dataset``.

    For per-step tasks the loss is the mean cross-entropy over loss-bearing
    steps and accuracy is per step; for sequence-label tasks accuracy is the
    fraction of sequences whose largest head logit is the label.
    ``force_scale`` pins an adaptive model to one scale at every step.
    """
    check_compatible(model, dataset)
    examples = dataset.examples[:limit] if limit else dataset.examples
    if model.adaptive and not argmax_scale and force_scale is None and rng is None:
        raise ConfigError("sampled evaluation of an adaptive model needs an rng")
    stats = ScaleStats()
    loss_sum, hits, scored = 0.0, 0, 0
    kept = [] if keep_traces else None
    for start in range(0, len(examples), batch):
        chunk = examples[start:start + batch]
        X, target, mask = _stack(chunk)
        loss, traces, outputs = run_sequence(model, X, target, mask, rng=rng,
                                             argmax_scale=argmax_scale,
                                             override=force_scale)
        loss_sum += float(loss.value) * len(chunk)
        h, s = _correct(outputs, target, mask)
        hits += h
        scored += s
        stats.add(traces)
        if keep_traces:
            kept.append((start, traces))
    lo, hi, mean = stats.as_tuple()
    return EvalResult(loss_sum / len(examples), hits / scored, lo, hi, mean,
                      len(examples), kept)


def train(config, train_set, eval_set=None, model=None, on_metrics=None):
    """Train with RMSProp; no gradient clipping or normalization is applied.

    Metrics are emitted every ``config.eval_every`` iterations and after the
    last one: a ``train`` row averaging the window since the previous row,
    and an ``eval`` row when ``eval_set`` is given.
    """
    config.validate()
    if train_set.task != config.task:
        raise ConfigError(f"dataset task {train_set.task!r} but config says {config.task!r}")
    model = model or build_model(config, train_set)
    check_compatible(model, train_set)
    if eval_set is not None:
        check_compatible(model, eval_set)

    shuffle = RngStream.named(config.seed, "shuffle")
    gumbel = RngStream.named(config.seed, "gumbel")
    opt = RmsPropState(config.lr, config.decay, config.eps)
    metrics = []

    def emit(row):
        metrics.append(row)
        if on_metrics is not None:
            on_metrics(row)

    order, cursor = np.empty(0, dtype=np.int64), 0
    window_loss, window_n, hits, scored = 0.0, 0, 0, 0
    stats = ScaleStats()
    started = time.perf_counter()
    for it in range(1, config.iters + 1):
        idx = []
        while len(idx) < config.batch:
            if cursor >= len(order):
                order, cursor = shuffle.permutation(len(train_set)), 0
            take = min(config.batch - len(idx), len(order) - cursor)
            idx.extend(order[cursor:cursor + take])
            cursor += take
        X, target, mask = _stack([train_set.examples[i] for i in idx])
        loss, traces, outputs = run_sequence(model, X, target, mask, rng=gumbel)
        value = float(loss.value)
        if not np.isfinite(value):
            raise DivergenceError(f"loss became non-finite at iteration {it}")
        model.zero_grad()
        G.backward(loss)
        params = {k: p.value for k, p in model.params.items()}
        grads = {k: p.grad for k, p in model.params.items()}
        rmsprop_step(params, grads, opt)

        window_loss += value
        window_n += 1
        h, s = _correct(outputs, target, mask)
        hits += h
        scored += s
        stats.add(traces)
        if it % config.eval_every == 0 or it == config.iters:
            now = time.perf_counter()
            seconds = (now - started) / window_n if config.wallclock else None
            emit(RunMetrics(it, "train", window_loss / window_n, hits / scored,
                            *stats.as_tuple(), seconds))
            if eval_set is not None:
                res = evaluate(model, eval_set, config.eval_batch,
                               rng=RngStream.named(config.seed, "eval"),
                               argmax_scale=config.eval_argmax_scale,
                               limit=config.eval_limit)
                emit(RunMetrics(it, "eval", res.loss, res.accuracy, res.scale_min,
                                res.scale_max, res.scale_mean, None))
            log.info("iter %d loss %.5f acc %.4f", it, window_loss / window_n,
                     hits / scored)
            window_loss, window_n, hits, scored = 0.0, 0, 0, 0
            stats = ScaleStats()
            started = time.perf_counter()

    rng_state = {"shuffle": shuffle.counter, "gumbel": gumbel.counter,
                 "cursor": cursor}
    return TrainResult(model, metrics, rng_state)


# ---------------------------------------------------------------------------
# output formats

def metrics_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_FIELDS)
    for row in rows:
        writer.writerow(row.row())
    return buf.getvalue()


def read_metrics_csv(text):
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != METRIC_FIELDS:
        raise ValueError(f"unexpected metrics header {header}")
    rows = []
    for rec in reader:
        if not rec:
            continue
        rows.append(RunMetrics(int(rec[0]), rec[1], *(float(x) for x in rec[2:7]),
                               float(rec[7]) if rec[7] else None))
    return rows


def trace_records(traces_by_batch):
    """Flatten evaluation traces into per-step dict records."""
    for start, traces in traces_by_batch:
        batch = len(traces[0].hard)
        for b in range(batch):
            for tr in traces:
                yield {"sequence_id": start + b, "t": tr.t, "hard": int(tr.hard[b]),
                       "y": [float(v) for v in tr.y[b]]}


def trace_jsonl(traces_by_batch):
    return "".join(json.dumps(rec) + "\n" for rec in trace_records(traces_by_batch))
