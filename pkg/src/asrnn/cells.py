"""Adaptively scaled LSTM/GRU cells, their fixed-scale and vanilla variants,
and the linear output head.

Arrays are batched with the batch axis first: a frame batch is [B, n], a
hidden state [B, m].  Weight matrices keep the [out, in] layout, so a gate
pre-activation is ``h @ W.T + x @ U.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import graph as G
from . import sampler
from .scaleconv import WaveletBank, make_haar_bank, scaled_sequence

GATES = {"lstm": ("f", "i", "o", "g"), "gru": ("z", "r", "g")}


class CellConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScaleMode:
    kind: str
    scale: int | None = None

    @classmethod
    def adaptive(cls):
        return cls("adaptive")

    @classmethod
    def fixed(cls, j):
        return cls("fixed", int(j))

    @classmethod
    def vanilla(cls):
        return cls("vanilla")

    @classmethod
    def parse(cls, kind, scale=None):
        if kind == "fixed":
            if scale is None:
                raise CellConfigError("fixed mode needs a scale index")
            return cls.fixed(scale)
        if kind in ("adaptive", "vanilla"):
            return cls(kind)
        raise CellConfigError(f"unknown scale mode {kind!r}")

    def __str__(self):
        return f"fixed({self.scale})" if self.kind == "fixed" else self.kind


@dataclass
class StepTrace:
    t: int
    hard: np.ndarray
    y: np.ndarray
    probs: np.ndarray | None = None


@dataclass
class CellState:
    h: G.Node
    c: G.Node | None = None


def glorot_uniform(shape, rng):
    fan_out, fan_in = shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -bound, bound)


def param_shapes(cell, hidden, inputs, classes, num_scales, adaptive):
    """Declared parameter order with shapes."""
    if cell not in GATES:
        raise CellConfigError(f"unknown cell kind {cell!r}")
    m, n = hidden, inputs
    shapes = {}
    for gate in GATES[cell]:
        shapes[f"W_{gate}"] = (m, m)
    for gate in GATES[cell]:
        shapes[f"U_{gate}"] = (m, n)
    for gate in GATES[cell]:
        shapes[f"b_{gate}"] = (m,)
    if adaptive:
        shapes["W_scale"] = (num_scales, m)
        shapes["U_scale"] = (num_scales, n)
        shapes["b_scale"] = (num_scales,)
    shapes["W_out"] = (classes, m)
    shapes["b_out"] = (classes,)
    return shapes


def init_params(hidden, inputs, num_scales, cell, rng, classes=1, adaptive=True):
    """Glorot-uniform matrices, zero biases, in declared order."""
    if min(hidden, inputs, num_scales, classes) < 1:
        raise CellConfigError("sizes must be positive")
    params = {}
    for name, shape in param_shapes(cell, hidden, inputs, classes, num_scales,
                                    adaptive).items():
        if len(shape) == 2:
            params[name] = glorot_uniform(shape, rng)
        else:
            params[name] = np.zeros(shape)
    return params


def count_params(cell, hidden, inputs, classes, num_scales, adaptive):
    shapes = param_shapes(cell, hidden, inputs, classes, num_scales, adaptive)
    return int(sum(np.prod(s) for s in shapes.values()))


def matched_hidden_size(cell, hidden, inputs, classes, num_scales):
    """Hidden size for a non-adaptive model whose weight count is closest to
    the adaptive model with ``hidden`` units."""
    target = count_params(cell, hidden, inputs, classes, num_scales, True)
    candidates = range(max(1, hidden - 4), hidden + 8)
    return min(candidates, key=lambda m: (abs(
        count_params(cell, m, inputs, classes, num_scales, False) - target), m))


@dataclass
class Model:
    cell: str
    hidden: int
    inputs: int
    classes: int
    mode: ScaleMode
    bank: WaveletBank
    params: dict = field(default_factory=dict)
    tau: float = 0.1
    hard_forward: bool = False

    def __post_init__(self):
        if self.cell not in GATES:
            raise CellConfigError(f"unknown cell kind {self.cell!r}")
        if self.mode.kind == "fixed" and not 0 <= self.mode.scale < self.bank.num_scales:
            raise CellConfigError(
                f"fixed scale {self.mode.scale} needs 0 <= j < J={self.bank.num_scales}")
        if self.mode.kind == "vanilla" and (
                self.bank.num_scales != 1 or self.bank.kernel_size != 1):
            self.bank = make_haar_bank(1, 1)
        expected = param_shapes(self.cell, self.hidden, self.inputs, self.classes,
                                self.bank.num_scales, self.adaptive)
        for name, shape in expected.items():
            if name not in self.params:
                raise CellConfigError(f"missing parameter {name}")
            value = self.params[name]
            if not isinstance(value, G.Node):
                value = G.parameter(value, name=name)
                self.params[name] = value
            if value.shape != shape:
                raise CellConfigError(
                    f"parameter {name} has shape {value.shape}, expected {shape}")
        extra = set(self.params) - set(expected)
        if extra:
            raise CellConfigError(f"unexpected parameters {sorted(extra)}")
        self.params = {name: self.params[name] for name in expected}

    @classmethod
    def create(cls, cell, hidden, inputs, classes, mode, num_scales=4,
               kernel_size=8, tau=0.1, rng=None, hard_forward=False):
        if mode.kind == "vanilla":
            num_scales = kernel_size = 1
        bank = make_haar_bank(kernel_size, num_scales)
        params = init_params(hidden, inputs, num_scales, cell, rng, classes,
                             adaptive=mode.kind == "adaptive")
        return cls(cell, hidden, inputs, classes, mode, bank, params, tau,
                   hard_forward)

    @property
    def adaptive(self):
        return self.mode.kind == "adaptive"

    @property
    def num_scales(self):
        return self.bank.num_scales

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        G.zero_grad(self.parameters())

    def numpy_params(self):
        return {k: v.value.copy() for k, v in self.params.items()}


class _Prepared:
    """Per-gate weights concatenated once per unroll."""

    def __init__(self, model):
        p = model.params
        gates = GATES[model.cell]
        self.UT = G.transpose(G.concat([p[f"U_{g}"] for g in gates], axis=0))
        self.b = G.concat([p[f"b_{g}"] for g in gates], axis=0)
        if model.cell == "lstm":
            self.WT = G.transpose(G.concat([p[f"W_{g}"] for g in gates], axis=0))
        else:
            self.WzrT = G.transpose(G.concat([p["W_z"], p["W_r"]], axis=0))
            self.WgT = G.transpose(p["W_g"])
        if model.adaptive:
            self.WsT = G.transpose(p["W_scale"])
            self.UsT = G.transpose(p["U_scale"])
            self.bs = p["b_scale"]


def _scaled_input(model, prep, h_prev, x_t, scaled_t, noise_t, override):
    """Return the scale-related input node and the StepTrace payload."""
    J = model.num_scales
    batch = x_t.shape[0]
    if model.mode.kind == "vanilla":
        return x_t, np.zeros(batch, dtype=np.int64), np.ones((batch, 1)), None
    if model.mode.kind == "fixed":
        j = model.mode.scale
        y = sampler.one_hot(j, J, (batch,))
        return G.constant(scaled_t[:, j, :]), np.full(batch, j), y, None
    z = G.matmul(h_prev, prep.WsT) + G.matmul(x_t, prep.UsT) + prep.bs
    e = np.exp(z.value - z.value.max(axis=-1, keepdims=True))
    probs = e / e.sum(axis=-1, keepdims=True)
    if override is not None:
        y = G.constant(sampler.one_hot(override, J, (batch,)))
    elif noise_t is None:
        y = G.constant((np.arange(J) == np.argmax(probs, axis=-1)[:, None]).astype(float))
    else:
        y = sampler.gm_sample(z, noise_t, model.tau)
        if model.hard_forward:
            y = G.straight_through(y)
    x_tilde = G.mix(y, G.constant(scaled_t))
    return x_tilde, sampler.hard_scale(y.value), y.value, probs


def step_aslstm(model, prep, x_t, scaled_t, state, noise_t=None, override=None):
    x_tilde, hard, y, probs = _scaled_input(model, prep, state.h, x_t, scaled_t,
                                            noise_t, override)
    pre = G.matmul(state.h, prep.WT) + G.matmul(x_tilde, prep.UT) + prep.b
    a_f, a_i, a_o, a_g = G.split(pre, 4)
    f, i, o = G.sigmoid(a_f), G.sigmoid(a_i), G.sigmoid(a_o)
    g = G.tanh(a_g)
    c = f * state.c + i * g
    h = o * G.tanh(c)
    return CellState(h, c), (hard, y, probs)


def step_asgru(model, prep, x_t, scaled_t, state, noise_t=None, override=None):
    x_tilde, hard, y, probs = _scaled_input(model, prep, state.h, x_t, scaled_t,
                                            noise_t, override)
    a = G.matmul(x_tilde, prep.UT) + prep.b
    a_z, a_r, a_g = G.split(a, 3)
    hz, hr = G.split(G.matmul(state.h, prep.WzrT), 2)
    z = G.sigmoid(a_z + hz)
    r = G.sigmoid(a_r + hr)
    g = G.tanh(a_g + G.matmul(r * state.h, prep.WgT))
    h = z * state.h + G.rsub(1.0, z) * g
    return CellState(h), (hard, y, probs)


STEPS = {"lstm": step_aslstm, "gru": step_asgru}


def initial_state(model, batch):
    zeros = np.zeros((batch, model.hidden))
    return CellState(G.constant(zeros),
                     G.constant(zeros) if model.cell == "lstm" else None)


def run_sequence(model, X, target, mask=None, rng=None, noise=None,
                 argmax_scale=False, override=None, keep_probs=False):
    """Unroll the model over a batch of sequences and build the loss.

    ``X`` is [B, T, n] (or [T, n] for one sequence).  ``target`` is a class
    label per sequence ([B]) for sequence-label tasks, or a symbol per step
    ([B, T]) for per-step tasks, in which case ``mask`` ([B, T]) marks the
    loss-bearing steps.  The per-step loss of a sequence is the mean
    cross-entropy over its masked steps; the batch loss is the mean over
    sequences.

    Adaptive models draw Gumbel noise from ``rng`` unless ``noise`` ([T, B, J])
    is given; ``argmax_scale`` replaces sampling by the most likely scale and
    ``override`` forces one scale index at every step.

    Returns ``(loss, traces, outputs)`` with one StepTrace per step and the
    head logits as a numpy array ([B, C] or [B, T, C]).
    """
    X = np.asarray(X, dtype=np.float64)
    target = np.asarray(target)
    if X.ndim == 2:
        X = X[None]
        target = target[None]
        mask = None if mask is None else np.asarray(mask)[None]
    B, T, n = X.shape
    if T == 0:
        raise G.GraphUsageError("cannot run an empty sequence")
    if n != model.inputs:
        raise CellConfigError(f"frames have {n} features, model expects {model.inputs}")
    per_step = target.ndim == 2
    if per_step and target.shape != (B, T):
        raise CellConfigError(f"per-step targets {target.shape} for inputs {X.shape}")

    scaled = None if model.mode.kind == "vanilla" else scaled_sequence(X, model.bank)
    if model.adaptive and not argmax_scale and override is None and noise is None:
        if rng is None:
            raise CellConfigError("adaptive sampling needs an rng or explicit noise")
        noise = sampler.gumbel_noise((T, B, model.num_scales), rng)

    prep = _Prepared(model)
    step = STEPS[model.cell]
    state = initial_state(model, B)
    traces, hiddens = [], []
    for t in range(T):
        x_t = G.constant(X[:, t, :])
        scaled_t = None if scaled is None else scaled[:, t]
        noise_t = None if (noise is None or argmax_scale) else noise[t]
        state, (hard, y, probs) = step(model, prep, x_t, scaled_t, state, noise_t,
                                       override)
        traces.append(StepTrace(t, hard, y, probs if keep_probs else None))
        if per_step:
            hiddens.append(state.h)

    W_outT = G.transpose(model.params["W_out"])
    b_out = model.params["b_out"]
    if per_step:
        H = G.concat(hiddens, axis=0)
        out = G.matmul(H, W_outT) + b_out
        flat_targets = target.T.reshape(-1).astype(np.int64)
        m = np.ones((B, T)) if mask is None else np.asarray(mask, dtype=np.float64)
        counts = m.sum(axis=1)
        w = np.divide(m, counts[:, None] * B, out=np.zeros_like(m),
                      where=counts[:, None] > 0)
        loss = G.cross_entropy(out, flat_targets, w.T.reshape(-1))
        outputs = out.value.reshape(T, B, -1).transpose(1, 0, 2)
    else:
        out = G.matmul(state.h, W_outT) + b_out
        loss = G.cross_entropy(out, target.astype(np.int64), np.full(B, 1.0 / B))
        outputs = out.value
    return loss, traces, outputs
