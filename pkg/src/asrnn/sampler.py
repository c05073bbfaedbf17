"""Context-dependent scale logits and Gumbel-Softmax sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import graph as G


@dataclass
class ScaleSample:
    logits: np.ndarray
    probs: np.ndarray
    y: np.ndarray
    hard: np.ndarray
    tau: float


def logits(h_prev, x_t, W, U, b):
    """Scale logits ``W h_prev + U x_t + b``.

    Vectors are rows: ``h_prev`` is [m] or [B, m], ``x_t`` is [n] or [B, n];
    ``W`` is [J, m], ``U`` is [J, n] and ``b`` is [J].
    """
    return G.matmul(h_prev, G.transpose(W)) + G.matmul(x_t, G.transpose(U)) + b


def gumbel_noise(size, rng):
    """Gumbel(0, 1) draws ``-log(-log(u))`` with u uniform on (0, 1)."""
    return rng.gumbel(size)


def log_probs(z):
    return G.sub(z, G.logsumexp(z))


def gm_sample(z, g, tau):
    """Gumbel-Softmax sample ``softmax((log softmax(z) + g) / tau)``.

    ``g`` is a constant; gradients flow to ``z`` only.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return G.softmax(G.scale(G.add(log_probs(z), G.constant(g)), 1.0 / tau))


def hard_scale(y):
    """Index of the largest entry along the last axis, first one on ties."""
    return np.argmax(np.asarray(y), axis=-1)


def one_hot(index, J, shape=()):
    out = np.zeros(tuple(shape) + (J,))
    out[..., index] = 1.0
    return out


def describe(z, y, tau):
    """Snapshot a sample as plain arrays."""
    zv = np.asarray(z.value if isinstance(z, G.Node) else z)
    yv = np.asarray(y.value if isinstance(y, G.Node) else y)
    e = np.exp(zv - zv.max(axis=-1, keepdims=True))
    return ScaleSample(logits=zv, probs=e / e.sum(axis=-1, keepdims=True),
                       y=yv, hard=hard_scale(yv), tau=tau)
