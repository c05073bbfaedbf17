"""Haar wavelet bank and dilated causal convolution.

Time is 0-based here: frame ``X[t]`` is the t-th input and frames with a
negative index are zero.  The scale-``j`` input at time ``t`` is

    sum_{k=0}^{K-1} h[k] * X[t - 2**j * k]

so offset 0 (the current frame) always carries tap ``h[0]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScaleParameterError(ValueError):
    pass


@dataclass(frozen=True)
class WaveletBank:
    taps: tuple
    num_scales: int

    @property
    def kernel_size(self):
        return len(self.taps)

    def offsets(self, j):
        """Frame offsets read by scale ``j``."""
        self._check_scale(j)
        return [(2 ** j) * k for k in range(self.kernel_size)]

    def receptive_field(self, j):
        self._check_scale(j)
        return (2 ** j) * (self.kernel_size - 1) + 1

    def dilated_kernel(self, j):
        """The dense length-``2**j*(K-1)+1`` kernel, zero off the taps."""
        kernel = np.zeros(self.receptive_field(j))
        kernel[self.offsets(j)] = self.taps
        return kernel

    def _check_scale(self, j):
        if not 0 <= j < self.num_scales:
            raise ScaleParameterError(
                f"scale {j} out of range for a bank with {self.num_scales} scales")


def make_haar_bank(kernel_size, num_scales):
    """Discrete Haar step: +1 on the first ceil(K/2) taps, -1 on the rest."""
    if kernel_size < 1 or num_scales < 1:
        raise ScaleParameterError(
            f"kernel size and scale count must be >= 1, got K={kernel_size}, "
            f"J={num_scales}")
    half = -(-kernel_size // 2)
    taps = tuple(1.0 if k < half else -1.0 for k in range(kernel_size))
    return WaveletBank(taps=taps, num_scales=num_scales)


def scaled_input_at(X, t, j, bank):
    """Scale-``j`` input at time ``t`` for a sequence ``X`` of shape [T, n]."""
    bank._check_scale(j)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if not 0 <= t < len(X):
        raise ScaleParameterError(f"time index {t} outside [0, {len(X)})")
    acc = np.zeros(X.shape[1])
    for k, tap in enumerate(bank.taps):
        i = t - (2 ** j) * k
        if i >= 0:
            acc = acc + X[i] * tap
    return acc


def scaled_input_all(X, t, bank):
    """All scales at time ``t``: array of shape [J, n]."""
    return np.stack([scaled_input_at(X, t, j, bank) for j in range(bank.num_scales)])


def scaled_sequence(X, bank):
    """Every scale at every step.

    ``X`` has shape [..., T, n]; the result has shape [..., T, J, n] and row
    ``[..., t, j]`` equals ``scaled_input_at(X, t, j, bank)`` (same summation
    order, so the two agree exactly).
    """
    X = np.asarray(X, dtype=np.float64)
    T = X.shape[-2]
    out = np.zeros(X.shape[:-1] + (bank.num_scales, X.shape[-1]))
    for j in range(bank.num_scales):
        acc = np.zeros(X.shape)
        for k, tap in enumerate(bank.taps):
            d = (2 ** j) * k
            shifted = np.zeros(X.shape)
            if d < T:
                shifted[..., d:, :] = X[..., :T - d, :]
            acc = acc + shifted * tap
        out[..., j, :] = acc
    return out
