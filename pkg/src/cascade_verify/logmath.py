"""Log-domain arithmetic that tolerates -inf entries (impossible transitions)."""

import numpy as np


def logsumexp(a, axis=None):
    """Stable ``log(sum(exp(a)))`` along ``axis``.

    Slices that are entirely ``-inf`` reduce to ``-inf`` without warnings.
    """
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def safe_log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)
