"""Variance-stabilizing transform for weekly incidence counts.

The forward map is a shifted square root; the inverse squares non-negative
values and exponentiates negative ones so that Gaussian draws below zero map
back into (-1, 0) instead of being reflected.
"""

import numpy as np


def forward(x):
    """Map counts ``x >= 0`` to ``sqrt(x + 1) - 1``.

    Raises:
        ValueError: if any entry is negative or not finite.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("forward transform requires finite counts")
    if np.any(arr < 0):
        raise ValueError("forward transform requires nonnegative counts")
    # x / (sqrt(x+1) + 1) == sqrt(x+1) - 1 without cancellation near zero
    out = arr / (np.sqrt(arr + 1.0) + 1.0)
    return out if out.ndim else float(out)


def inverse(y):
    """Back-transform to the count scale; output is always > -1."""
    arr = np.asarray(y, dtype=float)
    pos = np.maximum(arr, 0.0)
    neg = np.minimum(arr, 0.0)
    out = np.where(arr >= 0, pos * (pos + 2.0), np.expm1(neg))
    return out if out.ndim else float(out)
