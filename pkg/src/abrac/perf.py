"""Timing helpers for the cost of evaluating the marginal likelihood."""

from __future__ import annotations

import timeit

import numpy as np
from scipy.stats import linregress

from .ard_blr import ArdHead, nll_fast
from .numerics import RngStream

DEFAULT_SIZES = tuple(range(100, 1700, 100))


def time_nll(n, b=20, seed=0, number=50, repeat=7):
    """Best-of-``repeat`` mean seconds per ``nll_fast`` call on an ``n x b``
    random design."""
    rng = RngStream(seed)
    phi = rng.normal(0.0, 1.0, size=(n, b))
    y = rng.normal(0.0, 1.0, size=n)
    head = ArdHead(np.ones(b), 1.0)
    timer = timeit.Timer(lambda: nll_fast(phi, y, head))
    return min(timer.repeat(repeat=repeat, number=number)) / number


def nll_scaling(sizes=DEFAULT_SIZES, b=20, seed=0):
    """Least-squares line through (N, seconds); returns ``(slope,
    intercept, r_squared)``."""
    times = [time_nll(n, b, seed) for n in sizes]
    fit = linregress(np.asarray(sizes, dtype=float), np.asarray(times))
    return float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2)
