"""Expected improvement and its maximization over a configuration space."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import standard_normal_pdf_cdf
from .surrogate import posterior_many

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class AcquisitionConfig:
    candidate_count: int = 1000
    local_refinement: bool = True
    refinement_steps: int = 3

    def __post_init__(self):
        if self.candidate_count < 1:
            raise ValueError("candidate_count must be >= 1")


def ei_values(mean, variance, best):
    """Vectorized expected improvement for minimization."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    improvement = best - mean
    out = np.maximum(improvement, 0.0)
    pos = sigma > 0
    if np.any(pos):
        z = improvement[pos] / sigma[pos]
        pdf, cdf = standard_normal_pdf_cdf(z)
        out = np.array(out, dtype=float, copy=True)
        out[pos] = np.maximum(sigma[pos] * (z * cdf + pdf), 0.0)
    return out


def expected_improvement(pred, best):
    """EI of a single :class:`PosteriorPrediction` below the incumbent ``best``."""
    return float(ei_values(np.array([pred.mean]), np.array([pred.variance]), best)[0])


def _score(surrogate, X, best):
    mean, var = posterior_many(surrogate, X)
    return ei_values(mean, var, best), var


def _golden_max(fn, lo, hi, tol):
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fn(d)
    return (c, fc) if fc >= fd else (d, fd)


def maximize(surrogate, space, best, cfg, rng):
    """Random candidates, then coordinate-wise golden-section polish of the
    best one. Falls back to the highest-variance candidate when EI vanishes
    everywhere.
    """
    if space.choices is not None:
        rows = space.choices
        if len(rows) > cfg.candidate_count:
            rows = rows[rng.generator.choice(len(rows), cfg.candidate_count, replace=False)]
        ei, var = _score(surrogate, rows, best)
        if not np.max(ei) > 0:
            return rows[int(np.argmax(var))].copy()
        return rows[int(np.argmax(ei))].copy()

    lo, hi = space.lower, space.upper
    cand = rng.uniform(0.0, 1.0, size=(cfg.candidate_count, space.dim)) * (hi - lo) + lo
    ei, var = _score(surrogate, cand, best)
    if not np.max(ei) > 0:
        return cand[int(np.argmax(var))].copy()
    i = int(np.argmax(ei))
    x, fx = cand[i].copy(), float(ei[i])
    if not cfg.local_refinement:
        return x

    width = (hi - lo) / cfg.candidate_count ** (1.0 / space.dim)
    for _ in range(cfg.refinement_steps):
        for j in range(space.dim):
            a = max(lo[j], x[j] - width[j])
            b = min(hi[j], x[j] + width[j])

            def along(t, j=j):
                z = x.copy()
                z[j] = t
                return float(_score(surrogate, z[None, :], best)[0][0])

            t, ft = _golden_max(along, a, b, 1e-6 * (b - a))
            if ft > fx:
                x[j], fx = t, ft
    return np.clip(x, lo, hi)
