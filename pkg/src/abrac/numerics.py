"""Dense linear algebra, special functions and seeded random streams."""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import lapack, solve_triangular
from scipy.special import erfc

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class DecompositionError(np.linalg.LinAlgError):
    """Cholesky hit a non-positive pivot."""

    def __init__(self, pivot):
        super().__init__(f"matrix is not positive definite (pivot {pivot})")
        self.pivot = pivot


class SingularMatrixError(np.linalg.LinAlgError):
    pass


def cholesky(a):
    """Lower Cholesky factor L with L @ L.T == a.

    Raises DecompositionError carrying the 0-based index of the first
    failing pivot. No jitter is added.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    scale = max(np.max(np.abs(a)), 1.0) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    c, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        raise DecompositionError(info - 1)
    if info < 0:
        raise ValueError(f"illegal argument to dpotrf ({info})")
    return c


def solve_lower_triangular(l, rhs):
    """Forward substitution: returns x with l @ x == rhs."""
    l = np.asarray(l, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if l.ndim != 2 or l.shape[0] != l.shape[1]:
        raise ValueError("l must be square")
    if rhs.shape[0] != l.shape[0]:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, expected {l.shape[0]}")
    diag = np.diagonal(l)
    if np.any(diag == 0.0):
        raise SingularMatrixError(f"zero diagonal at index {int(np.flatnonzero(diag == 0.0)[0])}")
    return solve_triangular(l, rhs, lower=True, check_finite=False)


def solve_cholesky(l, rhs):
    """Solve (l l^T) x = rhs with two triangular solves."""
    z = solve_lower_triangular(l, rhs)
    return solve_triangular(l, z, lower=True, trans="T", check_finite=False)


def standard_normal_pdf_cdf(z):
    """Standard normal density and distribution function.

    The cdf goes through erfc so the lower tail keeps full relative accuracy.
    Works on scalars and arrays.
    """
    z = np.asarray(z, dtype=float)
    with np.errstate(over="ignore"):
        pdf = np.exp(-0.5 * z * z) / _SQRT_2PI
    cdf = 0.5 * erfc(-z / math.sqrt(2.0))
    if pdf.ndim == 0:
        return float(pdf), float(cdf)
    return pdf, cdf


class RngStream:
    """Seeded random stream; equal seeds give bit-identical draws."""

    def __init__(self, seed):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, lo, hi, size=None):
        if not lo < hi:
            raise ValueError(f"invalid bounds: lo={lo} must be < hi={hi}")
        return self.generator.uniform(lo, hi, size)

    def normal(self, mean, std, size=None):
        if std < 0:
            raise ValueError(f"std must be >= 0, got {std}")
        if std == 0:
            return mean if size is None else np.full(size, float(mean))
        return self.generator.normal(mean, std, size)

    def uniform_int(self, lo, hi, size=None):
        """Integer draw in the inclusive range [lo, hi]."""
        if lo > hi:
            raise ValueError(f"invalid bounds: lo={lo} must be <= hi={hi}")
        out = self.generator.integers(lo, hi, size=size, endpoint=True)
        return int(out) if size is None else out

    def spawn_seed(self):
        return int(self.generator.integers(0, 2**63 - 1))


def draw_uniform(stream, lo, hi):
    return float(stream.uniform(lo, hi))


def draw_normal(stream, mean, std):
    return float(stream.normal(mean, std))


def draw_uniform_int(stream, lo, hi):
    return stream.uniform_int(lo, hi)


def derive_seed(*keys):
    """Deterministic 63-bit seed from a tuple of non-negative integers."""
    ss = np.random.SeedSequence([int(k) for k in keys])
    lo, hi = (int(v) for v in ss.generate_state(2, dtype=np.uint32))
    return lo | ((hi & 0x7FFFFFFF) << 32)
