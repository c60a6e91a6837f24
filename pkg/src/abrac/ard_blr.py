"""Bayesian linear regression with one prior precision per basis function.

Model: ``y = Phi w + eps`` with ``w ~ N(0, Diag(alpha)^-1)`` and
``eps ~ N(0, beta^-1 I)``. The negative log marginal likelihood is evaluated
through the Cholesky factor of ``A = Phi^T Phi + Diag(alpha) / beta`` so that
each evaluation costs O(b^2 max(N, b)), and O(b^3) once the sufficient
statistics ``Phi^T Phi``, ``Phi^T y`` and ``y^T y`` are cached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

from .numerics import DecompositionError, cholesky, solve_lower_triangular


@dataclass(frozen=True)
class ArdHead:
    alpha: np.ndarray
    beta: float

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if alpha.ndim != 1 or alpha.size < 1:
            raise ValueError("alpha must be a nonempty vector")
        if not np.all(alpha > 0) or not self.beta > 0:
            raise ValueError("precisions must be positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def b(self):
        return self.alpha.size


@dataclass(frozen=True)
class FitBounds:
    log_alpha: tuple = (-12.0, 12.0)
    log_beta: tuple = (-12.0, 12.0)

    def __post_init__(self):
        if not (self.log_alpha[0] < self.log_alpha[1] and self.log_beta[0] < self.log_beta[1]):
            raise ValueError("bounds must satisfy lo < hi")


@dataclass(frozen=True)
class PosteriorPrediction:
    mean: float
    variance: float


@dataclass(frozen=True)
class HeadFitResult:
    head: ArdHead
    nll: float
    mean: np.ndarray
    chol: np.ndarray
    converged: bool = True
    n_iter: int = 0
    n_obs: int = 0


class _Stats:
    """Sufficient statistics of (Phi, y)."""

    def __init__(self, phi, y):
        phi = np.atleast_2d(np.asarray(phi, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if phi.shape[0] != y.size:
            raise ValueError(f"phi has {phi.shape[0]} rows but y has {y.size} entries")
        self.n = y.size
        self.b = phi.shape[1]
        self.gram = phi.T @ phi
        self.proj = phi.T @ y
        self.yy = float(y @ y)

    def factor(self, alpha, beta):
        a = self.gram + np.diag(alpha / beta)
        try:
            return cholesky(a)
        except DecompositionError as exc:
            raise FloatingPointError(f"Cholesky of Phi^T Phi + Diag(alpha)/beta failed at pivot {exc.pivot}") from exc

    def nll(self, alpha, beta, with_grad=False):
        L = self.factor(alpha, beta)
        v = solve_lower_triangular(L, self.proj)
        vv = float(v @ v)
        nll = (
            -0.5 * (self.n - self.b) * np.log(beta)
            - 0.5 * np.sum(np.log(alpha))
            + np.sum(np.log(np.diagonal(L)))
            + 0.5 * beta * (self.yy - vv)
        )
        if not with_grad:
            return nll, L, None
        linv = solve_lower_triangular(L, np.eye(self.b))
        a_inv_diag = np.sum(linv * linv, axis=0)
        m = linv.T @ v
        s_diag = a_inv_diag / beta
        am2 = alpha * m * m
        g_alpha = 0.5 * (-1.0 + alpha * s_diag + am2)
        rss = max(self.yy - vv - float(np.sum(am2)) / beta, 0.0)
        g_beta = 0.5 * (-self.n + self.b - float(np.sum(alpha * s_diag)) + beta * rss)
        return nll, L, np.append(g_alpha, g_beta)


def _check(phi, y, head):
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    if phi.shape[1] != head.b:
        raise ValueError(f"phi has {phi.shape[1]} columns but head has b={head.b}")
    if phi.shape[0] < 1:
        raise ValueError("need at least one observation")
    return phi


def nll_fast(phi, y, head):
    """Negative log marginal likelihood (without the N/2 log 2pi constant)
    and the Cholesky factor L of ``Phi^T Phi + Diag(alpha)/beta``."""
    phi = _check(phi, y, head)
    nll, L, _ = _Stats(phi, y).nll(head.alpha, head.beta)
    return float(nll), L


def nll_dense(phi, y, head):
    """Reference evaluation through the N x N marginal covariance."""
    phi = _check(phi, y, head)
    y = np.asarray(y, dtype=float).ravel()
    sigma = phi @ np.diag(1.0 / head.alpha) @ phi.T + np.eye(len(y)) / head.beta
    _, logdet = np.linalg.slogdet(sigma)
    return 0.5 * logdet + 0.5 * float(y @ np.linalg.solve(sigma, y))


def nll_gradient(phi, y, head):
    """Gradient with respect to ``(log alpha_1..b, log beta)``."""
    phi = _check(phi, y, head)
    return _Stats(phi, y).nll(head.alpha, head.beta, with_grad=True)[2]


def _unpack(theta, b, shared):
    alpha = np.full(b, np.exp(theta[0])) if shared else np.exp(theta[:-1])
    return alpha, float(np.exp(theta[-1]))


def _default_init(y, b):
    var = float(np.var(y)) if len(y) > 1 else 0.0
    return ArdHead(np.ones(b), 1.0 / var if var > 0 else 1.0)


def _result(stats, head, nll, L, converged=True, n_iter=0):
    m = solve_triangular(L, solve_lower_triangular(L, stats.proj), lower=True, trans="T", check_finite=False)
    return HeadFitResult(head, float(nll), m, L, converged, n_iter, stats.n)


def prior_result(head):
    """Posterior with no observations: the prior itself."""
    L = np.diag(np.sqrt(head.alpha / head.beta))
    return HeadFitResult(head, 0.0, np.zeros(head.b), L, True, 0, 0)


def fit(phi, y, b=None, bounds=None, init=None, shared_alpha=False, gradient="analytic",
        max_iter=200, memory=10, gtol=1e-6):
    """Maximize the marginal likelihood over ``(log alpha, log beta)``.

    Uses the leading ``b`` columns of ``phi``. ``shared_alpha`` ties all
    precisions to one value. ``gradient="fd"`` replaces the analytic gradient
    by central differences. Never returns an nll above the initial one; a
    failed line search is reported through ``converged=False``.
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    b = phi.shape[1] if b is None else int(b)
    if not 1 <= b <= phi.shape[1]:
        raise ValueError(f"b={b} outside 1..{phi.shape[1]}")
    phi = phi[:, :b]
    bounds = bounds or FitBounds()
    if init is None:
        init = _default_init(y, b)
    elif init.b != b:
        alpha = np.ones(b)
        k = min(b, init.b)
        alpha[:k] = init.alpha[:k]
        init = ArdHead(alpha, init.beta)
    if shared_alpha:
        init = ArdHead(np.full(b, np.exp(np.mean(np.log(init.alpha)))), init.beta)
    if y.size == 0:
        return prior_result(init)

    stats = _Stats(phi, y)
    n_alpha = 1 if shared_alpha else b
    box = [tuple(bounds.log_alpha)] * n_alpha + [tuple(bounds.log_beta)]
    lo = np.array([p[0] for p in box])
    hi = np.array([p[1] for p in box])
    theta0 = np.log(np.append(init.alpha[:n_alpha], init.beta))
    theta0 = np.clip(theta0, lo, hi)

    def value(theta):
        alpha, beta = _unpack(theta, b, shared_alpha)
        try:
            return stats.nll(alpha, beta)[0]
        except FloatingPointError:
            return np.inf

    def objective(theta):
        alpha, beta = _unpack(theta, b, shared_alpha)
        if gradient == "fd":
            g = np.array([
                (value(theta + e) - value(theta - e)) / 2e-5
                for e in np.eye(theta.size) * 1e-5
            ])
            return value(theta), g
        try:
            nll, _, g = stats.nll(alpha, beta, with_grad=True)
        except FloatingPointError:
            return np.inf, np.zeros_like(theta)
        if shared_alpha:
            g = np.array([g[:-1].sum(), g[-1]])
        return nll, g

    f0 = value(theta0)
    res = minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=box,
                   options={"maxiter": max_iter, "maxcor": memory, "gtol": gtol, "ftol": 1e-12})
    if np.isfinite(res.fun) and res.fun <= f0:
        theta, converged = res.x, bool(res.success)
    else:
        theta, converged = theta0, False
    alpha, beta = _unpack(theta, b, shared_alpha)
    head = ArdHead(alpha, beta)
    nll, L, _ = stats.nll(alpha, beta)
    return _result(stats, head, nll, L, converged, int(res.nit))


def posterior_from_head(phi, y, head):
    """Posterior for fixed precisions (no optimization)."""
    phi = _check(phi, y, head)
    stats = _Stats(phi, y)
    nll, L, _ = stats.nll(head.alpha, head.beta)
    return _result(stats, head, nll, L)


def predict_many(result, F):
    """Predictive means and variances for the rows of ``F``."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape[1] != result.head.b:
        raise ValueError(f"features have length {F.shape[1]}, expected {result.head.b}")
    mean = F @ result.mean
    z = solve_lower_triangular(result.chol, F.T)
    beta = result.head.beta
    var = (np.sum(z * z, axis=0) + 1.0) / beta
    return mean, var


def predict(result, f):
    f = np.asarray(f, dtype=float)
    if f.shape != (result.head.b,):
        raise ValueError(f"features have shape {f.shape}, expected ({result.head.b},)")
    mean, var = predict_many(result, f[None, :])
    return PosteriorPrediction(float(mean[0]), float(var[0]))


def relative_weights(result):
    m = np.abs(result.mean)
    top = m.max()
    return m / top if top > 0 else np.zeros_like(m)
