"""Surrogate models: frozen basis functions plus an ARD regression head."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import ard_blr
from .feature_net import truncate
from .numerics import RngStream


class SurrogateKind(enum.Enum):
    ABRAC = "ABRAC"
    ABRAC_FIXED = "ABRAC_FIXED"
    ABLR_SGD_FIXED = "ABLR_SGD_FIXED"
    ABLR_RKS = "ABLR_RKS"

    @classmethod
    def parse(cls, name):
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ValueError(f"unknown surrogate kind {name!r}") from None


class NotFittedError(RuntimeError):
    pass


def geometric_grid(d):
    grid, b = [], 1
    while b < d:
        grid.append(b)
        b *= 2
    grid.append(d)
    return tuple(grid)


@dataclass(frozen=True)
class TruncationPolicy:
    """How many leading basis functions ABRAC activates.

    ``marginal_likelihood`` fits a head for every ``b`` in the grid and keeps
    the one with the lowest optimized nll (ties go to the smaller ``b``);
    ``linear_schedule`` uses ``b = min(d, ceil(slope * N))``.
    """

    grid: tuple | None = None
    rule: str = "marginal_likelihood"
    slope: float = 1.0
    cap_slope: float | None = None

    def __post_init__(self):
        if self.rule not in ("marginal_likelihood", "linear_schedule"):
            raise ValueError(f"unknown truncation rule {self.rule!r}")
        if not self.slope > 0:
            raise ValueError("schedule slope must be > 0")
        if self.cap_slope is not None and not self.cap_slope > 0:
            raise ValueError("cap slope must be > 0")
        if self.grid is not None:
            grid = tuple(int(b) for b in self.grid)
            if not grid or list(grid) != sorted(set(grid)) or grid[0] < 1:
                raise ValueError("truncation grid must be nonempty, ascending and >= 1")
            object.__setattr__(self, "grid", grid)

    def grid_for(self, d):
        if self.grid is None:
            return geometric_grid(d)
        if self.grid[-1] != d or any(b > d for b in self.grid):
            raise ValueError(f"truncation grid {self.grid} must end at d={d}")
        return self.grid

    def candidates(self, d, n):
        """Truncation levels to try with ``n`` observations."""
        if self.rule == "linear_schedule":
            return (min(d, math.ceil(self.slope * n)),)
        grid = self.grid_for(d)
        if self.cap_slope is None:
            return grid
        cap = max(1, min(d, math.ceil(self.cap_slope * n)))
        return tuple(b for b in grid if b < cap) + (cap,)


class RksFeatures:
    """Random Fourier features ``sqrt(2/d) cos(W x + u)`` on inputs scaled to
    [-1, 1]."""

    def __init__(self, input_dim, output_dim=20, lengthscale=1.0, seed=0, x_lo=None, x_hi=None):
        rng = RngStream(seed)
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.lengthscale = float(lengthscale)
        self.W = rng.normal(0.0, 1.0 / self.lengthscale, size=(self.output_dim, self.input_dim))
        self.u = rng.uniform(0.0, 2.0 * math.pi, size=self.output_dim)
        self.x_lo = -np.ones(self.input_dim) if x_lo is None else np.asarray(x_lo, dtype=float)
        self.x_hi = np.ones(self.input_dim) if x_hi is None else np.asarray(x_hi, dtype=float)

    def scale_inputs(self, X):
        return 2.0 * (np.asarray(X, dtype=float) - self.x_lo) / (self.x_hi - self.x_lo) - 1.0

    def features(self, X):
        Z = self.scale_inputs(X)
        return math.sqrt(2.0 / self.output_dim) * np.cos(Z @ self.W.T + self.u)


@dataclass(frozen=True)
class SurrogateModel:
    kind: SurrogateKind
    source: object
    policy: TruncationPolicy = field(default_factory=TruncationPolicy)
    bounds: ard_blr.FitBounds = field(default_factory=ard_blr.FitBounds)
    b: int | None = None
    result: ard_blr.HeadFitResult | None = None
    y_mean: float = 0.0
    y_std: float = 1.0
    nll_by_b: dict = field(default_factory=dict)
    heads_by_b: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind is SurrogateKind.ABRAC:
            self.policy.grid_for(self.d)
        elif self.b is not None and self.b != self.d:
            raise ValueError(f"{self.kind.value} always uses b = d")

    @property
    def d(self):
        return self.source.output_dim

    @property
    def fitted(self):
        return self.result is not None


def make_surrogate(kind, source, policy=None, bounds=None):
    kind = kind if isinstance(kind, SurrogateKind) else SurrogateKind.parse(kind)
    return SurrogateModel(kind, source, policy or TruncationPolicy(), bounds or ard_blr.FitBounds())


def _check_inputs(model, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.source.input_dim:
        raise ValueError(f"expected inputs of dimension {model.source.input_dim}, got {X.shape[1]}")
    tol = 1e-9 * (model.source.x_hi - model.source.x_lo)
    if np.any(X < model.source.x_lo - tol) or np.any(X > model.source.x_hi + tol):
        raise ValueError("input outside the configuration-space bounds")
    return X


def featurize(model, x):
    x = np.asarray(x, dtype=float)
    return model.source.features(_check_inputs(model, x))[0] if x.ndim == 1 else featurize_many(model, x)


def featurize_many(model, X):
    return model.source.features(_check_inputs(model, X))


def _fit_one(model, phi, ys, b):
    return ard_blr.fit(phi[:, :b], ys, b=b, bounds=model.bounds, init=model.heads_by_b.get(b),
                       shared_alpha=model.kind is SurrogateKind.ABLR_SGD_FIXED)


def refit(model, data, policy=None):
    """Refit the head(s) on all observations of ``data``; returns a new model.

    Previous heads warm-start the precisions.
    """
    policy = policy or model.policy
    model = replace(model, policy=policy)
    X, y = data.X, data.y
    n = y.size
    d = model.d
    if n == 0:
        b = d if model.kind is not SurrogateKind.ABRAC else policy.grid_for(d)[0]
        init = model.heads_by_b.get(b) or ard_blr.ArdHead(np.ones(b), 1.0)
        return replace(model, b=b, result=ard_blr.prior_result(init), y_mean=0.0, y_std=1.0,
                       nll_by_b={}, heads_by_b=dict(model.heads_by_b))
    y_mean = float(np.mean(y))
    y_std = float(np.std(y))
    if not y_std > 0:
        y_std = 1.0
    ys = (y - y_mean) / y_std
    phi = featurize_many(model, X)

    if model.kind is SurrogateKind.ABRAC:
        candidates = policy.candidates(d, n)
    else:
        candidates = (d,)

    heads = dict(model.heads_by_b)
    nlls = {}
    best = None
    for b in candidates:
        res = _fit_one(model, phi, ys, b)
        nlls[b] = res.nll
        heads[b] = res.head
        if best is None or res.nll < best[1].nll:
            best = (b, res)
    b, res = best
    return replace(model, b=b, result=res, y_mean=y_mean, y_std=y_std, nll_by_b=nlls, heads_by_b=heads)


def posterior_many(model, X):
    """Predictive means and variances in the objective's units."""
    if not model.fitted:
        raise NotFittedError("surrogate has not been fitted")
    phi = featurize_many(model, X)[:, :model.b]
    mean, var = ard_blr.predict_many(model.result, phi)
    return model.y_mean + model.y_std * mean, model.y_std ** 2 * var


def posterior(model, x):
    mean, var = posterior_many(model, np.asarray(x, dtype=float)[None, :])
    return ard_blr.PosteriorPrediction(float(mean[0]), float(var[0]))


def truncated_features(model, x):
    """Full-length features with everything after ``b`` zeroed."""
    return truncate(featurize(model, x), model.b)
