"""Sequential Bayesian optimization loop and the random-search baseline."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .acquisition import AcquisitionConfig, maximize
from .ard_blr import FitBounds
from .data import TaskDataset
from .numerics import RngStream, derive_seed
from .surrogate import SurrogateKind, TruncationPolicy, make_surrogate, refit

log = logging.getLogger(__name__)


class Objective:
    """Black-box objective with optional Gaussian observation noise and an
    evaluation counter."""

    def __init__(self, fn, noise_std=0.0, seed=0):
        if noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        self.fn = fn
        self.noise_std = float(noise_std)
        self.n_evals = 0
        self._rng = RngStream(seed) if noise_std > 0 else None

    def __call__(self, x):
        self.n_evals += 1
        y = float(self.fn(np.asarray(x, dtype=float)))
        if self._rng is not None:
            y += float(self._rng.normal(0.0, self.noise_std))
        return y


@dataclass(frozen=True)
class BoConfig:
    n0: int = 3
    budget: int = 20
    seed: int = 0
    kind: SurrogateKind = SurrogateKind.ABRAC
    policy: TruncationPolicy = field(default_factory=TruncationPolicy)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    bounds: FitBounds = field(default_factory=FitBounds)

    def __post_init__(self):
        if not 1 <= self.n0 <= self.budget:
            raise ValueError("need 1 <= n0 <= budget")


@dataclass(frozen=True)
class BoRecord:
    iteration: int
    x: np.ndarray
    y: float
    best_so_far: float
    truncation_b: int | None = None
    surrogate_nll: float | None = None
    wall_ms: float = 0.0


@dataclass
class BoHistory:
    records: list = field(default_factory=list)
    failed: bool = False
    error: str | None = None

    def __len__(self):
        return len(self.records)

    def append(self, x, y, b=None, nll=None, wall_ms=0.0):
        best = y if not self.records else min(self.records[-1].best_so_far, y)
        self.records.append(BoRecord(len(self.records) + 1, np.array(x, dtype=float), y, best, b, nll, wall_ms))

    @property
    def X(self):
        return np.array([r.x for r in self.records])

    @property
    def y(self):
        return np.array([r.y for r in self.records])

    def incumbent(self):
        """Best observed configuration and its value."""
        i = int(np.argmin(self.y))
        return self.records[i].x, self.records[i].y


class EvaluationFailed(RuntimeError):
    pass


def _evaluate(history, objective, x, **extra):
    t0 = time.perf_counter()
    try:
        y = objective(x)
    except Exception as exc:  # noqa: BLE001 - any objective failure aborts the run
        raise EvaluationFailed(repr(exc)) from exc
    history.append(x, y, wall_ms=extra.pop("elapsed", 0.0) + 1e3 * (time.perf_counter() - t0), **extra)


def run_random_search(objective, space, budget, seed):
    """``budget`` uniform draws from ``space``; the draw order matches the
    initial design of :func:`run` for the same seed."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = RngStream(seed)
    history = BoHistory()
    for _ in range(budget):
        x = space.sample(rng)
        try:
            _evaluate(history, objective, x)
        except EvaluationFailed as exc:
            history.failed, history.error = True, str(exc)
            break
    return history


def run(objective, space, cfg, features):
    """Bayesian optimization with an ABRAC-family surrogate on top of
    ``features`` (a FeatureNet or RksFeatures)."""
    init_rng = RngStream(cfg.seed)
    acq_rng = RngStream(derive_seed(cfg.seed, 1))
    model = make_surrogate(cfg.kind, features, cfg.policy, cfg.bounds)
    history = BoHistory()
    try:
        for _ in range(cfg.n0):
            _evaluate(history, objective, space.sample(init_rng))
        while len(history) < cfg.budget:
            t0 = time.perf_counter()
            data = TaskDataset("current", history.X, history.y)
            model = refit(model, data)
            x = maximize(model, space, float(np.min(history.y)), cfg.acquisition, acq_rng)
            elapsed = 1e3 * (time.perf_counter() - t0)
            log.debug("iteration %d: b=%d nll=%.4g", len(history) + 1, model.b, model.result.nll)
            _evaluate(history, objective, x, b=model.b, nll=model.result.nll, elapsed=elapsed)
    except EvaluationFailed as exc:
        history.failed, history.error = True, str(exc)
        log.warning("BO run aborted after %d evaluations: %s", len(history), exc)
    return history
