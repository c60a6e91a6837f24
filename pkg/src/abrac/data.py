"""Task datasets and configuration spaces shared across modules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ConfigSpace:
    """Box-bounded configuration space, optionally restricted to a finite set
    of rows (tabular benchmarks)."""

    lower: np.ndarray
    upper: np.ndarray
    choices: np.ndarray | None = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D of equal length")
        if not np.all(lo < hi):
            raise ValueError("every lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if self.choices is not None:
            c = np.atleast_2d(np.asarray(self.choices, dtype=float))
            if c.shape[1] != lo.size:
                raise ValueError("choices have wrong dimension")
            object.__setattr__(self, "choices", c)

    @classmethod
    def box(cls, lower, upper, dim=None):
        if dim is not None:
            return cls(np.full(dim, float(lower)), np.full(dim, float(upper)))
        return cls(lower, upper)

    @property
    def dim(self):
        return self.lower.size

    def contains(self, x, atol=0.0):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def sample(self, rng):
        """One random point: uniform in the box, or a uniformly chosen row."""
        if self.choices is not None:
            return self.choices[rng.uniform_int(0, len(self.choices) - 1)].copy()
        return np.array([rng.uniform(lo, hi) for lo, hi in zip(self.lower, self.upper)])


@dataclass
class TaskDataset:
    task_id: str
    X: np.ndarray
    y: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size:
            raise ValueError(f"task {self.task_id}: {self.X.shape[0]} inputs but {self.y.size} targets")

    @property
    def n(self):
        return self.y.size

    @property
    def dim(self):
        return self.X.shape[1]
