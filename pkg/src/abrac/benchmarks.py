"""Synthetic task families, tabular lookup objectives and task files."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .data import ConfigSpace, TaskDataset
from .numerics import RngStream

FORRESTER_SPACE = ConfigSpace(np.zeros(1), np.ones(1))
QUADRATIC_DIM = 5
QUADRATIC_SPACE = ConfigSpace(np.full(QUADRATIC_DIM, -10.0), np.full(QUADRATIC_DIM, 10.0))


@dataclass(frozen=True)
class ForresterParams:
    a: float
    b: float
    c: float


@dataclass(frozen=True)
class QuadraticParams:
    a: float
    b: float
    c: float

    def __post_init__(self):
        for v in (self.a, self.b, self.c):
            if not 0.1 <= v <= 1.0:
                raise ValueError("quadratic coefficients must lie in [0.1, 1]")


def forrester_eval(p, x):
    x = float(np.asarray(x, dtype=float).ravel()[0]) if np.ndim(x) else float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    return (p.a * x - 2.0) ** 2 * math.sin(p.b * x - 4.0) + p.c


def forrester_grid(p, x):
    x = np.asarray(x, dtype=float)
    return (p.a * x - 2.0) ** 2 * np.sin(p.b * x - 4.0) + p.c


def quadratic_eval(p, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (QUADRATIC_DIM,):
        raise ValueError(f"expected a length-{QUADRATIC_DIM} vector")
    if np.any(np.abs(x) > 10.0):
        raise ValueError("x outside [-10, 10]^5")
    return float(p.a * (x @ x) + p.b * np.sum(x) + p.c)


def quadratic_min(p):
    """Closed-form minimizer ``-(b / 2a) 1`` and minimum ``c - D b^2 / 4a``."""
    x_star = np.full(QUADRATIC_DIM, -p.b / (2.0 * p.a))
    return x_star, p.c - QUADRATIC_DIM * p.b ** 2 / (4.0 * p.a)


def forrester_min(p, grid_size=100_001):
    """Global minimum on [0, 1]: dense grid, then golden-section polish of
    the best grid cell."""
    xs = np.linspace(0.0, 1.0, grid_size)
    fs = forrester_grid(p, xs)
    i = int(np.argmin(fs))
    a, b = xs[max(i - 1, 0)], xs[min(i + 1, grid_size - 1)]
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - inv * (b - a), a + inv * (b - a)
    while b - a > 1e-12:
        if forrester_grid(p, c) < forrester_grid(p, d):
            b, d = d, c
            c = b - inv * (b - a)
        else:
            a, c = c, d
            d = a + inv * (b - a)
    x = 0.5 * (a + b)
    candidates = [(float(forrester_grid(p, x)), x), (float(fs[i]), float(xs[i]))]
    f, x = min(candidates)
    return x, f


class TabularBenchmark:
    """Objective defined by a lookup table of evaluated configurations."""

    def __init__(self, X, y, columns=None, name="tabular"):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.y = np.asarray(y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size:
            raise ValueError("row count mismatch")
        self.columns = columns or [f"x_{i + 1}" for i in range(self.X.shape[1])]
        self.name = name
        self._index = {}
        for i, row in enumerate(self.X):
            key = self.key(row)
            if key in self._index:
                raise ValueError(f"duplicate configuration row {i}: {key}")
            self._index[key] = i

    @staticmethod
    def key(row):
        return tuple(format(float(v), ".17g") for v in row)

    @property
    def dim(self):
        return self.X.shape[1]

    def space(self):
        lo = self.X.min(axis=0)
        hi = self.X.max(axis=0)
        pad = np.where(hi > lo, 0.0, 0.5)
        return ConfigSpace(lo - pad, hi + pad, choices=self.X)

    def lookup(self, x):
        try:
            return float(self.y[self._index[self.key(np.asarray(x, dtype=float).ravel())]])
        except KeyError:
            raise KeyError(f"configuration {list(np.ravel(x))} not in table") from None

    def global_min(self):
        return float(self.y.min())

    @classmethod
    def load_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            if header[-1] != "y" or any(h != f"x_{i + 1}" for i, h in enumerate(header[:-1])):
                raise ValueError(f"{path}: expected header x_1..x_D,y, got {header}")
            rows = [[float(v) for v in r] for r in reader if r]
        arr = np.array(rows, dtype=float)
        return cls(arr[:, :-1], arr[:, -1], header[:-1], name=str(path))

    def save_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*self.columns, "y"])
            for row, v in zip(self.X, self.y):
                w.writerow([format(float(c), ".17g") for c in row] + [format(float(v), ".17g")])


@dataclass(frozen=True)
class Family:
    name: str
    space: ConfigSpace
    default_tasks: int
    default_points: int

    def sample_params(self, rng):
        if self.name == "forrester":
            return ForresterParams(rng.normal(6.0, 1.0), rng.normal(12.0, 4.0), rng.uniform(0.0, 10.0))
        return QuadraticParams(rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0))

    def evaluate(self, params, x):
        if self.name == "forrester":
            return forrester_eval(params, x)
        return quadratic_eval(params, x)

    def params_from_dict(self, d):
        cls = ForresterParams if self.name == "forrester" else QuadraticParams
        return cls(float(d["a"]), float(d["b"]), float(d["c"]))


FAMILIES = {
    "forrester": Family("forrester", FORRESTER_SPACE, 10, 20),
    "quadratic": Family("quadratic", QUADRATIC_SPACE, 30, 100),
}


def get_family(name):
    try:
        return FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown benchmark family {name!r}; expected one of {sorted(FAMILIES)}") from None


def generate_tasks(family, count=None, points_per_task=None, seed=0):
    """Sample task coefficients and uniformly distributed evaluations."""
    family = get_family(family) if isinstance(family, str) else family
    count = family.default_tasks if count is None else count
    points_per_task = family.default_points if points_per_task is None else points_per_task
    if count < 1 or points_per_task < 1:
        raise ValueError("count and points_per_task must be >= 1")
    rng = RngStream(seed)
    tasks = []
    for t in range(count):
        p = family.sample_params(rng)
        X = np.array([family.space.sample(rng) for _ in range(points_per_task)])
        y = np.array([family.evaluate(p, x) for x in X])
        tasks.append(TaskDataset(f"{family.name}_{t:03d}", X, y, params={"a": p.a, "b": p.b, "c": p.c}))
    return tasks


def tabular_tasks(tables, points_per_task=1024, seed=0):
    """Offline datasets: random distinct rows from each table."""
    rng = RngStream(seed)
    tasks = []
    for t, table in enumerate(tables):
        k = min(points_per_task, len(table.y))
        idx = np.sort(rng.generator.choice(len(table.y), k, replace=False))
        tasks.append(TaskDataset(f"tabular_{t:03d}", table.X[idx], table.y[idx], params={"table": table.name}))
    return tasks


def global_min(problem):
    """Global minimum of a ForresterParams, QuadraticParams or TabularBenchmark."""
    if isinstance(problem, ForresterParams):
        return forrester_min(problem)[1]
    if isinstance(problem, QuadraticParams):
        return quadratic_min(problem)[1]
    if isinstance(problem, TabularBenchmark):
        return problem.global_min()
    raise ValueError(f"no global-minimum oracle for {type(problem).__name__}")


def write_tasks_csv(path, task):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_id", *[f"x_{i + 1}" for i in range(task.dim)], "y"])
        for x, y in zip(task.X, task.y):
            w.writerow([task.task_id, *[format(float(v), ".17g") for v in x], format(float(y), ".17g")])


def read_tasks_csv(path):
    """Read a task file; returns one TaskDataset per distinct task_id."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        dim = len(header) - 2
        if header[0] != "task_id" or header[-1] != "y" or dim < 1 or any(
            h != f"x_{i + 1}" for i, h in enumerate(header[1:-1])
        ):
            raise ValueError(f"{path}: expected header task_id,x_1..x_D,y, got {header}")
        groups = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            groups.setdefault(row[0], []).append([float(v) for v in row[1:]])
    out = []
    for tid, rows in groups.items():
        arr = np.array(rows)
        out.append(TaskDataset(tid, arr[:, :-1], arr[:, -1]))
    return out
