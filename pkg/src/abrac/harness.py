"""Leave-one-task-out experiment harness and regret/rank aggregation."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import bo_engine
from .acquisition import AcquisitionConfig
from .ard_blr import FitBounds
from .benchmarks import get_family, global_min
from .bo_engine import BoConfig, Objective
from .feature_net import FeatureNet, FeatureNetConfig, TrainConfig, train_offline
from .numerics import derive_seed
from .surrogate import RksFeatures, SurrogateKind, TruncationPolicy

log = logging.getLogger(__name__)

RANDOM_SEARCH = "random_search"
NET_METHODS = {
    SurrogateKind.ABRAC: "nested",
    SurrogateKind.ABRAC_FIXED: "nested",
    SurrogateKind.ABLR_SGD_FIXED: "plain",
}


@dataclass
class BenchmarkTask:
    """A task to optimize: offline data, the black box and its minimum."""

    task_id: str
    data: object
    fn: object
    space: object
    f_min: float


def synthetic_tasks(family, datasets):
    family = get_family(family) if isinstance(family, str) else family
    out = []
    for ds in datasets:
        p = family.params_from_dict(ds.params)
        out.append(BenchmarkTask(ds.task_id, ds, lambda x, p=p: family.evaluate(p, x), family.space, global_min(p)))
    return out


def tabular_benchmark_tasks(tables, datasets):
    return [
        BenchmarkTask(ds.task_id, ds, table.lookup, table.space(), table.global_min())
        for table, ds in zip(tables, datasets)
    ]


@dataclass(frozen=True)
class HarnessConfig:
    methods: tuple = ("ABRAC", "ABRAC_FIXED", "ABLR_SGD_FIXED", "ABLR_RKS", RANDOM_SEARCH)
    repetitions: int = 5
    n0: int = 3
    budget: int = 20
    master_seed: int = 0
    net: FeatureNetConfig | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    policy: TruncationPolicy = field(default_factory=TruncationPolicy)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    bounds: FitBounds = field(default_factory=FitBounds)
    rks_lengthscale: float = 1.0
    noise_std: float = 0.0
    jobs: int = 1


@dataclass(frozen=True)
class ResultRow:
    method: str
    task_id: str
    seed: int
    iteration: int
    y: float
    best_so_far: float
    regret: float
    truncation_b: int | None
    wall_ms: float
    x: tuple = ()


def method_key(name):
    return RANDOM_SEARCH if name.lower() == RANDOM_SEARCH else SurrogateKind.parse(name).value


def train_task_nets(tasks, held_out, cfg, variants):
    """Feature nets trained on every task except ``tasks[held_out]``."""
    others = [t.data for i, t in enumerate(tasks) if i != held_out]
    space = tasks[held_out].space
    net_cfg = cfg.net or FeatureNetConfig(space.dim)
    nets = {}
    for v in sorted(variants):
        nested = v == "nested"
        seed = derive_seed(cfg.master_seed, held_out, 1 if nested else 2)
        train_cfg = TrainConfig(**{**cfg.train.__dict__, "nested_dropout": nested, "seed": seed})
        net = FeatureNet.initialize(net_cfg, seed=seed)
        nets[v] = train_offline(net, others, train_cfg, bounds=(space.lower, space.upper)).net
    return nets


def regret(best, f_min, tol=1e-9):
    r = best - f_min
    if r < -tol * max(1.0, abs(f_min)):
        raise AssertionError(f"negative regret {r}: global minimum oracle is not a lower bound")
    return max(r, 0.0)


def _run_cell(task, task_index, method, rep, cfg, nets):
    seed = derive_seed(cfg.master_seed, task_index, rep)
    objective = Objective(task.fn, cfg.noise_std, seed=derive_seed(seed, 7))
    if method == RANDOM_SEARCH:
        hist = bo_engine.run_random_search(objective, task.space, cfg.budget, seed)
    else:
        kind = SurrogateKind.parse(method)
        if kind is SurrogateKind.ABLR_RKS:
            d = (cfg.net.output_dim if cfg.net else 20)
            features = RksFeatures(task.space.dim, d, cfg.rks_lengthscale, derive_seed(seed, 99),
                                   task.space.lower, task.space.upper)
        else:
            features = nets[NET_METHODS[kind]]
        bo_cfg = BoConfig(cfg.n0, cfg.budget, seed, kind, cfg.policy, cfg.acquisition, cfg.bounds)
        hist = bo_engine.run(objective, task.space, bo_cfg, features)
    rows = [
        ResultRow(method, task.task_id, rep, r.iteration, r.y, r.best_so_far, regret(r.best_so_far, task.f_min),
                  r.truncation_b, r.wall_ms, tuple(float(v) for v in r.x))
        for r in hist.records
    ]
    error = None
    if hist.failed:
        error = hist.error
    elif objective.n_evals != cfg.budget:
        error = f"budget violated: {objective.n_evals} evaluations for budget {cfg.budget}"
    return rows, error


def leave_one_task_out(tasks, cfg, net_provider=None):
    """Run every method on every held-out task for ``cfg.repetitions`` seeds.

    ``net_provider(task_index, variants)`` may supply pretrained nets; by
    default they are trained on the remaining tasks. Returns ``(rows,
    errors)`` with rows ordered by (method, task, seed, iteration).
    """
    if len(tasks) < 2:
        raise ValueError("leave-one-task-out needs at least two tasks")
    methods = [method_key(m) for m in cfg.methods]
    variants = {NET_METHODS[SurrogateKind.parse(m)] for m in methods
                if m != RANDOM_SEARCH and SurrogateKind.parse(m) in NET_METHODS}
    provider = net_provider or (lambda i, v: train_task_nets(tasks, i, cfg, v))

    def nets_for(i):
        return provider(i, variants) if variants else {}

    cells = [(m, i, rep) for m in methods for i in range(len(tasks)) for rep in range(cfg.repetitions)]
    with ThreadPoolExecutor(max_workers=max(1, cfg.jobs)) as pool:
        nets = list(pool.map(nets_for, range(len(tasks))))
        futures = [pool.submit(_run_cell, tasks[i], i, m, rep, cfg, nets[i]) for m, i, rep in cells]
        results = [f.result() for f in futures]
    rows, errors = [], []
    for (m, i, rep), (cell_rows, err) in zip(cells, results):
        rows.extend(cell_rows)
        if err:
            errors.append({"method": m, "task_id": tasks[i].task_id, "seed": rep, "error": err})
    return rows, errors


@dataclass(frozen=True)
class AggregateRow:
    method: str
    iteration: int
    mean_regret: float
    std_regret: float
    mean_rank: float
    std_rank: float


def _std(v):
    return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0


def rank_table(rows):
    """Average-tie rank of each method's best-so-far within every
    (task, seed, iteration) cell; returns ``{(method, task, seed, it): rank}``."""
    cells = {}
    for r in rows:
        cells.setdefault((r.task_id, r.seed, r.iteration), []).append(r)
    ranks = {}
    for (task, seed, it), group in cells.items():
        rk = rankdata([g.best_so_far for g in group], method="average")
        for g, v in zip(group, rk):
            ranks[(g.method, task, seed, it)] = float(v)
    return ranks


def aggregate(rows):
    """Mean/std of simple regret and rank per (method, iteration)."""
    if not rows:
        raise ValueError("no results to aggregate")
    methods = list(dict.fromkeys(r.method for r in rows))
    grids = {}
    for r in rows:
        grids.setdefault((r.method, r.task_id, r.seed), set()).add(r.iteration)
    reference = next(iter(grids.values()))
    if any(g != reference for g in grids.values()):
        raise ValueError("runs have mismatched iteration grids")
    runs = {(t, s) for (_, t, s) in grids}
    if any((m, t, s) not in grids for m in methods for (t, s) in runs):
        raise ValueError("not every method was run on every (task, seed) pair")
    ranks = rank_table(rows)
    by = {}
    for r in rows:
        if r.regret < 0:
            raise ValueError(f"negative regret in {r}")
        by.setdefault((r.method, r.iteration), ([], []))
        by[(r.method, r.iteration)][0].append(r.regret)
        by[(r.method, r.iteration)][1].append(ranks[(r.method, r.task_id, r.seed, r.iteration)])
    out = []
    for m in methods:
        for it in sorted(reference):
            reg, rk = by[(m, it)]
            out.append(AggregateRow(m, it, float(np.mean(reg)), _std(reg), float(np.mean(rk)), _std(rk)))
    return out


def paired_difference(rows, method_a, method_b, iteration):
    """Mean and standard error of regret(a) - regret(b) over shared
    (task, seed) pairs at ``iteration``."""
    a = {(r.task_id, r.seed): r.regret for r in rows if r.method == method_a and r.iteration == iteration}
    b = {(r.task_id, r.seed): r.regret for r in rows if r.method == method_b and r.iteration == iteration}
    keys = sorted(set(a) & set(b))
    diff = np.array([a[k] - b[k] for k in keys])
    return float(diff.mean()), _std(diff) / np.sqrt(len(diff))
