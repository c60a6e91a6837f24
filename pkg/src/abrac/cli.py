"""Command-line interface: generate tasks, train feature nets, run the
leave-one-task-out benchmark and aggregate its results.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema

from . import benchmarks, feature_net, harness, plots
from .acquisition import AcquisitionConfig
from .data import TaskDataset
from .feature_net import FeatureNet, FeatureNetConfig, TrainConfig
from .numerics import derive_seed
from .surrogate import SurrogateKind, TruncationPolicy

log = logging.getLogger("abrac")

METHOD_NAMES = [k.value for k in SurrogateKind] + [harness.RANDOM_SEARCH]
RAW_COLUMNS = ["method", "task_id", "seed", "iteration", "y", "best_so_far", "regret", "truncation_b", "wall_ms"]
AGG_COLUMNS = ["method", "iteration", "mean_regret", "std_regret", "mean_rank", "std_rank"]
MANIFEST = "manifest.json"

_POS_INT = {"type": "integer", "minimum": 1}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "benchmark": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["forrester", "quadratic", "tabular"]},
                "tasks": _POS_INT,
                "points_per_task": _POS_INT,
                "noise_std": {"type": "number", "minimum": 0},
                "tables": {"type": "array", "items": {"type": "string"}, "minItems": 2},
            },
        },
        "feature_training": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden_layers": {"type": "array", "items": _POS_INT, "minItems": 1},
                "output_dim": _POS_INT,
                "learning_rate": _POS_NUM,
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "batch_size": _POS_INT,
                "epochs": _POS_INT,
                "lr_halving_epochs": {"type": "integer", "minimum": 0},
                "nested_dropout": {"type": "boolean"},
            },
        },
        "bo": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n0": _POS_INT,
                "budget": _POS_INT,
                "repetitions": _POS_INT,
                "candidate_count": _POS_INT,
                "local_refinement": {"type": "boolean"},
                "refinement_steps": {"type": "integer", "minimum": 0},
                "truncation_rule": {"enum": ["marginal_likelihood", "linear_schedule"]},
                "truncation_slope": _POS_NUM,
                "truncation_grid": {"type": "array", "items": _POS_INT, "minItems": 1},
                "rks_lengthscale": _POS_NUM,
            },
        },
        "methods": {"type": "array", "items": {"enum": METHOD_NAMES}, "minItems": 1, "uniqueItems": True},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "svg"]}, "uniqueItems": True},
            },
        },
    },
}


class UsageError(Exception):
    """Bad arguments, configuration or input files (exit code 2)."""


def _fmt(v):
    return format(float(v), ".17g")


# ---------------------------------------------------------------- config


def load_config(path):
    """Parse and validate a JSON experiment config; returns a plain dict."""
    if path is None:
        cfg = {}
    else:
        try:
            cfg = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"config error at {where}: {exc.message}") from None
    bench = cfg.get("benchmark", {})
    if bench.get("family") == "tabular" and "tables" not in bench:
        raise UsageError("config error at benchmark.tables: required for the tabular family")
    bo = cfg.get("bo", {})
    if bo.get("n0", 3) > bo.get("budget", 20):
        raise UsageError("config error at bo.n0: must not exceed bo.budget")
    return cfg


def _seed(cfg, args):
    return args.seed if getattr(args, "seed", None) is not None else cfg.get("seed", 0)


def _out_dir(cfg, args):
    return Path(args.out or cfg.get("output", {}).get("directory", "out"))


def _family(cfg):
    return cfg.get("benchmark", {}).get("family", "forrester")


def net_config(cfg, input_dim):
    ft = cfg.get("feature_training", {})
    return FeatureNetConfig(input_dim, tuple(ft.get("hidden_layers", (50, 50))), ft.get("output_dim", 20))


def train_config(cfg, seed=0):
    ft = {k: v for k, v in cfg.get("feature_training", {}).items() if k not in ("hidden_layers", "output_dim")}
    return TrainConfig(**ft, seed=seed)


def harness_config(cfg, seed, methods=None, jobs=1, input_dim=1):
    bo = cfg.get("bo", {})
    policy_kw = {"rule": bo.get("truncation_rule", "marginal_likelihood"), "slope": bo.get("truncation_slope", 1.0)}
    if "truncation_grid" in bo:
        policy_kw["grid"] = tuple(bo["truncation_grid"])
    return harness.HarnessConfig(
        methods=tuple(methods or cfg.get("methods", harness.HarnessConfig.methods)),
        repetitions=bo.get("repetitions", 5),
        n0=bo.get("n0", 3),
        budget=bo.get("budget", 20),
        master_seed=seed,
        net=net_config(cfg, input_dim),
        train=train_config(cfg),
        policy=TruncationPolicy(**policy_kw),
        acquisition=AcquisitionConfig(bo.get("candidate_count", 1000), bo.get("local_refinement", True),
                                      bo.get("refinement_steps", 3)),
        rks_lengthscale=bo.get("rks_lengthscale", 1.0),
        noise_std=cfg.get("benchmark", {}).get("noise_std", 0.0),
        jobs=jobs,
    )


# ---------------------------------------------------------------- task files


def _prepare_dir(path):
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc.strerror}") from None


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


def _load_tables(cfg):
    try:
        return [benchmarks.TabularBenchmark.load_csv(p) for p in cfg["benchmark"]["tables"]]
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load tabular benchmark: {exc}") from None


def read_task_dir(tasks_dir):
    """Load the manifest and every task CSV it lists."""
    tasks_dir = Path(tasks_dir)
    if not (tasks_dir / MANIFEST).is_file():
        raise UsageError(f"tasks directory {tasks_dir} has no {MANIFEST}")
    try:
        manifest = json.loads((tasks_dir / MANIFEST).read_text(encoding="utf-8"))
        datasets = []
        for entry in manifest["tasks"]:
            (ds,) = benchmarks.read_tasks_csv(tasks_dir / entry["file"])
            if ds.task_id != entry["task_id"]:
                raise ValueError(f"{entry['file']}: task_id {ds.task_id!r} does not match the manifest")
            datasets.append(TaskDataset(ds.task_id, ds.X, ds.y, params=entry.get("params", {})))
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"invalid tasks directory {tasks_dir}: {exc!r}") from None
    return manifest, datasets


def benchmark_tasks(manifest, datasets):
    family = manifest["family"]
    if family == "tabular":
        tables = []
        for ds in datasets:
            try:
                tables.append(benchmarks.TabularBenchmark.load_csv(ds.params["table"]))
            except (OSError, ValueError, KeyError) as exc:
                raise UsageError(f"cannot load table for {ds.task_id}: {exc}") from None
        return harness.tabular_benchmark_tasks(tables, datasets)
    return harness.synthetic_tasks(family, datasets)


# ---------------------------------------------------------------- commands


def cmd_generate(args):
    cfg = load_config(args.config)
    seed = _seed(cfg, args)
    out = _out_dir(cfg, args)
    bench = cfg.get("benchmark", {})
    family = _family(cfg)
    if family == "tabular":
        tables = _load_tables(cfg)
        datasets = benchmarks.tabular_tasks(tables, bench.get("points_per_task", 1024), seed=seed)
    else:
        datasets = benchmarks.generate_tasks(family, bench.get("tasks"), bench.get("points_per_task"), seed=seed)
    _prepare_dir(out)
    entries = []
    for ds in datasets:
        name = f"{ds.task_id}.csv"
        try:
            benchmarks.write_tasks_csv(out / name, ds)
        except OSError as exc:
            raise UsageError(f"cannot write {out / name}: {exc.strerror}") from None
        params = {k: (v if isinstance(v, str) else float(v)) for k, v in ds.params.items()}
        entries.append({"task_id": ds.task_id, "file": name, "rows": ds.n, "params": params})
    manifest = {"family": family, "master_seed": seed, "tasks": entries}
    _write_text(out / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d task files to %s", len(entries), out)
    return 0


def _write_trace(path, trace):
    lines = ["epoch,mse"] + [f"{e + 1},{_fmt(v)}" for e, v in enumerate(trace)]
    _write_text(path, "\n".join(lines) + "\n")


def _train_one(cfg, datasets, space, seed, nested, model_path, trace_path):
    net_cfg = net_config(cfg, space.dim)
    train_cfg = TrainConfig(**{**train_config(cfg).__dict__, "nested_dropout": nested, "seed": seed})
    net = FeatureNet.initialize(net_cfg, seed=seed)
    try:
        result = feature_net.train_offline(net, datasets, train_cfg, bounds=(space.lower, space.upper))
    except feature_net.TrainingDiverged as exc:
        _write_trace(trace_path, exc.trace)
        log.error("%s; partial trace written to %s", exc, trace_path)
        return False
    _write_trace(trace_path, result.trace)
    try:
        model_path.write_bytes(feature_net.save(result.net))
    except OSError as exc:
        raise UsageError(f"cannot write {model_path}: {exc.strerror}") from None
    return True


def cmd_train(args):
    cfg = load_config(args.config)
    seed = _seed(cfg, args)
    out = _out_dir(cfg, args)
    manifest, datasets = read_task_dir(args.tasks)
    tasks = benchmark_tasks(manifest, datasets)
    space = tasks[0].space
    _prepare_dir(out)
    ok = True
    if args.loo:
        # same seeds as the in-process harness, so --model-dir runs reproduce it
        for i, task in enumerate(tasks):
            sub = out / task.task_id
            _prepare_dir(sub)
            others = [t.data for j, t in enumerate(tasks) if j != i]
            for variant, tag in (("nested", 1), ("plain", 2)):
                ok &= _train_one(cfg, others, task.space, derive_seed(seed, i, tag), variant == "nested",
                                 sub / f"{variant}.json", sub / f"{variant}_trace.csv")
        log.info("wrote leave-one-task-out models for %d tasks to %s", len(tasks), out)
    else:
        ids = [t.task_id for t in tasks]
        if args.exclude and args.exclude not in ids:
            raise UsageError(f"--exclude {args.exclude!r} is not a task in {args.tasks}")
        train = [t.data for t in tasks if t.task_id != args.exclude]
        nested = cfg.get("feature_training", {}).get("nested_dropout", True)
        ok = _train_one(cfg, train, space, seed, nested, out / "model.json", out / "trace.csv")
    return 0 if ok else 1


def _load_net(path):
    try:
        return feature_net.load(Path(path).read_bytes())
    except OSError as exc:
        raise UsageError(f"cannot read model {path}: {exc.strerror}") from None
    except feature_net.ModelFormatError as exc:
        raise UsageError(f"invalid model file {path}: {exc}") from None


def _net_provider(args, tasks):
    if args.model and args.model_dir:
        raise UsageError("--model and --model-dir are mutually exclusive")
    if args.model:
        net = _load_net(args.model)
        if net.input_dim != tasks[0].space.dim:
            raise UsageError(f"model input dimension {net.input_dim} does not match the tasks")
        return lambda i, variants: {v: net for v in variants}
    if args.model_dir:
        root = Path(args.model_dir)
        return lambda i, variants: {v: _load_net(root / tasks[i].task_id / f"{v}.json") for v in variants}
    return None


def write_raw_csv(path, rows, timing=False):
    lines = [",".join(RAW_COLUMNS)]
    for r in rows:
        lines.append(",".join([
            r.method, r.task_id, str(r.seed), str(r.iteration), _fmt(r.y), _fmt(r.best_so_far), _fmt(r.regret),
            "" if r.truncation_b is None else str(r.truncation_b),
            _fmt(r.wall_ms) if timing else "",
        ]))
    _write_text(path, "\n".join(lines) + "\n")


def cmd_run(args):
    cfg = load_config(args.config)
    seed = _seed(cfg, args)
    out = _out_dir(cfg, args)
    manifest, datasets = read_task_dir(args.tasks)
    tasks = benchmark_tasks(manifest, datasets)
    methods = None
    if args.methods:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        bad = [m for m in methods if m not in METHOD_NAMES]
        if bad or not methods:
            raise UsageError(f"--methods: unknown method(s) {bad}; expected a subset of {METHOD_NAMES}")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    hcfg = harness_config(cfg, seed, methods, args.jobs, tasks[0].space.dim)
    provider = _net_provider(args, tasks)
    _prepare_dir(out)
    try:
        rows, errors = harness.leave_one_task_out(tasks, hcfg, provider)
    except feature_net.TrainingDiverged as exc:
        log.error("feature training failed: %s", exc)
        return 1
    write_raw_csv(out / "results.csv", rows, timing=args.timing)
    _write_text(out / "errors.json", json.dumps(errors, indent=2, sort_keys=True) + "\n")
    for e in errors:
        log.error("cell %s/%s/seed %s failed: %s", e["method"], e["task_id"], e["seed"], e["error"])
    log.info("wrote %d rows to %s", len(rows), out / "results.csv")
    return 1 if errors else 0


def read_raw_csv(path):
    """Parse a raw results file into ResultRow records (schema-checked)."""
    rows = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != RAW_COLUMNS:
                raise UsageError(f"{path}: expected columns {','.join(RAW_COLUMNS)}, got {header}")
            for lineno, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) != len(RAW_COLUMNS):
                    raise UsageError(f"{path}:{lineno}: expected {len(RAW_COLUMNS)} fields, got {len(rec)}")
                try:
                    m, tid, s, it, y, best, reg, b, ms = rec
                    row = harness.ResultRow(m, tid, int(s), int(it), float(y), float(best), float(reg),
                                            int(b) if b else None, float(ms) if ms else math.nan)
                except ValueError as exc:
                    raise UsageError(f"{path}:{lineno}: {exc}") from None
                if row.regret < 0:
                    raise UsageError(f"{path}:{lineno}: negative regret")
                rows.append(row)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise UsageError(f"{path}: no result rows")
    return rows


def cmd_aggregate(args):
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else Path(args.raw).parent
    rows = read_raw_csv(args.raw)
    try:
        agg = harness.aggregate(rows)
    except ValueError as exc:
        raise UsageError(f"{args.raw}: {exc}") from None
    _prepare_dir(out)
    lines = [",".join(AGG_COLUMNS)] + [
        ",".join([a.method, str(a.iteration), _fmt(a.mean_regret), _fmt(a.std_regret), _fmt(a.mean_rank),
                  _fmt(a.std_rank)])
        for a in agg
    ]
    _write_text(out / "aggregate.csv", "\n".join(lines) + "\n")
    if "svg" in cfg.get("output", {}).get("formats", ["csv", "svg"]):
        for field, name, label in (("regret", "regret.svg", "simple regret"), ("rank", "rank.svg", "average rank")):
            series = {}
            for a in agg:
                xs, ms, ss = series.setdefault(a.method, ([], [], []))
                xs.append(a.iteration)
                ms.append(getattr(a, f"mean_{field}"))
                ss.append(getattr(a, f"std_{field}"))
            _write_text(out / name, plots.line_chart(series, label, label))
    log.info("wrote aggregate results to %s", out)
    return 0


# ---------------------------------------------------------------- entry point


def build_parser():
    p = argparse.ArgumentParser(prog="abrac", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--out", help="output directory (overrides output.directory)")
        if seed:
            sp.add_argument("--seed", type=int, help="master seed (overrides config)")

    g = sub.add_parser("generate", help="sample benchmark tasks and write task CSVs")
    common(g)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train feature nets offline")
    common(t)
    t.add_argument("--tasks", required=True, help="directory written by 'generate'")
    t.add_argument("--exclude", help="task_id to hold out")
    t.add_argument("--loo", action="store_true",
                   help="train nested and plain nets for every held-out task (for 'run --model-dir')")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("run", help="leave-one-task-out benchmark")
    common(r)
    r.add_argument("--tasks", required=True, help="directory written by 'generate'")
    r.add_argument("--model", help="one model file used for every held-out task")
    r.add_argument("--model-dir", help="directory written by 'train --loo'")
    r.add_argument("--methods", help="comma-separated subset of " + ",".join(METHOD_NAMES))
    r.add_argument("--jobs", type=int, default=1, help="worker threads (output does not depend on it)")
    r.add_argument("--timing", action="store_true", help="record wall_ms (makes output run-dependent)")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("aggregate", help="regret/rank table and SVG plots from a raw results CSV")
    common(a, seed=False)
    a.add_argument("raw", help="results.csv written by 'run'")
    a.set_defaults(func=cmd_aggregate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report, don't dump a traceback
        log.debug("unhandled error", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
