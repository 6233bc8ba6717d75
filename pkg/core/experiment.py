"""
Grid experiments: every (algorithm, schedule, batch size) cell is run to
its stopping rule against one shared problem instance and starting point,
then folded into summary.csv plus a JSON reproducibility manifest.
"""
import copy
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import List, Optional

import numpy as np
import pandas as pd
import yaml

from apps.ratings import load_ratings, ratings_to_problem, split_dataset
from apps.synthetic import SyntheticSpec, generate
from .errors import ConfigError, RsvrgError
from .manifold import GrassmannPoint, distance, random_point
from .optim import VARIANTS, CheckpointRecorder, OptimizerConfig, run
from .schedule import KINDS, Schedule
from .trace_aggregator import combine_traces, read_trace, trace_records, write_trace
from .utils import child_seed, make_rng
from . import verify as V

log = logging.getLogger(__name__)

DEFAULT_WORKERS = int(os.getenv("RSVRG_WORKERS", "1"))
DEFAULT_OUT_DIR = os.getenv("RSVRG_OUT_DIR", "artifacts")
MANIFEST = "manifest.json"
ACCOUNTING = {
    "rsvrg": "N + 2*batch_size*m_s per epoch (no per-sample gradient storage)",
    "rsvrg_plus": "first epoch batch_size*m_s, then as rsvrg",
    "rsgd": "batch_size*m_s per epoch; metric full gradients excluded",
    "rsd": "N per iteration plus N/2 per backtracking trial (one full cost = N/2 gradients)",
}


@dataclass
class ExperimentConfig:
    problem: dict
    algorithms: List[str]
    schedule_kinds: List[str] = field(default_factory=lambda: ["fixed"])
    eta0: List[float] = field(default_factory=list)
    lambdas: List[float] = field(default_factory=list)
    s_threshold: int = 5
    batch_sizes: List[int] = field(default_factory=lambda: [10])
    optimizer: dict = field(default_factory=dict)
    out_dir: str = DEFAULT_OUT_DIR
    seed: int = 0
    workers: int = DEFAULT_WORKERS
    deterministic_output: bool = True
    checkpoint_stride: int = 0
    checkpoint_limit: Optional[int] = None
    raw: dict = field(default_factory=dict, repr=False)
    base_dir: str = "."


@dataclass
class Cell:
    index: int
    algorithm: str
    schedule: Optional[Schedule]
    batch_size: int
    tag_batch: bool = False

    @property
    def schedule_label(self):
        return self.schedule.label if self.schedule is not None else "armijo"

    @property
    def name(self):
        name = f"{self.algorithm}_{self.schedule_label}"
        if self.tag_batch:
            name += f"-b{self.batch_size}"
        return name


def _as_list(v):
    if v is None:
        return []
    return list(v) if isinstance(v, (list, tuple)) else [v]


def config_from_dict(cfg, base_dir="."):
    if not isinstance(cfg, dict):
        raise ConfigError("experiment file must be a mapping")
    g = cfg.get("global", {}) or {}
    sched = cfg.get("schedules", {}) or {}
    opt = dict(cfg.get("optimizer", {}) or {})
    batch_sizes = [int(b) for b in _as_list(opt.pop("batch_size", 10))]
    out = ExperimentConfig(
        problem=dict(cfg.get("problem", {}) or {}),
        algorithms=[str(a) for a in _as_list(cfg.get("algorithms"))],
        schedule_kinds=[str(k) for k in _as_list(sched.get("kinds", ["fixed"]))],
        eta0=[float(x) for x in _as_list(sched.get("eta0"))],
        lambdas=[float(x) for x in _as_list(sched.get("lambda"))],
        s_threshold=int(sched.get("s_threshold", 5)),
        batch_sizes=batch_sizes,
        optimizer=opt,
        out_dir=str(g.get("out_dir", DEFAULT_OUT_DIR)),
        seed=int(g.get("seed", 0)),
        workers=int(g.get("workers", DEFAULT_WORKERS)),
        deterministic_output=bool(g.get("deterministic_output", True)),
        checkpoint_stride=int(g.get("checkpoint_stride", 0)),
        checkpoint_limit=g.get("checkpoint_limit"),
        raw=copy.deepcopy(cfg),
        base_dir=base_dir,
    )
    validate_config(out)
    return out


def load_config(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r") as f:
        try:
            cfg = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
    return config_from_dict(cfg, base_dir=os.path.dirname(os.path.abspath(path)))


def _dataset_path(config):
    path = config.problem.get("path")
    if path is None:
        return None
    if os.path.exists(path):
        return path
    return os.path.join(config.base_dir, path)


def validate_config(config):
    kind = config.problem.get("kind")
    if kind not in ("pca", "karcher", "mc", "ratings"):
        raise ConfigError(f"problem.kind must be pca, karcher, mc or ratings, got {kind!r}")
    if not config.algorithms:
        raise ConfigError("no algorithms listed")
    for a in config.algorithms:
        if a not in VARIANTS:
            raise ConfigError(f"unknown algorithm {a!r} (expected one of {VARIANTS})")
    if any(a != "rsd" for a in config.algorithms):
        if not config.eta0 or not config.schedule_kinds:
            raise ConfigError("schedule grid is empty (need eta0 values and kinds)")
        for k in config.schedule_kinds:
            if k not in KINDS:
                raise ConfigError(f"unknown schedule kind {k!r}")
            if k != "fixed" and not config.lambdas:
                raise ConfigError(f"schedule kind {k!r} needs at least one lambda")
    known = {f.name for f in fields(OptimizerConfig)} - {"variant", "batch_size", "seed"}
    unknown = sorted(set(config.optimizer) - known)
    if unknown:
        raise ConfigError(f"unknown optimizer keys: {unknown}")
    OptimizerConfig(variant=config.algorithms[0], **config.optimizer)
    if not config.batch_sizes:
        raise ConfigError("no batch sizes given")
    if config.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {config.workers}")
    if kind == "ratings":
        path = _dataset_path(config)
        if path is None or not os.path.exists(path):
            raise ConfigError(f"dataset path does not exist: {config.problem.get('path')!r}")


def expand_grid(config):
    schedules = []
    for kind in config.schedule_kinds:
        for eta0 in config.eta0:
            lams = [0.0] if kind == "fixed" else config.lambdas
            for lam in lams:
                schedules.append(Schedule(kind, eta0, lam, config.s_threshold))
    tag_batch = len(config.batch_sizes) > 1
    cells = []
    for algo in config.algorithms:
        if algo == "rsd":
            cells.append(Cell(len(cells), algo, None, config.batch_sizes[0]))
            continue
        for bs in config.batch_sizes:
            for sch in schedules:
                cells.append(Cell(len(cells), algo, sch, bs, tag_batch))
    if not cells:
        raise ConfigError("experiment grid is empty")
    return cells


def build_problem(problem_cfg, seed):
    p = dict(problem_cfg)
    kind = p.pop("kind")
    if kind == "ratings":
        ds = load_ratings(p["path"], format=p.get("format", "movielens"))
        if p.get("format") != "triplets":
            ds = split_dataset(ds, per_user_holdout=int(p.get("holdout", 2)), seed=seed)
        return ratings_to_problem(ds, r=int(p.get("r", 5)), ridge=float(p.get("ridge", 1e-8)))
    p.pop("path", None)
    try:
        spec = SyntheticSpec(kind=kind, seed=seed, **p)
    except TypeError as e:
        raise ConfigError(f"bad problem section: {e}") from e
    return generate(spec)


def _resolved_problem_cfg(config):
    p = dict(config.problem)
    if p.get("kind") == "ratings":
        p["path"] = _dataset_path(config)
    return p


def input_hash(config):
    h = hashlib.sha256()
    h.update(json.dumps(config.raw, sort_keys=True, default=str).encode())
    path = _dataset_path(config)
    if path is not None and os.path.isfile(path):
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def _run_cell(cell, problem, u0, config, seed, out_dir):
    opt = OptimizerConfig(variant=cell.algorithm, batch_size=cell.batch_size,
                          seed=child_seed(seed, 2), **config.optimizer)
    recorder = None
    if config.checkpoint_stride > 0 and cell.algorithm in ("rsvrg", "rsvrg_plus"):
        recorder = CheckpointRecorder(config.checkpoint_stride, config.checkpoint_limit)
    entry = {"name": cell.name, "algorithm": cell.algorithm, "schedule": cell.schedule_label,
             "batch_size": cell.batch_size, "status": "ok", "error": None,
             "eta0": cell.schedule.eta0 if cell.schedule is not None else None,
             "m_s": opt.inner_length(problem.n_samples),
             "trace_file": None, "checkpoint_file": None}
    t0 = time.perf_counter()
    try:
        _, trace = run(problem, opt, cell.schedule, u0, recorder=recorder)
    except RsvrgError as e:
        log.warning("[Experiment] cell %s failed: %s", cell.name, e)
        entry.update(status="failed", error=f"{type(e).__name__}: {e}")
        entry["wall_time_s"] = time.perf_counter() - t0
        return entry
    trace_file = f"trace_{cell.name}.csv"
    write_trace(trace, os.path.join(out_dir, trace_file), deterministic=config.deterministic_output)
    entry.update(trace_file=trace_file, epochs=trace[-1].epoch,
                 wall_time_s=time.perf_counter() - t0)
    if recorder is not None and recorder.items:
        cp_file = f"checkpoints_{cell.name}.npz"
        recorder.save(os.path.join(out_dir, cp_file))
        entry["checkpoint_file"] = cp_file
    log.info("[Experiment] %s done: %d epochs, final loss %.6e",
             cell.name, trace[-1].epoch, trace[-1].train_loss)
    return entry


def run_experiment(config, out_dir=None, workers=None, seed=None):
    """Run the whole grid; returns (artifact_dir, summary DataFrame, manifest dict)."""
    out_dir = out_dir or config.out_dir
    workers = workers or config.workers
    seed = config.seed if seed is None else int(seed)
    os.makedirs(out_dir, exist_ok=True)

    cells = expand_grid(config)
    problem = build_problem(_resolved_problem_cfg(config), seed)
    d, r = problem.dim
    u0 = random_point(d, r, make_rng(child_seed(seed, 1)))
    problem.optimum()
    log.info("[Experiment] %s problem N=%d d=%d r=%d, %d cells on %d workers",
             problem.kind, problem.n_samples, d, r, len(cells), workers)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_cell, c, problem, u0, config, seed, out_dir) for c in cells]
        entries = [f.result() for f in futures]

    if config.deterministic_output:
        for e in entries:
            e.pop("wall_time_s", None)
    summary = combine_traces(out_dir, entries)
    manifest = {
        "config": config.raw,
        "seed": seed,
        "workers": workers,
        "input_hash": input_hash(config),
        "problem": {"kind": problem.kind, "n_samples": problem.n_samples, "d": d, "r": r},
        "accounting": ACCOUNTING,
        "cells": entries,
        "u0_file": "u0.npy",
        "dataset_path": _dataset_path(config) and os.path.abspath(_dataset_path(config)),
    }
    np.save(os.path.join(out_dir, "u0.npy"), u0.mat)
    if not config.deterministic_output:
        manifest["generated_at"] = time.ctime()
    path = os.path.join(out_dir, MANIFEST)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
    failed = sum(e["status"] != "ok" for e in entries)
    log.info("[Experiment] manifest saved: %s (%d/%d cells failed)", path, failed, len(entries))
    return out_dir, summary, manifest


def load_manifest(artifact_dir):
    path = os.path.join(artifact_dir, MANIFEST)
    if not os.path.exists(path):
        raise ConfigError(f"no {MANIFEST} in {artifact_dir}")
    with open(path, "r") as f:
        return json.load(f)


def _variance_shrink(by_epoch):
    """Var[xi] in the last recorded epoch over the second one; None with fewer than two epochs."""
    epochs = sorted(by_epoch)
    if len(epochs) < 2 or by_epoch[epochs[1]] <= 0:
        return None
    return by_epoch[epochs[-1]] / by_epoch[epochs[1]]


def _theory(eta0, m_s, beta_hat, sigma):
    return {"sigma": sigma, "eta0": eta0, "m_s": m_s,
            "contraction": V.theoretical_contraction(eta0, m_s, beta_hat, sigma),
            "suggested_eta": V.suggested_eta(beta_hat, sigma)}


def verify_artifacts(artifact_dir, n_pairs=200, tail=20, unbiased_tol=1e-10, sigma=None):
    """
    Re-derive the problem from the manifest and run the monitors on the
    best-tuned cells: gradient-norm trend, tail linear rate, and on recorded
    checkpoints the unbiasedness identity plus (Karcher problems) the
    variance bound with an empirical beta. With `sigma`, fixed-step cells
    also get the theoretical per-epoch contraction. Writes verify_report.json.
    """
    manifest = load_manifest(artifact_dir)
    raw = copy.deepcopy(manifest["config"])
    if manifest.get("dataset_path"):
        raw["problem"]["path"] = manifest["dataset_path"]
    config = config_from_dict(raw, base_dir=artifact_dir)
    seed = int(manifest["seed"])
    problem = build_problem(_resolved_problem_cfg(config), seed)
    summary = pd.read_csv(os.path.join(artifact_dir, "summary.csv"))
    cells = {c["name"]: c for c in manifest["cells"]}
    n = problem.n_samples
    opt = problem.optimum()
    grad_tol = config.optimizer.get("grad_tol", 1e-8)

    report = {"cells": [], "passed": True}
    for row in summary[summary["best_tuned"]].itertuples(index=False):
        entry = cells.get(row.cell, {})
        records = trace_records(read_trace(os.path.join(artifact_dir, row.trace_file)), n)
        trend = V.gradient_norm_trend(records, tol=grad_tol)
        item = {"cell": row.cell, "algorithm": row.algorithm, "grad_norm_trend": trend._asdict()}
        # plain stochastic gradient is expected to plateau
        if row.algorithm != "rsgd":
            report["passed"] &= bool(trend.passed)
        if opt is not None and row.algorithm in ("rsvrg", "rsvrg_plus"):
            try:
                item["tail_rate"] = V.fit_linear_rate(records, tail=tail)._asdict()
            except RsvrgError as e:
                item["tail_rate"] = {"error": str(e)}

        beta = None
        cp_file = entry.get("checkpoint_file")
        if cp_file:
            checkpoints = CheckpointRecorder.load(os.path.join(artifact_dir, cp_file))
            worst = float(V.check_unbiasedness(problem, checkpoints))
            item["unbiasedness"] = {"max_rel_error": worst, "passed": bool(worst <= unbiased_tol)}
            report["passed"] &= bool(worst <= unbiased_tol)
            if problem.kind == "karcher":
                w_star = opt.point
                radius = max(distance(GrassmannPoint(c.u_cur), w_star) for c in checkpoints)
                beta = V.estimate_beta(problem, w_star, max(radius, 1e-3), n_pairs, seed=seed)
                vr = V.check_variance_bound(problem, checkpoints, w_star, beta.beta_hat)
                item["variance_bound"] = {"beta_hat": beta.beta_hat, "n_checks": vr.n_checks,
                                          "violations": vr.violations, "max_ratio": vr.max_ratio,
                                          "variance_by_epoch": vr.variance_by_epoch,
                                          "variance_shrink": _variance_shrink(vr.variance_by_epoch),
                                          "passed": bool(vr.passed)}
                report["passed"] &= bool(vr.passed)

        fixed_step = str(row.schedule).startswith("fixed")
        if sigma is not None and opt is not None and fixed_step and row.algorithm in ("rsvrg", "rsvrg_plus"):
            if beta is None:
                beta = V.estimate_beta(problem, opt.point, 0.1, n_pairs, seed=seed)
            item["theory"] = _theory(entry["eta0"], entry["m_s"], beta.beta_hat, sigma)
        report["cells"].append(item)

    path = os.path.join(artifact_dir, "verify_report.json")
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True, default=float)
    log.info("[Verify] report saved: %s (passed=%s)", path, report["passed"])
    return report
