"""
Riemannian stochastic optimizers on Gr(r, d).

  rsvrg       variance-reduced double loop (snapshot + transported correction)
  rsvrg_plus  same, but the first epoch is plain stochastic gradient
  rsgd        plain Riemannian stochastic gradient
  rsd         steepest descent with Armijo backtracking

Every run returns the final point and one TraceRecord per epoch (epoch 0
is the starting point). The x-axis count `grad_evals` follows the N + 2*B*m_s
per-epoch accounting; metric-only evaluations are tallied in `diag_evals`.
"""
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from .errors import ConfigError, ContractViolation, CutLocusError, DivergenceError, StalledLineSearch
from .manifold import GrassmannPoint, TangentVector, distance, exp_map, solve_karcher_mean, transport_to
from .schedule import Schedule
from .utils import Timer, make_rng

log = logging.getLogger(__name__)

VARIANTS = ("rsvrg", "rsvrg_plus", "rsgd", "rsd")
AVERAGING = ("option_I_karcher", "option_I_random_t", "option_II_last")
TAGS = {"rsvrg": "RSVRG", "rsvrg_plus": "RSVRG+", "rsgd": "RSGD", "rsd": "RSD"}


@dataclass
class OptimizerConfig:
    variant: str = "rsvrg"
    m_s: Optional[int] = None        # None -> round(m_s_factor * N)
    m_s_factor: float = 5.0
    batch_size: int = 10
    max_epochs: int = 100
    grad_tol: float = 1e-8
    averaging: str = "option_I_random_t"
    seed: int = 0
    # Armijo backtracking (rsd only)
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    armijo_init: float = 1.0
    armijo_max_halvings: int = 25

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r} (expected one of {VARIANTS})")
        if self.averaging not in AVERAGING:
            raise ConfigError(f"unknown averaging {self.averaging!r} (expected one of {AVERAGING})")
        if self.m_s is not None and self.m_s < 1:
            raise ConfigError(f"m_s must be >= 1, got {self.m_s}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")

    def inner_length(self, n):
        if self.m_s is not None:
            return int(self.m_s)
        return max(1, int(round(self.m_s_factor * n)))

    def check_against(self, n):
        if not (1 <= self.batch_size <= n):
            raise ConfigError(f"batch_size must lie in [1, {n}], got {self.batch_size}")


@dataclass(frozen=True)
class TraceRecord:
    epoch: int
    grad_evals: float
    grad_evals_over_N: float
    train_loss: float
    test_loss: float
    optimality_gap: float
    full_grad_norm: float
    wall_time: float
    eta: float = float("nan")
    diag_evals: int = 0
    dist_sq_to_optimum: float = float("nan")


class RunResult(NamedTuple):
    point: GrassmannPoint
    trace: List[TraceRecord]


@dataclass
class Checkpoint:
    epoch: int
    iteration: int
    u_cur: np.ndarray
    u_tilde: np.ndarray


@dataclass
class CheckpointRecorder:
    """Keeps (U_{t-1}, U~) pairs at every `stride`-th inner step of the variance-reduced epochs."""
    stride: int = 1
    limit: Optional[int] = None
    items: List[Checkpoint] = field(default_factory=list)
    _seen: int = 0

    def offer(self, epoch, iteration, u_cur, u_tilde):
        self._seen += 1
        if self.limit is not None and len(self.items) >= self.limit:
            return
        if (self._seen - 1) % self.stride == 0:
            self.items.append(Checkpoint(epoch, iteration, np.array(u_cur.mat), np.array(u_tilde.mat)))

    def save(self, path):
        np.savez_compressed(
            path,
            epoch=np.array([c.epoch for c in self.items], dtype=np.int64),
            iteration=np.array([c.iteration for c in self.items], dtype=np.int64),
            u_cur=np.array([c.u_cur for c in self.items]),
            u_tilde=np.array([c.u_tilde for c in self.items]),
        )
        return path

    @staticmethod
    def load(path):
        with np.load(path) as z:
            return [Checkpoint(int(e), int(t), uc, ut)
                    for e, t, uc, ut in zip(z["epoch"], z["iteration"], z["u_cur"], z["u_tilde"])]


class _TraceBuilder:
    """Collects per-epoch metrics; metric work is kept off the run clock."""

    def __init__(self, problem, variant, timer):
        self.problem = problem
        self.tag = TAGS.get(variant, variant)
        self.timer = timer
        self.records = []
        self.diag_evals = 0
        opt = problem.optimum()
        self.f_star = None if opt is None else opt.value
        self.u_star = None if opt is None else opt.point

    def add(self, epoch, point, grad_evals, grad_norm, eta):
        self.timer.pause()
        train = self.problem.cost(point)
        if not np.isfinite(train) or not np.isfinite(grad_norm):
            raise DivergenceError(epoch, eta, train)
        test = self.problem.test_cost(point)
        test = float("nan") if test is None else float(test)
        gap = float("nan") if self.f_star is None else train - self.f_star
        dist_sq = float("nan") if self.u_star is None else distance(point, self.u_star) ** 2
        n = self.problem.n_samples
        rec = TraceRecord(epoch, float(grad_evals), float(grad_evals) / n, train, test, gap,
                          float(grad_norm), self.timer.total(), float(eta), self.diag_evals, dist_sq)
        self.records.append(rec)
        log.debug("[%s] epoch %d evals/N=%.2f loss=%.6e gap=%.3e gnorm=%.3e",
                  self.tag, epoch, rec.grad_evals_over_N, train, gap, grad_norm)
        self.timer.start()
        return rec


def _sample(rng, n, b):
    return rng.choice(n, size=b, replace=False)


def _grad(problem, u, batch=None, **context):
    try:
        return problem.full_grad(u) if batch is None else problem.stoch_grad(u, batch)
    except CutLocusError as e:
        raise e.with_context(**context) from e


def _step(u, direction, eta, epoch, iteration):
    try:
        return exp_map(u, direction, -eta)
    except np.linalg.LinAlgError as e:
        raise DivergenceError(epoch, eta, "non-finite iterate") from e


def modified_stochastic_gradient(u_cur, u_tilde, batch, problem, cached_full_grad):
    """
    Variance-reduced direction at u_cur:

        xi = grad f_B(u_cur) - P(grad f_B(u_tilde) - grad f(u_tilde))

    with P the parallel translation from u_tilde to u_cur along the
    minimal geodesic. P is linear, so the correction is moved in one piece.
    """
    if not cached_full_grad.base.same_as(u_tilde):
        raise ContractViolation("cached full gradient is not attached to the snapshot point")
    g_cur = problem.stoch_grad(u_cur, batch)
    diff = problem.stoch_grad(u_tilde, batch) - cached_full_grad
    if u_cur.same_as(u_tilde):
        moved = TangentVector(diff.mat, u_cur)
    else:
        moved = transport_to(diff, u_cur)
    return TangentVector(g_cur.mat - moved.mat, u_cur)


def _snapshot(averaging, iterates, chosen, last):
    if averaging == "option_II_last":
        return last
    if averaging == "option_I_random_t":
        return chosen
    res = solve_karcher_mean(iterates, tol=1e-10, max_iter=100)
    if not res.converged:
        log.warning("[RSVRG] snapshot karcher mean stopped at gradient norm %.3e", res.grad_norm)
    return res.point


def _sgd_epoch(problem, u, schedule, m, b, rng, k, epoch, keep_all, pick_t):
    n = problem.n_samples
    iterates = [] if keep_all else None
    chosen = u
    eta = schedule.eta(k, m)
    for t in range(1, m + 1):
        eta = schedule.eta(k, m)
        k += 1
        batch = _sample(rng, n, b)
        u = _step(u, _grad(problem, u, batch, epoch=epoch, iteration=t), eta, epoch, t)
        if keep_all:
            iterates.append(u)
        if t == pick_t:
            chosen = u
    return u, k, eta, iterates, chosen


def run_rsvrg(problem, config, schedule: Schedule, u0, recorder: Optional[CheckpointRecorder] = None):
    if config.variant not in ("rsvrg", "rsvrg_plus"):
        raise ConfigError(f"run_rsvrg cannot run variant {config.variant!r}")
    n = problem.n_samples
    config.check_against(n)
    m, b = config.inner_length(n), config.batch_size
    rng = make_rng(config.seed)
    timer = Timer().start()
    tb = _TraceBuilder(problem, config.variant, timer)
    keep_all = config.averaging == "option_I_karcher"

    u_tilde = u0
    g_tilde = _grad(problem, u_tilde, epoch=0)
    tb.add(0, u_tilde, 0, g_tilde.norm(), schedule.eta(0, m))
    if g_tilde.norm() <= config.grad_tol:
        return RunResult(u_tilde, tb.records)

    grad_evals, k = 0, 0
    for s in range(1, config.max_epochs + 1):
        pick_t = int(rng.integers(1, m + 1)) if config.averaging == "option_I_random_t" else -1
        if config.variant == "rsvrg_plus" and s == 1:
            last, k, eta, iterates, chosen = _sgd_epoch(problem, u_tilde, schedule, m, b, rng, k, s, keep_all, pick_t)
            grad_evals += b * m
        else:
            grad_evals += n + 2 * b * m
            u = u_tilde
            iterates = [] if keep_all else None
            chosen = u
            eta = schedule.eta(k, m)
            for t in range(1, m + 1):
                eta = schedule.eta(k, m)
                k += 1
                batch = _sample(rng, n, b)
                if recorder is not None:
                    recorder.offer(s, t, u, u_tilde)
                try:
                    xi = modified_stochastic_gradient(u, u_tilde, batch, problem, g_tilde)
                except CutLocusError as e:
                    raise e.with_context(epoch=s, iteration=t) from e
                u = _step(u, xi, eta, s, t)
                if keep_all:
                    iterates.append(u)
                if t == pick_t:
                    chosen = u
            last = u
        try:
            u_tilde = _snapshot(config.averaging, iterates, chosen, last)
        except CutLocusError as e:
            raise e.with_context(epoch=s) from e
        g_tilde = _grad(problem, u_tilde, epoch=s)
        gn = g_tilde.norm()
        tb.add(s, u_tilde, grad_evals, gn, eta)
        if gn <= config.grad_tol:
            log.info("[%s] converged at epoch %d (gnorm %.3e)", tb.tag, s, gn)
            break
    return RunResult(u_tilde, tb.records)


def run_rsgd(problem, config, schedule: Schedule, u0):
    n = problem.n_samples
    config.check_against(n)
    m, b = config.inner_length(n), config.batch_size
    rng = make_rng(config.seed)
    timer = Timer().start()
    tb = _TraceBuilder(problem, "rsgd", timer)

    u = u0
    gn = _grad(problem, u, epoch=0).norm()
    tb.diag_evals += n
    tb.add(0, u, 0, gn, schedule.eta(0, m))
    if gn <= config.grad_tol:
        return RunResult(u, tb.records)

    grad_evals, k = 0, 0
    for s in range(1, config.max_epochs + 1):
        u, k, eta, _, _ = _sgd_epoch(problem, u, schedule, m, b, rng, k, s, False, -1)
        grad_evals += b * m
        timer.pause()
        gn = _grad(problem, u, epoch=s).norm()
        tb.diag_evals += n
        timer.start()
        tb.add(s, u, grad_evals, gn, eta)
        if gn <= config.grad_tol:
            log.info("[RSGD] converged at epoch %d (gnorm %.3e)", s, gn)
            break
    return RunResult(u, tb.records)


def run_rsd(problem, config, u0):
    """
    Steepest descent along -grad f with Armijo backtracking on exp_map.

    Accounting: one full gradient is N evaluations; each backtracking trial
    evaluates the full cost, charged as N/2 gradient-equivalents.
    """
    n = problem.n_samples
    timer = Timer().start()
    tb = _TraceBuilder(problem, "rsd", timer)

    u = u0
    g = _grad(problem, u, epoch=0)
    gn = g.norm()
    f = problem.cost(u)
    tb.add(0, u, 0, gn, config.armijo_init)
    grad_evals = 0.0
    for it in range(1, config.max_epochs + 1):
        if gn <= config.grad_tol:
            break
        alpha, trials = config.armijo_init, 0
        slack = 10.0 * np.finfo(float).eps * abs(f)
        while True:
            trials += 1
            cand = _step(u, g, alpha, it, trials)
            fc = problem.cost(cand)
            if fc <= f - config.armijo_c * alpha * gn ** 2 + slack:
                break
            if trials > config.armijo_max_halvings:
                raise StalledLineSearch(it, config.armijo_max_halvings)
            alpha *= config.armijo_shrink
        grad_evals += n + trials * n / 2.0
        u, f = cand, fc
        g = _grad(problem, u, epoch=it)
        gn = g.norm()
        tb.add(it, u, grad_evals, gn, alpha)
    return RunResult(u, tb.records)


def run(problem, config, schedule=None, u0=None, recorder=None):
    """Dispatch on config.variant."""
    if config.variant in ("rsvrg", "rsvrg_plus"):
        return run_rsvrg(problem, config, schedule, u0, recorder=recorder)
    if config.variant == "rsgd":
        return run_rsgd(problem, config, schedule, u0)
    return run_rsd(problem, config, u0)
