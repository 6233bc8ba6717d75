"""
Numerical oracles and statistical monitors for the optimizers.

Nothing here feeds back into a run; these functions only read points,
problems, traces and recorded checkpoints and report what they find.
"""
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ContractViolation
from .manifold import (GrassmannPoint, TangentVector, distance, exp_map, random_tangent,
                       transport_to)
from .optim import TraceRecord, modified_stochastic_gradient
from .utils import make_rng, qr_positive

log = logging.getLogger(__name__)


def fd_directional_derivative(problem, u, xi, h=1e-5):
    """Central difference of the full cost along the geodesic through u with velocity xi."""
    fp = problem.cost(exp_map(u, xi, h))
    fm = problem.cost(exp_map(u, xi, -h))
    return (fp - fm) / (2.0 * h)


def integrate_geodesic(base, xi, t=1.0, rtol=1e-12, atol=1e-12):
    """
    Solve Y'' = -Y (Y'^T Y') from (base, xi) with an adaptive Runge-Kutta
    scheme, then project the endpoint back onto orthonormal matrices.
    Independent of the closed-form exponential map.
    """
    d, r = base.shape
    y0 = np.concatenate([base.mat.ravel(), xi.mat.ravel()])

    def rhs(_, y):
        pos = y[:d * r].reshape(d, r)
        vel = y[d * r:].reshape(d, r)
        return np.concatenate([vel.ravel(), (-pos @ (vel.T @ vel)).ravel()])

    sol = solve_ivp(rhs, (0.0, float(t)), y0, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise ArithmeticError(f"geodesic integration failed: {sol.message}")
    end = sol.y[:d * r, -1].reshape(d, r)
    return GrassmannPoint(qr_positive(end))


@dataclass(frozen=True)
class LipschitzEstimate:
    beta_hat: float
    n_pairs: int
    max_pair_distance: float
    ratios: tuple = field(default=(), repr=False)


def estimate_beta(problem, center, radius, n_pairs, seed=0):
    """
    Empirical gradient-Lipschitz ratio over random nearby pairs (w, z) in a
    geodesic ball around center:

        max  || P_{w<-z} grad f_n(z) - grad f_n(w) || / dist(z, w)
    """
    if n_pairs < 1:
        raise ContractViolation("estimate_beta needs at least one pair")
    rng = make_rng(seed)
    ratios, dmax = [], 0.0
    n = problem.n_samples
    while len(ratios) < n_pairs:
        w = exp_map(center, random_tangent(center, rng, radius * rng.uniform()), 1.0)
        z = exp_map(w, random_tangent(w, rng, radius * rng.uniform(0.1, 1.0)), 1.0)
        dist = distance(z, w)
        if dist <= 1e-12:
            continue
        i = [int(rng.integers(n))]
        moved = transport_to(problem.stoch_grad(z, i), w)
        gap = np.linalg.norm(moved.mat - problem.stoch_grad(w, i).mat)
        ratios.append(gap / dist)
        dmax = max(dmax, dist)
    return LipschitzEstimate(float(max(ratios)), n_pairs, dmax, tuple(ratios))


class XiStats(NamedTuple):
    mean: np.ndarray
    second_moment: float
    variance: float
    full_grad: TangentVector
    bias: float


def xi_statistics(problem, u_cur, u_tilde, full_grad_tilde=None):
    """Exact moments of the variance-reduced direction over all N singleton batches."""
    if full_grad_tilde is None:
        full_grad_tilde = problem.full_grad(u_tilde)
    n = problem.n_samples
    acc = np.zeros(u_cur.shape)
    sq = 0.0
    for i in range(n):
        xi = modified_stochastic_gradient(u_cur, u_tilde, [i], problem, full_grad_tilde)
        acc += xi.mat
        sq += float(np.sum(xi.mat ** 2))
    mean = acc / n
    second = sq / n
    g = problem.full_grad(u_cur)
    return XiStats(mean, second, max(second - float(np.sum(mean ** 2)), 0.0), g,
                   float(np.linalg.norm(mean - g.mat)))


def _points(cp):
    return GrassmannPoint(cp.u_cur), GrassmannPoint(cp.u_tilde)


def check_unbiasedness(problem, checkpoints):
    """Largest ||E[xi] - grad f(U_cur)|| / max(1, ||grad f(U_cur)||) over the checkpoints."""
    worst = 0.0
    for cp in checkpoints:
        u_cur, u_tilde = _points(cp)
        stats = xi_statistics(problem, u_cur, u_tilde)
        worst = max(worst, stats.bias / max(1.0, stats.full_grad.norm()))
    return worst


@dataclass
class VarianceReport:
    n_checks: int = 0
    violations: List[dict] = field(default_factory=list)
    max_ratio: float = 0.0
    variance_by_epoch: dict = field(default_factory=dict)

    @property
    def passed(self):
        return not self.violations


def check_variance_bound(problem, checkpoints, w_star, beta_hat, safety=1.1, atol=1e-12):
    """
    Compare E||xi||^2 against (safety * beta)^2 (14 dist(U_cur, w*)^2 + 8 dist(U~, w*)^2)
    at each checkpoint, computing the expectation exactly over all indices.
    """
    report = VarianceReport()
    beta = safety * beta_hat
    per_epoch = {}
    for cp in checkpoints:
        u_cur, u_tilde = _points(cp)
        stats = xi_statistics(problem, u_cur, u_tilde)
        rhs = beta ** 2 * (14.0 * distance(u_cur, w_star) ** 2 + 8.0 * distance(u_tilde, w_star) ** 2)
        report.n_checks += 1
        per_epoch.setdefault(cp.epoch, []).append(stats.variance)
        if rhs > 0:
            report.max_ratio = max(report.max_ratio, stats.second_moment / rhs)
        if stats.second_moment > rhs + atol:
            report.violations.append({"epoch": cp.epoch, "iteration": cp.iteration,
                                      "lhs": stats.second_moment, "rhs": rhs})
    report.variance_by_epoch = {e: float(np.mean(v)) for e, v in sorted(per_epoch.items())}
    if report.violations:
        log.warning("[Verify] %d variance-bound violations out of %d checks",
                    len(report.violations), report.n_checks)
    return report


class RateFit(NamedTuple):
    contraction: float
    r2: float
    slope: float
    n_points: int


def fit_linear_rate(seq, tail=None):
    """
    Least-squares slope of log(value) against the index over the tail window.

    Accepts a plain sequence of dist(U~^s, U*)^2 values or TraceRecords, which
    carry that squared distance per epoch. Non-positive values are dropped.
    """
    seq = list(seq)
    if seq and isinstance(seq[0], TraceRecord):
        values = [rec.dist_sq_to_optimum for rec in seq]
    else:
        values = [float(v) for v in seq]
    idx = np.arange(len(values), dtype=float)
    vals = np.asarray(values, dtype=float)
    if tail is not None:
        idx, vals = idx[-tail:], vals[-tail:]
    keep = np.isfinite(vals) & (vals > 0)
    idx, vals = idx[keep], vals[keep]
    if idx.size < 2:
        raise ContractViolation("need at least two positive values to fit a rate")
    y = np.log(vals)
    slope, icept = np.polyfit(idx, y, 1)
    resid = y - (slope * idx + icept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return RateFit(float(np.exp(slope)), r2, float(slope), int(idx.size))


class TrendReport(NamedTuple):
    passed: bool
    first: float
    last: float
    reached_tol: bool


def gradient_norm_trend(trace: Sequence[TraceRecord], tol=1e-8, window=10):
    """Full-gradient norm goes below tolerance, or ends below its start with a non-increasing tail."""
    norms = np.array([rec.full_grad_norm for rec in trace], dtype=float)
    reached = bool(norms.min() <= tol)
    tail = norms[-window:]
    settling = bool(norms[-1] < norms[0] and np.all(np.diff(tail) <= 1e-12 * max(tail.max(), 1.0)))
    return TrendReport(reached or settling, float(norms[0]), float(norms[-1]), reached)


def theoretical_contraction(eta, m, beta, sigma):
    """
    Per-epoch contraction factor 4(1 + 8 m eta^2 beta^2) / (eta m (sigma - 14 eta beta^2))
    of E[dist(U~^s, U*)^2] near a non-degenerate minimizer; inf when sigma <= 14 eta beta^2.
    """
    denom = eta * m * (sigma - 14.0 * eta * beta ** 2)
    if denom <= 0:
        return float("inf")
    return 4.0 * (1.0 + 8.0 * m * eta ** 2 * beta ** 2) / denom


def suggested_eta(beta, sigma):
    return sigma / (28.0 * beta ** 2)


def karcher_distance_bound(p, points, mean):
    """(dist(p, mean)^2, (4/m) sum dist(p, w_i)^2); the first never exceeds the second."""
    lhs = distance(p, mean) ** 2
    rhs = 4.0 / len(points) * sum(distance(p, w) ** 2 for w in points)
    return lhs, rhs
