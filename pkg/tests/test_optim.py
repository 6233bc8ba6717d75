import numpy as np
import pytest

from core.errors import ConfigError, ContractViolation, CutLocusError, DivergenceError
from core.manifold import (GrassmannPoint, TangentVector, distance, exp_map, project_tangent, random_point,
                           random_tangent)
from core.optim import (CheckpointRecorder, OptimizerConfig, modified_stochastic_gradient, run,
                        run_rsd, run_rsgd, run_rsvrg)
from core.problems import KarcherProblem, Problem
from core.schedule import Schedule


def _u0(problem, seed=0):
    return random_point(*problem.dim, seed)


def test_full_batch_direction_is_full_gradient(pca_small):
    rng = np.random.default_rng(0)
    u_tilde = _u0(pca_small)
    u_cur = exp_map(u_tilde, random_tangent(u_tilde, rng, 0.3))
    g_tilde = pca_small.full_grad(u_tilde)
    xi = modified_stochastic_gradient(u_cur, u_tilde, np.arange(pca_small.n_samples), pca_small, g_tilde)
    assert np.linalg.norm(xi.mat - pca_small.full_grad(u_cur).mat) <= 1e-10


def test_direction_requires_snapshot_gradient(pca_small):
    u = _u0(pca_small)
    other = pca_small.full_grad(_u0(pca_small, 1))
    with pytest.raises(ContractViolation):
        modified_stochastic_gradient(u, u, [0], pca_small, other)


def test_direction_is_unbiased(karcher_small):
    rng = np.random.default_rng(2)
    center = karcher_small.optimum().point
    u_tilde = exp_map(center, random_tangent(center, rng, 0.2))
    u_cur = exp_map(u_tilde, random_tangent(u_tilde, rng, 0.1))
    g_tilde = karcher_small.full_grad(u_tilde)
    n = karcher_small.n_samples
    mean = sum(modified_stochastic_gradient(u_cur, u_tilde, [i], karcher_small, g_tilde).mat
               for i in range(n)) / n
    assert np.linalg.norm(mean - karcher_small.full_grad(u_cur).mat) <= 1e-10


def test_single_sample_matches_gradient_descent():
    rng = np.random.default_rng(4)
    q = random_point(8, 2, rng)
    problem = KarcherProblem([q])
    u0 = exp_map(q, random_tangent(q, rng, 0.8))
    eta, m = 0.3, 3
    config = OptimizerConfig(variant="rsvrg", m_s=m, batch_size=1, max_epochs=4,
                             grad_tol=0.0, averaging="option_II_last")
    result = run_rsvrg(problem, config, Schedule("fixed", eta), u0)

    u = u0
    for _ in range(4 * m):
        u = exp_map(u, problem.full_grad(u), -eta)
    assert np.linalg.norm(result.point.mat - u.mat) <= 1e-10


def test_rsvrg_and_rsgd_agree_without_variance():
    rng = np.random.default_rng(6)
    q = random_point(6, 2, rng)
    problem = KarcherProblem([q])
    u0 = exp_map(q, random_tangent(q, rng, 0.5))
    sched = Schedule("fixed", 0.2)
    a = run_rsvrg(problem, OptimizerConfig(variant="rsvrg", m_s=2, batch_size=1, max_epochs=3,
                                           grad_tol=0.0, averaging="option_II_last"), sched, u0)
    b = run_rsgd(problem, OptimizerConfig(variant="rsgd", m_s=2, batch_size=1, max_epochs=3,
                                          grad_tol=0.0), sched, u0)
    assert np.linalg.norm(a.point.mat - b.point.mat) <= 1e-10


def test_gradient_accounting(pca_small):
    n, b, m = pca_small.n_samples, 5, 20
    sched = Schedule("fixed", 1e-3)
    common = dict(m_s=m, batch_size=b, max_epochs=3, grad_tol=0.0)

    trace = run(pca_small, OptimizerConfig(variant="rsvrg", **common), sched, _u0(pca_small)).trace
    assert [r.grad_evals for r in trace] == [s * (n + 2 * b * m) for s in range(4)]
    assert trace[2].grad_evals_over_N == pytest.approx(2 * (n + 2 * b * m) / n)

    trace = run(pca_small, OptimizerConfig(variant="rsvrg_plus", **common), sched, _u0(pca_small)).trace
    assert [r.grad_evals for r in trace] == [0, b * m, b * m + n + 2 * b * m, b * m + 2 * (n + 2 * b * m)]

    trace = run(pca_small, OptimizerConfig(variant="rsgd", **common), sched, _u0(pca_small)).trace
    assert [r.grad_evals for r in trace] == [s * b * m for s in range(4)]
    assert trace[-1].diag_evals == 4 * n


def test_trace_starts_at_the_initial_point(pca_small):
    u0 = _u0(pca_small)
    trace = run(pca_small, OptimizerConfig(variant="rsvrg", m_s=10, max_epochs=2),
                Schedule("fixed", 1e-3), u0).trace
    first = trace[0]
    assert first.epoch == 0 and first.grad_evals == 0
    assert first.train_loss == pytest.approx(pca_small.cost(u0))
    assert first.optimality_gap == pytest.approx(pca_small.cost(u0) - pca_small.optimum().value)
    assert first.dist_sq_to_optimum == pytest.approx(distance(u0, pca_small.optimum().point) ** 2)
    assert np.isnan(first.test_loss)


def test_zero_step_never_moves(pca_small):
    u0 = _u0(pca_small)
    res = run_rsgd(pca_small, OptimizerConfig(variant="rsgd", m_s=10, max_epochs=3),
                   Schedule("fixed", 0.0), u0)
    assert np.array_equal(res.point.mat, u0.mat)
    assert len({r.train_loss for r in res.trace}) == 1


def test_decay_step_recorded_per_epoch(pca_small):
    m = 10
    sched = Schedule("decay", eta0=0.01, lam=3.0)
    trace = run_rsgd(pca_small, OptimizerConfig(variant="rsgd", m_s=m, max_epochs=4, grad_tol=0.0),
                     sched, _u0(pca_small)).trace
    for rec in trace[1:]:
        assert rec.eta == sched.eta(rec.epoch * m - 1, m)
        assert rec.eta == pytest.approx(0.01 / (1.0 + 0.01 * 3.0 * (rec.epoch - 1)))


def test_stops_on_gradient_tolerance(pca_small):
    trace = run(pca_small, OptimizerConfig(variant="rsvrg", m_s=10, grad_tol=1e9),
                Schedule("fixed", 1e-3), _u0(pca_small)).trace
    assert len(trace) == 1


def test_rsvrg_converges_on_small_pca(pca_small):
    config = OptimizerConfig(variant="rsvrg", m_s_factor=2, batch_size=5, max_epochs=15,
                             grad_tol=1e-10, averaging="option_II_last", seed=1)
    trace = run_rsvrg(pca_small, config, Schedule("fixed", 5e-3), _u0(pca_small)).trace
    assert trace[-1].optimality_gap <= 1e-3 * trace[0].optimality_gap
    assert trace[-1].full_grad_norm < trace[0].full_grad_norm


@pytest.mark.parametrize("averaging", ["option_I_karcher", "option_I_random_t", "option_II_last"])
def test_averaging_options_run(karcher_small, averaging):
    center = karcher_small.optimum().point
    u0 = exp_map(center, random_tangent(center, np.random.default_rng(0), 0.3))
    config = OptimizerConfig(variant="rsvrg", m_s=20, batch_size=2, max_epochs=5, averaging=averaging)
    trace = run_rsvrg(karcher_small, config, Schedule("fixed", 0.2), u0).trace
    assert trace[-1].optimality_gap < trace[0].optimality_gap


def test_rsd_reaches_pca_optimum(pca_small):
    config = OptimizerConfig(variant="rsd", max_epochs=500, grad_tol=1e-9)
    trace = run_rsd(pca_small, config, _u0(pca_small)).trace
    assert trace[-1].optimality_gap <= 1e-10
    # one full gradient per iteration plus at least one cost trial
    steps = np.diff([r.grad_evals for r in trace])
    assert np.all(steps >= 1.5 * pca_small.n_samples)


def test_runs_are_reproducible(pca_small):
    config = OptimizerConfig(variant="rsvrg_plus", m_s=15, batch_size=3, max_epochs=3, seed=9)
    a = run(pca_small, config, Schedule("fixed", 2e-3), _u0(pca_small))
    b = run(pca_small, config, Schedule("fixed", 2e-3), _u0(pca_small))
    assert np.array_equal(a.point.mat, b.point.mat)
    assert [r.train_loss for r in a.trace] == [r.train_loss for r in b.trace]


class _NanProblem(Problem):
    kind = "nan"

    @property
    def n_samples(self):
        return 3

    @property
    def dim(self):
        return (4, 1)

    def batch_cost(self, u, batch):
        return float("nan")

    def stoch_grad(self, u, batch):
        return TangentVector(np.zeros((4, 1)), u)


def test_non_finite_cost_is_divergence():
    u0 = GrassmannPoint(np.eye(4)[:, :1])
    with pytest.raises(DivergenceError) as exc:
        run(_NanProblem(), OptimizerConfig(variant="rsgd", m_s=2, batch_size=1), Schedule("fixed", 0.5), u0)
    assert exc.value.epoch == 0 and exc.value.eta == 0.5


class _CutLocusProblem(_NanProblem):
    """Mini-batch gradients hit the cut locus; full ones only when full_ok is False."""

    def __init__(self, full_ok):
        self.full_ok = full_ok

    def batch_cost(self, u, batch):
        return 1.0

    def stoch_grad(self, u, batch):
        idx = self._check_batch(batch)
        if idx.size < self.n_samples or not self.full_ok:
            raise CutLocusError(0.0, batch_index=int(idx[-1]))
        return project_tangent(u, np.ones((4, 1)))


@pytest.mark.parametrize("variant", ["rsvrg", "rsvrg_plus", "rsgd", "rsd"])
def test_cut_locus_in_full_gradient_names_the_epoch(variant):
    u0 = GrassmannPoint(np.eye(4)[:, :1])
    with pytest.raises(CutLocusError) as exc:
        run(_CutLocusProblem(full_ok=False), OptimizerConfig(variant=variant, m_s=2, batch_size=1),
            Schedule("fixed", 0.1), u0)
    assert exc.value.context["epoch"] == 0
    assert exc.value.context["batch_index"] == 2


def test_cut_locus_in_stochastic_step_names_the_iteration():
    u0 = GrassmannPoint(np.eye(4)[:, :1])
    config = OptimizerConfig(variant="rsgd", m_s=2, batch_size=1, grad_tol=0.0)
    with pytest.raises(CutLocusError) as exc:
        run(_CutLocusProblem(full_ok=True), config, Schedule("fixed", 0.1), u0)
    assert exc.value.context["epoch"] == 1
    assert exc.value.context["iteration"] == 1
    assert "batch_index" in exc.value.context


@pytest.mark.parametrize("kwargs", [
    {"variant": "adam"},
    {"averaging": "option_III"},
    {"m_s": 0},
    {"max_epochs": 0},
])
def test_invalid_optimizer_config(kwargs):
    with pytest.raises(ConfigError):
        OptimizerConfig(**kwargs)


def test_batch_larger_than_sample_count(pca_small):
    config = OptimizerConfig(variant="rsgd", batch_size=pca_small.n_samples + 1)
    with pytest.raises(ConfigError):
        run(pca_small, config, Schedule("fixed", 1e-3), _u0(pca_small))


def test_checkpoint_recorder(pca_small, tmp_path):
    rec = CheckpointRecorder(stride=4, limit=3)
    config = OptimizerConfig(variant="rsvrg", m_s=10, batch_size=2, max_epochs=2, grad_tol=0.0)
    run_rsvrg(pca_small, config, Schedule("fixed", 1e-3), _u0(pca_small), recorder=rec)
    assert [(c.epoch, c.iteration) for c in rec.items] == [(1, 1), (1, 5), (1, 9)]
    path = rec.save(tmp_path / "cp.npz")
    loaded = CheckpointRecorder.load(path)
    assert [(c.epoch, c.iteration) for c in loaded] == [(1, 1), (1, 5), (1, 9)]
    assert np.array_equal(loaded[2].u_cur, rec.items[2].u_cur)
