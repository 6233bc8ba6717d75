import numpy as np
import pytest

from apps.synthetic import SyntheticSpec, gen_mc
from core.errors import ContractViolation, CutLocusError, NonUniqueSubspaceWarning
from core.manifold import GrassmannPoint, distance, exp_map, random_point, random_tangent
from core.problems import KarcherProblem, McProblem, PcaProblem, karcher_optimum, mc_inner_solve, pca_optimum
from core.verify import fd_directional_derivative


def _fd_rel_errors(problem, n_checks, seed):
    rng = np.random.default_rng(seed)
    d, r = problem.dim
    out = []
    for _ in range(n_checks):
        u = random_point(d, r, rng)
        xi = random_tangent(u, rng, 1.0)
        exact = problem.full_grad(u).inner(xi)
        fd = fd_directional_derivative(problem, u, xi)
        out.append(abs(fd - exact) / max(1.0, abs(exact)))
    return np.array(out)


def test_pca_hand_example():
    problem = PcaProblem(np.array([[1.0], [0.0]]), r=1)
    u = GrassmannPoint(np.array([[0.0], [1.0]]))
    assert problem.cost(u) == pytest.approx(1.0)
    assert problem.full_grad(u).norm() == pytest.approx(0.0, abs=1e-15)


def test_pca_gradient_matches_finite_differences(pca_small):
    assert _fd_rel_errors(pca_small, 200, seed=0).max() <= 1e-5


def test_karcher_gradient_matches_finite_differences(karcher_small):
    problem = karcher_small
    rng = np.random.default_rng(1)
    center = problem.optimum().point
    for _ in range(200):
        # stay well inside the injectivity radius of every data point
        u = exp_map(center, random_tangent(center, rng, 0.2))
        xi = random_tangent(u, rng, 1.0)
        exact = problem.full_grad(u).inner(xi)
        fd = fd_directional_derivative(problem, u, xi)
        assert abs(fd - exact) / max(1.0, abs(exact)) <= 1e-5


def test_mc_gradient_matches_finite_differences(mc_small):
    assert _fd_rel_errors(mc_small, 200, seed=2).max() <= 1e-4


@pytest.mark.parametrize("name", ["pca_small", "karcher_small", "mc_small"])
def test_singleton_gradients_average_to_full(name, request):
    problem = request.getfixturevalue(name)
    d, r = problem.dim
    u = random_point(d, r, 42) if name != "karcher_small" else problem.points[0]
    full = problem.full_grad(u)
    mean = sum(problem.stoch_grad(u, [i]).mat for i in range(problem.n_samples)) / problem.n_samples
    assert np.linalg.norm(mean - full.mat) <= 1e-10 * max(1.0, full.norm())
    batch = problem.stoch_grad(u, np.arange(problem.n_samples))
    assert np.linalg.norm(batch.mat - full.mat) <= 1e-12 * max(1.0, full.norm())


@pytest.mark.parametrize("name", ["pca_small", "karcher_small", "mc_small"])
def test_cost_depends_only_on_the_subspace(name, request):
    problem = request.getfixturevalue(name)
    rng = np.random.default_rng(11)
    d, r = problem.dim
    for _ in range(5):
        if name == "karcher_small":
            center = problem.points[0]
            u = exp_map(center, random_tangent(center, rng, 0.2))
        else:
            u = random_point(d, r, rng)
        o, _ = np.linalg.qr(rng.standard_normal((r, r)))
        rotated = GrassmannPoint(u.mat @ o)
        assert abs(problem.cost(rotated) - problem.cost(u)) <= 1e-9 * max(1.0, abs(problem.cost(u)))
        # the gradient rotates with the representative
        g = problem.full_grad(u)
        assert np.linalg.norm(problem.full_grad(rotated).mat - g.mat @ o) <= 1e-8 * max(1.0, g.norm())


@pytest.mark.parametrize("batch", [[], [-1], [10_000]])
def test_bad_batches_are_rejected(pca_small, batch):
    u = random_point(*pca_small.dim, 0)
    with pytest.raises(ContractViolation):
        pca_small.stoch_grad(u, batch)


def test_pca_optimum_is_the_minimum(pca_small):
    opt = pca_optimum(pca_small.data, pca_small.r)
    assert pca_small.cost(opt.point) == pytest.approx(opt.value, rel=1e-12)
    assert pca_small.full_grad(opt.point).norm() <= 1e-9
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert pca_small.cost(random_point(*pca_small.dim, rng)) >= opt.value


def test_pca_optimum_warns_on_tied_eigenvalues():
    with pytest.warns(NonUniqueSubspaceWarning):
        pca_optimum(np.eye(4), 2)


def test_karcher_cost_zero_at_common_point():
    u = random_point(6, 2, 0)
    problem = KarcherProblem([u, u])
    assert problem.cost(u) <= 1e-20
    assert problem.full_grad(u).norm() <= 1e-12


def test_karcher_single_point_step_is_exact(karcher_small):
    rng = np.random.default_rng(3)
    q = karcher_small.points[4]
    u = exp_map(q, random_tangent(q, rng, 0.5))
    g = karcher_small.stoch_grad(u, [4])
    assert distance(exp_map(u, g, -1.0), q) <= 1e-8


def test_karcher_cut_locus_names_the_sample():
    e1 = GrassmannPoint(np.array([[1.0], [0.0], [0.0]]))
    e2 = GrassmannPoint(np.array([[0.0], [1.0], [0.0]]))
    problem = KarcherProblem([e1, e2])
    with pytest.raises(CutLocusError) as exc:
        problem.full_grad(e1)
    assert exc.value.context["batch_index"] == 1


def test_karcher_optimum_has_small_gradient(karcher_small):
    opt = karcher_optimum(karcher_small)
    assert karcher_small.full_grad(opt.point).norm() <= 1e-10
    assert opt.value == pytest.approx(karcher_small.cost(opt.point))


def test_mc_fit_with_true_subspace_is_exact():
    problem, u_star, _ = gen_mc(SyntheticSpec(kind="mc", n=30, d=12, r=2, oversampling=3.0,
                                              condition_number=5.0, ridge=0.0, seed=1),
                                return_truth=True)
    u = GrassmannPoint(u_star)
    assert problem.cost(u) <= 1e-12
    assert problem.test_cost(u) <= 1e-12


def test_mc_inner_solve_handles_sparse_columns():
    train = (np.array([0, 1, 2]), np.array([0, 0, 1]), np.array([1.0, 2.0, 3.0]))
    problem = McProblem(4, 3, train, r=2, ridge=1e-8)
    u = random_point(4, 2, 0)
    assert mc_inner_solve(problem, u, 2) is None
    # one entry for two weights: the minimum-norm fit is exact
    a = mc_inner_solve(problem, u, 1)
    assert a.shape == (2,)
    assert abs(u.mat[2] @ a - 3.0) <= 1e-8
    assert np.allclose(a, np.linalg.pinv(u.mat[[2], :]) @ np.array([3.0]), rtol=1e-10, atol=1e-14)
    assert np.isfinite(problem.cost(u))
    assert problem.test_cost(u) is None


def test_mc_inner_solve_recovers_fully_observed_weights():
    rng = np.random.default_rng(0)
    u = random_point(12, 3, rng)
    a_star = rng.standard_normal(3)
    rows, cols = np.arange(12), np.zeros(12, dtype=int)
    for ridge in (0.0, 1e-12):
        problem = McProblem(12, 1, (rows, cols, u.mat @ a_star), r=3, ridge=ridge)
        assert np.linalg.norm(mc_inner_solve(problem, u, 0) - a_star) <= 1e-10


def test_mc_inner_solve_underdetermined_column_interpolates():
    rng = np.random.default_rng(1)
    u = random_point(12, 3, rng)
    rows = np.array([4, 9])
    vals = rng.standard_normal(2)
    problem = McProblem(12, 1, (rows, np.zeros(2, dtype=int), vals), r=3, ridge=1e-8)
    a = mc_inner_solve(problem, u, 0)
    assert np.linalg.norm(u.mat[rows] @ a - vals) <= 1e-8
    assert np.allclose(a, np.linalg.pinv(u.mat[rows]) @ vals, rtol=1e-10, atol=1e-14)
    assert problem.cost(u) <= 1e-16


def test_mc_inner_solve_overdetermined_is_least_squares():
    rng = np.random.default_rng(2)
    u = random_point(20, 4, rng)
    rows = np.sort(rng.choice(20, size=11, replace=False))
    vals = rng.standard_normal(11)
    problem = McProblem(20, 1, (rows, np.zeros(11, dtype=int), vals), r=4, ridge=0.0)
    a = mc_inner_solve(problem, u, 0)
    expected = np.linalg.pinv(u.mat[rows]) @ vals
    assert np.linalg.norm(a - expected) <= 1e-10 * np.linalg.norm(expected)


def test_mc_rejects_overlapping_train_and_test():
    train = (np.array([0, 1]), np.array([0, 0]), np.array([1.0, 2.0]))
    test = (np.array([1]), np.array([0]), np.array([5.0]))
    with pytest.raises(ContractViolation):
        McProblem(3, 1, train, test, r=1)
