"""
Finite-sum cost functions f(U) = (1/N) sum_n f_n(U) on Gr(r, d).

Each problem exposes the full cost, the full Riemannian gradient, the
mini-batch stochastic gradient (mean of the per-sample gradients in the
batch) and, where it exists, a held-out test cost. Sample indices are
0-based.
"""
import warnings
from abc import ABC, abstractmethod
from typing import NamedTuple, Optional

import numpy as np

from .errors import ContractViolation, CutLocusError, NonUniqueSubspaceWarning
from .manifold import GrassmannPoint, TangentVector, distance, log_map, project_tangent, solve_karcher_mean


class Optimum(NamedTuple):
    point: GrassmannPoint
    value: float


class Problem(ABC):
    kind = "abstract"

    @property
    @abstractmethod
    def n_samples(self) -> int:
        ...

    @property
    @abstractmethod
    def dim(self):
        """(d, r) of the search space."""

    @abstractmethod
    def batch_cost(self, u: GrassmannPoint, batch) -> float:
        ...

    @abstractmethod
    def stoch_grad(self, u: GrassmannPoint, batch) -> TangentVector:
        ...

    def cost(self, u, batch=None):
        return self.batch_cost(u, self._all() if batch is None else self._check_batch(batch))

    def full_grad(self, u):
        return self.stoch_grad(u, self._all())

    def test_cost(self, u) -> Optional[float]:
        return None

    def optimum(self) -> Optional[Optimum]:
        return None

    def _all(self):
        return np.arange(self.n_samples)

    def _check_batch(self, batch):
        idx = np.atleast_1d(np.asarray(batch, dtype=np.int64))
        if idx.size == 0:
            raise ContractViolation("empty batch")
        if idx.min() < 0 or idx.max() >= self.n_samples:
            raise ContractViolation(
                f"batch index out of range [0, {self.n_samples}): {idx.min()}..{idx.max()}")
        return idx


class PcaProblem(Problem):
    """Mean squared residual of projecting the columns of X onto span(U)."""

    kind = "pca"

    def __init__(self, data, r):
        self.data = np.asarray(data, dtype=float)
        self.data.setflags(write=False)
        self.r = int(r)
        self._optimum = None

    @property
    def n_samples(self):
        return self.data.shape[1]

    @property
    def dim(self):
        return (self.data.shape[0], self.r)

    def batch_cost(self, u, batch):
        idx = self._check_batch(batch)
        xb = self.data[:, idx]
        resid = xb - u.mat @ (u.mat.T @ xb)
        return float(np.sum(resid ** 2) / idx.size)

    def stoch_grad(self, u, batch):
        idx = self._check_batch(batch)
        xb = self.data[:, idx]
        # Euclidean gradient of -(1/B) sum x^T U U^T x, same horizontal part as the residual form
        egrad = -(2.0 / idx.size) * (xb @ (xb.T @ u.mat))
        return project_tangent(u, egrad)

    def optimum(self):
        if self._optimum is None:
            self._optimum = pca_optimum(self.data, self.r)
        return self._optimum


def pca_optimum(data, r):
    """Top-r eigenvectors of X X^T / N and the residual cost they attain."""
    x = np.asarray(data, dtype=float)
    n = x.shape[1]
    evals, evecs = np.linalg.eigh(x @ x.T / n)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    if r < len(evals) and abs(evals[r - 1] - evals[r]) <= 1e-12:
        warnings.warn(
            f"eigenvalues {r} and {r + 1} coincide ({evals[r - 1]:.6g}); optimal subspace is not unique",
            NonUniqueSubspaceWarning, stacklevel=2)
    u_star = GrassmannPoint.from_matrix(evecs[:, :r])
    resid = x - u_star.mat @ (u_star.mat.T @ x)
    return Optimum(u_star, float(np.sum(resid ** 2) / n))


class KarcherProblem(Problem):
    """Half mean squared geodesic distance to a cloud of subspaces."""

    kind = "karcher"

    def __init__(self, points):
        self.points = list(points)
        if not self.points:
            raise ContractViolation("karcher problem needs at least one point")
        self._optimum = None

    @property
    def n_samples(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points[0].shape

    def batch_cost(self, u, batch):
        idx = self._check_batch(batch)
        return float(sum(distance(u, self.points[i]) ** 2 for i in idx) / (2.0 * idx.size))

    def stoch_grad(self, u, batch):
        idx = self._check_batch(batch)
        acc = np.zeros(u.shape)
        for i in idx:
            try:
                acc -= log_map(u, self.points[i]).mat
            except CutLocusError as e:
                raise e.with_context(batch_index=int(i)) from e
        return TangentVector(acc / idx.size, u)

    def optimum(self):
        if self._optimum is None:
            res = solve_karcher_mean(self.points, tol=1e-12, max_iter=200)
            self._optimum = Optimum(res.point, self.cost(res.point))
        return self._optimum


def karcher_optimum(problem):
    return problem.optimum()


class McProblem(Problem):
    """
    Low-rank matrix completion, one sample per column of the d x N matrix.

    f_n(U) = min_a ||P_{Omega_n}(U a - x_n)||^2, with a tiny ridge on a when
    column n has at least r entries and the minimum-norm solution otherwise.
    Train entries Omega and test entries Gamma are stored per column.
    """

    kind = "mc"

    def __init__(self, d, n, train, test=None, r=5, ridge=1e-8):
        self._d = int(d)
        self._n = int(n)
        self.r = int(r)
        self.ridge = float(ridge)
        self.train_rows, self.train_vals = self._by_column(train)
        if test is not None and len(test[0]):
            self.test_rows, self.test_vals = self._by_column(test)
            self.n_test = int(sum(len(v) for v in self.test_vals))
            self._check_disjoint()
        else:
            self.test_rows = self.test_vals = None
            self.n_test = 0

    def _by_column(self, triplets):
        rows, cols, vals = (np.asarray(a) for a in triplets)
        rows = rows.astype(np.int64)
        cols = cols.astype(np.int64)
        vals = vals.astype(float)
        if rows.size and (rows.min() < 0 or rows.max() >= self._d or cols.min() < 0 or cols.max() >= self._n):
            raise ContractViolation("entry index outside the d x N matrix")
        order = np.lexsort((rows, cols))
        rows, cols, vals = rows[order], cols[order], vals[order]
        bounds = np.searchsorted(cols, np.arange(self._n + 1))
        col_rows = [rows[bounds[j]:bounds[j + 1]] for j in range(self._n)]
        col_vals = [vals[bounds[j]:bounds[j + 1]] for j in range(self._n)]
        return col_rows, col_vals

    def _check_disjoint(self):
        for j in range(self._n):
            if np.intersect1d(self.train_rows[j], self.test_rows[j]).size:
                raise ContractViolation(f"train and test entries overlap in column {j}")

    @property
    def n_samples(self):
        return self._n

    @property
    def dim(self):
        return (self._d, self.r)

    def inner_solve(self, u, n):
        """Column weights a_n for column n, or None when it has no observed entry."""
        rows = self.train_rows[n]
        if rows.size == 0:
            return None
        return _ridge_solve(u.mat[rows, :], self.train_vals[n], self.ridge)

    def _column_terms(self, u, n):
        a = self.inner_solve(u, n)
        if a is None:
            return None, None, 0.0
        rows = self.train_rows[n]
        resid = u.mat[rows, :] @ a - self.train_vals[n]
        return a, resid, float(resid @ resid)

    def batch_cost(self, u, batch):
        idx = self._check_batch(batch)
        return float(sum(self._column_terms(u, n)[2] for n in idx) / idx.size)

    def stoch_grad(self, u, batch):
        idx = self._check_batch(batch)
        egrad = np.zeros(u.shape)
        for n in idx:
            a, resid, _ = self._column_terms(u, n)
            if a is None:
                continue
            egrad[self.train_rows[n], :] += np.outer(resid, a)
        return project_tangent(u, (2.0 / idx.size) * egrad)

    def test_cost(self, u):
        """Mean squared error per held-out entry, with a_n fitted on the train entries."""
        if self.test_rows is None:
            return None
        sq = 0.0
        for n in range(self._n):
            rows = self.test_rows[n]
            if rows.size == 0:
                continue
            a = self.inner_solve(u, n)
            pred = np.zeros(rows.size) if a is None else u.mat[rows, :] @ a
            err = pred - self.test_vals[n]
            sq += float(err @ err)
        return sq / self.n_test


def _ridge_solve(un, x, ridge):
    k, r = un.shape
    # fewer observed entries than r: the minimum-norm interpolant fits them exactly
    if ridge == 0.0 or k < r:
        return np.linalg.lstsq(un, x, rcond=None)[0]
    return np.linalg.solve(un.T @ un + ridge * np.eye(r), un.T @ x)


def mc_inner_solve(problem, u, n):
    return problem.inner_solve(u, n)
