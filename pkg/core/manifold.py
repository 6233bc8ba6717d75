"""
Grassmann manifold Gr(r, d) with its exact (non-retraction) geometry.

Points are d x r matrices with orthonormal columns, taken up to a right
orthogonal factor. Tangent vectors are horizontal d x r matrices
(base^T xi = 0). Every operation here is a pure function of immutable
values.
"""
import warnings
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence

import numpy as np

from .errors import ContractViolation, CutLocusError, DimensionError, NonConvergenceWarning
from .utils import make_rng, qr_positive, thin_svd

ORTHO_TOL = 1e-10
HORIZONTAL_TOL = 1e-10
REORTH_DRIFT = 1e-12
CUT_LOCUS_SV = 1e-10


@dataclass(frozen=True, eq=False)
class GrassmannPoint:
    mat: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mat, dtype=float)
        if m.ndim != 2:
            raise DimensionError(f"point must be a d x r matrix, got shape {m.shape}")
        d, r = m.shape
        if not (1 <= r < d):
            raise DimensionError(f"need 1 <= r < d, got d={d}, r={r}")
        drift = np.linalg.norm(m.T @ m - np.eye(r))
        if drift > ORTHO_TOL:
            raise ContractViolation(f"columns not orthonormal (||U^T U - I||_F = {drift:.3e})")
        m.setflags(write=False)
        object.__setattr__(self, "mat", m)

    @classmethod
    def from_matrix(cls, a):
        """Orthonormalize any full-column-rank d x r matrix and wrap it."""
        return cls(qr_positive(np.asarray(a, dtype=float)))

    @property
    def d(self):
        return self.mat.shape[0]

    @property
    def r(self):
        return self.mat.shape[1]

    @property
    def shape(self):
        return self.mat.shape

    def same_as(self, other):
        return self is other or (self.shape == other.shape and np.array_equal(self.mat, other.mat))


@dataclass(frozen=True, eq=False)
class TangentVector:
    mat: np.ndarray
    base: GrassmannPoint

    def __post_init__(self):
        m = np.asarray(self.mat, dtype=float)
        if m.shape != self.base.shape:
            raise DimensionError(f"tangent shape {m.shape} does not match base {self.base.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "mat", m)

    def norm(self):
        return float(np.linalg.norm(self.mat))

    def inner(self, other):
        self._check_same_base(other)
        return float(np.vdot(self.mat, other.mat))

    def horizontality(self):
        return float(np.linalg.norm(self.base.mat.T @ self.mat))

    def _check_same_base(self, other):
        if not self.base.same_as(other.base):
            raise ContractViolation("tangent vectors live at different base points")

    def __add__(self, other):
        self._check_same_base(other)
        return TangentVector(self.mat + other.mat, self.base)

    def __sub__(self, other):
        self._check_same_base(other)
        return TangentVector(self.mat - other.mat, self.base)

    def __mul__(self, c):
        return TangentVector(float(c) * self.mat, self.base)

    __rmul__ = __mul__

    def __neg__(self):
        return TangentVector(-self.mat, self.base)


def zero_tangent(base):
    return TangentVector(np.zeros(base.shape), base)


def random_point(d, r, rng=None):
    rng = make_rng(rng)
    return GrassmannPoint.from_matrix(rng.standard_normal((d, r)))


def random_tangent(base, rng=None, norm=1.0):
    """Random horizontal direction at base, scaled to the given Frobenius norm."""
    rng = make_rng(rng)
    g = project_tangent(base, rng.standard_normal(base.shape)).mat
    n = np.linalg.norm(g)
    if n == 0.0:
        return zero_tangent(base)
    return TangentVector(g * (norm / n), base)


def project_tangent(base, ambient):
    ambient = np.asarray(ambient, dtype=float)
    if ambient.shape != base.shape:
        raise DimensionError(f"ambient shape {ambient.shape} does not match base {base.shape}")
    u = base.mat
    return TangentVector(ambient - u @ (u.T @ ambient), base)


def _check_attached(xi, base, name="xi"):
    if xi.mat.shape != base.shape:
        raise DimensionError(f"{name} shape {xi.mat.shape} does not match base {base.shape}")
    if not xi.base.same_as(base):
        raise ContractViolation(f"{name} is not attached to the given base point")


def exp_map(base, xi, t=1.0):
    """Endpoint of the geodesic leaving base with velocity xi, at time t."""
    _check_attached(xi, base)
    t = float(t)
    if not np.isfinite(t):
        raise ContractViolation(f"step {t!r} is not finite")
    scale = max(1.0, xi.norm())
    if xi.horizontality() > HORIZONTAL_TOL * scale:
        raise ContractViolation(
            f"xi is not horizontal at base (||U^T xi||_F = {xi.horizontality():.3e})")
    if t == 0.0:
        return base
    w, s, vt = thin_svd(xi.mat)
    ts = t * s
    y = (base.mat @ vt.T * np.cos(ts)) @ vt + (w * np.sin(ts)) @ vt
    drift = np.linalg.norm(y.T @ y - np.eye(base.r))
    if drift > REORTH_DRIFT:
        y = qr_positive(y)
    return GrassmannPoint(y)


def log_map(base, target):
    """Initial velocity of the minimal geodesic from base to target."""
    if base.shape != target.shape:
        raise DimensionError(f"shape mismatch {base.shape} vs {target.shape}")
    u, y = base.mat, target.mat
    uty = u.T @ y
    smin = float(np.linalg.svd(uty, compute_uv=False).min())
    if smin < CUT_LOCUS_SV:
        raise CutLocusError(smin)
    normal = y - u @ uty
    # (Y - U U^T Y)(U^T Y)^{-1} without forming the inverse
    m = np.linalg.solve(uty.T, normal.T).T
    w, s, vt = thin_svd(m)
    xi = (w * np.arctan(s)) @ vt
    # remove rounding drift out of the horizontal space
    xi = xi - u @ (u.T @ xi)
    return TangentVector(xi, base)


def parallel_transport(zeta, base, xi):
    """Transport zeta along the geodesic t -> exp_map(base, xi, t) to t = 1.

    The result is attached to exp_map(base, xi, 1).
    """
    _check_attached(zeta, base, "zeta")
    _check_attached(xi, base)
    w, s, vt = thin_svd(xi.mat)
    wtz = w.T @ zeta.mat
    moved = zeta.mat + (-(base.mat @ vt.T) * np.sin(s) + w * (np.cos(s) - 1.0)) @ wtz
    end = exp_map(base, xi, 1.0)
    moved = moved - end.mat @ (end.mat.T @ moved)
    return TangentVector(moved, end)


def transport_to(zeta, target):
    """Parallel-translate zeta from its base to target along the minimal geodesic.

    The output is expressed at target's own matrix representative, so it can
    be added to other vectors attached to target.
    """
    base = zeta.base
    moved = parallel_transport(zeta, base, log_map(base, target))
    o = target.mat.T @ moved.base.mat
    return project_tangent(target, moved.mat @ o.T)


def principal_angles(a, b):
    """Principal angles between span(a) and span(b), never raising on the cut locus."""
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    ata = a.mat.T @ b.mat
    y, cos, zt = np.linalg.svd(ata)
    bz = b.mat @ zt.T
    sin = np.linalg.norm(bz - a.mat @ (y * cos), axis=0)
    return np.arctan2(sin, np.clip(cos, 0.0, 1.0))


def distance(a, b):
    theta = principal_angles(a, b)
    return float(np.sqrt(np.sum(theta ** 2)))


class KarcherResult(NamedTuple):
    point: GrassmannPoint
    grad_norm: float
    n_iter: int
    converged: bool


def mean_log(base, points):
    acc = np.zeros(base.shape)
    for q in points:
        acc += log_map(base, q).mat
    return TangentVector(acc / len(points), base)


def solve_karcher_mean(points: Sequence[GrassmannPoint], tol=1e-10, max_iter=100, init=None):
    """Unit-step Riemannian gradient descent on (1/2m) sum dist(U, Q_i)^2."""
    points = list(points)
    if not points:
        raise ContractViolation("karcher mean of an empty set")
    u = points[0] if init is None else init
    best = None
    for it in range(max_iter + 1):
        g = mean_log(u, points)
        gn = g.norm()
        if best is None or gn < best[1]:
            best = (u, gn, it)
        if gn <= tol:
            return KarcherResult(u, gn, it, True)
        if it == max_iter:
            break
        u = exp_map(u, g, 1.0)
    return KarcherResult(best[0], best[1], best[2], False)


def karcher_mean(points: List[GrassmannPoint], tol=1e-10, max_iter=100):
    res = solve_karcher_mean(points, tol=tol, max_iter=max_iter)
    if not res.converged:
        warnings.warn(
            f"karcher mean did not reach tol={tol:g} in {max_iter} iterations "
            f"(best mean-gradient norm {res.grad_norm:.3e})",
            NonConvergenceWarning, stacklevel=2)
    return res.point
