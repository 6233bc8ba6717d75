"""
Seeded synthetic instances for the three benchmark problems.

  gen_pca      Gaussian columns, optionally with a planted rank-r spike
  gen_karcher  points on a geodesic ball of radius `spread` around a center
  gen_mc       U* S A with geometric singular values (max/min = condition_number),
               train entries Omega and a disjoint test set Gamma
"""
from dataclasses import dataclass

import numpy as np

from core.errors import ConfigError
from core.manifold import exp_map, random_point, random_tangent
from core.problems import KarcherProblem, McProblem, PcaProblem
from core.utils import make_rng, qr_positive


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "pca"
    n: int = 2000
    d: int = 20
    r: int = 5
    condition_number: float = 1.0
    oversampling: float = 5.0
    noise_sigma: float = 0.0
    seed: int = 0
    spiked: bool = False
    spike_strength: float = 10.0
    spread: float = 0.3
    ridge: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("pca", "karcher", "mc"):
            raise ConfigError(f"unknown synthetic kind {self.kind!r}")
        if not (1 <= self.r < self.d):
            raise ConfigError(f"need 1 <= r < d, got r={self.r}, d={self.d}")
        if self.n < 1:
            raise ConfigError(f"need n >= 1, got {self.n}")
        if self.condition_number < 1.0:
            raise ConfigError(f"condition_number must be >= 1, got {self.condition_number}")
        if self.noise_sigma < 0.0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.kind == "mc":
            if self.oversampling <= 1.0:
                raise ConfigError(f"oversampling must be > 1, got {self.oversampling}")
            if self.n_observed > self.n * self.d:
                raise ConfigError(
                    f"OS={self.oversampling} asks for {self.n_observed} entries out of {self.n * self.d}")

    @property
    def n_observed(self):
        return int(round(self.oversampling * (self.n + self.d - self.r) * self.r))


def gen_pca(spec: SyntheticSpec):
    """
    Columns are i.i.d. standard normal. With `spiked`, a random rank-r
    subspace carries variance `spike_strength` per direction on top of
    isotropic noise of variance noise_sigma^2 (the top-r eigengap is then
    about spike_strength / noise_sigma^2).
    """
    rng = make_rng(spec.seed)
    if not spec.spiked:
        return PcaProblem(rng.standard_normal((spec.d, spec.n)), spec.r)
    basis = random_point(spec.d, spec.r, rng).mat
    signal = basis @ (np.sqrt(spec.spike_strength) * rng.standard_normal((spec.r, spec.n)))
    noise = spec.noise_sigma * rng.standard_normal((spec.d, spec.n))
    return PcaProblem(signal + noise, spec.r)


def gen_karcher(spec: SyntheticSpec):
    rng = make_rng(spec.seed)
    center = random_point(spec.d, spec.r, rng)
    points = []
    for _ in range(spec.n):
        xi = random_tangent(center, rng, 1.0)
        points.append(exp_map(center, xi, spec.spread))
    return KarcherProblem(points)


def mc_ground_truth(spec: SyntheticSpec, rng):
    """U*, singular values and the full d x N matrix U* S A."""
    u_star = random_point(spec.d, spec.r, rng).mat
    a = qr_positive(rng.standard_normal((spec.n, spec.r))).T
    if spec.r == 1:
        sv = np.ones(1)
    else:
        sv = spec.condition_number ** (np.arange(spec.r - 1, -1, -1) / (spec.r - 1))
    # scale so the weakest direction carries unit mean-square entries
    sv = sv * np.sqrt(spec.n * spec.d / spec.r)
    return u_star, sv, (u_star * sv) @ a


def gen_mc(spec: SyntheticSpec, return_truth=False):
    rng = make_rng(spec.seed)
    u_star, sv, full = mc_ground_truth(spec, rng)
    total = spec.n * spec.d
    k = spec.n_observed
    perm = rng.permutation(total)
    train_idx = perm[:k]
    test_idx = perm[k:k + min(k, total - k)]

    def triplets(lin):
        rows, cols = lin % spec.d, lin // spec.d
        vals = full[rows, cols]
        if spec.noise_sigma > 0:
            vals = vals + spec.noise_sigma * rng.standard_normal(vals.shape)
        return rows, cols, vals

    problem = McProblem(spec.d, spec.n, triplets(train_idx), triplets(test_idx), r=spec.r, ridge=spec.ridge)
    if return_truth:
        return problem, u_star, sv
    return problem


GENERATORS = {"pca": gen_pca, "karcher": gen_karcher, "mc": gen_mc}


def generate(spec: SyntheticSpec):
    return GENERATORS[spec.kind](spec)
