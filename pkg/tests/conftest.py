import numpy as np
import pytest

from apps.synthetic import SyntheticSpec, gen_karcher, gen_mc, gen_pca


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def pca_small():
    # clear top-2 eigengap so the optimum is unique
    return gen_pca(SyntheticSpec(kind="pca", n=50, d=8, r=2, spiked=True,
                                 spike_strength=10.0, noise_sigma=0.5, seed=3))


@pytest.fixture
def karcher_small():
    return gen_karcher(SyntheticSpec(kind="karcher", n=20, d=10, r=2, spread=0.3, seed=5))


@pytest.fixture
def mc_small():
    return gen_mc(SyntheticSpec(kind="mc", n=40, d=15, r=2, oversampling=3.0,
                                condition_number=2.0, seed=7))
