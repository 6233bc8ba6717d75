import time
import numpy as np


def now_s():
    return time.perf_counter()


class Timer:
    """Accumulating wall-clock timer; pause() excludes diagnostic work."""

    def __init__(self):
        self.elapsed = 0.0
        self._t0 = None

    def start(self):
        self._t0 = now_s()
        return self

    def pause(self):
        if self._t0 is not None:
            self.elapsed += now_s() - self._t0
            self._t0 = None
        return self.elapsed

    def total(self):
        if self._t0 is None:
            return self.elapsed
        return self.elapsed + (now_s() - self._t0)


def make_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def child_seed(seed, *keys):
    # stable, order-sensitive derivation of sub-seeds (cells, replicas)
    ss = np.random.SeedSequence([int(seed)] + [int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def thin_svd(a):
    """Thin SVD with a canonical sign choice.

    Singular values come back in descending order (numpy already does
    this); each right-singular vector is flipped so that its first
    nonzero entry is positive, with the matching left vector flipped too.
    """
    w, s, vt = np.linalg.svd(a, full_matrices=False)
    scale = np.max(np.abs(vt), axis=1, keepdims=True)
    nz = np.abs(vt) > 1e-12 * np.maximum(scale, 1e-300)
    first = np.argmax(nz, axis=1)
    signs = np.sign(vt[np.arange(vt.shape[0]), first])
    signs[signs == 0] = 1.0
    return w * signs[None, :], s, vt * signs[:, None]


def qr_positive(a):
    # QR with diag(R) >= 0 so the Q factor stays close to a
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs[None, :]
