"""Float64 numeric kernels shared by every other module.

Everything here is a pure function of its inputs.  Gradient correctness of
the rest of the package is checked against ``fd_gradient``, so this module
is deliberately small and heavily tested.
"""

from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np

# Below this norm a vector is treated as degenerate rather than normalized.
NORM_EPS = 1e-12


def as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def stable_logsumexp(xs) -> float:
    """log(sum(exp(xs))) computed with a max shift so large inputs cannot
    overflow."""
    xs = as_f64(xs)
    if xs.size == 0:
        raise ValueError("empty reduction")
    if not np.all(np.isfinite(xs)):
        raise ValueError("non-finite input to logsumexp")
    m = float(np.max(xs))
    return m + float(np.log(np.sum(np.exp(xs - m))))


def cosine_sim(a, b) -> float:
    """Cosine similarity clamped to [-1, 1] against rounding.

    Raises if either vector has norm below ``NORM_EPS``: a zero embedding is
    a programming error upstream, not an edge to absorb silently.
    """
    a = as_f64(a)
    b = as_f64(b)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < NORM_EPS or nb < NORM_EPS:
        raise ValueError("degenerate vector in cosine similarity")
    c = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, c))


def sigmoid(x):
    """Branch-stable logistic function; accepts scalars or arrays."""
    arr = as_f64(x)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out[0]) if scalar else out


def softmax(xs) -> np.ndarray:
    """Probability vector over the last axis, max-shifted for stability."""
    xs = as_f64(xs)
    shifted = xs - np.max(xs, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def fd_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    This is the oracle every hand-derived gradient in the package is
    validated against; it must stay independent of those implementations.
    """
    x = as_f64(x).copy()
    if h <= 0:
        raise ValueError("step size must be positive")
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for k in range(flat.size):
        xk = flat[k]
        flat[k] = xk + h
        fp = float(f(x))
        flat[k] = xk - h
        fm = float(f(x))
        flat[k] = xk
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value at coordinate {k}")
        gflat[k] = (fp - fm) / (2.0 * h)
    return g


def _canon_tag(tag) -> str:
    if isinstance(tag, (tuple, list)):
        return "(" + ",".join(_canon_tag(t) for t in tag) + ")"
    if isinstance(tag, (bool, np.bool_)):
        return "b:" + str(bool(tag))
    if isinstance(tag, (int, np.integer)):
        return "i:" + str(int(tag))
    if isinstance(tag, (float, np.floating)):
        return "f:" + repr(float(tag))
    if isinstance(tag, str):
        return "s:" + tag
    raise TypeError(f"unsupported rng tag type: {type(tag).__name__}")


class Rng:
    """Deterministic counter-based random stream.

    Wraps numpy's Philox generator keyed by a 128-bit seed.  The same seed
    replays the same stream bit for bit, and ``split`` derives an
    independent child stream from a tag, so callers can hand out
    per-video / per-batch / per-seed streams without coordinating draw
    order globally.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & ((1 << 128) - 1)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def split(self, tag) -> "Rng":
        material = f"{self.seed}|{_canon_tag(tag)}".encode()
        digest = hashlib.blake2b(material, digest_size=16).digest()
        return Rng(int.from_bytes(digest, "little"))

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, n, size=None, replace=True):
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"
