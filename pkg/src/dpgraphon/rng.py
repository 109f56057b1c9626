"""Seedable randomness with a documented stream-splitting rule.

Two constructions are used, both 64-bit and platform independent:

* ``pair_uniforms`` draws one uniform per unordered vertex pair from the
  SplitMix64 mixer applied to ``key(seed, tag) + rank(i, j)``, where
  ``rank`` is the row-major rank of the pair in the strict upper triangle.
  Because every pair owns a fixed counter, the sampled graph does not
  depend on iteration order.
* ``substream`` derives an independent ``numpy`` Philox generator from the
  master seed and a tuple of string/int tags (via ``SeedSequence`` spawn
  keys).  Sequential draws (label shuffles, Laplace noise, restarts) each
  get their own tagged substream.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4B7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = (x + _GOLDEN) & _U64
    z = ((z ^ (z >> np.uint64(30))) * _MIX1) & _U64
    z = ((z ^ (z >> np.uint64(27))) * _MIX2) & _U64
    return z ^ (z >> np.uint64(31))


def _tag_hash(*tags) -> int:
    h = np.uint64(0)
    for tag in tags:
        if isinstance(tag, str):
            data = tag.encode()
        else:
            data = int(tag).to_bytes(8, "little", signed=False)
        for b in data:
            h = _splitmix64(np.asarray([h ^ np.uint64(b)], dtype=np.uint64))[0]
    return int(h)


def pair_uniforms(seed: int, n: int, tag: str = "edges") -> np.ndarray:
    """Strict upper-triangular matrix of uniforms in [0, 1), one per pair."""
    key = np.uint64(_tag_hash("pair", seed, tag))
    m = n * (n - 1) // 2
    counters = (np.arange(m, dtype=np.uint64) + (key << np.uint64(1))) & _U64
    bits = _splitmix64(counters)
    u = (bits >> np.uint64(11)).astype(np.float64) * (2.0**-53)
    out = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    out[iu] = u
    return out


def substream(seed: int, *tags) -> np.random.Generator:
    """Independent Philox generator for the given (seed, tags) purpose."""
    root = np.random.SeedSequence(entropy=seed, spawn_key=(_tag_hash(*tags),))
    return np.random.Generator(np.random.Philox(root))
