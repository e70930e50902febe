"""Seed derivation.

Every run starts from one 64-bit seed. Named sub-streams ("data", "init",
"shuffle", ...) and per-index seeds are derived with splitmix64 so that
components can be varied independently and parallel generation does not
depend on scheduling order.
"""

import zlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x):
    """One splitmix64 output for state ``x`` (already advanced)."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed, index):
    """Seed for item ``index`` of a stream rooted at ``seed``.

    Equivalent to the ``index``-th output of a splitmix64 generator whose
    state starts at ``seed``.
    """
    if index < 0:
        raise ValueError("index must be non-negative")
    return splitmix64((int(seed) + (int(index) + 1) * GOLDEN) & MASK64)


def substream(seed, name):
    """Seed for the named sub-stream of ``seed``."""
    tag = zlib.crc32(name.encode("utf-8"))
    return splitmix64((int(seed) ^ (tag << 32 | tag)) & MASK64)


def make_rng(seed, *names):
    """A numpy Generator for ``seed`` refined by a chain of stream names."""
    s = int(seed) & MASK64
    for name in names:
        s = substream(s, name) if isinstance(name, str) else derive_seed(s, name)
    return np.random.Generator(np.random.PCG64(s))
