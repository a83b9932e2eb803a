"""EasyCore — Seed derivation and reproducible draws.

All randomness flows from one top-level seed. Each subsystem (data, init,
shuffle, attack-start, uniform-select, trades-start) gets its own stream keyed
by SHA-256 of (seed, subsystem), drawn from numpy's Philox counter-based
generator so runs agree bitwise across platforms.
"""

import hashlib
import logging

import numpy as np

logger = logging.getLogger(__name__)

SUBSYSTEMS = ("data", "init", "shuffle", "attack-start", "uniform-select", "trades-start")


def derive_seed(seed, subsystem):
    """64-bit key for one subsystem of a run."""
    digest = hashlib.sha256(f"{int(seed)}:{subsystem}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def generator(seed, subsystem):
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, subsystem)))


def fisher_yates(n, rng):
    """Seeded Fisher-Yates permutation of range(n)."""
    perm = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def uniform_ball(rng, center, radius):
    """Uniform draw from the l-inf ball of `radius` around `center`."""
    center = np.asarray(center, dtype=np.float64)
    if radius == 0:
        return center.copy()
    return center + rng.uniform(-radius, radius, size=center.shape)
