"""Counter-based seeding for reproducible parallel Monte Carlo.

Every random decision in the simulation engines is a pure function of a 64-bit
seed, derived by avalanche mixing (SplitMix64 finalizer).  Child vertices chain
from their parent's seed, so the subtree below any vertex is a pure function of
that vertex's seed alone — simulating a fresh tree from ``seed(u)`` reproduces
u's subtree bit for bit.  Replicates chain from the master seed by index, which
makes replicate-level parallelism deterministic: thread count and batch
boundaries cannot change any draw.

Scalar helpers operate on Python ints (mod 2^64); the ``*_np`` twins operate on
numpy uint64 arrays with wrap-around semantics and return identical values.
"""

from __future__ import annotations

import numpy as np

_M64 = (1 << 64) - 1

# SplitMix64 finalizer constants (public domain, Steele et al.).
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Domain-separation salts: one per kind of decision drawn from a vertex seed.
DRAW_SALT = 0xD1B54A32D192ED03  # atom / Bernoulli uniforms
REP_SALT = 0xA0761D6478BD642F  # replicate root derivation


def mix64(z: int) -> int:
    """SplitMix64 avalanche finalizer on a 64-bit integer."""
    z &= _M64
    z = ((z ^ (z >> 30)) * _MIX1) & _M64
    z = ((z ^ (z >> 27)) * _MIX2) & _M64
    return (z ^ (z >> 31)) & _M64


def child_seed(parent_seed: int, index: int) -> int:
    """Seed of the ``index``-th child (0-based) of a vertex with ``parent_seed``."""
    return mix64(parent_seed ^ (((index + 1) * GOLDEN) & _M64))


def replicate_root(master_seed: int, replicate: int) -> int:
    """Root-vertex seed of replicate ``replicate`` under ``master_seed``."""
    return mix64(mix64(master_seed ^ REP_SALT) ^ (((replicate + 1) * GOLDEN) & _M64))


def unit_uniform(seed: int) -> float:
    """One uniform in [0, 1) drawn from ``seed`` (53 random bits)."""
    return (mix64(seed ^ DRAW_SALT) >> 11) * 2.0**-53


# --- numpy twins -----------------------------------------------------------

_MIX1_NP = np.uint64(_MIX1)
_MIX2_NP = np.uint64(_MIX2)
_GOLDEN_NP = np.uint64(GOLDEN)
_DRAW_NP = np.uint64(DRAW_SALT)


def mix64_np(z: np.ndarray) -> np.ndarray:
    """Vectorized :func:`mix64` on a uint64 array."""
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= _MIX1_NP
    z ^= z >> np.uint64(27)
    z *= _MIX2_NP
    z ^= z >> np.uint64(31)
    return z


def child_seeds_np(parent_seeds: np.ndarray, index: int) -> np.ndarray:
    """Vectorized :func:`child_seed` for one child index across many parents."""
    salt = np.uint64(((index + 1) * GOLDEN) & _M64)
    return mix64_np(parent_seeds ^ salt)


def replicate_roots_np(master_seed: int, replicates: np.ndarray) -> np.ndarray:
    """Vectorized :func:`replicate_root` over an array of replicate indices."""
    base = np.uint64(mix64(master_seed ^ REP_SALT))
    idx = (replicates.astype(np.uint64) + np.uint64(1)) * _GOLDEN_NP
    return mix64_np(base ^ idx)


def unit_uniforms_np(seeds: np.ndarray) -> np.ndarray:
    """Vectorized :func:`unit_uniform`."""
    bits = mix64_np(seeds ^ _DRAW_NP)
    return (bits >> np.uint64(11)).astype(np.float64) * 2.0**-53
