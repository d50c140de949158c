"""Deterministic seed derivation.

Pipeline stages fan out over thousands of independent work items (examples,
rooms, impulse-response images). Each item gets its own 64-bit seed derived
by hashing the master seed together with the item's identity, so results are
reproducible regardless of worker count or processing order.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def splitmix64(x):
    """SplitMix64 finalizer. Accepts a Python int or uint64 ndarray."""
    with np.errstate(over="ignore"):
        z = (np.uint64(x) if np.isscalar(x) else x.astype(np.uint64)) + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
    return int(z) if np.isscalar(x) else z


def _fold_token(state: int, token) -> int:
    if isinstance(token, str):
        for chunk in token.encode("utf-8"):
            state = splitmix64(state ^ chunk)
        return splitmix64(state ^ len(token))
    return splitmix64(state ^ (int(token) & 0xFFFFFFFFFFFFFFFF))


def derive_seed(master_seed: int, *tokens) -> int:
    """Hash ``master_seed`` with string/int tokens into a new 64-bit seed.

    Stable across runs and processes (no reliance on Python's salted hash).
    """
    state = splitmix64(master_seed & 0xFFFFFFFFFFFFFFFF)
    for token in tokens:
        state = _fold_token(state, token)
    return state


def hash_to_unit(values):
    """Map uint64 hashes to floats in [0, 1)."""
    return (np.asarray(values, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * (
        1.0 / 9007199254740992.0
    )
