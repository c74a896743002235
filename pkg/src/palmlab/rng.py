"""Counter-based random stream derivation.

Every trial of every experiment draws from a generator seeded by
``mix64(master_seed, experiment_id, trial_index)``.  The mixing function is
a splitmix64 chain over the input words, published here so that runs can be
reproduced independently of worker count or scheduling order.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def mix64(*words: int) -> int:
    """Mix integer words into one 64-bit value (splitmix64 finalizer chain)."""
    acc = _GAMMA
    for w in words:
        acc = (acc + (int(w) & _MASK64)) & _MASK64
        acc ^= acc >> 30
        acc = (acc * _MIX1) & _MASK64
        acc ^= acc >> 27
        acc = (acc * _MIX2) & _MASK64
        acc ^= acc >> 31
    return acc


def experiment_id(name: str) -> int:
    """FNV-1a hash of an experiment name, used as a stream identifier."""
    acc = _FNV_OFFSET
    for byte in name.encode("utf-8"):
        acc ^= byte
        acc = (acc * _FNV_PRIME) & _MASK64
    return acc


def trial_rng(master_seed: int, experiment: str | int, trial_index: int) -> np.random.Generator:
    """Generator for one trial, independent of evaluation order."""
    exp = experiment_id(experiment) if isinstance(experiment, str) else int(experiment)
    return np.random.default_rng(mix64(master_seed, exp, trial_index))
