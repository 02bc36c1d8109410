"""Deterministic RNG derivation.

A single master seed fans out into independent, purpose-keyed streams. Philox
is counter-based, so streams derived from distinct (master, purpose, index)
triples never collide and results do not depend on draw order across streams.
Training and testing data use disjoint purpose keys by construction.
"""

from __future__ import annotations

import numpy as np

# stable purpose -> integer table; never reorder or reuse numbers
_PURPOSES = {
    "tx_bits": 1,
    "ase": 2,
    "pmd": 3,
    "train_shuffle": 4,
    "train_run": 5,
    "val_run": 6,
    "test_run": 7,
    "misc": 8,
}


def purpose_key(purpose: str) -> int:
    try:
        return _PURPOSES[purpose]
    except KeyError:
        raise KeyError(f"unknown RNG purpose {purpose!r}; add it to the table") from None


def rng_for(master_seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Generator for one (purpose, index) stream under a master seed."""
    ss = np.random.SeedSequence((int(master_seed), purpose_key(purpose), int(index)))
    return np.random.Generator(np.random.Philox(ss))
