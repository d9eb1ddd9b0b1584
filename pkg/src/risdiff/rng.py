"""Seed-derived random streams.

Every stochastic operation in this package draws from a Generator obtained
through derive(), never from global state. Streams are split from the master
seed by a counter-like key path, so the n-th realization (or the k-th epoch,
or one sweep cell) gets the same stream whether it is produced serially or
by a parallel worker.
"""

import hashlib

import numpy as np

__all__ = ["derive", "derive_seed"]


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream key must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"stream key must be int or str, got {type(key).__name__}")


def derive(master_seed: int, *path) -> np.random.Generator:
    """Return the generator for the stream addressed by (master_seed, *path).

    Path elements are non-negative ints or short strings ("dataset", epoch
    index, trial index, ...). The same address always yields the same stream,
    independent of how many other streams were created before it.
    """
    spawn_key = tuple(_key_to_int(k) for k in path)
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(master_seed: int, *path) -> int:
    """A plain integer seed for the addressed stream (for records/manifests)."""
    spawn_key = tuple(_key_to_int(k) for k in path)
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=spawn_key)
    return int(seq.generate_state(1, dtype=np.uint64)[0])
