"""Deterministic random-stream derivation.

Every random draw in a run comes from a stream derived from the single
master seed plus a string label (component name, entity ids, round index).
Labeled derivation keeps streams stable when work is reordered or
parallelized: adding workers cannot change which numbers an entity sees.
"""

from __future__ import annotations

import hashlib

import numpy as np


def rng_for(master_seed: int, *labels: object) -> np.random.Generator:
    """Return a Generator keyed by (master_seed, labels).

    The labels are joined into a canonical string and hashed, so any
    hashable/printable identifiers (names, ints, tuples) may be mixed.
    """
    tag = "|".join(str(part) for part in labels)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    seq = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, *words])
    return np.random.default_rng(seq)
