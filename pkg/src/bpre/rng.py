"""Deterministic replica streams built on the Philox counter-based generator.

Each (seed, stream id) pair keys an independent Philox stream; draws within
a replica advance the counter sequentially.  Streams never depend on
execution order or worker count, which is what makes parallel runs
byte-for-byte reproducible.

Stream ids partition into disjoint ranges per estimator kind so that, e.g.,
a naive run and a tilted run with the same seed do not share randomness.
"""

import numpy as np

_MASK = (1 << 64) - 1

# Offsets keep replica ids of different samplers from colliding.  Replica
# counts are desk scale (<< 2^40), so the ranges cannot overlap.
STREAM_SIM = 0
STREAM_TILT = 1 << 40
STREAM_TWO_PHASE = 2 << 40
STREAM_CELLS = 3 << 40
STREAM_LINEAGE = 4 << 40


def replica_stream(seed: int, replica: int) -> np.random.Generator:
    """Generator for one replica, independent of all other replicas."""
    key = np.array([seed & _MASK, replica & _MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
