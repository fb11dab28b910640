"""Deterministic random-number streams for the simulator.

All stochastic components draw from Philox, a counter-based generator, so
runs are reproducible and independently-seeded blocks can be produced in
any order or in parallel.  Sub-streams are derived by folding the master
seed together with integer stream labels through ``numpy.random.SeedSequence``.

The simulator's randomness emulates physics; it is explicitly *not* a
security claim.  Likewise the extractor-seed expander built on top of this
module is a stand-in for the independent uniform seed a cryptographic
deployment must supply.
"""

from __future__ import annotations

import numpy as np


def spawn_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return a Philox generator for (seed, *stream).

    Distinct stream labels give statistically independent streams; the same
    labels always reproduce the same stream.
    """
    seq = np.random.SeedSequence((int(seed),) + tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(seq))
