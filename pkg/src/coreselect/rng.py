"""Counter-based random streams.

Every stochastic choice in the pipeline draws from a Philox generator keyed
by an explicit tuple of integers (seed, epoch, example index, ...). Streams
for distinct keys are statistically independent and do not depend on call
order or thread count, which is what makes whole runs bit-reproducible.
"""

from __future__ import annotations

import numpy as np


def keyed_stream(*key: int) -> np.random.Generator:
    """Generator for the stream identified by an integer key tuple."""
    ss = np.random.SeedSequence(entropy=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
