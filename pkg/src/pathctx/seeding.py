"""Named random substreams derived from a single root seed.

Every source of randomness in the package draws from a generator obtained
here, so components stay individually reproducible regardless of call order.
"""

import hashlib

import numpy as np


def substream(root_seed: int, name: str) -> np.random.Generator:
    """Return a generator deterministically keyed by (root_seed, name)."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    seed = int(root_seed) & 0xFFFFFFFFFFFFFFFF  # SeedSequence wants non-negative entropy
    return np.random.default_rng(np.random.SeedSequence([seed] + words))
