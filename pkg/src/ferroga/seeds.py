"""Named, reproducible RNG substreams derived from one master seed."""

import hashlib

import numpy as np


def substream(master_seed: int, name: str) -> np.random.Generator:
    """Return a generator for the named substream of ``master_seed``.

    The same (seed, name) pair always yields an identical stream, and
    distinct names yield statistically independent streams. Names are
    hashed with SHA-256 so the mapping is stable across processes and
    Python hash randomization.
    """
    digest = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), digest]))


def substream_seed(master_seed: int, name: str) -> int:
    """Integer seed for the named substream (for libraries wanting an int)."""
    digest = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")
    return int(np.random.SeedSequence([int(master_seed), digest]).generate_state(1)[0])
