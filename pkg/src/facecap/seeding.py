"""Order-independent random streams keyed by work unit."""
import numpy as np


def unit_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the work unit ``key`` under master ``seed``.

    The stream depends only on ``(seed, key)``, never on scheduling.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key)))
