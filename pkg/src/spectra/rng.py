import numpy as np


def make_rng(seed):
    """Philox (counter-based, 64-bit) generator; identical streams on every platform."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def spawn_seeds(seed, n):
    """Independent 64-bit child seeds for repeated runs."""
    ss = np.random.SeedSequence(int(seed))
    return [int(c.generate_state(1, np.uint64)[0]) for c in ss.spawn(n)]
