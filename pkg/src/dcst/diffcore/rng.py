import numpy as np


def seeded_rng(seed: int) -> np.random.Generator:
    """numpy Generator over PCG64; the same 64-bit seed yields the same draws."""
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))
