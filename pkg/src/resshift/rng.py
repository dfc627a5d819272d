"""Seeded counter-based generators.

Every random stream is a Philox generator keyed by ``(seed, *keys)``, e.g.
``(global_seed, chain_id, t)``, so streams are independent of the order in
which they are consumed.
"""

import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return np.random.Generator(np.random.Philox(ss))


class ZeroNoise:
    """Stand-in generator whose normal draws are all zero.

    Used to freeze ``xi``/``eps`` in tests and perfect-predictor runs.
    """

    def standard_normal(self, size=None, dtype=np.float64):
        return np.zeros(size if size is not None else (), dtype=dtype)
