"""Named, seedable RNG substreams.

Every stochastic component of an experiment (channel evolution, pilot noise,
evaluation noise, task sampling, parameter init) draws from its own substream
derived from (master seed, purpose label, ...indices).  Substreams are
independent of each other and of the method under test, so different methods
see identical channel realizations and pilot noise for the same experiment
cell, and changing e.g. n_eval never perturbs the channel draws.
"""

import hashlib

import numpy as np


def _label_to_int(label) -> int:
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *labels) -> np.random.Generator:
    """Derive an independent generator from a master seed and a label path.

    Labels may be strings, ints, or floats; they are hashed into the
    SeedSequence entropy, so distinct label paths give statistically
    independent streams.
    """
    entropy = [int(seed)] + [_label_to_int(lab) for lab in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))
