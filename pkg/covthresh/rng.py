"""
Seeded random streams.

Every random draw in covthresh comes from a substream identified by (seed, purpose, index). The
substream is a numpy Philox generator keyed by the seed, with purpose and index written into the
high words of its counter, so that substreams never overlap and any one of them can be
regenerated on its own. Results therefore do not depend on the order in which rows, splits or
replications are processed.
"""
from enum import IntEnum

import numpy as np

from covthresh.errors import InputError

MAX_SEED = 2 ** 64


class Purpose(IntEnum):
    ROWS = 1
    SPLITS = 2
    PERMUTATION = 3
    REPLICATION = 4
    BOOTSTRAP = 5
    MASK = 6


def validate_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise InputError(f"Seed must be an unsigned 64-bit integer, got {seed!r}.")
    if not 0 <= int(seed) < MAX_SEED:
        raise InputError(f"Seed {seed} is outside the unsigned 64-bit range.")
    return int(seed)


def substream(seed: int, purpose: Purpose, index: int = 0) -> np.random.Generator:
    """
    Independent generator for one (seed, purpose, index) triple.
    :param seed: Unsigned 64-bit master seed.
    :param purpose: What the stream is used for; keeps e.g. data rows and CV splits apart.
    :param index: Row, split or replication number.
    """
    seed = validate_seed(seed)
    if index < 0:
        raise InputError(f"Substream index must be nonnegative, got {index}.")
    counter = np.array([0, 0, index, int(purpose)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=seed, counter=counter))


def derive_seed(seed: int, purpose: Purpose, index: int = 0) -> int:
    """
    A fresh unsigned 64-bit seed for nested stochastic work, e.g. one replication of an experiment.
    """
    return int(substream(seed, purpose, index).bit_generator.random_raw())
