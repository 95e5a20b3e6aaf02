"""Counter-based random streams for the sampler.

Every draw of a chain comes from a Philox stream keyed by the run seed, a
stream tag and an index (rater, attempt), and positioned by the sweep
number. The numbers a voxel sees therefore never depend on how the work is
split between workers, and a sweep can be replayed in isolation.
"""

from enum import IntEnum
from typing import Union

import numpy as np

from .models import Kernel
from .utils import require

__all__ = ["Stream", "StreamFactory", "stream_generator"]

_TAG_BITS = 8
_INDEX_BITS = 56


class Stream(IntEnum):
    """Stream tags outside the Gibbs kernels"""
    SIMULATION = 32
    PRIOR = 33
    LABELS = 34
    TEST = 35


def stream_generator(seed: int, tag: Union[int, Kernel, Stream], sweep: int = 0,
                     index: int = 0, sub: int = 0) -> np.random.Generator:
    """Generator for the (seed, tag, index) stream at counter (sweep, sub)

    The 128-bit Philox key packs ``seed | tag << 64 | index << 72``; the
    256-bit counter starts at ``sweep << 128 | sub << 192`` so consecutive
    sweeps never overlap for any realistic number of draws.
    """
    require(0 <= seed < 2 ** 64, "seed must be a 64-bit unsigned integer")
    require(0 <= int(tag) < 2 ** _TAG_BITS, "stream tag out of range")
    require(0 <= index < 2 ** _INDEX_BITS, "stream index out of range")
    require(0 <= sweep < 2 ** 64 and 0 <= sub < 2 ** 64, "stream counter out of range")
    key = int(seed) | (int(tag) << 64) | (int(index) << (64 + _TAG_BITS))
    counter = (int(sweep) << 128) | (int(sub) << 192)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


class StreamFactory:
    """Hands out generators for one seeded run"""

    def __init__(self, seed: int):
        require(0 <= seed < 2 ** 64, "seed must be a 64-bit unsigned integer")
        self.seed = int(seed)

    def generator(self, tag: Union[int, Kernel, Stream], sweep: int = 0,
                  index: int = 0, sub: int = 0) -> np.random.Generator:
        return stream_generator(self.seed, tag, sweep=sweep, index=index, sub=sub)

    def kernel(self, kernel: Kernel, sweep: int, index: int = 0) -> np.random.Generator:
        """Stream of one kernel call in sweep ``sweep``"""
        return self.generator(kernel, sweep=sweep, index=index)
