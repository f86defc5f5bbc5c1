"""Counter-based random streams for reproducible simulation runs.

Every draw site is addressed by the tuple ``(seed, run, t, vehicle, stream)``
so a run produces the same numbers no matter how many runs execute, in what
order, or on which thread.  Streams are backed by Philox, whose 256-bit
counter we key directly.
"""

import numpy as np

STREAM_PROCESS = 0
STREAM_MEASURE = 1
STREAM_ATTACK = 2

_MASK = 0xFFFFFFFFFFFFFFFF


def stream_rng(seed: int, run: int, t: int, vehicle: int, stream: int) -> np.random.Generator:
    """Build a fresh generator positioned at the given draw site.

    Reference implementation: constructs a new Philox bit generator each
    call.  :class:`RunRandom` produces bitwise-identical draws faster.
    """
    key = np.array([seed & _MASK, run & _MASK], dtype=np.uint64)
    counter = np.array([0, t & _MASK, vehicle & _MASK, stream & _MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


class RunRandom:
    """All random streams of one simulation run.

    Holds a single Philox instance keyed by ``(seed, run)`` and repositions
    its counter for each draw site, which avoids per-site generator
    construction in the hot loop.
    """

    def __init__(self, seed: int, run: int = 0):
        self.seed = int(seed)
        self.run = int(run)
        key = np.array([self.seed & _MASK, self.run & _MASK], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=key)
        self._gen = np.random.Generator(self._bitgen)
        self._state = self._bitgen.state

    def at(self, t: int, vehicle: int, stream: int) -> np.random.Generator:
        st = self._state
        st["state"]["counter"][:] = (0, t & _MASK, vehicle & _MASK, stream & _MASK)
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bitgen.state = st
        return self._gen

    def process(self, t: int) -> np.random.Generator:
        return self.at(t, 0, STREAM_PROCESS)

    def measurement(self, t: int) -> np.random.Generator:
        return self.at(t, 0, STREAM_MEASURE)

    def attack(self, t: int) -> np.random.Generator:
        return self.at(t, 0, STREAM_ATTACK)
