"""Deterministic discrete-event core.

The simulated clock is an integer nanosecond counter. Events fire in
(time, insertion sequence) order, so equal-time events are FIFO and a run
is a deterministic function of (config, seed).
"""

import hashlib
import heapq
import random
from dataclasses import dataclass


class SchedulingError(Exception):
    """An event was scheduled in the simulated past."""


@dataclass
class EngineStats:
    events_fired: int = 0


def derive_seed(seed: int, *tags) -> int:
    """Stable 64-bit child seed from a parent seed and a tag path.

    Uses blake2b rather than hash() so derived streams are identical
    across processes and platforms.
    """
    text = "%d|%s" % (seed, "/".join(str(t) for t in tags))
    digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class RandomStream(random.Random):
    """Seeded PRNG stream that can spawn independent child streams.

    Identical seed yields an identical draw sequence. Children are keyed by
    tag so adding more consumers (e.g. more ToRs) does not perturb the
    draws of existing ones.
    """

    def __init__(self, seed: int, *tags):
        self.seed_value = derive_seed(seed, *tags) if tags else int(seed)
        super().__init__(self.seed_value)

    def derive(self, *tags) -> "RandomStream":
        return RandomStream(self.seed_value, *tags)


class Simulator:
    """Event loop with an integer-ns clock and FIFO tie-breaking."""

    def __init__(self, trace: bool = False):
        self.now = 0
        self._heap = []
        self._seq = 0
        self.stats = EngineStats()
        # Optional trace of fired events, used by determinism checks.
        self.trace = [] if trace else None

    def schedule(self, at: int, fn, *args):
        at = int(at)
        if at < self.now:
            raise SchedulingError(
                f"cannot schedule event at {at} ns: clock is already at {self.now} ns"
            )
        self._seq += 1
        heapq.heappush(self._heap, (at, self._seq, fn, args))
        return (at, self._seq)

    def run_until(self, end: int) -> EngineStats:
        """Fire every pending event with time <= end, then set clock to end.

        Calling it twice with the same end is a no-op the second time.
        """
        end = int(end)
        heap = self._heap
        pop = heapq.heappop
        while heap and heap[0][0] <= end:
            t, seq, fn, args = pop(heap)
            self.now = t
            self.stats.events_fired += 1
            if self.trace is not None:
                self.trace.append((t, seq, getattr(fn, "__qualname__", repr(fn))))
            fn(*args)
        if end > self.now:
            self.now = end
        return self.stats
