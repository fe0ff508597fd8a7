"""Per-destination multi-level FIFO byte queues.

Flow bytes are split across priority levels by cumulative byte thresholds
(PIAS-style: the first chunk of every flow lands in the highest-priority
level). Levels drain in index order, FIFO within a level, so a flow's
bytes always leave in offset order.
"""

from collections import deque

# Segment layout: [flow, offset, nbytes, enqueue_ns]  (mutable for cheap head pops)
SEG_FLOW, SEG_OFF, SEG_LEN, SEG_TS = range(4)

# Level used for relayed transit data at an intermediate ToR; drains before
# any locally sourced level.
TRANSIT_LEVEL = -1


class PerDestQueue:
    __slots__ = ("dst", "levels", "level_bytes", "total_bytes", "transit",
                 "transit_bytes", "enqueued_bytes")

    def __init__(self, dst: int, nlevels: int):
        self.dst = dst
        self.levels = [deque() for _ in range(nlevels)]
        self.level_bytes = [0] * nlevels
        self.total_bytes = 0
        self.transit = None          # created lazily by relay variant
        self.transit_bytes = 0
        self.enqueued_bytes = 0      # lifetime counter (stateful variant reporting)

    def push_flow(self, flow, size: int, now: int, thresholds) -> None:
        """Append one flow's bytes, split across levels at the thresholds."""
        prev = 0
        offset = 0
        for lvl, cut in enumerate(thresholds):
            if size > prev:
                take = min(size, cut) - prev
                self.levels[lvl].append([flow, offset, take, now])
                self.level_bytes[lvl] += take
                offset += take
            prev = cut
        rest = size - prev
        if rest > 0 or not thresholds:
            take = rest if thresholds else size
            self.levels[len(thresholds)].append([flow, offset, take, now])
            self.level_bytes[len(thresholds)] += take
        self.total_bytes += size
        self.enqueued_bytes += size

    def push_transit(self, flow, offset: int, nbytes: int, now: int) -> None:
        if self.transit is None:
            self.transit = deque()
        self.transit.append([flow, offset, nbytes, now])
        self.transit_bytes += nbytes
        self.total_bytes += nbytes

    def pop_upto(self, budget: int, single_level: bool = False):
        """Drain up to `budget` bytes in (transit, level 0, 1, ...) order.

        Returns a list of (flow, offset, nbytes, level) pieces. With
        single_level, only the first non-empty level is touched (the
        piggyback rule: one small packet from the highest-priority data).
        """
        out = []
        remaining = budget
        if self.transit:
            taken = self._pop_simple(self.transit, remaining, out, TRANSIT_LEVEL)
            self.transit_bytes -= taken
            self.total_bytes -= taken
            remaining -= taken
            if single_level and out:
                return out
        if remaining > 0:
            for lvl, dq in enumerate(self.levels):
                if not dq:
                    continue
                taken = self._pop_simple(dq, remaining, out, lvl)
                self.level_bytes[lvl] -= taken
                self.total_bytes -= taken
                remaining -= taken
                if single_level or remaining <= 0:
                    break
        return out

    def _pop_simple(self, dq, budget: int, out, level: int) -> int:
        taken = 0
        while dq and taken < budget:
            seg = dq[0]
            if seg[SEG_LEN] <= budget - taken:
                dq.popleft()
                out.append((seg[SEG_FLOW], seg[SEG_OFF], seg[SEG_LEN], level))
                taken += seg[SEG_LEN]
            else:
                take = budget - taken
                out.append((seg[SEG_FLOW], seg[SEG_OFF], take, level))
                seg[SEG_OFF] += take
                seg[SEG_LEN] -= take
                taken += take
        return taken

    def pop_lowest_upto(self, budget: int):
        """Drain only the lowest-priority level (relay eligibility rule)."""
        out = []
        dq = self.levels[-1]
        if dq:
            taken = self._pop_simple(dq, budget, out, len(self.levels) - 1)
            self.level_bytes[-1] -= taken
            self.total_bytes -= taken
        return out

    def push_front(self, pieces) -> None:
        """Re-credit lost pieces at the head of their original levels.

        `pieces` must be in the order they were popped; they are pushed
        back front-most first so offsets stay ascending.
        """
        for flow, offset, nbytes, level in reversed(pieces):
            seg = [flow, offset, nbytes, 0]
            if level == TRANSIT_LEVEL:
                if self.transit is None:
                    self.transit = deque()
                self.transit.appendleft(seg)
                self.transit_bytes += nbytes
            else:
                self.levels[level].appendleft(seg)
                self.level_bytes[level] += nbytes
            self.total_bytes += nbytes

    def hol_age(self, level: int, now: int) -> int:
        """Waiting time of the head-of-line segment of a level; 0 if empty."""
        dq = self.levels[level]
        if not dq:
            return 0
        return now - dq[0][SEG_TS]

    def oldest_ts(self) -> int | None:
        ts = None
        if self.transit:
            ts = self.transit[0][SEG_TS]
        for dq in self.levels:
            if dq and (ts is None or dq[0][SEG_TS] < ts):
                ts = dq[0][SEG_TS]
        return ts


def split_levels(size: int, thresholds) -> list:
    """Bytes of a flow landing in each level, e.g. 15 KB -> [1 KB, 9 KB, 5 KB]."""
    out = []
    prev = 0
    for cut in thresholds:
        out.append(max(0, min(size, cut) - prev))
        prev = cut
    out.append(max(0, size - prev))
    return out
