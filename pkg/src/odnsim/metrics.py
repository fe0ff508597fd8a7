"""Flow, goodput, match-ratio and bandwidth instrumentation.

Recorders are append-only during a run; all analysis is post-processing.
Goodput counts wanted payload bits only (relayed transit bytes at an
intermediate hop never count) and is normalized to the per-ToR host
aggregate bandwidth R.
"""

import math
from dataclasses import dataclass

MICE_LIMIT_BYTES = 10_240      # flows strictly below this are mice


class NoDataError(ValueError):
    """A statistic was requested over an empty selection."""


@dataclass
class FlowRecord:
    fid: int
    src: int
    dst: int
    size_bytes: int
    arrival_ns: int
    completion_ns: int | None = None
    delivered: int = 0

    @property
    def is_mice(self) -> bool:
        return self.size_bytes < MICE_LIMIT_BYTES

    @property
    def fct_ns(self) -> int | None:
        if self.completion_ns is None:
            return None
        return self.completion_ns - self.arrival_ns


@dataclass
class MatchSample:
    epoch: int
    grants: int
    accepts: int


class Recorder:
    """Per-run measurement sink shared by both fabric implementations."""

    def __init__(self, tors: int, bucket_ns: int = 10_000):
        self.tors = tors
        self.bucket_ns = bucket_ns
        self.flows: list[FlowRecord] = []
        self.match_samples: list[MatchSample] = []
        self.counters: dict[str, int] = {}
        self._wanted = {}      # bucket -> per-ToR wanted payload bits
        self._transit = {}     # bucket -> per-ToR relayed (unwanted) bits
        self.deliveries = None     # optional (src,dst,t,port,fid,offset,n) log
        self.pair_epoch_bytes = None   # optional {(src,dst): {epoch: bytes}}

    def track_deliveries(self):
        self.deliveries = []

    def track_pairs(self, pairs):
        self.pair_epoch_bytes = {tuple(p): {} for p in pairs}

    def bump(self, key: str, amount: int = 1) -> None:
        self.counters[key] = self.counters.get(key, 0) + amount

    def new_flow(self, rec: FlowRecord) -> None:
        self.flows.append(rec)

    def wanted_bits(self, tor: int, t_ns: int, bits: int) -> None:
        bucket = self._wanted.setdefault(t_ns // self.bucket_ns, [0] * self.tors)
        bucket[tor] += bits

    def transit_bits(self, tor: int, t_ns: int, bits: int) -> None:
        bucket = self._transit.setdefault(t_ns // self.bucket_ns, [0] * self.tors)
        bucket[tor] += bits

    def match_sample(self, epoch: int, grants: int, accepts: int) -> None:
        if grants or accepts:
            self.match_samples.append(MatchSample(epoch, grants, accepts))

    def pair_bytes(self, src: int, dst: int, epoch: int, nbytes: int) -> None:
        if self.pair_epoch_bytes is None:
            return
        per = self.pair_epoch_bytes.get((src, dst))
        if per is not None:
            per[epoch] = per.get(epoch, 0) + nbytes

    # --- post-processing ----------------------------------------------------

    def completed(self):
        return [f for f in self.flows if f.completion_ns is not None]

    def goodput(self, r_bits_per_ns: float, start_ns: int, end_ns: int) -> float:
        """Mean over ToRs of wanted payload rate / R inside [start, end)."""
        if end_ns <= start_ns:
            raise NoDataError("empty goodput window")
        total_bits = 0
        b0, b1 = start_ns // self.bucket_ns, (end_ns - 1) // self.bucket_ns
        for b in range(b0, b1 + 1):
            row = self._wanted.get(b)
            if row:
                total_bits += sum(row)
        duration = end_ns - start_ns
        return total_bits / duration / (r_bits_per_ns * self.tors)

    def wanted_rate_series(self, bucket_range=None):
        """[(bucket_start_ns, total wanted bits)] sorted by time."""
        out = []
        for b in sorted(self._wanted):
            if bucket_range and not (bucket_range[0] <= b * self.bucket_ns < bucket_range[1]):
                continue
            out.append((b * self.bucket_ns, sum(self._wanted[b])))
        return out

    def timeseries_rows(self):
        """(t_ns, tor, wanted_bps, transit_bps) rows for every touched bucket."""
        rows = []
        buckets = sorted(set(self._wanted) | set(self._transit))
        for b in buckets:
            wanted = self._wanted.get(b)
            transit = self._transit.get(b)
            for tor in range(self.tors):
                w = wanted[tor] if wanted else 0
                x = transit[tor] if transit else 0
                if w or x:
                    rows.append((b * self.bucket_ns, tor,
                                 w * 1_000_000_000 // self.bucket_ns,
                                 x * 1_000_000_000 // self.bucket_ns))
        return rows


def fct_percentile(records, p: float, mice_only: bool = False) -> int:
    """Nearest-rank percentile of completed flow FCTs, in ns."""
    values = sorted(r.fct_ns for r in records
                    if r.completion_ns is not None and (not mice_only or r.is_mice))
    if not values:
        raise NoDataError("no completed flows in selection")
    rank = max(1, math.ceil(p / 100.0 * len(values)))
    return values[rank - 1]


def fct_mean(records, mice_only: bool = False) -> float:
    values = [r.fct_ns for r in records
              if r.completion_ns is not None and (not mice_only or r.is_mice)]
    if not values:
        raise NoDataError("no completed flows in selection")
    return sum(values) / len(values)


def mean_match_ratio(samples) -> float:
    """Mean of per-epoch accepts/grants; epochs with zero grants are skipped."""
    ratios = [s.accepts / s.grants for s in samples if s.grants > 0]
    if not ratios:
        raise NoDataError("no epochs with grants")
    return sum(ratios) / len(ratios)


def incast_finish_ns(records, fids, arrival_ns: int) -> int:
    """Finish time of an incast event: last completion minus the
    synchronized arrival instant."""
    chosen = [r for r in records if r.fid in set(fids)]
    if not chosen or any(r.completion_ns is None for r in chosen):
        raise NoDataError("incast event not fully completed")
    return max(r.completion_ns for r in chosen) - arrival_ns


def completion_fraction_within(records, limit_ns: int, mice_only: bool = True) -> float:
    """Fraction of (mice) flows that completed within limit_ns of arrival."""
    pool = [r for r in records if (not mice_only or r.is_mice)]
    if not pool:
        raise NoDataError("no flows in selection")
    done = sum(1 for r in pool if r.fct_ns is not None and r.fct_ns <= limit_ns)
    return done / len(pool)
