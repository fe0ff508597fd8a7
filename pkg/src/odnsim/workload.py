"""Flow generators: Poisson background traffic from piecewise size CDFs,
synchronized incasts, all-to-all bursts, and incast-over-background mixes.

Network load follows L = F / (R * N * tau): F mean flow size in bits, R the
per-ToR host-aggregate bandwidth in bits/ns, N the ToR count and tau the
network-wide mean inter-arrival time in ns.
"""

import bisect
import importlib.resources
from dataclasses import dataclass, field

from .engine import RandomStream

BUILTIN_CDFS = ("hadoop", "websearch", "google")


class WorkloadError(ValueError):
    pass


class SizeCdf:
    """Piecewise-linear flow-size CDF loaded from "size_bytes cum_prob" lines."""

    def __init__(self, points):
        if not points:
            raise WorkloadError("empty CDF")
        sizes = [p[0] for p in points]
        probs = [p[1] for p in points]
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise WorkloadError("CDF sizes must be strictly increasing")
        if any(b < a for a, b in zip(probs, probs[1:])):
            raise WorkloadError("CDF probabilities must be non-decreasing")
        if probs[0] < 0 or probs[-1] != 1.0:
            raise WorkloadError("CDF probabilities must lie in [0,1] and end at 1.0")
        self.sizes = sizes
        self.probs = probs

    @classmethod
    def load(cls, name_or_path: str) -> "SizeCdf":
        if name_or_path in BUILTIN_CDFS:
            ref = importlib.resources.files("odnsim.data") / f"{name_or_path}.cdf"
            text = ref.read_text()
        else:
            with open(name_or_path) as f:
                text = f.read()
        points = []
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            size, prob = line.split()
            points.append((int(size), float(prob)))
        return cls(points)

    def sample(self, rng) -> int:
        u = rng.random()
        i = bisect.bisect_left(self.probs, u)
        if i == 0:
            return self.sizes[0]
        if i >= len(self.sizes):
            return self.sizes[-1]
        p0, p1 = self.probs[i - 1], self.probs[i]
        s0, s1 = self.sizes[i - 1], self.sizes[i]
        if p1 == p0:
            return s1
        return max(1, round(s0 + (s1 - s0) * (u - p0) / (p1 - p0)))

    def mean(self) -> float:
        """Analytic mean of the piecewise-linear distribution."""
        total = self.probs[0] * self.sizes[0]
        for i in range(1, len(self.sizes)):
            dp = self.probs[i] - self.probs[i - 1]
            total += dp * (self.sizes[i] + self.sizes[i - 1]) / 2.0
        return total


@dataclass
class Flow:
    fid: int
    src: int
    dst: int
    size: int
    arrival_ns: int


@dataclass
class WorkloadSpec:
    kind: str = "poisson"            # poisson | incast | all_to_all | mixed | static_full
    load: float = 1.0                # L
    cdf: str = "hadoop"
    tors: int = 128                  # N
    bandwidth_bits_per_ns: float = 400.0   # R
    incast_degree: int = 15
    incast_size_bytes: int = 1024
    incast_at_ns: int = 10_000
    all_to_all_size_bytes: int = 30_720
    mix_fraction: float = 0.02
    mix_incast_degree: int = 20
    mix_incast_size_bytes: int = 1024
    static_full_bytes: int = 1 << 40

    def validate(self):
        if self.kind not in ("poisson", "incast", "all_to_all", "mixed", "static_full"):
            raise WorkloadError(f"unknown workload kind {self.kind!r}")
        if self.kind in ("poisson", "mixed") and not 0 < self.load <= 1:
            raise WorkloadError(f"load must be in (0, 1], got {self.load}")
        if self.kind == "incast" and not 1 <= self.incast_degree <= self.tors - 1:
            raise WorkloadError("incast degree must be in [1, N-1]")
        if self.kind == "mixed" and not 0 < self.mix_fraction < 1:
            raise WorkloadError("mix_fraction must be in (0, 1)")


def mean_interarrival_ns(mean_size_bytes: float, spec: WorkloadSpec) -> float:
    """tau from the load formula, network-wide."""
    f_bits = mean_size_bytes * 8.0
    return f_bits / (spec.bandwidth_bits_per_ns * spec.tors * spec.load)


class FlowSource:
    """Deterministic lazy flow stream; feeds arrival events to a network."""

    def __init__(self, spec: WorkloadSpec, rng: RandomStream):
        spec.validate()
        self.spec = spec
        self.rng = rng
        self.cdf = SizeCdf.load(spec.cdf) if spec.kind in ("poisson", "mixed") else None
        self._next_fid = 0
        self.incast_groups = {}      # group id -> (arrival_ns, [fids])

    def _fid(self) -> int:
        self._next_fid += 1
        return self._next_fid

    def _uniform_pair(self, rng):
        n = self.spec.tors
        src = rng.randrange(n)
        dst = rng.randrange(n - 1)
        if dst >= src:
            dst += 1
        return src, dst

    def poisson_flows(self, duration_ns: int):
        """Poisson arrivals, sizes by inverse CDF, uniform src/dst pairs."""
        rng = self.rng
        tau = mean_interarrival_ns(self.cdf.mean(), self.spec)
        t = 0.0
        while True:
            t += rng.expovariate(1.0 / tau)
            if t >= duration_ns:
                return
            src, dst = self._uniform_pair(rng)
            yield Flow(self._fid(), src, dst, self.cdf.sample(rng), int(t))

    def incast_flows(self, at_ns: int | None = None, degree: int | None = None,
                     size: int | None = None, group: int = 0):
        """One synchronized incast: `degree` distinct sources, one target."""
        spec = self.spec
        rng = self.rng
        at = spec.incast_at_ns if at_ns is None else at_ns
        degree = spec.incast_degree if degree is None else degree
        size = spec.incast_size_bytes if size is None else size
        dst = rng.randrange(spec.tors)
        others = [t for t in range(spec.tors) if t != dst]
        sources = rng.sample(others, degree)
        fids = []
        for src in sources:
            f = Flow(self._fid(), src, dst, size, int(at))
            fids.append(f.fid)
            yield f
        self.incast_groups[group] = (int(at), fids)

    def all_to_all_flows(self, size: int | None = None, at_ns: int = 0):
        size = self.spec.all_to_all_size_bytes if size is None else size
        if size <= 0:
            raise WorkloadError("all_to_all flow size must be > 0")
        for src in range(self.spec.tors):
            for dst in range(self.spec.tors):
                if src != dst:
                    yield Flow(self._fid(), src, dst, size, int(at_ns))

    def mixed_flows(self, duration_ns: int):
        """Poisson background plus Poisson-timed incast events whose byte
        rate is mix_fraction of the aggregate downlink bandwidth."""
        spec = self.spec
        background = list(self.poisson_flows(duration_ns))
        inc_rng = self.rng.derive("mix-incast")
        event_bits = spec.mix_incast_degree * spec.mix_incast_size_bytes * 8
        tau = event_bits / (spec.mix_fraction * spec.bandwidth_bits_per_ns * spec.tors)
        flows = background
        t = 0.0
        group = 0
        while True:
            t += inc_rng.expovariate(1.0 / tau)
            if t >= duration_ns:
                break
            group += 1
            saved_rng, self.rng = self.rng, inc_rng
            flows.extend(self.incast_flows(at_ns=int(t), degree=spec.mix_incast_degree,
                                           size=spec.mix_incast_size_bytes, group=group))
            self.rng = saved_rng
        flows.sort(key=lambda f: (f.arrival_ns, f.fid))
        return flows

    def static_full_flows(self):
        """One enormous flow per ordered pair: pins every queue saturated."""
        size = self.spec.static_full_bytes
        for src in range(self.spec.tors):
            for dst in range(self.spec.tors):
                if src != dst:
                    yield Flow(self._fid(), src, dst, size, 0)

    def flows(self, duration_ns: int):
        kind = self.spec.kind
        if kind == "poisson":
            return list(self.poisson_flows(duration_ns))
        if kind == "incast":
            return list(self.incast_flows())
        if kind == "all_to_all":
            return list(self.all_to_all_flows())
        if kind == "mixed":
            return self.mixed_flows(duration_ns)
        if kind == "static_full":
            return list(self.static_full_flows())
        raise WorkloadError(kind)
