"""Flat optical fabric topologies and their round-robin slot schedules.

Two constructions are supported:

* parallel: S AWGRs of N ports each; AWGR p connects the port-p
  transmitter of every ToR to the port-p receiver of every ToR, so any
  port reaches any other ToR.
* thin_clos: ToRs are partitioned into N/W consecutive groups of W;
  port p of ToR t transmits into the AWGR whose outputs feed the port-p
  receivers of group (group(t)+p) mod (N/W). Each ordered ToR pair is
  joined by exactly one port-to-port path and always through identical
  port indices on both ends.
"""

from dataclasses import dataclass

PARALLEL = "parallel"
THIN_CLOS = "thin_clos"


class TopologyError(ValueError):
    """Topology parameters violate a construction constraint."""


@dataclass(frozen=True)
class TopologySpec:
    kind: str
    tors: int                  # N
    ports: int                 # S uplinks per ToR
    awgr_ports: int = 0        # W, thin_clos only
    per_port_rate: float = 100.0   # bits/ns
    rotate: bool = True        # per-epoch port rotation (parallel only)

    def validate(self):
        if self.kind not in (PARALLEL, THIN_CLOS):
            raise TopologyError(f"unknown topology kind {self.kind!r}")
        if self.tors <= 1:
            raise TopologyError(f"tors must be > 1, got {self.tors}")
        if self.ports < 1:
            raise TopologyError(f"ports must be >= 1, got {self.ports}")
        if self.per_port_rate <= 0:
            raise TopologyError("per_port_rate must be > 0")
        if self.kind == THIN_CLOS:
            w, n, s = self.awgr_ports, self.tors, self.ports
            need = -(-n // s)
            if w < need:
                raise TopologyError(f"awgr_ports={w} below minimum ceil(N/S)={need}")
            if n % w != 0:
                raise TopologyError(f"tors={n} not divisible by awgr_ports={w}")
            if n // w != s:
                raise TopologyError(
                    f"canonical thin_clos needs N/W == S, got {n}/{w} != {s}"
                )


class Topology:
    """Immutable wiring; shared read-only by every ToR."""

    def __init__(self, spec: TopologySpec):
        spec.validate()
        self.spec = spec
        self.kind = spec.kind
        self.n = spec.tors
        self.s = spec.ports
        self.w = spec.awgr_ports if spec.kind == THIN_CLOS else 0
        self.groups = self.n // self.w if self.w else 1
        self.rotate = spec.rotate and spec.kind == PARALLEL
        self._slot_cache = {}

    @classmethod
    def build(cls, spec: TopologySpec) -> "Topology":
        return cls(spec)

    # --- static structure -------------------------------------------------

    @property
    def round_slots(self) -> int:
        """Slots in one all-to-all round of the predefined schedule."""
        if self.kind == PARALLEL:
            return -(-(self.n - 1) // self.s)
        return self.w

    @property
    def awgr_count(self) -> int:
        if self.kind == PARALLEL:
            return self.s
        return -(-self.n * self.s // self.w)

    @property
    def awgr_size(self) -> int:
        return self.n if self.kind == PARALLEL else self.w

    def group(self, tor: int) -> int:
        return tor // self.w if self.w else 0

    def reachable(self, src: int, src_port: int, dst: int) -> bool:
        if self.kind == PARALLEL:
            return src != dst
        return src != dst and self.group(dst) == (self.group(src) + src_port) % self.groups

    def path_ports(self, src: int, dst: int) -> tuple:
        """Ports of src that reach dst (all of them on parallel, one on thin_clos)."""
        if src == dst:
            raise TopologyError("path_ports requires src != dst")
        if self.kind == PARALLEL:
            return tuple(range(self.s))
        return ((self.group(dst) - self.group(src)) % self.groups,)

    # --- predefined-phase schedule ----------------------------------------

    def slot_targets(self, epoch: int, slot: int):
        """Targets for one slot: targets[tor][port] -> destination or -1 (idle).

        Parallel: port p of ToR t aims at offset slot*S + ((p+epoch) mod S) + 1;
        offsets beyond N-1 are idle so each ordered pair appears exactly once
        per round. The (p+epoch) term rotates which physical port serves a
        pair from epoch to epoch (fault tolerance); rotation can be disabled.

        Thin-clos: port p of ToR t aims at W*((group(t)+p) mod G) + ((t+slot) mod W),
        idle on self. No rotation: each pair has a single port-to-port path.
        """
        key = (epoch % self.s if self.rotate else 0, slot)
        cached = self._slot_cache.get(key)
        if cached is not None:
            return cached
        n, s = self.n, self.s
        rot = key[0]
        rows = []
        if self.kind == PARALLEL:
            base = slot * s
            for t in range(n):
                row = []
                for p in range(s):
                    offset = base + ((p + rot) % s) + 1
                    row.append((t + offset) % n if offset < n else -1)
                rows.append(row)
        else:
            w, g = self.w, self.groups
            for t in range(n):
                gt = t // w
                member = (t + slot) % w
                row = []
                for p in range(s):
                    d = w * ((gt + p) % g) + member
                    row.append(d if d != t else -1)
                rows.append(row)
        self._slot_cache[key] = rows
        return rows

    def predefined_schedule(self, epoch: int):
        """All slots of one round, in order."""
        return [self.slot_targets(epoch, j) for j in range(self.round_slots)]

    def pair_slot_port(self, src: int, dst: int, epoch: int):
        """(slot, port) through which src transmits to dst in the given epoch."""
        if src == dst:
            raise TopologyError("no self slot")
        if self.kind == PARALLEL:
            o = (dst - src) % self.n
            rot = epoch % self.s if self.rotate else 0
            return (o - 1) // self.s, ((o - 1) % self.s - rot) % self.s
        return (dst - src) % self.w, (self.group(dst) - self.group(src)) % self.groups
