"""Directed-link failure injection and belief tracking.

A link is one direction of one ToR port: egress (transmit fiber into the
fabric) or ingress (receive fiber out of it). While failed, anything sent
over it is silently lost at the physical layer. Detection is built on the
always-on control exchange: a port that stops producing receptions for
k_detect consecutive epochs is a failed ingress; k_detect consecutive
negative delivery feedbacks about a port mean a failed egress. Confirmed
failures are broadcast and excluded from scheduling until the same number
of consecutive successes confirms the repair.
"""

from dataclasses import dataclass

from .engine import RandomStream

EGRESS = "egress"
INGRESS = "ingress"

HEALTHY = "healthy"
SUSPECT = "suspect"
CONFIRMED_FAILED = "failed"


@dataclass(frozen=True)
class LinkFaultEvent:
    tor: int
    port: int
    direction: str
    fail_ns: int
    repair_ns: int

    def validate(self):
        if self.direction not in (EGRESS, INGRESS):
            raise ValueError(f"direction must be egress|ingress, got {self.direction}")
        if not self.fail_ns < self.repair_ns:
            raise ValueError("fail_ns must precede repair_ns")


def random_fault_set(fraction: float, tors: int, ports: int, direction: str,
                     fail_ns: int, repair_ns: int, seed: int):
    """Fail a uniform fraction of all (tor, port) links of one direction."""
    links = [(t, p) for t in range(tors) for p in range(ports)]
    count = round(fraction * len(links))
    rng = RandomStream(seed, "fault-set")
    chosen = rng.sample(links, count)
    return [LinkFaultEvent(t, p, direction, fail_ns, repair_ns)
            for t, p in sorted(chosen)]


class FaultPlane:
    """Physical truth: which directed links are down right now."""

    def __init__(self, events):
        self.events = list(events)
        for ev in self.events:
            ev.validate()
        self._down = set()

    def apply(self, sim) -> None:
        for ev in self.events:
            key = (ev.tor, ev.port, ev.direction)
            sim.schedule(ev.fail_ns, self._down.add, key)
            sim.schedule(ev.repair_ns, self._down.discard, key)

    def egress_down(self, tor: int, port: int) -> bool:
        return (tor, port, EGRESS) in self._down

    def ingress_down(self, tor: int, port: int) -> bool:
        return (tor, port, INGRESS) in self._down

    def any_down(self) -> bool:
        return bool(self._down)


class LinkHealth:
    """One ToR's beliefs about its own ports, fed by the control plane.

    Egress beliefs come from peers' delivery feedback; ingress beliefs
    from the per-port reception pattern. Counters reset on any success.
    """

    def __init__(self, ports: int, k_detect: int):
        self.k = k_detect
        self.egress_miss = [0] * ports
        self.ingress_miss = [0] * ports
        self.egress_ok = [0] * ports      # consecutive successes while excluded
        self.ingress_ok = [0] * ports
        self.egress_state = [HEALTHY] * ports
        self.ingress_state = [HEALTHY] * ports

    def _step(self, state, miss, ok, port, success):
        """Advance one belief; returns 'failed'/'repaired' on a transition."""
        if state[port] == CONFIRMED_FAILED:
            if success:
                ok[port] += 1
                if ok[port] >= self.k:
                    state[port] = HEALTHY
                    miss[port] = 0
                    ok[port] = 0
                    return "repaired"
            else:
                ok[port] = 0
            return None
        if success:
            miss[port] = 0
            state[port] = HEALTHY
            return None
        miss[port] += 1
        state[port] = SUSPECT
        if miss[port] >= self.k:
            state[port] = CONFIRMED_FAILED
            ok[port] = 0
            return "failed"
        return None

    def egress_step(self, port: int, success: bool):
        return self._step(self.egress_state, self.egress_miss, self.egress_ok,
                          port, success)

    def ingress_step(self, port: int, success: bool):
        return self._step(self.ingress_state, self.ingress_miss, self.ingress_ok,
                          port, success)

    def egress_excluded(self, port: int) -> bool:
        return self.egress_state[port] == CONFIRMED_FAILED

    def ingress_excluded(self, port: int) -> bool:
        return self.ingress_state[port] == CONFIRMED_FAILED
