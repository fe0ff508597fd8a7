"""Distributed request/grant/accept port matching.

Destinations resolve many-to-one conflicts with round-robin GRANT rings
(one shared ring per ToR on the parallel topology, one per port on
thin-clos); sources resolve one-to-many conflicts with per-port ACCEPT
rings. A ring's pointer marks the highest-priority candidate and is
advanced past whoever was just picked, so the least recently served
candidate is always favored.

All functions here are pure given the ring states; the ToR state machine
owns its rings and calls in every epoch.
"""

import numpy as np

from .engine import RandomStream, derive_seed


class Ring:
    """Ordered cycle of candidate ids with a rotating priority pointer."""

    __slots__ = ("order", "pos", "pointer")

    def __init__(self, members, rng: RandomStream):
        self.order = list(members)
        rng.shuffle(self.order)
        self.pos = {m: i for i, m in enumerate(self.order)}
        self.pointer = 0

    def __len__(self):
        return len(self.order)

    def distance(self, member) -> int:
        return (self.pos[member] - self.pointer) % len(self.order)

    def select(self, candidates):
        """First candidate at or after the pointer; None if empty."""
        if not candidates:
            return None
        n = len(self.order)
        if len(candidates) * 8 >= n:
            # dense: scan the cycle, hit comes quickly
            order = self.order
            ptr = self.pointer
            for i in range(n):
                m = order[(ptr + i) % n]
                if m in candidates:
                    return m
            return None
        best = None
        best_d = n
        for m in candidates:
            d = (self.pos[m] - self.pointer) % n
            if d < best_d:
                best, best_d = m, d
        return best

    def advance_past(self, member) -> None:
        self.pointer = (self.pos[member] + 1) % len(self.order)


class GrantArbiter:
    """Destination-side port allocation for one ToR."""

    def __init__(self, tor: int, topo, rng: RandomStream):
        self.tor = tor
        self.topo = topo
        self.shared = topo.kind == "parallel"
        others = [t for t in range(topo.n) if t != tor]
        if self.shared:
            self.rings = [Ring(others, rng.derive("grant"))]
        else:
            # one ring per port over the sources that can reach this port
            self.rings = []
            for p in range(topo.s):
                members = [t for t in others if topo.reachable(t, p, tor)]
                self.rings.append(Ring(members, rng.derive("grant", p)))

    def reinit(self, rng: RandomStream) -> None:
        for i, ring in enumerate(self.rings):
            fresh = Ring(ring.order, rng.derive("grant-reinit", i))
            self.rings[i] = fresh

    def ring_for(self, port: int) -> Ring:
        return self.rings[0] if self.shared else self.rings[port]

    def grant(self, requests, ports, eligible=None, priority_key=None):
        """Allocate ports (ascending index) to requesters.

        requests: iterable of requesting source ids. eligible(src, port)
        may veto a candidate for a specific port (fault exclusions or
        iterative port masks). With priority_key, selection is by
        descending key with ring order breaking ties. A requester may win
        several ports when requesters are scarce; ports with no eligible
        requester stay ungranted.

        Returns a list of (port, src) grants.
        """
        grants = []
        req = set(requests)
        if not req:
            return grants
        for port in ports:
            ring = self.ring_for(port)
            if self.shared:
                cands = req
            else:
                cands = {s for s in req if s in ring.pos}
            if eligible is not None:
                cands = {s for s in cands if eligible(s, port)}
            if not cands:
                continue
            if priority_key is None:
                pick = ring.select(cands)
            else:
                pick = max(cands, key=lambda s: (priority_key(s), -ring.distance(s)))
            if pick is None:
                continue
            grants.append((port, pick))
            ring.advance_past(pick)
        return grants


class AcceptArbiter:
    """Source-side per-port grant acceptance for one ToR."""

    def __init__(self, tor: int, topo, rng: RandomStream):
        self.tor = tor
        self.rings = []
        for p in range(topo.s):
            if topo.kind == "parallel":
                members = [t for t in range(topo.n) if t != tor]
            else:
                # grants on port p can only come from destinations reached via p
                members = [t for t in range(topo.n)
                           if t != tor and topo.reachable(tor, p, t)]
            self.rings.append(Ring(members, rng.derive("accept", p)))

    def reinit(self, rng: RandomStream) -> None:
        for i, ring in enumerate(self.rings):
            self.rings[i] = Ring(ring.order, rng.derive("accept-reinit", i))

    def accept(self, grants_by_port, ports, eligible=None):
        """Accept at most one grant per source port.

        grants_by_port: dict port -> iterable of granting destination ids
        (a grant tagged with destination port k is only usable on source
        port k, the identical-port wiring). Returns list of (port, dst).
        """
        accepts = []
        for port in ports:
            offers = grants_by_port.get(port)
            if not offers:
                continue
            ring = self.rings[port]
            cands = set(offers)
            if eligible is not None:
                cands = {d for d in cands if eligible(d, port)}
            pick = ring.select(cands)
            if pick is None:
                continue
            accepts.append((port, pick))
            ring.advance_past(pick)
        return accepts


# --- efficiency model ------------------------------------------------------

def closed_form_efficiency(n: int) -> float:
    """Expected fraction of grants accepted under saturated competition
    among n peers: 1 - (1 - 1/n)^n. Decreases towards 1 - 1/e."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return 1.0 - (1.0 - 1.0 / n) ** n


def mc_efficiency_oracle(n: int, m: int, trials: int, seed: int) -> float:
    """Monte Carlo estimate of the saturated match ratio.

    Random model: every destination assigns each of its m ports to a
    requester drawn uniformly from n; a grant lands on the source port
    matching its destination port index, and each source port accepts one
    of the grants it received uniformly at random. A sampled grant is
    therefore accepted with probability 1/(X+1) where X, the number of
    competing grants on the same source port, is Binomial(n-1, 1/n).
    Each trial samples one grant's fate; m does not shift the mean (every
    port column is an independent copy of the same experiment) but is part
    of the model signature and is validated against the explicit
    simulation in the analysis module.
    """
    if n <= 1:
        return 1.0
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    rng = np.random.default_rng(derive_seed(seed, "mc-efficiency", n, m))
    competitors = rng.binomial(n - 1, 1.0 / n, size=trials)
    accepted = rng.random(trials) < 1.0 / (competitors + 1.0)
    return float(np.mean(accepted))


def mc_standard_error(p: float, trials: int) -> float:
    return (p * (1.0 - p) / trials) ** 0.5


# --- informative-request priorities (variants) ------------------------------

def datasize_key(pending_bytes: int) -> float:
    return float(pending_bytes)


def holdelay_key(hol_ages, alpha: float) -> float:
    """Weighted head-of-line waiting time over three priority levels.

    The two higher-priority levels carry mice traffic and get the bulk of
    the weight; the lowest (elephant) level is damped by alpha so a huge
    elephant backlog cannot mask waiting mice.
    """
    if len(hol_ages) != 3:
        raise ValueError("holdelay priority needs exactly three levels")
    h0, h1, h2 = hol_ages
    return (1.0 - alpha) * (h0 + h1) / 2.0 + alpha * h2


class StatefulMatrix:
    """Destination-side pending-byte beliefs for the stateful variant.

    Requests carry newly arrived byte counts; a grant is only given while
    the matrix shows pending data, and each grant tentatively deducts one
    scheduled phase of port capacity, reverted if the grant is rejected
    and committed if it is accepted.
    """

    def __init__(self, port_capacity: int):
        self.port_capacity = port_capacity
        self.pending = {}
        self._tentative = {}

    def on_new_bytes(self, src: int, nbytes: int) -> None:
        if nbytes:
            self.pending[src] = self.pending.get(src, 0) + nbytes

    def may_grant(self, src: int) -> bool:
        return self.pending.get(src, 0) > 0

    def on_grant(self, src: int, token) -> None:
        amount = min(self.pending.get(src, 0), self.port_capacity)
        self.pending[src] = self.pending.get(src, 0) - amount
        self._tentative[token] = (src, amount)

    def resolve(self, token, accepted: bool) -> None:
        src, amount = self._tentative.pop(token)
        if not accepted:
            self.pending[src] = self.pending.get(src, 0) + amount
        if self.pending.get(src, 0) < 0:
            raise AssertionError("stateful matrix went negative after commit")
