"""Per-ToR state machine for the on-demand (negotiator) fabric.

Each ToR keeps per-destination multi-level queues, grant/accept rings,
and the pipelined scheduling state. A scheduling process spans three
epochs: requests ride epoch e's control slots, the destination answers
with grants in e+D, the source accepts in e+2D and transmits in the same
epoch's scheduled phase (D = pipeline depth).

Epoch-boundary processing consumes the inbox bucket of messages sent
pipeline_depth epochs ago, runs GRANT on received requests and ACCEPT on
received grants, reserves ports for this epoch's scheduled phase, and
fills the per-peer outboxes drained by the control slots.
"""

from .faults import LinkHealth, EGRESS, INGRESS
from .matching import AcceptArbiter, GrantArbiter, datasize_key, holdelay_key
from .queues import PerDestQueue


class Inbox:
    """Messages received for one send-epoch bucket."""

    __slots__ = ("requests", "grants", "accepts", "feedback", "reports",
                 "relay_requests", "relay_grants")

    def __init__(self):
        self.requests = []       # base: src id; variants append richer tuples
        self.grants = []         # (dst, ports) or variant-specific
        self.accepts = []        # (src, grant_epoch, ports)
        self.feedback = []       # (peer, ok, port)
        self.reports = []        # (tor, port, direction, failed)
        self.relay_requests = []  # (src, final_dst, nbytes)
        self.relay_grants = []   # (intermediate, port, max_bytes, final_dst, token)


class TorState:
    def __init__(self, tid: int, net, rng):
        self.tid = tid
        self.net = net
        topo = net.topo
        self.queues: dict[int, PerDestQueue] = {}
        self.grant_arbiter = GrantArbiter(tid, topo, rng)
        self.accept_arbiter = AcceptArbiter(tid, topo, rng)
        self.rng = rng

        self.inbox = {}
        self.inbox_cur = None

        # outboxes drained by the control slots of the current epoch
        self.grants_out = {}     # dst -> list of (port) or variant tuples
        self.accepts_out = {}    # dst -> (grant_epoch, ports)
        self.requests_out = {}   # dst -> variant request payload
        self.feedback_out = {}   # dst -> (ok, port)

        self.reservations = []   # [(port, dst)] for this epoch's scheduled phase
        self.relay_sends = []    # [(port, intermediate, max_bytes, final, token)]
        self.hungry = {}         # dst -> [ports, packets_sent, phase_start]

        # faults
        self.health = LinkHealth(topo.s, net.k_detect)
        self.known_failed = set()     # (tor, port, direction) network-wide
        self.announce_active = []     # broadcast with every msg this epoch
        self.port_rx = [-1] * topo.s  # last send-epoch with a reception per port
        self.pair_rx = [-1] * topo.n  # last send-epoch with a reception per peer
        self.pair_rx_port = [0] * topo.n

        self.reported_bytes = {}      # stateful variant: dst -> bytes reported
        self.variant_state = None     # attached by variants module

    # --- queues -----------------------------------------------------------

    def queue_for(self, dst: int) -> PerDestQueue:
        q = self.queues.get(dst)
        if q is None:
            q = PerDestQueue(dst, self.net.nlevels)
            self.queues[dst] = q
        return q

    def on_flow_arrival(self, rec, now: int) -> None:
        self.queue_for(rec.dst).push_flow(rec, rec.size_bytes, now, self.net.pq_thresholds)

    # --- epoch plumbing -----------------------------------------------------

    def new_epoch(self, e: int) -> None:
        box = Inbox()
        self.inbox[e] = box
        self.inbox_cur = box
        self.announce_active = []

    def boundary(self, e: int):
        """Process the matured inbox bucket; returns (grants, accepts) counts."""
        net = self.net
        bucket = self.inbox.pop(e - net.depth, None)
        if bucket is None:
            bucket = Inbox()

        if net.faults_on:
            self._apply_reports(bucket.reports)
            self._detect(e, bucket.feedback)

        if net.variant_hooks is not None:
            net.variant_hooks.pre_boundary(self, e, bucket)

        grants = self._grant_step(e, bucket)
        accepts = self._accept_step(e, bucket)
        self.hungry.clear()
        return grants, accepts

    # --- matching steps ------------------------------------------------------

    def _grant_ports(self):
        """Receive ports this ToR may still allocate (healthy ingress)."""
        s = self.net.topo.s
        if not self.net.faults_on:
            return range(s)
        return [p for p in range(s) if not self.health.ingress_excluded(p)]

    def _grant_step(self, e: int, bucket) -> int:
        net = self.net
        hooks = net.variant_hooks
        if hooks is not None and hooks.owns_grant:
            return hooks.grant_step(self, e, bucket)

        requests = []
        keys = None
        if net.variant == "base":
            requests = bucket.requests
        else:
            keys = {}
            for src, key in bucket.requests:
                requests.append(src)
                keys[src] = key
            if net.variant == "stateful":
                matrix = self.variant_state
                for src in requests:
                    matrix.on_new_bytes(src, keys[src])
        if not requests:
            return 0

        eligible = None
        if net.faults_on:
            known = self.known_failed
            eligible = lambda src, port: (src, port, EGRESS) not in known
        if net.variant == "stateful":
            matrix = self.variant_state
            base_elig = eligible
            eligible = (lambda src, port: matrix.may_grant(src)
                        and (base_elig is None or base_elig(src, port)))

        priority_key = None
        if net.variant in ("datasize", "holdelay"):
            priority_key = keys.__getitem__

        grants = self.grant_arbiter.grant(requests, self._grant_ports(),
                                          eligible=eligible, priority_key=priority_key)
        for port, src in grants:
            self.grants_out.setdefault(src, []).append(port)
            if net.variant == "stateful":
                self.variant_state.on_grant(src, (src, e, port))
        count = len(grants)
        if hooks is not None and hooks.has_post:
            count += hooks.post_grant(self, e, bucket, {p for p, _ in grants})
        return count

    def _accept_ports(self):
        s = self.net.topo.s
        if not self.net.faults_on:
            return range(s)
        return [p for p in range(s) if not self.health.egress_excluded(p)]

    def _accept_step(self, e: int, bucket) -> int:
        net = self.net
        hooks = net.variant_hooks
        if hooks is not None and hooks.owns_accept:
            return hooks.accept_step(self, e, bucket)

        by_port = {}
        for dst, ports in bucket.grants:
            for p in ports:
                by_port.setdefault(p, []).append(dst)

        self.reservations = []
        accepts = []
        if by_port:
            eligible = None
            if net.faults_on:
                known = self.known_failed
                eligible = lambda dst, port: (dst, port, INGRESS) not in known
            accepts = self.accept_arbiter.accept(by_port, self._accept_ports(),
                                                 eligible=eligible)
            grant_epoch = e - net.depth
            by_dst = {}
            for port, dst in accepts:
                self.reservations.append((port, dst))
                by_dst.setdefault(dst, []).append(port)
            for dst, ports in by_dst.items():
                self.accepts_out[dst] = (grant_epoch, tuple(ports))
        count = len(accepts)
        if hooks is not None and hooks.has_post:
            count += hooks.post_accept(self, e, bucket, {p for p, _ in accepts})
        return count

    # --- fault handling -------------------------------------------------------

    def _apply_reports(self, reports) -> None:
        for tor, port, direction, failed in reports:
            key = (tor, port, direction)
            if failed:
                if key not in self.known_failed:
                    self.known_failed.add(key)
                    self.net.recredit(self.tid, key)
            else:
                self.known_failed.discard(key)

    def _announce(self, port: int, direction: str, failed: bool) -> None:
        key = (self.tid, port, direction)
        if failed:
            self.known_failed.add(key)
            self.net.recredit(self.tid, key)
        else:
            self.known_failed.discard(key)
        self.announce_active.append((self.tid, port, direction, failed))

    def _detect(self, e: int, feedback) -> None:
        """Advance link beliefs using epoch e-D's expected traffic."""
        net = self.net
        probe_epoch = e - net.depth
        if probe_epoch < 0:
            return
        # ingress: every healthy port hears several peers per epoch
        for p in range(net.topo.s):
            ok = self.port_rx[p] >= probe_epoch
            outcome = self.health.ingress_step(p, ok)
            if outcome == "failed":
                self._announce(p, INGRESS, True)
                net.recorder.bump("ingress_confirmed")
            elif outcome == "repaired":
                self._announce(p, INGRESS, False)
                net.recorder.bump("ingress_reinstated")
        # egress: aggregate per-port delivery feedback from peers
        if feedback:
            seen = {}
            for _, ok, port in feedback:
                prev = seen.get(port)
                seen[port] = ok or (prev if prev is not None else False)
            for port in sorted(seen):
                outcome = self.health.egress_step(port, seen[port])
                if outcome == "failed":
                    self._announce(port, EGRESS, True)
                    net.recorder.bump("egress_confirmed")
                elif outcome == "repaired":
                    self._announce(port, EGRESS, False)
                    net.recorder.bump("egress_reinstated")
        # feedback for the peers about what we heard from them
        self.feedback_out = {}
        topo = net.topo
        for src in range(topo.n):
            if src == self.tid:
                continue
            ok = self.pair_rx[src] >= probe_epoch
            if ok:
                port = self.pair_rx_port[src]
            else:
                _, port = topo.pair_slot_port(src, self.tid, probe_epoch)
            self.feedback_out[src] = (ok, port)
