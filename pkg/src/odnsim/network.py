"""Network-level event loop for the on-demand (negotiator) fabric.

Each epoch is driven by one boundary event, one event per control slot and
one event for the scheduled phase. Control messages are applied to the
receiver's inbox bucket at send time with their true arrival timestamps;
this is safe because receivers only act on inboxes at epoch boundaries,
and config validation guarantees every message lands before the boundary
that consumes it.
"""

from .engine import RandomStream, Simulator
from .faults import EGRESS, INGRESS, FaultPlane
from .metrics import FlowRecord, Recorder
from .queues import TRANSIT_LEVEL
from .tor import TorState


class InvariantError(AssertionError):
    """A conflict-freedom or accounting invariant was violated."""


class OnDemandNetwork:
    def __init__(self, topo, epoch_cfg, recorder: Recorder, seed: int, *,
                 propagation_ns: int = 2000,
                 pq_thresholds=(1024, 10240),
                 request_threshold_pkts: int = 3,
                 variant: str = "base", variant_params=None,
                 fault_events=(), faults_enabled: bool = False,
                 k_detect: int = 3,
                 reinit_rings_each_epoch: bool = False,
                 sim: Simulator | None = None):
        self.topo = topo
        self.cfg = epoch_cfg
        self.recorder = recorder
        self.sim = sim or Simulator()
        self.prop_ns = propagation_ns
        self.depth = epoch_cfg.pipeline_depth
        self.k_detect = k_detect
        self.variant = variant
        self.variant_params = variant_params or {}
        self.reinit_rings = reinit_rings_each_epoch

        self.piggyback = epoch_cfg.piggyback
        self.pb_payload = epoch_cfg.piggyback_payload_bytes
        self.pq_thresholds = list(pq_thresholds)
        self.nlevels = len(self.pq_thresholds) + 1
        self.req_threshold_bytes = (request_threshold_pkts * self.pb_payload
                                    if self.piggyback else 0)

        self.fault_plane = FaultPlane(fault_events)
        self.faults_on = faults_enabled or bool(fault_events)
        self.loss_ledger = {}   # (tor, port, dir) -> {src: [(dst, pieces)]}

        root = RandomStream(seed)
        self.tors = [TorState(t, self, root.derive("tor", t))
                     for t in range(topo.n)]

        self.variant_hooks = None
        if variant != "base":
            from . import variants
            self.variant_hooks = variants.make_hooks(variant, self)
            for tor in self.tors:
                self.variant_hooks.attach(tor)

        self.cur_epoch = -1
        self._phase_start = 0
        self._reservation_owner = {}
        self._ring_rng = root.derive("ring-reinit")

    # --- run control -----------------------------------------------------------

    def start(self) -> None:
        self.fault_plane.apply(self.sim)
        self.sim.schedule(0, self._epoch_start, 0)

    def run(self, duration_ns: int) -> None:
        self.start()
        self.sim.run_until(duration_ns)

    def inject_flow(self, flow) -> None:
        """Schedule one workload flow's arrival."""
        self.sim.schedule(flow.arrival_ns, self._flow_arrival, flow)

    def _flow_arrival(self, flow) -> None:
        now = self.sim.now
        rec = FlowRecord(flow.fid, flow.src, flow.dst, flow.size, now)
        self.recorder.new_flow(rec)
        tor = self.tors[flow.src]
        tor.on_flow_arrival(rec, now)
        entry = tor.hungry.get(flow.dst)
        if entry is not None:
            self._drain_reservation(tor, flow.dst, entry, refill_at=now)

    # --- epoch machinery ----------------------------------------------------------

    def _epoch_start(self, e: int) -> None:
        t0 = self.sim.now
        self.cur_epoch = e
        cfg = self.cfg
        for tor in self.tors:
            tor.new_epoch(e)
        if self.reinit_rings:
            for tor in self.tors:
                tor.grant_arbiter.reinit(self._ring_rng.derive("g", e, tor.tid))
                tor.accept_arbiter.reinit(self._ring_rng.derive("a", e, tor.tid))
        grants = accepts = 0
        for tor in self.tors:
            g, a = tor.boundary(e)
            grants += g
            accepts += a
        self.recorder.match_sample(e, grants, accepts)
        self._check_reservations()
        sim = self.sim
        for j in range(cfg.predefined_slots):
            sim.schedule(t0 + j * cfg.predefined_slot_ns, self._predefined_slot, e, j)
        sim.schedule(t0 + cfg.predefined_ns, self._scheduled_phase, e)
        sim.schedule(t0 + cfg.epoch_ns, self._epoch_start, e + 1)

    def _check_reservations(self) -> None:
        """No two transmitters may share a (destination, port) this epoch."""
        owner = {}
        for tor in self.tors:
            for port, dst in tor.reservations:
                key = (dst, port)
                if key in owner:
                    raise InvariantError(
                        f"(dst={dst}, port={port}) reserved by both "
                        f"ToR {owner[key]} and ToR {tor.tid} in epoch {self.cur_epoch}"
                    )
                owner[key] = tor.tid
            for port, mid, _, _, _ in tor.relay_sends:
                key = (mid, port)
                if key in owner:
                    raise InvariantError(
                        f"(dst={mid}, port={port}) double-booked by relay from "
                        f"ToR {tor.tid} in epoch {self.cur_epoch}"
                    )
                owner[key] = tor.tid
        self._reservation_owner = owner

    # --- predefined phase ----------------------------------------------------------

    def _predefined_slot(self, e: int, j: int) -> None:
        sim_now = self.sim.now
        cfg = self.cfg
        targets = self.topo.slot_targets(e, j)
        deliver_t = sim_now + cfg.predefined_slot_ns + self.prop_ns
        threshold = self.req_threshold_bytes
        pb_on = self.piggyback
        pb_bytes = self.pb_payload
        faults = self.faults_on
        plane = self.fault_plane
        hooks = self.variant_hooks
        basic_requests = hooks is None or not hooks.suppress_basic_requests
        tors = self.tors
        recorder = self.recorder

        for t, tor in enumerate(tors):
            row = targets[t]
            queues = tor.queues
            gout = tor.grants_out
            aout = tor.accepts_out
            rout = tor.requests_out
            announce = tor.announce_active
            fb_out = tor.feedback_out
            health = tor.health
            for p in range(len(row)):
                d = row[p]
                if d < 0:
                    continue
                q = queues.get(d)
                pending = q.total_bytes if q is not None else 0

                egress_excluded = faults and health.egress_excluded(p)
                dst_ingress_known_bad = faults and (d, p, INGRESS) in tor.known_failed

                piggy = None
                if (pb_on and pending > 0 and not egress_excluded
                        and not dst_ingress_known_bad):
                    piggy = q.pop_upto(pb_bytes, single_level=True)

                lost = faults and (plane.egress_down(t, p) or plane.ingress_down(d, p))
                if lost:
                    recorder.bump("lost_msgs")
                    if piggy:
                        nbytes = sum(pc[2] for pc in piggy)
                        recorder.bump("lost_bytes", nbytes)
                        key = ((t, p, EGRESS) if plane.egress_down(t, p)
                               else (d, p, INGRESS))
                        self.loss_ledger.setdefault(key, {}).setdefault(t, []).append(
                            (d, piggy))
                    continue

                dtor = tors[d]
                box = dtor.inbox_cur
                if pending > threshold and basic_requests:
                    if hooks is None:
                        box.requests.append(t)
                    else:
                        entry = hooks.request_payload(tor, d, q, sim_now, e)
                        if entry is not None:
                            box.requests.append(entry)
                extra_req = rout.pop(d, None) if rout else None
                if extra_req is not None:
                    box.requests.append(extra_req)
                g = gout.pop(d, None) if gout else None
                if g is not None:
                    box.grants.append((t, tuple(g)) if isinstance(g, list) else g)
                a = aout.pop(d, None) if aout else None
                if a is not None:
                    box.accepts.append((t, a[0], a[1]))
                if hooks is not None:
                    hooks.slot_extras(tor, d, box)
                if faults:
                    if announce:
                        box.reports.extend(announce)
                    fb = fb_out.get(d)
                    if fb is not None:
                        box.feedback.append((t, fb[0], fb[1]))
                    dtor.port_rx[p] = e
                    dtor.pair_rx[t] = e
                    dtor.pair_rx_port[t] = p
                if piggy:
                    self._deliver(t, d, p, piggy, deliver_t)

    # --- scheduled phase --------------------------------------------------------------

    def _scheduled_phase(self, e: int) -> None:
        self._phase_start = self.sim.now
        for tor in self.tors:
            if tor.reservations:
                by_dst = {}
                for port, dst in sorted(tor.reservations):
                    by_dst.setdefault(dst, []).append(port)
                for dst, ports in by_dst.items():
                    entry = [ports, 0, self._phase_start]
                    self._drain_reservation(tor, dst, entry)
            if tor.relay_sends:
                self._drain_relay(tor)

    def _drain_reservation(self, tor, dst: int, entry, refill_at: int | None = None) -> None:
        """Send back-to-back data packets for one (src, dst) reservation.

        entry is [ports, packets_sent, phase_start]; packets map to slots
        slot-major, port-minor (lower index first), which preserves the
        per-destination queue order end to end. Refills mid-phase resume
        at the next slot boundary after the new data arrived.
        """
        cfg = self.cfg
        ports, sent, phase_start = entry
        nport = len(ports)
        total_pkts = cfg.scheduled_slots * nport
        if sent >= total_pkts:
            return
        if refill_at is not None:
            min_slot = -(-(refill_at - phase_start) // cfg.scheduled_slot_ns)
            if min_slot >= cfg.scheduled_slots:
                tor.hungry.pop(dst, None)
                return
            sent = max(sent, min_slot * nport)

        q = tor.queues.get(dst)
        payload = cfg.data_payload_bytes
        budget = (total_pkts - sent) * payload
        pieces = q.pop_upto(budget) if q is not None else []
        if pieces:
            src = tor.tid
            faults = self.faults_on
            plane = self.fault_plane
            slot_ns = cfg.scheduled_slot_ns
            prop = self.prop_ns
            consumed = 0
            for flow, offset, nbytes, level in pieces:
                consumed += nbytes
                pkt = sent + (consumed - 1) // payload
                port = ports[pkt % nport]
                t_arrive = phase_start + (pkt // nport + 1) * slot_ns + prop
                if faults and (plane.egress_down(src, port)
                               or plane.ingress_down(dst, port)):
                    self.recorder.bump("lost_bytes", nbytes)
                    key = ((src, port, EGRESS) if plane.egress_down(src, port)
                           else (dst, port, INGRESS))
                    self.loss_ledger.setdefault(key, {}).setdefault(src, []).append(
                        (dst, [(flow, offset, nbytes, level)]))
                else:
                    self._deliver_piece(src, dst, port, flow, offset, nbytes, t_arrive)
            sent += -(-consumed // payload)
        entry[1] = sent
        if sent < total_pkts and (q is None or q.total_bytes == 0):
            entry[0] = ports
            entry[2] = phase_start
            tor.hungry[dst] = entry
        else:
            tor.hungry.pop(dst, None)

    def _drain_relay(self, tor) -> None:
        """Relay-variant sends: lowest-priority data to an intermediate."""
        cfg = self.cfg
        for port, mid, max_bytes, final, token in tor.relay_sends:
            q = tor.queues.get(final)
            budget = min(max_bytes, cfg.port_epoch_payload_bytes)
            pieces = q.pop_lowest_upto(budget) if q is not None else []
            nbytes = sum(pc[2] for pc in pieces)
            t_arrive = (self._phase_start
                        + cfg.scheduled_slots * cfg.scheduled_slot_ns + self.prop_ns)
            self.variant_hooks.relay_arrival(self.tors[mid], tor.tid, final,
                                             pieces, nbytes, token, t_arrive)
        tor.relay_sends = []

    # --- delivery / loss ------------------------------------------------------------------

    def _deliver(self, src: int, dst: int, port: int, pieces, t: int) -> None:
        for flow, offset, nbytes, level in pieces:
            self._deliver_piece(src, dst, port, flow, offset, nbytes, t)

    def _deliver_piece(self, src: int, dst: int, port: int, flow, offset: int,
                       nbytes: int, t: int) -> None:
        recorder = self.recorder
        if flow is not None:
            flow.delivered += nbytes
            if flow.delivered >= flow.size_bytes and flow.completion_ns is None:
                flow.completion_ns = t
        recorder.wanted_bits(dst, t, nbytes * 8)
        if recorder.pair_epoch_bytes is not None:
            recorder.pair_bytes(src, dst, self.cur_epoch, nbytes)
        if recorder.deliveries is not None:
            fid = flow.fid if flow is not None else -1
            recorder.deliveries.append((src, dst, t, port, fid, offset, nbytes))

    def recredit(self, src: int, link_key) -> None:
        """Return bytes this sender lost over a now-confirmed-failed link to
        the head of their per-destination queues (once per confirmation)."""
        per_src = self.loss_ledger.get(link_key)
        if not per_src:
            return
        entries = per_src.pop(src, None)
        if not entries:
            return
        tor = self.tors[src]
        restored = 0
        for dst, pieces in reversed(entries):
            tor.queue_for(dst).push_front(pieces)
            restored += sum(pc[2] for pc in pieces)
        self.recorder.bump("recredited_bytes", restored)
