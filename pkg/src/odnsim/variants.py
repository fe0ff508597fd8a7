"""Optional matching variants, each toggled by config and off by default.

The base protocol stays in tor.py; every variant plugs in through the
hook points below. Variants are studied at desk scale, so clarity beats
micro-optimization here.
"""

from .matching import StatefulMatrix, datasize_key, holdelay_key
from .queues import SEG_LEN, SEG_TS, TRANSIT_LEVEL


def make_hooks(variant: str, net):
    cls = {
        "datasize": DataSizeHooks,
        "holdelay": HolDelayHooks,
        "stateful": StatefulHooks,
        "iterative": IterativeHooks,
        "projector": ProjectorHooks,
        "relay": RelayHooks,
    }.get(variant)
    if cls is None:
        raise ValueError(f"unknown matching variant {variant!r}")
    return cls(net)


class Hooks:
    owns_grant = False
    owns_accept = False
    has_post = False
    suppress_basic_requests = False

    def __init__(self, net):
        self.net = net
        self.params = net.variant_params

    def attach(self, tor) -> None:
        pass

    def pre_boundary(self, tor, e, bucket) -> None:
        pass

    def request_payload(self, tor, dst, queue, now, e):
        return tor.tid

    def slot_extras(self, tor, dst, box) -> None:
        pass


# --- informative requests ----------------------------------------------------

class DataSizeHooks(Hooks):
    """Requests carry the aggregated pending byte count; destinations grant
    the biggest backlog first, ring order breaking ties."""

    def request_payload(self, tor, dst, queue, now, e):
        return (tor.tid, datasize_key(queue.total_bytes))


class HolDelayHooks(Hooks):
    """Requests carry a weighted head-of-line waiting time; destinations
    grant the longest-waiting pair first."""

    def __init__(self, net):
        super().__init__(net)
        self.alpha = float(self.params.get("alpha", 0.001))
        if net.nlevels != 3:
            raise ValueError("holdelay variant needs exactly three priority levels")

    def request_payload(self, tor, dst, queue, now, e):
        ages = [queue.hol_age(lvl, now) for lvl in range(3)]
        return (tor.tid, holdelay_key(ages, self.alpha))


# --- stateful scheduling -------------------------------------------------------

class StatefulHooks(Hooks):
    """Destinations track pending bytes per source and only grant while the
    matrix shows demand; tentative deductions are reverted on rejection."""

    def attach(self, tor) -> None:
        tor.variant_state = _StatefulState(self.net.cfg.port_epoch_payload_bytes)

    def request_payload(self, tor, dst, queue, now, e):
        new = queue.enqueued_bytes - tor.reported_bytes.get(dst, 0)
        tor.reported_bytes[dst] = queue.enqueued_bytes
        return (tor.tid, new)

    def pre_boundary(self, tor, e, bucket) -> None:
        grant_epoch = e - 2 * self.net.depth
        state = tor.variant_state
        issued = state.issued.pop(grant_epoch, None)
        if not issued:
            return
        accepted = set()
        for src, gep, ports in bucket.accepts:
            if gep == grant_epoch:
                for p in ports:
                    accepted.add((src, p))
        for src, port in issued:
            state.matrix.resolve((src, grant_epoch, port), (src, port) in accepted)


class _StatefulState:
    def __init__(self, port_capacity):
        self.matrix = StatefulMatrix(port_capacity)
        self.issued = {}

    def on_new_bytes(self, src, nbytes):
        self.matrix.on_new_bytes(src, nbytes)

    def may_grant(self, src):
        return self.matrix.may_grant(src)

    def on_grant(self, src, token):
        self.matrix.on_grant(src, token)
        self.issued.setdefault(token[1], []).append((src, token[2]))


# --- iterative matching ----------------------------------------------------------

class IterativeHooks(Hooks):
    """Multi-round matching: unmatched source ports re-request and all
    rounds' accepts reserve the same delayed target scheduled phase. Each
    extra round defers the target by three pipeline steps."""

    owns_grant = True
    owns_accept = True

    def __init__(self, net):
        super().__init__(net)
        self.rounds = int(self.params.get("iterations", 3))
        if self.rounds < 1:
            raise ValueError("iterations must be >= 1")

    def attach(self, tor) -> None:
        tor.variant_state = _IterState()

    def target_epoch(self, e: int) -> int:
        d = self.net.depth
        return e + 2 * d + 3 * d * (self.rounds - 1)

    def request_payload(self, tor, dst, queue, now, e):
        # round-1 request, tagged with the delayed target epoch
        return (tor.tid, self.target_epoch(e), None)

    def pre_boundary(self, tor, e, bucket) -> None:
        st = tor.variant_state
        d = self.net.depth
        # settle grants we issued two steps ago: commit accepted, free the rest
        accepted = {}
        for src, gep, ports in bucket.accepts:
            accepted.setdefault(gep, set()).update((src, p) for p in ports)
        for (gep, target), tentative in list(st.tentative.items()):
            if gep != e - 2 * d:
                continue
            book = st.dst_book.setdefault(target, {})
            got = accepted.get(gep, set())
            for port, src in tentative.items():
                if (src, port) in got:
                    book[port] = src
                else:
                    book.pop(port, None)
            del st.tentative[(gep, target)]
        # emit follow-up requests that are due this epoch
        due = st.followups.pop(e, None)
        if due:
            threshold = self.net.req_threshold_bytes
            for target, ports in due:
                for dst, q in tor.queues.items():
                    if q.total_bytes > threshold:
                        tor.requests_out.setdefault(dst, []).append(
                            (tor.tid, target, ports))
        for target in [t for t in st.dst_book if t < e]:
            del st.dst_book[target]

    def grant_step(self, tor, e, bucket) -> int:
        st = tor.variant_state
        by_target = {}
        for src, target, ports in bucket.requests:
            by_target.setdefault(target, []).append((src, ports))
        count = 0
        for target in sorted(by_target):
            book = st.dst_book.setdefault(target, {})
            tentative_ports = {p for (gep, tg), tent in st.tentative.items()
                               if tg == target for p in tent}
            requests = []
            masks = {}
            for src, ports in by_target[target]:
                if src not in masks:
                    requests.append(src)
                masks[src] = ports
            free_ports = [p for p in tor._grant_ports()
                          if p not in book and p not in tentative_ports]

            def eligible(src, port):
                mask = masks.get(src)
                return mask is None or port in mask

            grants = tor.grant_arbiter.grant(requests, free_ports, eligible=eligible)
            for port, src in grants:
                st.tentative.setdefault((e, target), {})[port] = src
                tor.grants_out.setdefault(src, []).append((target, port))
                count += 1
        return count

    def accept_step(self, tor, e, bucket) -> int:
        st = tor.variant_state
        d = self.net.depth
        by_target = {}
        for dst, offers in bucket.grants:
            for target, port in offers:
                by_target.setdefault(target, {}).setdefault(port, []).append(dst)
        count = 0
        grant_epoch = e - d
        for target in sorted(by_target):
            taken = st.src_ports.setdefault(target, {})
            offers = {p: ds for p, ds in by_target[target].items() if p not in taken}
            accepts = tor.accept_arbiter.accept(offers, sorted(offers))
            by_dst = {}
            for port, dst in accepts:
                taken[port] = dst
                by_dst.setdefault(dst, []).append(port)
                count += 1
            for dst, ports in by_dst.items():
                tor.accepts_out[dst] = (grant_epoch, tuple(ports))
            first_round_epoch = target - 2 * d - 3 * d * (self.rounds - 1)
            round_idx = (e - first_round_epoch - 2 * d) // (3 * d) + 1
            if round_idx < self.rounds:
                unmatched = tuple(p for p in range(self.net.topo.s) if p not in taken)
                if unmatched:
                    st.followups.setdefault(e + d, []).append((target, unmatched))
        tor.reservations = sorted(st.src_ports.pop(e, {}).items())
        return count


class _IterState:
    def __init__(self):
        self.dst_book = {}    # target -> {port: committed src}
        self.tentative = {}   # (grant_epoch, target) -> {port: src}
        self.src_ports = {}   # target -> {port: dst}
        self.followups = {}   # emit_epoch -> [(target, unmatched ports)]


# --- projector-style scheduling ----------------------------------------------------

class ProjectorHooks(Hooks):
    """Per-port requests for fixed-size bundles, oldest bundle first. A
    bundle is one scheduled phase's worth of per-port payload."""

    owns_grant = True
    owns_accept = True
    suppress_basic_requests = True

    def pre_boundary(self, tor, e, bucket) -> None:
        net = self.net
        now = net.sim.now
        bundle = net.cfg.port_epoch_payload_bytes
        candidates = []   # (enqueue_ts, dst, bundle idx)
        for dst in sorted(tor.queues):
            q = tor.queues[dst]
            if q.total_bytes <= 0:
                continue
            seen = 0
            idx = 0
            for lvl in range(len(q.levels)):
                for seg in q.levels[lvl]:
                    while seen + seg[SEG_LEN] > idx * bundle:
                        candidates.append((seg[SEG_TS], dst, idx))
                        idx += 1
                    seen += seg[SEG_LEN]
        candidates.sort(key=lambda c: (c[0], c[1], c[2]))
        topo = net.topo
        for port in range(topo.s):
            for i, (ts, dst, _) in enumerate(candidates):
                if topo.kind == "parallel" or topo.reachable(tor.tid, port, dst):
                    tor.requests_out.setdefault(dst, []).append(
                        (tor.tid, port, now - ts))
                    del candidates[i]
                    break

    def grant_step(self, tor, e, bucket) -> int:
        by_port = {}
        for src, port, age in bucket.requests:
            by_port.setdefault(port, []).append((age, src))
        count = 0
        for port in tor._grant_ports():
            offers = by_port.get(port)
            if not offers:
                continue
            ring = tor.grant_arbiter.ring_for(port)
            age, src = max(offers, key=lambda o: (o[0], -ring.distance(o[1])))
            ring.advance_past(src)
            tor.grants_out.setdefault(src, []).append(port)
            count += 1
        return count

    def accept_step(self, tor, e, bucket) -> int:
        # each port requested exactly one destination, so offers never clash
        tor.reservations = []
        taken = set()
        for dst, ports in bucket.grants:
            for p in ports:
                if p not in taken:
                    taken.add(p)
                    tor.reservations.append((p, dst))
        tor.reservations.sort()
        by_dst = {}
        for p, dst in tor.reservations:
            by_dst.setdefault(dst, []).append(p)
        for dst, ports in by_dst.items():
            tor.accepts_out[dst] = (e - self.net.depth, tuple(ports))
        return len(tor.reservations)


# --- traffic-aware selective relay (thin-clos) ----------------------------------------

class RelayHooks(Hooks):
    """Two-hop help for elephant backlogs on thin-clos: a big lowest-priority
    queue may be relayed through a lightly loaded intermediate. Direct
    traffic keeps priority on shared links, and relayed bytes travel onward
    as transit with priority over the intermediate's own data."""

    has_post = True

    def __init__(self, net):
        super().__init__(net)
        if net.topo.kind != "thin_clos":
            raise ValueError("relay variant requires the thin_clos topology")
        cap = net.cfg.port_epoch_payload_bytes
        self.threshold = int(self.params.get("relay_threshold_bytes", 2 * cap))
        self.exclude_threshold = int(self.params.get("relay_exclude_threshold_bytes", cap))
        self.buffer_capacity = int(self.params.get("relay_buffer_bytes", 1 << 20))

    def attach(self, tor) -> None:
        tor.variant_state = _RelayState()

    def local_pending_to_group(self, tor, group: int) -> int:
        """This ToR's own (non-transit) backlog toward one group: the load
        on its egress port serving that group."""
        topo = self.net.topo
        total = 0
        for dst, q in tor.queues.items():
            if topo.group(dst) == group:
                total += q.total_bytes - q.transit_bytes
        return total

    def eligible_intermediates(self, tor, dst: int):
        """Candidates for relaying tor->dst data, after the source-local
        shared-link exclusion."""
        topo = self.net.topo
        out = []
        for mid in range(topo.n):
            if mid == tor.tid or mid == dst:
                continue
            if self.local_pending_to_group(tor, topo.group(mid)) >= self.exclude_threshold:
                continue
            out.append(mid)
        return out

    def pre_boundary(self, tor, e, bucket) -> None:
        st = tor.variant_state
        # drop stale buffer reservations (grant never accepted or lost)
        for token, (nbytes, born) in list(st.reserved.items()):
            if born <= e - 4 * self.net.depth:
                st.occupancy -= nbytes
                del st.reserved[token]
        # decide this epoch's relay requests
        st.requests = {}
        for dst in sorted(tor.queues):
            q = tor.queues[dst]
            if q.level_bytes[-1] <= self.threshold:
                continue
            for mid in self.eligible_intermediates(tor, dst):
                st.requests[mid] = (dst, q.level_bytes[-1])
                break

    def slot_extras(self, tor, dst, box) -> None:
        st = tor.variant_state
        req = st.requests.pop(dst, None) if st.requests else None
        if req is not None:
            box.relay_requests.append((tor.tid, req[0], req[1]))
        grant = st.grants_out.pop(dst, None) if st.grants_out else None
        if grant is not None:
            box.relay_grants.append(grant)

    def post_grant(self, tor, e, bucket, granted_ports) -> int:
        """Grant relay on receive ports left free by direct grants, capped
        by the spare relay buffer; refuse when our own direct traffic
        already loads the second-hop link."""
        st = tor.variant_state
        topo = self.net.topo
        count = 0
        for src, final, nbytes in bucket.relay_requests:
            if self.local_pending_to_group(tor, topo.group(final)) >= self.exclude_threshold:
                continue
            port = (topo.group(tor.tid) - topo.group(src)) % topo.groups
            if port in granted_ports:
                continue
            spare = self.buffer_capacity - st.occupancy
            if spare <= 0:
                continue
            max_bytes = min(spare, nbytes, self.net.cfg.port_epoch_payload_bytes)
            token = (tor.tid, src, e)
            st.occupancy += max_bytes
            st.reserved[token] = (max_bytes, e)
            st.grants_out[src] = (tor.tid, port, max_bytes, final, token)
            granted_ports.add(port)
            count += 1
        return count

    def post_accept(self, tor, e, bucket, taken_ports) -> int:
        tor.relay_sends = []
        count = 0
        for mid, port, max_bytes, final, token in bucket.relay_grants:
            if port in taken_ports:
                continue
            taken_ports.add(port)
            tor.relay_sends.append((port, mid, max_bytes, final, token))
            count += 1
        return count

    def relay_arrival(self, mid_tor, src: int, final: int, pieces, nbytes: int,
                      token, t: int) -> None:
        """A relayed batch lands at the intermediate: buffer it as transit."""
        st = mid_tor.variant_state
        reserved = st.reserved.pop(token, None)
        if reserved is not None:
            st.occupancy -= (reserved[0] - nbytes)
        if nbytes <= 0:
            return
        if st.occupancy > self.buffer_capacity:
            raise AssertionError("relay grant exceeded advertised buffer")
        q = mid_tor.queue_for(final)
        for flow, offset, n, _ in pieces:
            q.push_transit(flow, offset, n, t)
        self.net.recorder.transit_bits(mid_tor.tid, t, nbytes * 8)

    def on_transit_sent(self, tor, pieces) -> None:
        """Transit bytes forwarded to their final hop free buffer space."""
        st = tor.variant_state
        freed = sum(pc[2] for pc in pieces if pc[3] == TRANSIT_LEVEL)
        if freed:
            st.occupancy -= freed
            if st.occupancy < 0:
                raise AssertionError("relay buffer accounting went negative")


class _RelayState:
    def __init__(self):
        self.requests = {}
        self.grants_out = {}
        self.occupancy = 0
        self.reserved = {}
