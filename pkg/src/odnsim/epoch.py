"""Epoch timing arithmetic.

An epoch is a fixed-length interval split into a predefined phase
(round-robin control slots, each a guardband plus one control message and
an optional piggybacked payload) and a scheduled phase (back-to-back data
packets on the on-demand matches). All durations are integer nanoseconds.
"""

from dataclasses import dataclass, field


class EpochConfigError(ValueError):
    pass


def tx_ns(nbytes: int, rate_bits_per_ns: float) -> int:
    """Transmit time of nbytes at the given rate, rounded up to whole ns."""
    exact = nbytes * 8 / rate_bits_per_ns
    ns = int(exact)
    return ns if ns == exact else ns + 1


@dataclass
class EpochConfig:
    guard_ns: int = 10
    predefined_slot_ns: int = 60
    predefined_slots: int = 16
    scheduled_slot_ns: int = 90
    scheduled_slots: int = 30
    sched_msg_bytes: int = 30
    piggyback_payload_bytes: int = 595
    data_pkt_bytes: int = 1125
    data_hdr_bytes: int = 10
    pipeline_depth: int = 1
    piggyback: bool = True
    # derived
    predefined_ns: int = field(init=False)
    scheduled_ns: int = field(init=False)
    epoch_ns: int = field(init=False)

    def __post_init__(self):
        if self.pipeline_depth < 1:
            raise EpochConfigError("pipeline_depth must be >= 1")
        if self.scheduled_slots < 1:
            raise EpochConfigError("scheduled_slots must be >= 1")
        if self.data_hdr_bytes >= self.data_pkt_bytes:
            raise EpochConfigError("data_hdr_bytes must be below data_pkt_bytes")
        self.predefined_ns = self.predefined_slots * self.predefined_slot_ns
        self.scheduled_ns = self.scheduled_slots * self.scheduled_slot_ns
        self.epoch_ns = self.predefined_ns + self.scheduled_ns

    @property
    def guard_fraction(self) -> float:
        return self.predefined_slots * self.guard_ns / self.epoch_ns

    @property
    def data_payload_bytes(self) -> int:
        return self.data_pkt_bytes - self.data_hdr_bytes

    @property
    def port_epoch_payload_bytes(self) -> int:
        """Payload one reserved port can move in one scheduled phase."""
        return self.scheduled_slots * self.data_payload_bytes


def derive_epoch_config(rate_bits_per_ns: float, round_slots: int, *,
                        guard_ns: int = 10, sched_msg_bytes: int = 30,
                        piggyback_payload_bytes: int = 595,
                        data_pkt_bytes: int = 1125, data_hdr_bytes: int = 10,
                        scheduled_slots: int | None = None,
                        pipeline_depth: int = 1,
                        piggyback: bool = True) -> EpochConfig:
    """Build an EpochConfig from first principles.

    With piggybacking on, a predefined slot is guard + transmit(msg+payload).
    With it off, the slot shrinks to guard + transmit(msg) and, unless an
    explicit scheduled_slots is given, the scheduled phase grows to keep the
    epoch length (and hence the guard overhead ratio) as close as possible
    to the piggyback-on epoch.
    """
    sched_slot = tx_ns(data_pkt_bytes, rate_bits_per_ns)
    pb_slot = guard_ns + tx_ns(sched_msg_bytes + piggyback_payload_bytes, rate_bits_per_ns)
    if piggyback:
        pre_slot = pb_slot
        slots = scheduled_slots if scheduled_slots is not None else 30
    else:
        pre_slot = guard_ns + tx_ns(sched_msg_bytes, rate_bits_per_ns)
        if scheduled_slots is not None:
            slots = scheduled_slots
        else:
            target_epoch = round_slots * pb_slot + 30 * sched_slot
            slots = max(1, round((target_epoch - round_slots * pre_slot) / sched_slot))
    return EpochConfig(
        guard_ns=guard_ns,
        predefined_slot_ns=pre_slot,
        predefined_slots=round_slots,
        scheduled_slot_ns=sched_slot,
        scheduled_slots=slots,
        sched_msg_bytes=sched_msg_bytes,
        piggyback_payload_bytes=piggyback_payload_bytes,
        data_pkt_bytes=data_pkt_bytes,
        data_hdr_bytes=data_hdr_bytes,
        pipeline_depth=pipeline_depth,
        piggyback=piggyback,
    )


def check_pipeline_budget(cfg: EpochConfig, one_way_delay_ns: int,
                          processing_ns: int = 0) -> None:
    """Scheduling messages must be received and processed before the epoch
    boundary `pipeline_depth` epochs after they were sent."""
    need = cfg.predefined_ns + one_way_delay_ns + processing_ns
    budget = cfg.pipeline_depth * cfg.epoch_ns
    if need > budget:
        depth = -(-need // cfg.epoch_ns)
        raise EpochConfigError(
            f"one-way delay {one_way_delay_ns} ns does not fit the "
            f"pipeline budget ({need} > {budget} ns); "
            f"increase pipeline_depth to at least {depth}"
        )
