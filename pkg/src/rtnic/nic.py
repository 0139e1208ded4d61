"""Receive side of the multiqueue NIC.

Incoming packets are matched on destination port against a distribution map.
Each bound port owns one ring-buffer queue whose interrupt moderation is set
per queue: an immediate queue raises one interrupt per packet, a moderated
queue holds packets until its absolute timer, packet timer or counter
threshold fires and then raises a single interrupt for everything it holds.
Packets for unbound ports are dropped without raising anything.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Iterator

from rtnic.sim import EventKind, EventQueue, SimulationError


@dataclass(slots=True)
class Packet:
    id: int
    arrival_time: int
    dest_port: int
    source_tag: str = "trace"


@dataclass(frozen=True)
class FlowRule:
    dest_port: int
    process_id: int
    queue_id: int


class NicConfigError(ValueError):
    pass


class DistributionMap:
    """Destination port -> (process, queue) table."""

    def __init__(self, rules: Iterable[FlowRule] = ()):
        self._rules: dict[int, FlowRule] = {}
        for rule in rules:
            self.install(rule)

    def install(self, rule: FlowRule) -> None:
        if rule.dest_port in self._rules:
            raise NicConfigError(f"port {rule.dest_port} is already bound")
        if any(r.queue_id == rule.queue_id for r in self._rules.values()):
            raise NicConfigError(f"queue {rule.queue_id} already has a rule")
        self._rules[rule.dest_port] = rule

    def remove(self, dest_port: int) -> FlowRule:
        try:
            return self._rules.pop(dest_port)
        except KeyError:
            raise NicConfigError(f"port {dest_port} is not bound") from None

    def lookup(self, dest_port: int) -> FlowRule | None:
        return self._rules.get(dest_port)

    def __contains__(self, dest_port) -> bool:
        return dest_port in self._rules

    def __len__(self) -> int:
        return len(self._rules)

    def __iter__(self) -> Iterator[FlowRule]:
        return iter(sorted(self._rules.values(), key=lambda r: r.dest_port))


def classify(packet: Packet, dmap: DistributionMap) -> int | None:
    """Queue id for ``packet``, or None when it has to be dropped."""
    rule = dmap.lookup(packet.dest_port)
    return None if rule is None else rule.queue_id


@dataclass(frozen=True)
class QueueConfig:
    """Moderation parameters of one receive queue.

    ``absolute_timer_us == 0`` selects immediate mode, in which case the
    packet timer and threshold must be 0 as well. A zero packet timer or
    threshold disables that trigger.
    """

    capacity: int = 128
    absolute_timer_us: int = 0
    packet_timer_us: int = 0
    counter_threshold: int = 0
    owner_priority: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise NicConfigError(f"capacity must be >= 1, got {self.capacity}")
        for name in ("absolute_timer_us", "packet_timer_us", "counter_threshold"):
            if getattr(self, name) < 0:
                raise NicConfigError(f"{name} must be >= 0")
        if self.absolute_timer_us == 0 and (self.packet_timer_us or self.counter_threshold):
            raise NicConfigError(
                "immediate queues (absolute_timer_us=0) take no packet timer or threshold"
            )

    @property
    def immediate(self) -> bool:
        return self.absolute_timer_us == 0


class Cause(str, Enum):
    IMMEDIATE = "immediate"
    ABSOLUTE_TIMER = "absolute_timer"
    PACKET_TIMER = "packet_timer"
    THRESHOLD = "threshold"


@dataclass(frozen=True, slots=True)
class InterruptBatch:
    queue_id: int
    fire_time: int
    packets: tuple[Packet, ...]
    cause: Cause


class Action(Enum):
    ARM = "arm"  # deadline moved, caller must schedule a fresh expiry event
    HELD = "held"  # queued, the pending expiry event still stands
    DROPPED = "dropped_full"
    STALE = "stale"


class RxQueue:
    __slots__ = (
        "queue_id",
        "config",
        "occupancy",
        "absolute_deadline",
        "packet_deadline",
        "timer_generation",
        "enqueued",
        "dropped_full",
        "dropped_unbind",
        "interrupts_raised",
        "packets_delivered",
    )

    def __init__(self, queue_id: int, config: QueueConfig):
        self.queue_id = queue_id
        self.config = config
        self.occupancy: deque[Packet] = deque()
        self.absolute_deadline: int | None = None
        self.packet_deadline: int | None = None
        self.timer_generation = 0
        self.enqueued = 0
        self.dropped_full = 0
        self.dropped_unbind = 0
        self.interrupts_raised = 0
        self.packets_delivered = 0

    @property
    def next_deadline(self) -> int | None:
        a, p = self.absolute_deadline, self.packet_deadline
        if a is None:
            return p
        if p is None:
            return a
        return a if a <= p else p

    def enqueue(self, packet: Packet, now: int) -> InterruptBatch | Action:
        cfg = self.config
        self.enqueued += 1  # counts tail drops too
        if cfg.absolute_timer_us == 0:
            self.occupancy.append(packet)
            return self._fire(now, Cause.IMMEDIATE)
        occ = self.occupancy
        if len(occ) >= cfg.capacity:
            self.dropped_full += 1
            return Action.DROPPED
        occ.append(packet)
        if not (cfg.packet_timer_us or cfg.counter_threshold):
            if self.absolute_deadline is None:
                self.absolute_deadline = now + cfg.absolute_timer_us
                self.timer_generation += 1
                return Action.ARM
            return Action.HELD
        before = self.next_deadline
        if self.absolute_deadline is None:
            self.absolute_deadline = now + cfg.absolute_timer_us
        if cfg.packet_timer_us:
            self.packet_deadline = now + cfg.packet_timer_us
        if cfg.counter_threshold and len(occ) >= cfg.counter_threshold:
            return self._fire(now, Cause.THRESHOLD)
        if self.next_deadline != before:
            self.timer_generation += 1
            return Action.ARM
        return Action.HELD

    def on_timer_expiry(self, generation: int, now: int) -> InterruptBatch | Action:
        if generation != self.timer_generation:
            return Action.STALE
        if not self.occupancy:
            raise SimulationError(f"queue {self.queue_id}: timer fired on an empty queue")
        if self.absolute_deadline == now:
            cause = Cause.ABSOLUTE_TIMER
        elif self.packet_deadline == now:
            cause = Cause.PACKET_TIMER
        else:
            raise SimulationError(
                f"queue {self.queue_id}: expiry at t={now} matches no deadline"
            )
        return self._fire(now, cause)

    def discard(self) -> int:
        """Drop everything held (socket went away); no interrupt."""
        n = len(self.occupancy)
        self.dropped_unbind += n
        self.occupancy.clear()
        self.absolute_deadline = self.packet_deadline = None
        self.timer_generation += 1
        return n

    def _fire(self, now: int, cause: Cause) -> InterruptBatch:
        batch = InterruptBatch(self.queue_id, now, tuple(self.occupancy), cause)
        self.occupancy.clear()
        self.absolute_deadline = self.packet_deadline = None
        self.timer_generation += 1
        self.interrupts_raised += 1
        self.packets_delivered += len(batch.packets)
        return batch


class Nic:
    """Distribution map plus live queues, driven by an event queue.

    ``on_interrupt`` is called synchronously with every batch the NIC raises.
    """

    def __init__(self, events: EventQueue, on_interrupt: Callable[[InterruptBatch], None]):
        self.events = events
        self.on_interrupt = on_interrupt
        self.map = DistributionMap()
        self.queues: dict[int, RxQueue] = {}
        self._by_port: dict[int, RxQueue] = {}  # mirror of map for the hot path
        self.retired: list[RxQueue] = []
        self.dropped_unmatched = 0
        self._next_qid = 0

    def bind_flow(self, dest_port: int, process_id: int, config: QueueConfig) -> int:
        if not 1 <= dest_port <= 65535:
            raise NicConfigError(f"port {dest_port} out of range 1-65535")
        if dest_port in self.map:
            raise NicConfigError(f"port {dest_port} is already bound")
        qid = self._next_qid
        self.map.install(FlowRule(dest_port, process_id, qid))
        self.queues[qid] = self._by_port[dest_port] = RxQueue(qid, config)
        self._next_qid += 1
        return qid

    def unbind_flow(self, dest_port: int) -> RxQueue:
        rule = self.map.remove(dest_port)
        q = self.queues.pop(rule.queue_id)
        del self._by_port[dest_port]
        q.discard()
        self.retired.append(q)
        return q

    def all_queues(self) -> list[RxQueue]:
        return sorted([*self.queues.values(), *self.retired], key=lambda q: q.queue_id)

    def receive(self, packet: Packet) -> RxQueue | None:
        """Classify and enqueue one packet at the current clock.

        Returns the queue it was steered to, or None if it was dropped as
        unmatched.
        """
        q = self._by_port.get(packet.dest_port)
        if q is None:
            self.dropped_unmatched += 1
            return None
        res = q.enqueue(packet, self.events.now)
        if res is Action.ARM:
            self.events.schedule(
                q.next_deadline, EventKind.QUEUE_TIMER_EXPIRY, (q, q.timer_generation)
            )
        elif res.__class__ is InterruptBatch:
            self.on_interrupt(res)
        return q

    def on_timer(self, payload) -> None:
        q, gen = payload
        res = q.on_timer_expiry(gen, self.events.now)
        if res is not Action.STALE:
            self.on_interrupt(res)


def replay_trace(
    config: QueueConfig, arrivals: Iterable[int], port: int = 502
) -> list[tuple[int, int, str]]:
    """Push a trace through one queue with the event-driven engine.

    Returns ``(fire_time, batch_size, cause)`` for each interrupt raised.
    """
    events = EventQueue()
    fired: list[tuple[int, int, str]] = []
    nic = Nic(events, lambda b: fired.append((b.fire_time, len(b.packets), b.cause.value)))
    nic.bind_flow(port, 0, config)
    last = 0
    for i, t in enumerate(arrivals):
        events.schedule(t, EventKind.PACKET_ARRIVAL, Packet(i, t, port))
        last = max(last, t)

    def handle(ev):
        if ev.kind is EventKind.PACKET_ARRIVAL:
            nic.receive(ev.payload)
        else:
            nic.on_timer(ev.payload)

    horizon = last + config.absolute_timer_us + config.packet_timer_us
    events.run_until(horizon, handle)
    return fired
