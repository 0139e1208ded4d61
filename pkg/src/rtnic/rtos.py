"""Single-core fixed-priority RTOS consuming NIC interrupts.

Priority order, highest first: the ISR layer (runs a fixed top-half cost
per interrupt, never nested, FIFO), the network driver (per-packet
bottom-half cost, hands each packet to its worker's mailbox), then worker
tasks by priority. One job per delivered packet; jobs of one task run FIFO.

The driver works through its backlog in arrival order, one packet at a
time, and is preempted only by ISRs.

A job accrues ``preemption`` while it is the head of the highest-priority
non-empty mailbox and the CPU is busy with ISR or driver work.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from rtnic.nic import InterruptBatch, Packet
from rtnic.sim import Event, EventKind, EventQueue

IDLE, ISR, DRIVER, TASK = range(4)
_ISR_END = EventKind.ISR_END
_DRIVER_STEP = EventKind.DRIVER_STEP
_JOB_COMPLETION = EventKind.JOB_COMPLETION


@dataclass(frozen=True)
class CostModel:
    isr_overhead_us: int = 6
    per_packet_cost_us: int = 1

    def __post_init__(self):
        if self.isr_overhead_us < 0 or self.per_packet_cost_us < 0:
            raise ValueError("costs must be >= 0")


@dataclass(frozen=True)
class TaskDescriptor:
    task_id: int
    priority: int
    service_time_us: int
    bound_port: int


@dataclass(slots=True, eq=False)
class Job:
    task_id: int
    packet: Packet
    release: int
    remaining: int
    start: int | None = None
    completion: int | None = None
    preemption: int = 0

    @property
    def response(self) -> int:
        """End to end, from NIC arrival of the packet."""
        return self.completion - self.packet.arrival_time


class Cpu:
    def __init__(self, events: EventQueue, cost: CostModel, tasks, log: bool = False):
        prios = [t.priority for t in tasks]
        if len(set(prios)) != len(prios):
            raise ValueError(f"worker priorities must be distinct, got {prios}")
        self.events = events
        self.cost = cost
        self.tasks = sorted(tasks, key=lambda t: -t.priority)
        self.port_rank = {t.bound_port: i for i, t in enumerate(self.tasks)}
        self.mailboxes = [deque() for _ in self.tasks]
        self.completed = [[] for _ in self.tasks]
        self.executed = [0] * len(self.tasks)
        self.isr_fifo: deque[InterruptBatch] = deque()
        self.backlog: deque[Packet] = deque()
        self.inflight: Packet | None = None
        self.head_left = 0
        self.running = IDLE
        self.current: Job | None = None
        self.cur_rank = 0
        self.top: int | None = None
        self.seg_start = 0
        self.gen = 0
        self.last_acct = 0
        self.busy = [0, 0, 0, 0]
        self.interrupts = 0
        self.discarded = 0
        # (start, end, "isr" | "driver" | task_id) per execution segment
        self.log: list[tuple[int, int, object]] | None = [] if log else None

    def unbind_port(self, port: int) -> None:
        self.port_rank.pop(port, None)

    @property
    def backlog_size(self) -> int:
        return len(self.backlog) + (self.inflight is not None)

    # -- entry points -----------------------------------------------------

    def on_interrupt(self, batch: InterruptBatch) -> None:
        self.isr_fifo.append(batch)
        self.interrupts += 1
        if self.running != ISR:
            # the ISR layer outranks everything, start it right away
            now = self.events.now
            if self.running != IDLE:
                self._stop(now)
            self._begin(now, ISR)

    def handle(self, ev: Event) -> None:
        now, kind, _, gen = ev
        if gen != self.gen:
            return
        if kind is _ISR_END:
            self._stop(now)
            batch = self.isr_fifo.popleft()
            self.backlog.extend(batch.packets)
            if self.inflight is None and self.backlog:
                self.inflight = self.backlog.popleft()
                self.head_left = self.cost.per_packet_cost_us
        elif kind is _JOB_COMPLETION:
            job = self.current
            rank = self.cur_rank
            self._stop(now)
            job.completion = now
            self.mailboxes[rank].popleft()
            self.completed[rank].append(job)
            self.current = None
            self._refresh_top()
        else:
            self._stop(now)
        self._dispatch(now)

    # -- internals --------------------------------------------------------

    def _refresh_top(self) -> None:
        self.top = None
        for i, box in enumerate(self.mailboxes):
            if box:
                self.top = i
                return

    def _deliver(self, packet: Packet, t: int) -> None:
        rank = self.port_rank.get(packet.dest_port)
        if rank is None:
            self.discarded += 1
            return
        top = self.top
        if top is not None:
            self.mailboxes[top][0].preemption += t - self.last_acct
        self.last_acct = t
        task = self.tasks[rank]
        self.mailboxes[rank].append(Job(task.task_id, packet, t, task.service_time_us))
        if top is None or rank < top:
            self.top = rank

    def _stop(self, now: int) -> None:
        """Close the running segment at ``now`` and go idle."""
        running = self.running
        start = self.seg_start
        if running == DRIVER:
            self.last_acct = start
            cost = self.cost.per_packet_cost_us
            t = start + self.head_left
            if t <= now:
                self._deliver(self.inflight, t)
                self.inflight = None
                t += cost
                backlog = self.backlog
                deliver = self._deliver
                if t + (len(backlog) - 1) * cost <= now:
                    # whole backlog done
                    for p in backlog:
                        deliver(p, t)
                        t += cost
                    backlog.clear()
                else:
                    while t <= now:
                        deliver(backlog.popleft(), t)
                        t += cost
                    self.inflight = backlog.popleft()
            self.head_left = t - now if self.inflight is not None else 0
            if self.top is not None:
                self.mailboxes[self.top][0].preemption += now - self.last_acct
        elif running == ISR:
            if self.top is not None:
                self.mailboxes[self.top][0].preemption += now - start
        elif running == TASK:
            ran = now - start
            self.current.remaining -= ran
            self.executed[self.cur_rank] += ran
        self.busy[running] += now - start
        if self.log is not None and running != IDLE and now > start:
            who = {ISR: "isr", DRIVER: "driver"}.get(running)
            if who is None:
                who = self.current.task_id
            self.log.append((start, now, who))
        self.running = IDLE
        self.seg_start = now

    def _dispatch(self, now: int) -> None:
        """Pick what runs next; the CPU must be idle (just stopped)."""
        if self.isr_fifo:
            self._begin(now, ISR)
        elif self.inflight is not None:
            self._begin(now, DRIVER)
        elif self.top is not None:
            self._begin(now, TASK)
        else:
            self.gen += 1
            self.events.clear_slot(self)

    def _begin(self, now: int, what: int) -> None:
        self.gen += 1
        self.running = what
        self.seg_start = now
        if what == ISR:
            self.events.set_slot(self, now + self.cost.isr_overhead_us, _ISR_END, self.gen)
        elif what == DRIVER:
            end = now + self.head_left + len(self.backlog) * self.cost.per_packet_cost_us
            self.events.set_slot(self, end, _DRIVER_STEP, self.gen)
        else:
            job = self.mailboxes[self.top][0]
            self.current = job
            self.cur_rank = self.top
            if job.start is None:
                job.start = now
            self.events.set_slot(self, now + job.remaining, _JOB_COMPLETION, self.gen)
