"""Run statistics, derived figures of merit and CSV export."""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rtnic.rtos import Job

DEFAULT_BIN_US = 100_000


class MetricsError(ValueError):
    pass


class BinSeries:
    """Per-queue packet and interrupt counts in fixed-width time bins."""

    def __init__(self, bin_width_us: int = DEFAULT_BIN_US):
        if bin_width_us <= 0:
            raise ValueError("bin width must be > 0")
        self.bin_width_us = bin_width_us
        self.packets: dict[int, dict[int, int]] = {}
        self.interrupts: dict[int, dict[int, int]] = {}

    def add_queue(self, qid: int) -> None:
        self.packets.setdefault(qid, {})
        self.interrupts.setdefault(qid, {})

    def count_packet(self, qid: int, t: int) -> None:
        d = self.packets[qid]
        b = t // self.bin_width_us
        d[b] = d.get(b, 0) + 1

    def count_packets(self, qid: int, times) -> None:
        """Bulk form of ``count_packet`` for an array of arrival times."""
        bins, n = np.unique(np.asarray(times, dtype=np.int64) // self.bin_width_us,
                            return_counts=True)
        d = self.packets[qid]
        for b, c in zip(bins.tolist(), n.tolist()):
            d[b] = d.get(b, 0) + c

    def count_interrupt(self, qid: int, t: int) -> None:
        d = self.interrupts[qid]
        b = t // self.bin_width_us
        d[b] = d.get(b, 0) + 1

    def rows(self):
        """``(bin_start_us, queue_id, packets, interrupts)`` for non-empty bins."""
        keys = set()
        for qid in self.packets:
            keys.update((b, qid) for b in self.packets[qid])
            keys.update((b, qid) for b in self.interrupts[qid])
        for b, qid in sorted(keys):
            yield (b * self.bin_width_us, qid,
                   self.packets[qid].get(b, 0), self.interrupts[qid].get(b, 0))

    def total_packets(self, qid: int) -> int:
        return sum(self.packets[qid].values())

    def total_interrupts(self, qid: int) -> int:
        return sum(self.interrupts[qid].values())


@dataclass
class QueueStats:
    queue_id: int
    port: int
    task_id: int
    absolute_timer_us: int
    enqueued: int = 0
    delivered: int = 0
    dropped_full: int = 0
    dropped_unbind: int = 0
    occupancy: int = 0
    interrupts: int = 0

    @property
    def immediate(self) -> bool:
        return self.absolute_timer_us == 0

    @property
    def conserved(self) -> bool:
        return self.enqueued == (self.delivered + self.dropped_full
                                 + self.dropped_unbind + self.occupancy)


@dataclass
class TaskStats:
    task_id: int
    priority: int
    port: int
    jobs: list[Job] = field(default_factory=list)

    def responses(self) -> list[int]:
        return [j.response for j in self.jobs]

    @property
    def total_preemption(self) -> int:
        return sum(j.preemption for j in self.jobs)


@dataclass
class RunStats:
    label: str
    seed: int
    horizon_us: int
    queues: list[QueueStats]
    tasks: list[TaskStats]
    series: BinSeries
    critical_task: int
    dropped_unmatched: int = 0
    driver_discarded: int = 0
    latency_violations: int = 0
    scenario: dict | None = None

    def queue(self, qid) -> QueueStats:
        return next(q for q in self.queues if q.queue_id == qid)

    def queue_for_port(self, port) -> QueueStats:
        return next(q for q in self.queues if q.port == port)

    def task(self, task_id) -> TaskStats:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise MetricsError(f"no task {task_id} in run {self.label!r}")

    @property
    def packets(self) -> int:
        return sum(q.enqueued for q in self.queues)

    @property
    def interrupts(self) -> int:
        return sum(q.interrupts for q in self.queues)


def interrupt_ratio(stats: RunStats, queues=None) -> float | None:
    """Interrupts per packet steered to the selected queues (all by default).

    Returns None when the selection received nothing.
    """
    sel = [q for q in stats.queues if queues is None or q.queue_id in queues]
    packets = sum(q.enqueued for q in sel)
    if packets == 0:
        return None
    return sum(q.interrupts for q in sel) / packets


def additional_runtime(stats: RunStats, task_id, baseline: RunStats | None) -> int:
    """ISR and driver preemption of the task's jobs beyond the no-flood run."""
    if baseline is None:
        raise MetricsError("additional_runtime needs a baseline run")
    return stats.task(task_id).total_preemption - baseline.task(task_id).total_preemption


def deadline_share(stats: RunStats, task_id, baseline: RunStats | None, grace: float) -> float:
    """Share of the task's jobs whose response is within the baseline median
    response stretched by ``1 + grace``."""
    if baseline is None:
        raise MetricsError("deadline_share needs a baseline run")
    if not 0.01 <= grace <= 0.5:
        raise MetricsError(f"grace {grace} outside [0.01, 0.5]")
    ref = baseline.task(task_id).responses()
    if not ref:
        raise MetricsError(f"baseline has no completed jobs for task {task_id}")
    resp = stats.task(task_id).responses()
    if not resp:
        raise MetricsError(f"no completed jobs for task {task_id}")
    deadline = statistics.median(ref) * (1 + grace)
    return sum(1 for r in resp if r <= deadline) / len(resp)


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


SUMMARY_HEADER = (
    "kind", "id", "port", "priority", "absolute_timer_us", "enqueued",
    "delivered", "dropped_full", "dropped_unbind", "dropped_unmatched",
    "driver_discarded", "occupancy", "interrupts", "interrupt_ratio", "jobs",
    "median_response_us", "total_preemption_us",
)


def summary_rows(stats: RunStats):
    for q in stats.queues:
        yield ("queue", q.queue_id, q.port, None, q.absolute_timer_us,
               q.enqueued, q.delivered, q.dropped_full, q.dropped_unbind, None, None,
               q.occupancy, q.interrupts, interrupt_ratio(stats, {q.queue_id}),
               None, None, None)
    for t in stats.tasks:
        resp = t.responses()
        med = float(statistics.median(resp)) if resp else None
        yield ("task", t.task_id, t.port, t.priority, None, None, None, None,
               None, None, None, None, None, None, len(t.jobs), med, t.total_preemption)
    yield ("nic", None, None, None, None, stats.packets, None, None, None,
           stats.dropped_unmatched, stats.driver_discarded, None, stats.interrupts,
           interrupt_ratio(stats), None, None, None)


def export_csv(stats: RunStats, out_dir) -> list[Path]:
    """Write timeseries.csv, jobs.csv, summary.csv and run.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / n for n in ("timeseries.csv", "jobs.csv", "summary.csv", "run.json")]
    write_csv(paths[0], ("bin_start_us", "queue_id", "packets", "interrupts"),
              stats.series.rows())
    with open(paths[1], "w", encoding="utf-8", newline="") as f:
        # all-integer table, formatted directly for speed
        f.write("task_id,packet_id,release_us,completion_us,response_us,preemption_us\n")
        for t in stats.tasks:
            f.writelines(
                f"{j.task_id},{j.packet.id},{j.release},{j.completion},"
                f"{j.completion - j.packet.arrival_time},{j.preemption}\n"
                for j in t.jobs
            )
    write_csv(paths[2], SUMMARY_HEADER, summary_rows(stats))
    meta = {
        "label": stats.label,
        "seed": stats.seed,
        "horizon_us": stats.horizon_us,
        "bin_width_us": stats.series.bin_width_us,
        "scenario": stats.scenario,
    }
    paths[3].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths
