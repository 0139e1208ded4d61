"""Scenarios, single runs and the moderation x flood-rate sweep."""

from __future__ import annotations

import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from rtnic.metrics import (
    DEFAULT_BIN_US,
    BinSeries,
    QueueStats,
    RunStats,
    TaskStats,
    additional_runtime,
    deadline_share,
    export_csv,
    interrupt_ratio,
    write_csv,
)
from rtnic.nic import Nic, Packet, QueueConfig
from rtnic.rtos import CostModel, Cpu, TaskDescriptor
from rtnic.sim import EventKind, EventQueue
from rtnic.traffic import (
    UNMATCHED,
    ControlFlowSpec,
    FloodSpec,
    gen_control,
    gen_flood,
    load_trace,
    merge,
)

PAPER_LABELS = ("nomod", "d800", "d1600", "d2400", "d3200")
PAPER_RATES = tuple(range(0, 15001, 1000))
GRACES = (0.05, 0.06, 0.07, 0.08, 0.09, 0.10)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class WorkerSpec:
    task_id: int
    priority: int
    port: int
    service_time_us: int
    queue: QueueConfig


@dataclass(frozen=True)
class Scenario:
    workers: tuple[WorkerSpec, ...]
    control_flows: tuple[ControlFlowSpec, ...] = ()
    floods: tuple[FloodSpec, ...] = ()
    traces: tuple[str, ...] = ()
    horizon_us: int = 30_000_000
    cost_model: CostModel = field(default_factory=CostModel)
    seed: int = 0
    label: str = "scenario"

    def __post_init__(self):
        validate(self)

    @property
    def critical(self) -> WorkerSpec:
        return max(self.workers, key=lambda w: w.priority)

    @property
    def flood_target(self) -> int:
        """Port of the lowest-priority worker."""
        return min(self.workers, key=lambda w: w.priority).port

    def with_moderation(self, label: str) -> Scenario:
        """Apply a sweep label: ``nomod`` or ``d<microseconds>``."""
        if label == "nomod":
            timer = 0
        else:
            m = re.fullmatch(r"d(\d+)", label)
            if not m:
                raise ScenarioError(f"unknown moderation label {label!r}")
            timer = int(m.group(1))
        crit = self.critical.task_id
        workers = []
        for w in self.workers:
            if w.task_id == crit or timer == 0:
                q = replace(w.queue, absolute_timer_us=0, packet_timer_us=0,
                            counter_threshold=0)
            else:
                q = replace(w.queue, absolute_timer_us=timer)
            workers.append(replace(w, queue=q))
        return replace(self, workers=tuple(workers), label=label)

    def with_flood_rate(self, rate_pps) -> Scenario:
        if self.floods:
            floods = tuple(replace(f, rate_pps=rate_pps) for f in self.floods)
        else:
            floods = (FloodSpec(rate_pps),)
        return replace(self, floods=floods)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "horizon_us": self.horizon_us,
            "seed": self.seed,
            "cost_model": {
                "isr_overhead_us": self.cost_model.isr_overhead_us,
                "per_packet_cost_us": self.cost_model.per_packet_cost_us,
            },
            "workers": [
                {
                    "task_id": w.task_id,
                    "priority": w.priority,
                    "port": w.port,
                    "service_time_us": w.service_time_us,
                    "queue": {
                        "capacity": w.queue.capacity,
                        "absolute_timer_us": w.queue.absolute_timer_us,
                        "packet_timer_us": w.queue.packet_timer_us,
                        "counter_threshold": w.queue.counter_threshold,
                    },
                }
                for w in self.workers
            ],
            "control_flows": [
                {"dest_port": c.dest_port, "period_us": c.period_us,
                 "jitter_us": c.jitter_us, "start_us": c.start_us, "end_us": c.end_us}
                for c in self.control_flows
            ],
            "floods": [
                {"dest_port": f.dest_port, "rate_pps": f.rate_pps, "model": f.model,
                 "start_us": f.start_us, "end_us": f.end_us}
                for f in self.floods
            ],
            "traces": list(self.traces),
        }


def validate(s: Scenario) -> None:
    if not s.workers:
        raise ScenarioError("workers: at least one worker is required")
    if s.horizon_us < 0:
        raise ScenarioError("horizon_us: must be >= 0")
    seen_ports, seen_ids, seen_prio = {}, set(), set()
    for i, w in enumerate(s.workers):
        if w.port in seen_ports:
            raise ScenarioError(
                f"workers[{i}].port: port {w.port} already bound by workers[{seen_ports[w.port]}]"
            )
        if not 1 <= w.port <= 65535:
            raise ScenarioError(f"workers[{i}].port: {w.port} out of range 1-65535")
        if w.task_id in seen_ids:
            raise ScenarioError(f"workers[{i}].task_id: duplicate task id {w.task_id}")
        if w.priority in seen_prio:
            raise ScenarioError(f"workers[{i}].priority: duplicate priority {w.priority}")
        if w.service_time_us < 0:
            raise ScenarioError(f"workers[{i}].service_time_us: must be >= 0")
        seen_ports[w.port] = i
        seen_ids.add(w.task_id)
        seen_prio.add(w.priority)
    crit = s.critical
    if not crit.queue.immediate:
        idx = s.workers.index(crit)
        raise ScenarioError(
            f"workers[{idx}].queue.absolute_timer_us: the critical worker (highest "
            f"priority) must use immediate mode, got {crit.queue.absolute_timer_us}"
        )


# -- loading ---------------------------------------------------------------

_REQUIRED = object()


def _fields(obj, path, spec):
    if not isinstance(obj, dict):
        raise ScenarioError(f"{path or '<root>'}: expected an object")
    unknown = sorted(set(obj) - set(spec))
    if unknown:
        raise ScenarioError(f"{path + '.' if path else ''}{unknown[0]}: unknown key")
    out = {}
    for key, default in spec.items():
        p = f"{path}.{key}" if path else key
        if key not in obj:
            if default is _REQUIRED:
                raise ScenarioError(f"{p}: required")
            out[key] = default
        else:
            out[key] = obj[key]
    return out


def _int(v, path, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioError(f"{path}: expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ScenarioError(f"{path}: must be >= {lo}, got {v}")
    return v


def _opt_int(v, path, lo=None):
    return None if v is None else _int(v, path, lo)


def default_control_flows(workers, period_us=20_000, jitter_us=4_000):
    return tuple(ControlFlowSpec(w.port, period_us, jitter_us) for w in workers)


def scenario_from_dict(d: dict, base_dir=None) -> Scenario:
    top = _fields(d, "", {
        "label": "scenario", "horizon_us": 30_000_000, "seed": 0,
        "cost_model": {}, "workers": _REQUIRED, "control_flows": None,
        "floods": [], "traces": [],
    })
    cm = _fields(top["cost_model"], "cost_model",
                 {"isr_overhead_us": 6, "per_packet_cost_us": 1})
    cost = CostModel(_int(cm["isr_overhead_us"], "cost_model.isr_overhead_us", 0),
                     _int(cm["per_packet_cost_us"], "cost_model.per_packet_cost_us", 0))
    if not isinstance(top["workers"], list):
        raise ScenarioError("workers: expected a list")
    workers = []
    for i, w in enumerate(top["workers"]):
        p = f"workers[{i}]"
        f = _fields(w, p, {"task_id": i, "priority": _REQUIRED, "port": _REQUIRED,
                           "service_time_us": 300, "queue": {}})
        qf = _fields(f["queue"], f"{p}.queue", {
            "capacity": 128, "absolute_timer_us": 0, "packet_timer_us": 0,
            "counter_threshold": 0,
        })
        prio = _int(f["priority"], f"{p}.priority")
        try:
            q = QueueConfig(
                capacity=_int(qf["capacity"], f"{p}.queue.capacity", 1),
                absolute_timer_us=_int(qf["absolute_timer_us"], f"{p}.queue.absolute_timer_us", 0),
                packet_timer_us=_int(qf["packet_timer_us"], f"{p}.queue.packet_timer_us", 0),
                counter_threshold=_int(qf["counter_threshold"], f"{p}.queue.counter_threshold", 0),
                owner_priority=prio,
            )
        except ValueError as e:
            if isinstance(e, ScenarioError):
                raise
            raise ScenarioError(f"{p}.queue: {e}") from None
        workers.append(WorkerSpec(
            task_id=_int(f["task_id"], f"{p}.task_id"),
            priority=prio,
            port=_int(f["port"], f"{p}.port", 1),
            service_time_us=_int(f["service_time_us"], f"{p}.service_time_us", 0),
            queue=q,
        ))
    if top["control_flows"] is None:
        controls = default_control_flows(workers)
    else:
        controls = []
        for i, c in enumerate(top["control_flows"]):
            p = f"control_flows[{i}]"
            f = _fields(c, p, {"dest_port": _REQUIRED, "period_us": _REQUIRED,
                               "jitter_us": 0, "start_us": 0, "end_us": None})
            try:
                controls.append(ControlFlowSpec(
                    _int(f["dest_port"], f"{p}.dest_port", 1),
                    _int(f["period_us"], f"{p}.period_us", 1),
                    _int(f["jitter_us"], f"{p}.jitter_us", 0),
                    _int(f["start_us"], f"{p}.start_us", 0),
                    _opt_int(f["end_us"], f"{p}.end_us", 0),
                ))
            except ScenarioError:
                raise
            except ValueError as e:
                raise ScenarioError(f"{p}: {e}") from None
    floods = []
    for i, fl in enumerate(top["floods"]):
        p = f"floods[{i}]"
        f = _fields(fl, p, {"dest_port": None, "rate_pps": _REQUIRED, "model": "cbr",
                            "start_us": 0, "end_us": None})
        port = f["dest_port"]
        if port is not None and port != UNMATCHED:
            port = _int(port, f"{p}.dest_port", 1)
        rate = f["rate_pps"]
        if isinstance(rate, bool) or not isinstance(rate, (int, float)) or rate < 0:
            raise ScenarioError(f"{p}.rate_pps: expected a number >= 0, got {rate!r}")
        if f["model"] not in ("cbr", "poisson"):
            raise ScenarioError(f"{p}.model: expected 'cbr' or 'poisson', got {f['model']!r}")
        floods.append(FloodSpec(rate, port, f["model"],
                                _int(f["start_us"], f"{p}.start_us", 0),
                                _opt_int(f["end_us"], f"{p}.end_us", 0)))
    traces = []
    for i, t in enumerate(top["traces"]):
        if not isinstance(t, str):
            raise ScenarioError(f"traces[{i}]: expected a file path")
        tp = Path(t)
        if base_dir is not None and not tp.is_absolute():
            tp = Path(base_dir) / tp
        traces.append(str(tp))
    label = top["label"]
    if not isinstance(label, str):
        raise ScenarioError("label: expected a string")
    return Scenario(
        workers=tuple(workers),
        control_flows=tuple(controls),
        floods=tuple(floods),
        traces=tuple(traces),
        horizon_us=_int(top["horizon_us"], "horizon_us", 0),
        cost_model=cost,
        seed=_int(top["seed"], "seed"),
        label=label,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"{path}: invalid JSON: {e}") from None
    return scenario_from_dict(d, base_dir=path.parent)


def paper_scenario(rate_pps=5000, label="d3200", horizon_us=30_000_000, seed=1) -> Scenario:
    """Four workers on ports 502-505, priorities 4..1, the lowest one flooded."""
    workers = tuple(
        WorkerSpec(task_id=i, priority=4 - i, port=502 + i, service_time_us=300,
                   queue=QueueConfig(capacity=128, owner_priority=4 - i))
        for i in range(4)
    )
    base = Scenario(
        workers=workers,
        control_flows=default_control_flows(workers),
        floods=(FloodSpec(rate_pps),),
        horizon_us=horizon_us,
        seed=seed,
    )
    return base.with_moderation(label)


# -- running ---------------------------------------------------------------

class Simulation:
    """NIC, CPU and counters for one run, sharing one event queue."""

    def __init__(self, scenario: Scenario, bin_width_us=DEFAULT_BIN_US, record_batches=False):
        self.scenario = scenario
        self.events = EventQueue()
        tasks = [TaskDescriptor(w.task_id, w.priority, w.service_time_us, w.port)
                 for w in scenario.workers]
        self.cpu = Cpu(self.events, scenario.cost_model, tasks)
        self.nic = Nic(self.events, self._on_interrupt)
        self.series = BinSeries(bin_width_us)
        self.bindings: dict[int, tuple[int, int]] = {}
        self.latency_violations = 0
        self.batches = [] if record_batches else None
        for w in scenario.workers:
            self.bind(w.port, w.task_id, w.queue)

    def bind(self, port, task_id, config) -> int:
        qid = self.nic.bind_flow(port, task_id, config)
        self.bindings[qid] = (port, task_id)
        self.series.add_queue(qid)
        return qid

    def unbind(self, port) -> None:
        self.nic.unbind_flow(port)
        self.cpu.unbind_port(port)

    def _on_interrupt(self, batch) -> None:
        t = batch.fire_time
        self.series.count_interrupt(batch.queue_id, t)
        if self.nic.queues[batch.queue_id].config.absolute_timer_us == 0:
            for p in batch.packets:
                if p.arrival_time != t:
                    self.latency_violations += 1
        if self.batches is not None:
            self.batches.append(batch)
        self.cpu.on_interrupt(batch)

    def arrivals(self):
        s = self.scenario
        streams = []
        k = 0
        for c in s.control_flows:
            streams.append((gen_control(c, s.seed, s.horizon_us, stream=k), c.dest_port, "control"))
            k += 1
        bound = {w.port for w in s.workers}
        for f in s.floods:
            port = f.dest_port
            if port is None:
                port = s.flood_target
            elif port == UNMATCHED:
                port = next(p for p in range(65535, 0, -1) if p not in bound)
            streams.append((gen_flood(f, s.seed, s.horizon_us, stream=k), port, "flood"))
            k += 1
        for path in s.traces:
            times, ports = load_trace(path)
            keep = times < s.horizon_us
            streams.append((times[keep], ports[keep], "trace"))
        return merge(streams)

    def run(self) -> RunStats:
        arr = self.arrivals()
        times = arr.times.tolist()
        ports = arr.ports.tolist()
        tags = arr.tags
        receive = self.nic.receive
        on_timer = self.nic.on_timer
        cpu_handle = self.cpu.handle
        timer_kind = EventKind.QUEUE_TIMER_EXPIRY

        # bindings are fixed for the run, so per-queue bins come straight
        # from the arrival arrays
        for port, q in self.nic._by_port.items():
            self.series.count_packets(q.queue_id, arr.times[arr.ports == port])

        def on_arrival(i):
            receive(Packet(i, times[i], ports[i], tags[i]))

        def handler(ev):
            if ev.kind is timer_kind:
                on_timer(ev.payload)
            else:
                cpu_handle(ev)

        self.events.run_with_arrivals(self.scenario.horizon_us, times, on_arrival, handler)
        return self.stats()

    def stats(self) -> RunStats:
        s = self.scenario
        queues = []
        for q in self.nic.all_queues():
            port, task_id = self.bindings[q.queue_id]
            queues.append(QueueStats(
                queue_id=q.queue_id, port=port, task_id=task_id,
                absolute_timer_us=q.config.absolute_timer_us,
                enqueued=q.enqueued, delivered=q.packets_delivered,
                dropped_full=q.dropped_full, dropped_unbind=q.dropped_unbind,
                occupancy=len(q.occupancy), interrupts=q.interrupts_raised,
            ))
        tasks = [TaskStats(t.task_id, t.priority, t.bound_port, list(done))
                 for t, done in zip(self.cpu.tasks, self.cpu.completed)]
        return RunStats(
            label=s.label, seed=s.seed, horizon_us=s.horizon_us, queues=queues,
            tasks=tasks, series=self.series, critical_task=s.critical.task_id,
            dropped_unmatched=self.nic.dropped_unmatched,
            driver_discarded=self.cpu.discarded,
            latency_violations=self.latency_violations, scenario=s.to_dict(),
        )


def run_scenario(s: Scenario, bin_width_us=DEFAULT_BIN_US) -> RunStats:
    return Simulation(s, bin_width_us).run()


def compute_baseline(s: Scenario) -> RunStats:
    """The same scenario with every flood silenced."""
    return run_scenario(replace(s, floods=tuple(replace(f, rate_pps=0) for f in s.floods)))


# -- sweep -----------------------------------------------------------------

@dataclass(frozen=True)
class SweepGrid:
    labels: tuple[str, ...] = PAPER_LABELS
    rates: tuple[float, ...] = PAPER_RATES


class SweepError(RuntimeError):
    pass


SWEEP_HEADER = (
    "label", "rate_pps", "packets", "interrupts", "interrupt_ratio",
    "critical_added_preemption_us",
    *(f"deadline_share_g{round(g * 100)}" for g in GRACES),
    "flood_queue_interrupt_ratio", "critical_latency_violations", "dropped_full",
    "conserved",
)


def _rate_name(rate) -> str:
    return str(int(rate)) if float(rate).is_integer() else str(rate)


def cell_row(stats: RunStats, rate, runtime_base: RunStats, deadline_base: RunStats,
             flood_port: int) -> dict:
    crit = stats.critical_task
    flood_q = [q.queue_id for q in stats.queues if q.port == flood_port]
    row = {
        "label": stats.label,
        "rate_pps": rate,
        "packets": stats.packets,
        "interrupts": stats.interrupts,
        "interrupt_ratio": interrupt_ratio(stats),
        "critical_added_preemption_us": additional_runtime(stats, crit, runtime_base),
    }
    for g in GRACES:
        row[f"deadline_share_g{round(g * 100)}"] = deadline_share(stats, crit, deadline_base, g)
    row["flood_queue_interrupt_ratio"] = interrupt_ratio(stats, set(flood_q))
    row["critical_latency_violations"] = stats.latency_violations
    row["dropped_full"] = sum(q.dropped_full for q in stats.queues)
    row["conserved"] = all(q.conserved for q in stats.queues)
    return row


def _run_cell(args):
    scenario, rate, cell_dir, runtime_base, deadline_base = args
    stats = run_scenario(scenario)
    if cell_dir is not None:
        export_csv(stats, cell_dir)
    return cell_row(stats, rate, runtime_base, deadline_base, scenario.flood_target)


def run_sweep(base: Scenario, grid: SweepGrid, out_dir=None, jobs: int = 1,
              on_row=None) -> list[dict]:
    """One run per (label, rate) cell, rows in grid order.

    Runtime inflation is measured against the same label with floods off;
    deadlines against the unmoderated no-flood run.
    """
    out = Path(out_dir) if out_dir is not None else None
    deadline_base = compute_baseline(base.with_moderation("nomod"))
    tasks = []
    for label in grid.labels:
        try:
            moderated = base.with_moderation(label)
        except ScenarioError as e:
            raise SweepError(f"cell {label}: {e}") from None
        runtime_base = compute_baseline(moderated)
        for rate in grid.rates:
            cell_dir = out / label / _rate_name(rate) if out is not None else None
            tasks.append((moderated.with_flood_rate(rate), rate, cell_dir,
                          runtime_base, deadline_base))

    rows = []

    def collect(row):
        rows.append(row)
        if on_row is not None:
            on_row(row)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futures = [ex.submit(_run_cell, t) for t in tasks]
            for t, fut in zip(tasks, futures):
                try:
                    collect(fut.result())
                except Exception as e:
                    raise SweepError(f"cell {t[0].label}/{_rate_name(t[1])}: {e}") from e
    else:
        for t in tasks:
            try:
                result = _run_cell(t)
            except Exception as e:
                raise SweepError(f"cell {t[0].label}/{_rate_name(t[1])}: {e}") from e
            collect(result)

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "sweep.csv", SWEEP_HEADER,
                  ([r[k] for k in SWEEP_HEADER] for r in rows))
    return rows
