"""Arrival streams: request-driven control flows, packet floods, CSV traces.

Every generator is a pure function of its spec and seed and returns sorted
integer arrival times in microseconds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

UNMATCHED = "unmatched"
TRACE_HEADER = ("arrival_time_us", "dest_port")


@dataclass(frozen=True)
class ControlFlowSpec:
    """Periodic requests; each one is displaced by a uniform offset in
    ``[-jitter_us/2, +jitter_us/2]``."""

    dest_port: int
    period_us: int
    jitter_us: int = 0
    start_us: int = 0
    end_us: int | None = None

    def __post_init__(self):
        if self.period_us <= 0:
            raise ValueError("period_us must be > 0")
        if not 0 <= self.jitter_us < self.period_us:
            raise ValueError("jitter_us must be in [0, period_us)")


@dataclass(frozen=True)
class FloodSpec:
    """``dest_port=None`` means the scenario's default flood target."""

    rate_pps: float
    dest_port: int | str | None = None
    model: str = "cbr"
    start_us: int = 0
    end_us: int | None = None

    def __post_init__(self):
        if self.rate_pps < 0:
            raise ValueError("rate_pps must be >= 0")
        if self.model not in ("cbr", "poisson"):
            raise ValueError(f"unknown flood model {self.model!r}")


class TraceError(ValueError):
    pass


def _rng(seed, stream):
    return np.random.default_rng([seed, stream])


def gen_control(spec: ControlFlowSpec, seed: int, horizon: int | None = None,
                stream: int = 0) -> np.ndarray:
    end = spec.end_us if spec.end_us is not None else horizon
    if end is None:
        raise ValueError("control flow needs an end time or a horizon")
    n = max(0, -(-(end - spec.start_us + spec.jitter_us) // spec.period_us))
    base = spec.start_us + spec.period_us * np.arange(n, dtype=np.int64)
    if spec.jitter_us:
        half = spec.jitter_us / 2
        base = base + np.rint(_rng(seed, stream).uniform(-half, half, n)).astype(np.int64)
    return base[(base >= spec.start_us) & (base < end)]


def cbr_times(rate_pps, start: int, end: int) -> np.ndarray:
    """Arrival ``k`` at ``start + round(k * 1e6 / rate)``, computed exactly."""
    if rate_pps == 0 or end <= start:
        return np.empty(0, dtype=np.int64)
    rate = Fraction(rate_pps).limit_denominator(10**6)
    p, q = rate.numerator, rate.denominator
    n = (end - start) * p // (10**6 * q) + 2
    k = np.arange(n, dtype=object if n * 2 * 10**6 * q > 2**62 else np.int64)
    t = (start + (2 * k * 10**6 * q + p) // (2 * p)).astype(np.int64)
    return t[t < end]


def poisson_times(rate_pps, start: int, end: int, rng) -> np.ndarray:
    if rate_pps == 0 or end <= start:
        return np.empty(0, dtype=np.int64)
    mean = 1e6 / rate_pps
    chunks, t = [], float(start)
    chunk = max(16, int((end - start) / mean * 1.1) + 16)
    while t < end:
        cum = t + np.cumsum(rng.exponential(mean, chunk))
        chunks.append(cum)
        t = cum[-1]
    times = np.rint(np.concatenate(chunks)).astype(np.int64)
    return times[times < end]


def gen_flood(spec: FloodSpec, seed: int, horizon: int | None = None,
              stream: int = 0) -> np.ndarray:
    end = spec.end_us if spec.end_us is not None else horizon
    if end is None:
        raise ValueError("flood needs an end time or a horizon")
    if spec.model == "cbr":
        return cbr_times(spec.rate_pps, spec.start_us, end)
    return poisson_times(spec.rate_pps, spec.start_us, end, _rng(seed, stream))


def load_trace(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a two-column trace CSV into ``(times, ports)``."""
    times, ports = [], []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        if tuple(h.strip() for h in header) != TRACE_HEADER:
            raise TraceError(f"{path}:1: expected header {','.join(TRACE_HEADER)}")
        prev = None
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 2:
                raise TraceError(f"{path}:{line}: expected 2 columns, got {len(row)}")
            try:
                t, port = int(row[0]), int(row[1])
            except ValueError:
                raise TraceError(f"{path}:{line}: not an integer row: {row!r}") from None
            if t < 0 or not 1 <= port <= 65535:
                raise TraceError(f"{path}:{line}: value out of range: {row!r}")
            if prev is not None and t < prev:
                raise TraceError(f"{path}:{line}: time {t} goes backwards (previous {prev})")
            prev = t
            times.append(t)
            ports.append(port)
    return np.asarray(times, dtype=np.int64), np.asarray(ports, dtype=np.int64)


def write_trace(path, times, ports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        w.writerows(zip((int(t) for t in times), (int(p) for p in ports)))


@dataclass
class Arrivals:
    times: np.ndarray
    ports: np.ndarray
    tags: list[str]

    def __len__(self):
        return len(self.times)


def merge(streams) -> Arrivals:
    """Merge ``(times, ports, tag)`` streams chronologically.

    ``ports`` may be a scalar. Ties keep declaration order, then stream order.
    """
    if not streams:
        return Arrivals(np.empty(0, np.int64), np.empty(0, np.int64), [])
    times, ports, src, idx, tags = [], [], [], [], []
    for i, (t, p, tag) in enumerate(streams):
        t = np.asarray(t, dtype=np.int64)
        times.append(t)
        ports.append(np.broadcast_to(np.asarray(p, dtype=np.int64), t.shape))
        src.append(np.full(t.shape, i, dtype=np.int64))
        idx.append(np.arange(len(t), dtype=np.int64))
        tags.append(tag)
    times, ports = np.concatenate(times), np.concatenate(ports)
    src, idx = np.concatenate(src), np.concatenate(idx)
    order = np.lexsort((idx, src, times))
    return Arrivals(times[order], ports[order], [tags[s] for s in src[order].tolist()])
