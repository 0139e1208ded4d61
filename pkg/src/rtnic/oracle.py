"""Chronological reference replay of one queue's moderation rules.

Deliberately shares no code with :mod:`rtnic.nic`: it walks the sorted
arrivals once and settles each pending deadline by direct comparison, which
is what the event-driven engine has to agree with.
"""

from __future__ import annotations

import random


def reference_replay(arrivals, capacity=128, absolute_timer_us=0,
                     packet_timer_us=0, counter_threshold=0):
    """Return ``[(fire_time, batch_size, cause), ...]`` for a trace."""
    fired = []
    held = 0
    abs_dl = pkt_dl = None

    def due():
        if abs_dl is None:
            return None
        if pkt_dl is None or abs_dl <= pkt_dl:
            return abs_dl, "absolute_timer"
        return pkt_dl, "packet_timer"

    for t in sorted(arrivals):
        # a deadline equal to t fires after this arrival is queued
        d = due() if held else None
        if d is not None and d[0] < t:
            fired.append((d[0], held, d[1]))
            held, abs_dl, pkt_dl = 0, None, None
        if absolute_timer_us == 0:
            fired.append((t, 1, "immediate"))
            continue
        if held >= capacity:
            continue
        held += 1
        if abs_dl is None:
            abs_dl = t + absolute_timer_us
        if packet_timer_us:
            pkt_dl = t + packet_timer_us
        if counter_threshold and held >= counter_threshold:
            fired.append((t, held, "threshold"))
            held, abs_dl, pkt_dl = 0, None, None
    if held:
        d = due()
        fired.append((d[0], held, d[1]))
    return fired


def random_trace(n, seed, mean_gap_us=150):
    """Integer arrival times with bursts, gaps and exact duplicates."""
    rng = random.Random(seed)
    t, out = 0, []
    for _ in range(n):
        r = rng.random()
        if r < 0.1:
            gap = 0
        elif r < 0.15:
            gap = rng.randint(2000, 8000)
        else:
            gap = rng.randint(1, 2 * mean_gap_us)
        t += gap
        out.append(t)
    return out
