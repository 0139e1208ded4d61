import pytest
from hypothesis import given, settings, strategies as st

from rtnic.nic import (
    Action,
    Cause,
    DistributionMap,
    FlowRule,
    InterruptBatch,
    Nic,
    NicConfigError,
    Packet,
    QueueConfig,
    RxQueue,
    classify,
    replay_trace,
)
from rtnic.oracle import random_trace, reference_replay
from rtnic.sim import EventKind, EventQueue


def pkt(i, t=0, port=502):
    return Packet(i, t, port)


# -- classify --------------------------------------------------------------

def test_classify_direct_lookup():
    m = DistributionMap([FlowRule(502, 0, 0)])
    assert classify(pkt(0, port=502), m) == 0


def test_classify_unmatched_drops_without_interrupt():
    events = EventQueue()
    fired = []
    nic = Nic(events, fired.append)
    nic.bind_flow(502, 0, QueueConfig())
    nic.bind_flow(503, 1, QueueConfig())
    assert nic.receive(pkt(0, port=9999)) is None
    assert nic.dropped_unmatched == 1 and fired == []


def test_classify_empty_map():
    assert classify(pkt(0, port=502), DistributionMap()) is None


# -- enqueue ---------------------------------------------------------------

def test_immediate_fires_single_packet():
    q = RxQueue(0, QueueConfig(absolute_timer_us=0))
    res = q.enqueue(pkt(0, 100), 100)
    assert isinstance(res, InterruptBatch)
    assert res.cause is Cause.IMMEDIATE and [p.id for p in res.packets] == [0]
    assert res.fire_time == 100 and not q.occupancy


def test_first_packet_arms_absolute_timer():
    q = RxQueue(0, QueueConfig(absolute_timer_us=3200))
    assert q.enqueue(pkt(0, 0), 0) is Action.ARM
    assert q.absolute_deadline == 3200 and q.packet_deadline is None
    # later packets never move the absolute deadline
    assert q.enqueue(pkt(1, 500), 500) is Action.HELD
    assert q.absolute_deadline == 3200


def test_threshold_fires_on_fourth_packet():
    arrivals = [0, 10, 20, 30]
    assert reference_replay(arrivals, absolute_timer_us=3200, counter_threshold=4) == [
        (30, 4, "threshold")
    ]
    q = RxQueue(0, QueueConfig(absolute_timer_us=3200, counter_threshold=4))
    results = [q.enqueue(pkt(i, t), t) for i, t in enumerate(arrivals)]
    assert results[:3] == [Action.ARM, Action.HELD, Action.HELD]
    batch = results[3]
    assert (batch.fire_time, len(batch.packets), batch.cause) == (30, 4, Cause.THRESHOLD)
    assert q.absolute_deadline is None and not q.occupancy


def test_full_queue_tail_drops():
    q = RxQueue(0, QueueConfig(capacity=2, absolute_timer_us=3200))
    q.enqueue(pkt(0, 0), 0)
    q.enqueue(pkt(1, 1), 1)
    gen = q.timer_generation
    assert q.enqueue(pkt(2, 2), 2) is Action.DROPPED
    assert [p.id for p in q.occupancy] == [0, 1]
    assert q.dropped_full == 1 and q.timer_generation == gen
    assert q.absolute_deadline == 3200


# -- timer expiry ----------------------------------------------------------

def test_cbr_200us_absolute_3200_batches_17():
    arrivals = list(range(0, 10_000, 200))
    ref = reference_replay(arrivals, absolute_timer_us=3200)
    assert ref[0] == (3200, 17, "absolute_timer")
    got = replay_trace(QueueConfig(absolute_timer_us=3200), arrivals)
    assert got[0] == (3200, 17, "absolute_timer")
    assert got == ref


def test_packet_timer_fires_after_silence():
    arrivals = [0, 100, 200]
    cfg = QueueConfig(absolute_timer_us=3200, packet_timer_us=250)
    assert reference_replay(arrivals, 128, 3200, 250) == [(450, 3, "packet_timer")]
    assert replay_trace(cfg, arrivals) == [(450, 3, "packet_timer")]


def test_stale_generation_is_ignored():
    q = RxQueue(0, QueueConfig(absolute_timer_us=3200))
    q.enqueue(pkt(0, 0), 0)
    gen = q.timer_generation
    assert q.on_timer_expiry(gen - 1, 3200) is Action.STALE
    assert len(q.occupancy) == 1 and q.interrupts_raised == 0
    batch = q.on_timer_expiry(gen, 3200)
    assert batch.cause is Cause.ABSOLUTE_TIMER


def test_absolute_wins_coincident_deadline():
    q = RxQueue(0, QueueConfig(absolute_timer_us=300, packet_timer_us=100))
    q.enqueue(pkt(0, 0), 0)
    q.enqueue(pkt(1, 200), 200)
    assert q.absolute_deadline == q.packet_deadline == 300
    assert q.on_timer_expiry(q.timer_generation, 300).cause is Cause.ABSOLUTE_TIMER


def test_expiry_on_empty_queue_is_a_contract_violation():
    q = RxQueue(0, QueueConfig(absolute_timer_us=300))
    with pytest.raises(RuntimeError):
        q.on_timer_expiry(q.timer_generation, 300)


# -- bind / unbind ---------------------------------------------------------

def test_bind_two_flows():
    nic = Nic(EventQueue(), lambda b: None)
    q0 = nic.bind_flow(502, 0, QueueConfig(absolute_timer_us=0))
    q1 = nic.bind_flow(503, 1, QueueConfig(absolute_timer_us=1600))
    assert q0 != q1 and len(nic.queues) == 2 and len(nic.map) == 2


def test_rebind_rejected():
    nic = Nic(EventQueue(), lambda b: None)
    nic.bind_flow(502, 0, QueueConfig())
    with pytest.raises(NicConfigError, match="502"):
        nic.bind_flow(502, 1, QueueConfig())


def test_zero_capacity_rejected():
    with pytest.raises(NicConfigError, match="capacity"):
        QueueConfig(capacity=0)


def test_immediate_mode_is_total():
    with pytest.raises(NicConfigError):
        QueueConfig(absolute_timer_us=0, packet_timer_us=100)


def test_unbind_discards_and_invalidates():
    events = EventQueue()
    fired = []
    nic = Nic(events, fired.append)
    nic.bind_flow(502, 0, QueueConfig())
    nic.bind_flow(503, 1, QueueConfig(absolute_timer_us=1600))
    for i in range(5):
        nic.receive(pkt(i, 0, 503))
    q = nic.unbind_flow(503)
    assert q.dropped_unbind == 5 and not q.occupancy
    # pending expiry for the old queue is stale now
    events.run_until(5000, lambda ev: nic.on_timer(ev.payload))
    assert fired == []
    assert nic.receive(pkt(9, 5000, 503)) is None
    assert nic.dropped_unmatched == 1


def test_unbind_unknown_port():
    nic = Nic(EventQueue(), lambda b: None)
    with pytest.raises(NicConfigError):
        nic.unbind_flow(503)


# -- properties ------------------------------------------------------------

configs = st.builds(
    lambda cap, a, p, th: QueueConfig(capacity=cap, absolute_timer_us=a,
                                      packet_timer_us=p if a else 0,
                                      counter_threshold=th if a else 0),
    st.integers(1, 64),
    st.sampled_from([0, 50, 200, 800, 3200]),
    st.sampled_from([0, 30, 250, 800]),
    st.integers(0, 20),
)
traces = st.lists(st.integers(0, 20_000), max_size=300).map(sorted)


def run_queue(cfg, arrivals):
    """Event-driven replay returning the batches and the queue."""
    events = EventQueue()
    batches = []
    nic = Nic(events, batches.append)
    qid = nic.bind_flow(502, 0, cfg)
    for i, t in enumerate(arrivals):
        events.schedule(t, EventKind.PACKET_ARRIVAL, Packet(i, t, 502))

    def handle(ev):
        if ev.kind is EventKind.PACKET_ARRIVAL:
            nic.receive(ev.payload)
        else:
            nic.on_timer(ev.payload)

    events.run_until((arrivals[-1] if arrivals else 0) + 10_000, handle)
    return batches, nic.queues[qid]


@settings(max_examples=150, deadline=None)
@given(configs, traces)
def test_engine_matches_reference(cfg, arrivals):
    got = replay_trace(cfg, arrivals)
    want = reference_replay(arrivals, cfg.capacity, cfg.absolute_timer_us,
                            cfg.packet_timer_us, cfg.counter_threshold)
    assert got == want


@settings(max_examples=100, deadline=None)
@given(configs, traces)
def test_conservation_fifo_and_latency_bounds(cfg, arrivals):
    batches, q = run_queue(cfg, arrivals)
    assert q.enqueued == q.packets_delivered + q.dropped_full + q.dropped_unbind + len(q.occupancy)
    delivered = [p for b in batches for p in b.packets]
    assert [p.id for p in delivered] == sorted(p.id for p in delivered)
    for b in batches:
        assert b.packets
        assert b.fire_time >= max(p.arrival_time for p in b.packets)
        for p in b.packets:
            if cfg.immediate:
                assert b.fire_time == p.arrival_time
            else:
                assert b.fire_time <= p.arrival_time + cfg.absolute_timer_us


@settings(max_examples=100, deadline=None)
@given(traces, st.integers(1, 4000), st.integers(1, 4000))
def test_longer_absolute_timer_never_adds_interrupts(arrivals, a, b):
    lo, hi = sorted((a, b))
    n_lo = len(replay_trace(QueueConfig(capacity=10**6, absolute_timer_us=lo), arrivals))
    n_hi = len(replay_trace(QueueConfig(capacity=10**6, absolute_timer_us=hi), arrivals))
    assert n_hi <= n_lo


@pytest.mark.parametrize("seed", range(5))
def test_random_traces_with_all_triggers(seed):
    trace = random_trace(1000, seed)
    cfg = QueueConfig(capacity=32, absolute_timer_us=3200, packet_timer_us=800,
                      counter_threshold=16)
    assert replay_trace(cfg, trace) == reference_replay(trace, 32, 3200, 800, 16)
