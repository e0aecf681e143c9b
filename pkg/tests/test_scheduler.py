import itertools

import pytest
from hypothesis import given, strategies as st

from mavsim import scheduler as sch


def enumerated_worst_output_latency(events, cost):
    """Largest start delay any output timer can see over every service order
    of simultaneous events (one CPU, each routine runs to completion)."""
    worst = 0
    for order in itertools.permutations(range(len(events))):
        for pos, i in enumerate(order):
            if events[i].kind == sch.OUTPUT_TIMER:
                worst = max(worst, pos * cost)
    return worst


def test_worst_case_collision_jitter():
    events = sch.worst_case_collision()
    rep = sch.simulate_contention(events)
    victim = max((e for e in events if e.kind == sch.OUTPUT_TIMER), key=lambda e: e.channel)
    bound = sch.jitter_bound(events, victim)
    assert rep.max_output_jitter_us == 32 == bound
    assert enumerated_worst_output_latency(events, 8) == 32
    assert rep.max_output_jitter_us <= 40


def test_input_edge_served_first():
    rep = sch.simulate_contention(sch.worst_case_collision())
    assert rep.max_input_jitter_us == 0


def test_decoder_counts_400_edges_per_second():
    edges = sch.rc_edges([0.2, 0.4, 0.6, 0.8], 50.0, 1_000_000, stagger_us=2500)
    res = sch.ppm_decode(edges, duration_us=1_000_000)
    assert res.edge_count == 400
    assert res.edges_per_second == 400.0
    vals = [s.value for s in res.values(2)]
    assert vals and all(v == pytest.approx(0.6) for v in vals)


def test_encoder_signal_changes_at_500hz():
    enc = sch.ppm_encode([0.5] * 4, 500.0, 1_000_000)
    assert enc.edges_per_second(1_000_000) >= 3000
    assert len(enc.events) == 4000


def test_encoder_rate_limit():
    with pytest.raises(ValueError):
        sch.ppm_encode([0.5] * 4, 600.0, 1_000_000)


@given(st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4))
def test_encode_decode_round_trip(cmds):
    enc = sch.ppm_encode(cmds, 50.0, 100_000)
    edges = [sch.TimedEvent(e.t_us, sch.INPUT_EDGE, e.channel, e.payload) for e in enc.events]
    res = sch.ppm_decode(edges)
    for ch, c in enumerate(cmds):
        assert res.values(ch)[-1].value == pytest.approx(c, abs=1e-3)


def test_missing_pulses_go_stale_and_hold():
    edges = sch.rc_edges([0.5] * 4, 50.0, 400_000, drop=[(k, 1) for k in range(5, 20)])
    res = sch.ppm_decode(edges, duration_us=400_000)
    assert res.states[1].stale and res.states[1].value == pytest.approx(0.5)
    assert not res.states[0].stale


@given(st.lists(st.tuples(st.integers(0, 5000), st.sampled_from(sch.EVENT_KINDS[:2]),
                          st.integers(0, 3)), min_size=1, max_size=30))
def test_contention_never_serves_before_arrival(raw):
    events = [sch.TimedEvent(t, k, ch, 1) for t, k, ch in raw]
    rep = sch.simulate_contention(events)
    for r in rep.records:
        assert r.start_us >= r.event.t_us
        assert r.end_us >= r.start_us + 8
    assert rep.max_jitter_us <= 8 * (len(events) - 1)


def test_lost_timer_reads_full_throttle():
    enc = sch.ppm_encode([0.5] * 4, 300.0, 100_000)
    res = sch.inject_timing_fault(enc.events, "lost", 30_000, 0, 300.0, 100_000)
    trace = res.observed[0]
    assert all(v == pytest.approx(0.5, abs=1e-3) for t, v in trace if t < 27_000)
    assert all(v == 1.0 for t, v in trace if t > 34_000)


def test_watchdog_clamps_within_window():
    enc = sch.ppm_encode([0.5] * 4, 300.0, 100_000)
    window = 5000
    res = sch.inject_timing_fault(enc.events, "lost", 30_000, 0, 300.0, 100_000,
                                  watchdog_window_us=window)
    assert res.cleared_us is not None and res.cleared_us - res.fault_us <= window
    period = round(1e6 / 300)
    late = [v for t, v in res.observed[0] if t >= res.cleared_us + period]
    assert late and all(v == pytest.approx(0.5, abs=1e-3) for v in late)


def test_delayed_timer_lengthens_one_pulse():
    enc = sch.ppm_encode([0.5] * 4, 300.0, 100_000)
    res = sch.inject_timing_fault(enc.events, "delayed", 30_000, 0, 300.0, 100_000,
                                  delay_us=300)
    vals = [v for _, v in res.observed[0]]
    assert sum(v > 0.55 for v in vals) == 1


def test_frame_schedule_rejects_overload():
    with pytest.raises(sch.SchedulabilityError) as exc:
        sch.schedule_frame([("estimate", 3000)], 500.0)
    assert exc.value.violating == ["estimate"]
    fs = sch.schedule_frame(list(sch.DEFAULT_PIPELINE_US), 300.0)
    assert fs.slack_us > 0


def test_default_frame_meets_deadlines():
    events = sch.frame_events(300.0, 100_000, sch.DEFAULT_PIPELINE_US)
    assert sch.simulate_contention(events).deadline_misses == 0
