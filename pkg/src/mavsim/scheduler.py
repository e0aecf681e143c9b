"""Discrete-event model of the flight microcontroller's signal duty.

Time is integer microseconds. Input PPM from the RC receiver is decoded from
edge events, output PPM for the four brushless regulators is encoded as
timer events, and ``simulate_contention`` serializes all of it on one CPU
with priority-preemptive interrupt service to measure edge jitter.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Sequence

import numpy as np

INPUT_EDGE = "input_edge"
OUTPUT_TIMER = "output_timer"
COMPUTE_SLOT = "compute_slot"
TELEMETRY_SLOT = "telemetry_slot"
EVENT_KINDS = (INPUT_EDGE, OUTPUT_TIMER, COMPUTE_SLOT, TELEMETRY_SLOT)


class SchedulabilityError(ValueError):
    def __init__(self, message: str, violating: Sequence[str]):
        super().__init__(message)
        self.violating = list(violating)


@dataclass(frozen=True)
class TimedEvent:
    t_us: int
    kind: str
    channel: int = 0
    payload: Any = None  # edge level for PPM events, deadline for compute slots
    cost_us: int | None = None  # overrides the cost model (compute slots)
    tag: str = ""


@dataclass(frozen=True)
class PpmMapping:
    """Pulse width <-> command. 1.0-2.0 ms spans the [0, 1] command range."""

    cmd_min_us: int = 1000
    cmd_max_us: int = 2000
    valid_min_us: int = 900
    valid_max_us: int = 2100

    def to_command(self, width_us: float) -> float:
        c = (width_us - self.cmd_min_us) / (self.cmd_max_us - self.cmd_min_us)
        return min(max(c, 0.0), 1.0)

    def to_width(self, command: float) -> tuple[int, bool]:
        clamped = not 0.0 <= command <= 1.0
        c = min(max(command, 0.0), 1.0)
        return round(self.cmd_min_us + c * (self.cmd_max_us - self.cmd_min_us)), clamped


@dataclass(frozen=True)
class PpmChannelState:
    last_edge_us: int | None = None
    rise_us: int | None = None
    width_us: int | None = None
    value: float | None = None
    valid: bool = False
    stale: bool = False
    last_valid_us: int | None = None
    frame_rate: float = 50.0


@dataclass(frozen=True)
class DecodedSample:
    t_us: int
    channel: int
    value: float | None
    stale: bool
    width_us: int | None = None


@dataclass
class DecodeResult:
    samples: list[DecodedSample]
    states: list[PpmChannelState]
    edge_count: int
    duration_us: int

    @property
    def edges_per_second(self) -> float:
        return self.edge_count * 1e6 / self.duration_us if self.duration_us else 0.0

    def values(self, channel: int) -> list[DecodedSample]:
        return [s for s in self.samples if s.channel == channel]


def rc_edges(commands: Sequence[float] | Callable[[int], Sequence[float]], frame_rate: float,
             duration_us: int, mapping: PpmMapping = PpmMapping(),
             stagger_us: int = 0, drop: Iterable[tuple[int, int]] = ()) -> list[TimedEvent]:
    """Synthetic receiver output: one pulse per channel per frame.

    ``drop`` lists (frame index, channel) pulses to omit.
    """
    period = round(1e6 / frame_rate)
    dropped = set(drop)
    events = []
    for k in range(duration_us // period):
        cmds = commands(k) if callable(commands) else commands
        t0 = k * period
        for ch, c in enumerate(cmds):
            if (k, ch) in dropped:
                continue
            w, _ = mapping.to_width(c)
            start = t0 + ch * stagger_us
            events.append(TimedEvent(start, INPUT_EDGE, ch, 1))
            events.append(TimedEvent(start + w, INPUT_EDGE, ch, 0))
    events.sort(key=lambda e: (e.t_us, e.channel, -e.payload))
    return events


def ppm_decode(edges: Iterable[TimedEvent], states: Sequence[PpmChannelState] | None = None,
               n_channels: int = 4, mapping: PpmMapping = PpmMapping(),
               timeout_frames: float = 1.5, duration_us: int | None = None) -> DecodeResult:
    """Decode rising/falling edge pairs into command values.

    A channel whose last valid pulse is older than ``timeout_frames`` frame
    periods is marked stale and keeps its last value (failsafe hold).
    """
    states = list(states) if states is not None else [PpmChannelState() for _ in range(n_channels)]
    samples: list[DecodedSample] = []
    count = 0
    last_t = None
    first_t = None

    def check_stale(t: int):
        for ch, st in enumerate(states):
            if st.last_valid_us is None or st.stale:
                continue
            timeout = timeout_frames * 1e6 / st.frame_rate
            if t - st.last_valid_us > timeout:
                states[ch] = replace(st, stale=True)
                samples.append(DecodedSample(t, ch, st.value, True, st.width_us))

    for e in edges:
        if e.kind != INPUT_EDGE:
            continue
        if last_t is not None and e.t_us < last_t:
            raise ValueError(f"edges out of order at t={e.t_us} us")
        last_t = e.t_us
        if first_t is None:
            first_t = e.t_us
        count += 1
        check_stale(e.t_us)
        st = states[e.channel]
        if e.payload:
            states[e.channel] = replace(st, rise_us=e.t_us, last_edge_us=e.t_us)
            continue
        if st.rise_us is None:
            states[e.channel] = replace(st, last_edge_us=e.t_us)
            continue
        width = e.t_us - st.rise_us
        if mapping.valid_min_us <= width <= mapping.valid_max_us:
            value = mapping.to_command(width)
            states[e.channel] = replace(st, last_edge_us=e.t_us, rise_us=None, width_us=width,
                                        value=value, valid=True, stale=False,
                                        last_valid_us=e.t_us)
            samples.append(DecodedSample(e.t_us, e.channel, value, False, width))
        else:
            states[e.channel] = replace(st, last_edge_us=e.t_us, rise_us=None, valid=False)
    if duration_us is None:
        duration_us = 0 if last_t is None else last_t - first_t
    return DecodeResult(samples, states, count, duration_us)


@dataclass
class EncodeResult:
    events: list[TimedEvent]
    period_us: int
    clamped: bool
    widths: list[tuple[int, ...]]  # per cycle, per channel

    def edges_per_second(self, duration_us: int) -> float:
        return len(self.events) * 1e6 / duration_us


MAX_OUTPUT_RATE = 500.0


def ppm_encode(commands: Sequence[float] | Sequence[Sequence[float]] | Callable[[int, int], Sequence[float]],
               rate_hz: float, duration_us: int, mapping: PpmMapping = PpmMapping(),
               start_us: int = 0) -> EncodeResult:
    """Output pulse trains for the motor regulators.

    ``commands`` is a constant 4-vector, a per-cycle list of 4-vectors, or a
    callable ``(cycle, t_us)``. Commands are latched at the cycle start, so a
    change always lands on the next pulse.
    """
    if not 0 < rate_hz <= MAX_OUTPUT_RATE:
        raise ValueError(f"regulation rate must be in (0, {MAX_OUTPUT_RATE}] Hz")
    period = round(1e6 / rate_hz)
    events: list[TimedEvent] = []
    widths = []
    clamped = False
    per_cycle = (not callable(commands) and len(commands) > 0
                 and isinstance(commands[0], (list, tuple, np.ndarray)))
    for k in range(duration_us // period):
        t0 = start_us + k * period
        if callable(commands):
            cmds = commands(k, t0)
        elif per_cycle:
            cmds = commands[min(k, len(commands) - 1)]
        else:
            cmds = commands
        ws = []
        for ch, c in enumerate(cmds):
            w, cl = mapping.to_width(c)
            clamped |= cl
            ws.append(w)
            events.append(TimedEvent(t0, OUTPUT_TIMER, ch, 1))
            events.append(TimedEvent(t0 + w, OUTPUT_TIMER, ch, 0))
        widths.append(tuple(ws))
    events.sort(key=lambda e: (e.t_us, e.channel, -e.payload))
    return EncodeResult(events, period, clamped, widths)


# -- contention ---------------------------------------------------------------

@dataclass(frozen=True)
class IsrCostModel:
    """Service cost per event kind and a priority map (lower value = more
    urgent). Ties are served in arrival order, then by kind order, then
    channel."""

    costs_us: dict = field(default_factory=lambda: {
        INPUT_EDGE: 8, OUTPUT_TIMER: 8, TELEMETRY_SLOT: 8, COMPUTE_SLOT: 1000})
    priorities: dict = field(default_factory=lambda: {
        INPUT_EDGE: 0, OUTPUT_TIMER: 1, TELEMETRY_SLOT: 2, COMPUTE_SLOT: 3})
    policy: str = "priority_preemptive"

    def __post_init__(self):
        if any(c <= 0 for c in self.costs_us.values()):
            raise ValueError("ISR costs must be positive")
        if self.policy != "priority_preemptive":
            raise ValueError("only priority_preemptive is modeled")

    def cost(self, e: TimedEvent) -> int:
        return e.cost_us if e.cost_us is not None else self.costs_us[e.kind]

    def scaled(self, factor: float) -> "IsrCostModel":
        return replace(self, costs_us={k: round(v * factor) for k, v in self.costs_us.items()})


@dataclass(frozen=True)
class ServiceRecord:
    event: TimedEvent
    start_us: int
    end_us: int

    @property
    def latency_us(self) -> int:
        return self.start_us - self.event.t_us


@dataclass
class JitterReport:
    per_channel: dict  # "kind:channel" -> {"max", "mean", "count"}
    deadline_misses: int
    histogram: dict  # bin lower edge (us) -> count, edge events only
    max_jitter_us: int
    max_output_jitter_us: int
    max_input_jitter_us: int
    records: list[ServiceRecord] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {
            "max_jitter_us": self.max_jitter_us,
            "max_output_jitter_us": self.max_output_jitter_us,
            "max_input_jitter_us": self.max_input_jitter_us,
            "deadline_misses": self.deadline_misses,
            "per_channel": self.per_channel,
            "histogram": self.histogram,
        }


def _order_key(e: TimedEvent, seq: int, model: IsrCostModel):
    return (model.priorities[e.kind], e.t_us, EVENT_KINDS.index(e.kind), e.channel, seq)


def simulate_contention(events: Iterable[TimedEvent], model: IsrCostModel = IsrCostModel(),
                        duration_us: int | None = None, bin_us: int = 4) -> JitterReport:
    """Serve every event on one CPU under priority-preemptive dispatch.

    An edge is realized when its service routine is dispatched, so its
    jitter is the dispatch delay. Compute slots carry their deadline in
    ``payload`` and count a miss when they finish late.
    """
    evs = sorted(events, key=lambda e: e.t_us)
    if duration_us is not None:
        evs = [e for e in evs if e.t_us < duration_us]
    arrivals = [(e.t_us, i, e) for i, e in enumerate(evs)]
    ready: list = []
    start: dict[int, int] = {}
    end: dict[int, int] = {}
    remaining: dict[int, int] = {}
    running: tuple | None = None  # (key, idx)
    now = 0
    ai = 0
    n = len(arrivals)
    while ai < n or ready or running is not None:
        next_arrival = arrivals[ai][0] if ai < n else math.inf
        if running is None:
            if not ready:
                now = max(now, next_arrival)
                while ai < n and arrivals[ai][0] == now:
                    _, i, e = arrivals[ai]
                    remaining[i] = model.cost(e)
                    heapq.heappush(ready, (_order_key(e, i, model), i))
                    ai += 1
            key, idx = heapq.heappop(ready)
            running = (key, idx)
            start.setdefault(idx, now)
            continue
        key, idx = running
        finish = now + remaining[idx]
        if next_arrival < finish:
            remaining[idx] -= next_arrival - now
            now = next_arrival
            while ai < n and arrivals[ai][0] == now:
                _, i, e = arrivals[ai]
                remaining[i] = model.cost(e)
                heapq.heappush(ready, (_order_key(e, i, model), i))
                ai += 1
            if ready and ready[0][0][0] < key[0]:
                heapq.heappush(ready, running)
                running = None
            continue
        now = finish
        remaining[idx] = 0
        end[idx] = now
        running = None
        while ai < n and arrivals[ai][0] == now:
            _, i, e = arrivals[ai]
            remaining[i] = model.cost(e)
            heapq.heappush(ready, (_order_key(e, i, model), i))
            ai += 1

    records = [ServiceRecord(e, start[i], end[i]) for i, e in enumerate(evs)]
    per: dict[str, list[int]] = {}
    misses = 0
    edge_lat = []
    for r in records:
        if r.event.kind == COMPUTE_SLOT:
            if r.event.payload is not None and r.end_us > r.event.payload:
                misses += 1
            continue
        per.setdefault(f"{r.event.kind}:{r.event.channel}", []).append(r.latency_us)
        edge_lat.append(r.latency_us)
    per_channel = {k: {"max": max(v), "mean": float(np.mean(v)), "count": len(v)}
                   for k, v in sorted(per.items())}
    hist: dict[int, int] = {}
    for lat in edge_lat:
        b = (lat // bin_us) * bin_us
        hist[b] = hist.get(b, 0) + 1
    out_lat = [r.latency_us for r in records if r.event.kind == OUTPUT_TIMER]
    in_lat = [r.latency_us for r in records if r.event.kind == INPUT_EDGE]
    return JitterReport(
        per_channel=per_channel,
        deadline_misses=misses,
        histogram=dict(sorted(hist.items())),
        max_jitter_us=max(edge_lat, default=0),
        max_output_jitter_us=max(out_lat, default=0),
        max_input_jitter_us=max(in_lat, default=0),
        records=records,
    )


def worst_case_collision(t_us: int = 10_000, n_timers: int = 4) -> list[TimedEvent]:
    """One input edge arriving together with four output timer expiries."""
    events = [TimedEvent(t_us, INPUT_EDGE, 0, 1)]
    events += [TimedEvent(t_us, OUTPUT_TIMER, ch, 0) for ch in range(n_timers)]
    return events


def jitter_bound(events: Sequence[TimedEvent], victim: TimedEvent,
                 model: IsrCostModel = IsrCostModel()) -> int:
    """(k - 1) * c_max for a simultaneous collision, where k counts the
    events (victim included) that may be served no later than the victim."""
    p = model.priorities[victim.kind]
    contenders = [e for e in events if e.t_us == victim.t_us
                  and model.priorities[e.kind] <= p and e.kind != COMPUTE_SLOT]
    c_max = max(model.cost(e) for e in contenders)
    return (len(contenders) - 1) * c_max


# -- timing faults and the ESC side --------------------------------------------

def esc_observe(events: Iterable[TimedEvent], rate_hz: float, duration_us: int,
                n_channels: int = 4, mapping: PpmMapping = PpmMapping(),
                start_us: int = 0) -> dict[int, list[tuple[int, float]]]:
    """What each regulator reads per cycle: the high time following the
    cycle start, or full throttle if the line never drops within the cycle."""
    period = round(1e6 / rate_hz)
    out: dict[int, list[tuple[int, float]]] = {}
    by_ch: dict[int, list[TimedEvent]] = {ch: [] for ch in range(n_channels)}
    for e in events:
        if e.kind == OUTPUT_TIMER and e.channel in by_ch:
            by_ch[e.channel].append(e)
    for ch, evs in by_ch.items():
        evs.sort(key=lambda e: (e.t_us, -e.payload))
        trace = []
        level = 0
        high_since = None
        j = 0
        for k in range(duration_us // period):
            t0 = start_us + k * period
            t1 = t0 + period
            # advance to the cycle start
            while j < len(evs) and evs[j].t_us < t0:
                level, high_since = _apply_edge(level, high_since, evs[j])
                j += 1
            pulse_start = high_since
            fell_at = None
            jj = j
            lv, hs = level, high_since
            while jj < len(evs) and evs[jj].t_us < t1:
                e = evs[jj]
                if e.payload and lv == 0:
                    pulse_start = e.t_us
                lv, hs = _apply_edge(lv, hs, e)
                if not e.payload and fell_at is None and pulse_start is not None:
                    fell_at = e.t_us
                jj += 1
            if pulse_start is None:
                cmd = 0.0
            elif fell_at is None:
                cmd = 1.0
            else:
                cmd = mapping.to_command(fell_at - pulse_start)
            trace.append((t0, cmd))
        out[ch] = trace
    return out


def _apply_edge(level: int, high_since: int | None, e: TimedEvent):
    if e.payload:
        return 1, (high_since if level else e.t_us)
    return 0, None


@dataclass
class TimingFaultResult:
    events: list[TimedEvent]
    observed: dict[int, list[tuple[int, float]]]
    fault_us: int
    cleared_us: int | None  # watchdog intervention time


def inject_timing_fault(events: Sequence[TimedEvent], kind: str, at_us: int, channel: int,
                        rate_hz: float, duration_us: int, delay_us: int = 3000,
                        watchdog_window_us: int | None = None,
                        mapping: PpmMapping = PpmMapping()) -> TimingFaultResult:
    """Drop or delay output timer events on one channel.

    ``lost``: the falling-edge timer is never re-armed after ``at_us``, so
    the line stays high and the regulator reads full throttle.
    ``delayed``: the first falling edge at or after ``at_us`` slips by
    ``delay_us``.
    With a watchdog the channel is re-armed if no falling edge happened for
    ``watchdog_window_us``; it then emits the last valid pulse width.
    """
    if kind not in ("lost", "delayed"):
        raise ValueError(f"unknown timing fault {kind!r}")
    period = round(1e6 / rate_hz)
    if watchdog_window_us is not None and watchdog_window_us <= period:
        raise ValueError("watchdog window must exceed the output period")
    evs = sorted(events, key=lambda e: (e.t_us, e.channel, -e.payload))
    out: list[TimedEvent] = []
    delayed_done = False
    for e in evs:
        if e.kind == OUTPUT_TIMER and e.channel == channel and not e.payload and e.t_us >= at_us:
            if kind == "lost":
                continue
            if not delayed_done:
                out.append(replace(e, t_us=e.t_us + delay_us, tag="delayed"))
                delayed_done = True
                continue
        out.append(e)

    cleared = None
    if watchdog_window_us is not None:
        out, cleared = _watchdog(out, channel, watchdog_window_us, period, duration_us, mapping)
    out.sort(key=lambda e: (e.t_us, e.channel, -e.payload))
    observed = esc_observe(out, rate_hz, duration_us, mapping=mapping)
    return TimingFaultResult(out, observed, at_us, cleared)


def _watchdog(events: list[TimedEvent], channel: int, window: int, period: int,
              duration_us: int, mapping: PpmMapping):
    ch_events = sorted((e for e in events if e.kind == OUTPUT_TIMER and e.channel == channel),
                       key=lambda e: e.t_us)
    others = [e for e in events if not (e.kind == OUTPUT_TIMER and e.channel == channel)]
    last_fall = 0
    last_width = None
    rise = None
    kept: list[TimedEvent] = []
    cleared = None
    for e in ch_events:
        if not e.payload and e.t_us - last_fall <= window:
            kept.append(e)
            last_fall = e.t_us
            if rise is not None:
                last_width = e.t_us - rise
            continue
        if e.payload and e.t_us - last_fall <= window:
            kept.append(e)
            rise = e.t_us
            continue
        # watchdog expiry: force the line low and re-arm with the last width
        cleared = last_fall + window
        break
    if cleared is None:
        return events, None
    kept.append(TimedEvent(cleared, OUTPUT_TIMER, channel, 0, tag="watchdog"))
    width = last_width if last_width is not None else mapping.cmd_min_us
    t0 = (cleared // period + 1) * period
    while t0 < duration_us:
        kept.append(TimedEvent(t0, OUTPUT_TIMER, channel, 1, tag="watchdog"))
        kept.append(TimedEvent(t0 + width, OUTPUT_TIMER, channel, 0, tag="watchdog"))
        t0 += period
    return others + kept, cleared


# -- frame budget ---------------------------------------------------------------

DEFAULT_PIPELINE_US = (
    ("sensor_read", 150),
    ("estimate", 1200),
    ("control", 400),
    ("encode", 50),
)


@dataclass(frozen=True)
class FrameSchedule:
    rate_hz: float
    period_us: int
    slots: tuple[tuple[str, int, int], ...]  # name, start offset, end offset
    isr_budget_us: int
    slack_us: int


def isr_load_per_cycle(rate_hz: float, model: IsrCostModel = IsrCostModel(),
                       input_edges_per_s: float = 400.0, n_outputs: int = 4) -> int:
    """Expected interrupt service time per control cycle."""
    inputs = input_edges_per_s / rate_hz * model.costs_us[INPUT_EDGE]
    outputs = 2 * n_outputs * model.costs_us[OUTPUT_TIMER]
    return math.ceil(inputs + outputs)


def schedule_frame(tasks: Sequence[tuple[str, int]], rate_hz: float,
                   model: IsrCostModel = IsrCostModel(),
                   input_edges_per_s: float = 400.0) -> FrameSchedule:
    """Lay out the per-cycle pipeline after the cycle's interrupt reserve.

    Over-budget pipelines are rejected here, before anything runs.
    """
    period = round(1e6 / rate_hz)
    isr = isr_load_per_cycle(rate_hz, model, input_edges_per_s) if tasks else 0
    t = isr
    slots = []
    violating = []
    for name, cost in tasks:
        if cost <= 0:
            raise ValueError(f"task {name!r} must have positive cost")
        slots.append((name, t, t + cost))
        t += cost
        if t > period:
            violating.append(name)
    if violating:
        raise SchedulabilityError(
            f"pipeline needs {t} us per cycle (incl. {isr} us interrupt reserve) but the "
            f"period at {rate_hz:g} Hz is {period} us; over budget: {', '.join(violating)}",
            violating)
    return FrameSchedule(rate_hz, period, tuple(slots), isr, period - t)


def frame_events(rate_hz: float, duration_us: int, pipeline: Sequence[tuple[str, int]],
                 output_widths: Sequence[int] = (1500, 1500, 1500, 1500),
                 input_frame_rate: float = 50.0, input_widths: Sequence[int] = (1500,) * 4,
                 input_offset_us: int = 0) -> list[TimedEvent]:
    """Event set of one configuration: RC input edges, output pulses and one
    compute slot per cycle (deadline = next cycle start)."""
    period = round(1e6 / rate_hz)
    events: list[TimedEvent] = []
    cost = sum(c for _, c in pipeline)
    for k in range(duration_us // period):
        t0 = k * period
        if cost:
            events.append(TimedEvent(t0, COMPUTE_SLOT, 0, t0 + period, cost_us=cost))
        for ch, w in enumerate(output_widths):
            events.append(TimedEvent(t0, OUTPUT_TIMER, ch, 1))
            events.append(TimedEvent(t0 + w, OUTPUT_TIMER, ch, 0))
    in_period = round(1e6 / input_frame_rate)
    for k in range(duration_us // in_period):
        t0 = k * in_period + input_offset_us
        for ch, w in enumerate(input_widths):
            events.append(TimedEvent(t0, INPUT_EDGE, ch, 1))
            events.append(TimedEvent(t0 + w, INPUT_EDGE, ch, 0))
    events.sort(key=lambda e: (e.t_us, EVENT_KINDS.index(e.kind), e.channel))
    return events


def watchdog_clear_time(last_fall_us: int, window_us: int) -> int:
    return last_fall_us + window_us
