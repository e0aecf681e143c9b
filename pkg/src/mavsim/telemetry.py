"""Serial radio link between vehicle and ground station.

A UART frame is 10 bits per byte (start, 8 data, stop), so the byte budget
is baud / 10 per second. Frames queue FIFO behind the one on the air; the
queue drops its oldest waiting frame on overflow.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class TelemetryLink:
    baud: int = 19200
    frame_overhead: int = 0  # bytes added to every frame
    loss_prob: float = 0.0
    latency_ms: float = 2.0
    queue_depth: int = 32
    range_m: float = 30.0

    def __post_init__(self):
        if self.baud <= 0:
            raise ValueError("baud must be positive")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss probability must be in [0, 1]")
        if self.queue_depth < 0:
            raise ValueError("queue depth must be non-negative")

    @property
    def bytes_per_second(self) -> float:
        return self.baud / 10.0

    def serialization_us(self, nbytes: int) -> int:
        return math.ceil((nbytes + self.frame_overhead) * 10 * 1_000_000 / self.baud)


@dataclass(frozen=True)
class Delivery:
    index: int
    offered_us: int
    nbytes: int
    status: str  # delivered | lost | overflow
    start_us: int | None = None
    end_us: int | None = None
    delivered_us: int | None = None


@dataclass
class LinkResult:
    deliveries: list[Delivery]

    def count(self, status: str) -> int:
        return sum(d.status == status for d in self.deliveries)

    @property
    def drop_rate(self) -> float:
        n = len(self.deliveries)
        return (n - self.count("delivered")) / n if n else 0.0

    def max_window_bytes(self, window_us: int = 1_000_000) -> float:
        """Largest number of bytes on the air within any window, prorating
        frames that straddle the window edges."""
        spans = [(d.start_us, d.end_us, d.nbytes) for d in self.deliveries
                 if d.start_us is not None]
        best = 0.0
        for s0, _, _ in spans:
            w0, w1 = s0, s0 + window_us
            total = 0.0
            for a, b, nb in spans:
                ov = min(b, w1) - max(a, w0)
                if ov > 0:
                    total += nb * ov / (b - a)
            best = max(best, total)
        return best


def link_transmit(link: TelemetryLink, frames: Sequence[tuple[int, int]],
                  rng: np.random.Generator) -> LinkResult:
    """Push ``(offered_us, nbytes)`` frames through the link in offer order."""
    order = sorted(range(len(frames)), key=lambda i: (frames[i][0], i))
    results: dict[int, Delivery] = {}
    queue: deque[int] = deque()
    busy_until = 0
    latency = round(link.latency_ms * 1000)

    def start_ready(until: int | None):
        nonlocal busy_until
        while queue:
            i = queue[0]
            t_start = max(busy_until, frames[i][0])
            if until is not None and t_start > until:
                return
            queue.popleft()
            nbytes = frames[i][1]
            t_end = t_start + link.serialization_us(nbytes)
            busy_until = t_end
            lost = rng.random() < link.loss_prob
            results[i] = Delivery(
                i, frames[i][0], nbytes + link.frame_overhead,
                "lost" if lost else "delivered", t_start, t_end,
                None if lost else t_end + latency)

    for i in order:
        t, nbytes = frames[i]
        if nbytes <= 0:
            raise ValueError("frame size must be positive")
        start_ready(t)
        if busy_until > t and len(queue) >= link.queue_depth:
            if link.queue_depth == 0:
                results[i] = Delivery(i, t, nbytes + link.frame_overhead, "overflow")
                continue
            old = queue.popleft()
            results[old] = Delivery(old, frames[old][0], frames[old][1] + link.frame_overhead,
                                    "overflow")
        queue.append(i)
        start_ready(t)
    start_ready(None)
    return LinkResult([results[i] for i in range(len(frames))])
