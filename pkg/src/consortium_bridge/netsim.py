"""Seeded discrete-event message passing over a partially synchronous network.

Time is integer milliseconds. Every random draw comes from sub-streams of a
single 64-bit run seed, so a (configuration, seed) pair fully determines the
event trace.
"""
from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

from .encoding import hexdigest
from .errors import ConfigurationError

NodeId = int


class EventKind(str, Enum):
    DELIVER = "deliver"
    TIMER = "timer"
    FAULT = "fault"


class FaultBehavior(str, Enum):
    SILENT = "silent"
    ENDORSE_INVALID = "endorse-invalid"
    EQUIVOCATE = "equivocate"


@dataclass(frozen=True)
class DelayModel:
    base_latency: int
    jitter: int = 0
    drop_probability: float = 0.0
    delta_bound: Optional[int] = None

    def __post_init__(self):
        if self.delta_bound is None:
            object.__setattr__(self, "delta_bound", self.base_latency + self.jitter)
        if self.base_latency < 0 or self.jitter < 0:
            raise ConfigurationError("base_latency and jitter must be non-negative")
        if not 0 <= self.drop_probability <= 1:
            raise ConfigurationError("drop_probability must lie in [0, 1]")
        if self.base_latency + self.jitter > self.delta_bound:
            raise ConfigurationError(
                f"base_latency + jitter ({self.base_latency + self.jitter}) "
                f"exceeds delta_bound ({self.delta_bound})")

    def sample(self, rng: random.Random) -> int:
        offset = rng.randint(-self.jitter, self.jitter) if self.jitter else 0
        return min(max(self.base_latency + offset, 0), self.delta_bound)


@dataclass(order=True)
class SimEvent:
    fire_time: int
    target: NodeId
    seq: int
    kind: EventKind = field(compare=False)
    source: NodeId = field(compare=False)
    payload: Any = field(compare=False)


@dataclass(frozen=True)
class TraceRecord:
    time: int
    kind: EventKind
    source: NodeId
    target: NodeId
    payload: Any

    def line(self) -> str:
        return f"{self.time},{self.kind.value},{self.source},{self.target},{hexdigest(self.payload, 16)}"


@dataclass(frozen=True)
class _Segment:
    """Sequenced envelope used by reliable FIFO links."""
    seq: int
    payload: Any


@dataclass(frozen=True)
class _Retransmit:
    target: NodeId
    seq: int
    payload: Any


class Network:
    """Single-threaded event loop shared by every simulated process.

    Handlers are callables ``handler(event)`` registered per node. Messages
    sent with ``reliable=True`` are retransmitted after ``delta_bound`` when
    dropped and released to the receiver in per-link FIFO order.
    """

    def __init__(self, num_nodes: int, delay: DelayModel, seed: int = 0, *,
                 link_delays: Optional[dict[tuple[NodeId, NodeId], DelayModel]] = None,
                 consortium_size: Optional[int] = None):
        if num_nodes < 1:
            raise ConfigurationError("network needs at least one node")
        self.num_nodes = num_nodes
        self.delay = delay
        self.seed = seed & 0xFFFFFFFFFFFFFFFF
        self.link_delays = dict(link_delays or {})
        self.consortium_size = consortium_size if consortium_size is not None else num_nodes
        self.now = 0
        self.timed_out = False
        self.trace: list[TraceRecord] = []
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self.faults: dict[NodeId, FaultBehavior] = {}
        self._queue: list[SimEvent] = []
        self._counter = 0
        self._handlers: dict[NodeId, Callable[[SimEvent], None]] = {}
        self._streams: dict[str, random.Random] = {}
        self._tx_seq: dict[tuple[NodeId, NodeId], int] = {}
        self._rx_next: dict[tuple[NodeId, NodeId], int] = {}
        self._rx_buffer: dict[tuple[NodeId, NodeId], dict[int, Any]] = {}

    # -- randomness --------------------------------------------------------
    def rng(self, label: str) -> random.Random:
        stream = self._streams.get(label)
        if stream is None:
            material = hashlib.sha256(self.seed.to_bytes(8, "big") + label.encode()).digest()
            stream = random.Random(int.from_bytes(material[:8], "big"))
            self._streams[label] = stream
        return stream

    # -- topology ----------------------------------------------------------
    def _check(self, node: NodeId) -> None:
        if not (isinstance(node, int) and 0 <= node < self.num_nodes):
            raise ConfigurationError(f"unknown node {node!r}")

    def register(self, node: NodeId, handler: Callable[[SimEvent], None]) -> None:
        self._check(node)
        self._handlers[node] = handler

    def inject_fault(self, node: NodeId, behavior: FaultBehavior | str) -> bool:
        self._check(node)
        self.faults[node] = FaultBehavior(behavior)
        return True

    def behavior(self, node: NodeId) -> Optional[FaultBehavior]:
        return self.faults.get(node)

    @property
    def fault_bound(self) -> int:
        return (self.consortium_size - 1) // 3

    @property
    def assumption_violated(self) -> bool:
        members = [n for n in self.faults if n < self.consortium_size]
        return len(members) > self.fault_bound

    # -- scheduling --------------------------------------------------------
    def _push(self, fire_time: int, target: NodeId, kind: EventKind, source: NodeId, payload: Any) -> None:
        self._counter += 1
        heapq.heappush(self._queue, SimEvent(fire_time, target, self._counter, kind, source, payload))

    def schedule_send(self, src: NodeId, dst: NodeId, payload: Any,
                      now: Optional[int] = None) -> Optional[int]:
        """Send one transmission; returns the delivery time, or None if dropped."""
        self._check(src)
        self._check(dst)
        now = self.now if now is None else now
        model = self.link_delays.get((src, dst), self.delay)
        stream = self.rng(f"link:{src}:{dst}")
        self.sent += 1
        if model.drop_probability and stream.random() < model.drop_probability:
            self.dropped += 1
            self.trace.append(TraceRecord(now, EventKind.FAULT, src, dst, payload))
            return None
        when = now + model.sample(stream)
        self._push(when, dst, EventKind.DELIVER, src, payload)
        return when

    def send(self, src: NodeId, dst: NodeId, payload: Any, *, reliable: bool = False) -> Optional[int]:
        if not reliable:
            return self.schedule_send(src, dst, payload)
        link = (src, dst)
        seq = self._tx_seq.get(link, 0)
        self._tx_seq[link] = seq + 1
        return self._transmit(src, dst, _Segment(seq, payload))

    def _transmit(self, src: NodeId, dst: NodeId, segment: _Segment) -> Optional[int]:
        when = self.schedule_send(src, dst, segment)
        if when is None:
            model = self.link_delays.get((src, dst), self.delay)
            self._push(self.now + max(model.delta_bound, 1), src, EventKind.TIMER, src,
                       _Retransmit(dst, segment.seq, segment.payload))
        return when

    def set_timer(self, node: NodeId, delay: int, payload: Any) -> int:
        self._check(node)
        if delay < 0:
            raise ConfigurationError("timer delay must be non-negative")
        when = self.now + int(delay)
        self._push(when, node, EventKind.TIMER, node, payload)
        return when

    def at(self, node: NodeId, time: int, payload: Any) -> None:
        """Fire a timer for ``node`` at an absolute time (not before now)."""
        self.set_timer(node, max(0, int(time) - self.now), payload)

    # -- loop --------------------------------------------------------------
    def run_until_quiet(self, horizon: Optional[int] = None) -> int:
        while self._queue:
            event = self._queue[0]
            if horizon is not None and event.fire_time > horizon:
                self.timed_out = True
                self.now = max(self.now, horizon)
                return self.now
            heapq.heappop(self._queue)
            self.now = event.fire_time
            self._dispatch(event)
        return self.now

    @property
    def pending(self) -> int:
        return len(self._queue)

    def _dispatch(self, event: SimEvent) -> None:
        payload = event.payload
        if event.kind is EventKind.TIMER and isinstance(payload, _Retransmit):
            self.trace.append(TraceRecord(event.fire_time, EventKind.TIMER, event.source, event.target, payload))
            self._transmit(event.target, payload.target, _Segment(payload.seq, payload.payload))
            return
        self.trace.append(TraceRecord(event.fire_time, event.kind, event.source, event.target, payload))
        if event.kind is EventKind.DELIVER:
            self.delivered += 1
            if isinstance(payload, _Segment):
                self._release(event, payload)
                return
        handler = self._handlers.get(event.target)
        if handler is not None:
            handler(event)

    def _release(self, event: SimEvent, segment: _Segment) -> None:
        link = (event.source, event.target)
        expected = self._rx_next.get(link, 0)
        buffer = self._rx_buffer.setdefault(link, {})
        if segment.seq < expected:
            return
        buffer[segment.seq] = segment.payload
        handler = self._handlers.get(event.target)
        while expected in buffer:
            payload = buffer.pop(expected)
            expected += 1
            self._rx_next[link] = expected
            if handler is not None:
                handler(SimEvent(event.fire_time, event.target, event.seq, EventKind.DELIVER,
                                 event.source, payload))

    def trace_lines(self) -> list[str]:
        return [record.line() for record in self.trace]


class Process:
    """A simulated node whose inbound messages are routed by payload type."""

    def __init__(self, node_id: NodeId, net: Network):
        self.node_id = node_id
        self.net = net
        self._routes: dict[type, Callable[[NodeId, Any], None]] = {}
        self._timer_routes: dict[type, Callable[[Any], None]] = {}
        net.register(node_id, self._on_event)

    def route(self, message_type: type, handler: Callable[[NodeId, Any], None]) -> None:
        self._routes[message_type] = handler

    def route_timer(self, payload_type: type, handler: Callable[[Any], None]) -> None:
        self._timer_routes[payload_type] = handler

    @property
    def behavior(self) -> Optional[FaultBehavior]:
        return self.net.behavior(self.node_id)

    @property
    def silent(self) -> bool:
        return self.behavior is FaultBehavior.SILENT

    def send(self, dst: NodeId, payload: Any, *, reliable: bool = True) -> None:
        self.net.send(self.node_id, dst, payload, reliable=reliable)

    def set_timer(self, delay: int, payload: Any) -> int:
        return self.net.set_timer(self.node_id, delay, payload)

    def _on_event(self, event: SimEvent) -> None:
        if event.kind is EventKind.DELIVER:
            handler = self._routes.get(type(event.payload))
            if handler is not None:
                handler(event.source, event.payload)
        elif event.kind is EventKind.TIMER:
            handler = self._timer_routes.get(type(event.payload))
            if handler is not None:
                handler(event.payload)
