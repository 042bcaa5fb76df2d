"""Per-channel delay buffers for the command, visual, and haptic paths.

Four feedback-timing conditions are supported, each assigning fixed integer
millisecond delays to the visual and haptic channels and selecting where the
haptic samples come from (the operator-side simulation or the remote end
effector). The command channel carries the action-onset delay. All timing
runs on a simulated integer-ms clock, so delivered-minus-emitted latency is
exact by construction, never subject to wall-clock jitter.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Iterator

from .errors import ClockMonotonicityError, ConditionConfigError, InfeasibleBufferError

# Visual feedback delay levels offered by the rig (ms).
VISUAL_DELAY_LEVELS_MS = (250, 500, 750, 1000)

# Fixed haptic delay of the fully-delayed (asynchronous) condition (ms).
ASYNC_HAPTIC_DELAY_MS = 250


class Channel(str, Enum):
    COMMAND = "command"
    VISUAL = "visual"
    HAPTIC = "haptic"


class ConditionKind(str, Enum):
    CONTROL = "control"
    ANCHORING = "anchoring"
    SYNCHRONOUS = "synchronous"
    ASYNCHRONOUS = "asynchronous"


@dataclass(frozen=True)
class HapticSource:
    """Where haptic samples are computed: the operator-side world model or
    sensing at the remote end effector."""

    variant: str
    description: str


LOCAL_SIMULATION = HapticSource(
    "local_simulation",
    "forces rendered from the operator-side world model at command time")
REMOTE_SENSOR = HapticSource(
    "remote_sensor",
    "forces rendered from the remote world state at the end effector")


@dataclass(frozen=True)
class ConditionSpec:
    """A fully resolved feedback-timing condition."""

    kind: ConditionKind
    visual_delay_ms: int
    haptic_delay_ms: int
    onset_delay_ms: int = 0
    haptic_source: HapticSource = LOCAL_SIMULATION

    def delay_for(self, channel: Channel) -> int:
        if channel is Channel.COMMAND:
            return self.onset_delay_ms
        if channel is Channel.VISUAL:
            return self.visual_delay_ms
        return self.haptic_delay_ms

    def label(self) -> str:
        return f"{self.kind.value}-{self.visual_delay_ms}"


def make_condition(kind: ConditionKind | str, visual_delay_ms: int,
                   onset_delay_ms: int = 0) -> ConditionSpec:
    """Resolve (kind, visual delay) into a full ConditionSpec.

    control      -> haptic 0 / visual 0, local source
    anchoring    -> haptic 0 / visual in {250,500,750,1000}, local source
    synchronous  -> haptic = visual in {250,500,750,1000}, remote source
    asynchronous -> haptic 250 / visual in {500,750,1000}, remote source

    Invalid cells raise ConditionConfigError. The asynchronous condition
    requires the haptic delay to be strictly below the visual delay, so its
    250 ms visual cell is rejected rather than silently degraded.
    """
    kind = ConditionKind(kind)
    if onset_delay_ms < 0:
        raise ConditionConfigError(f"onset delay must be >= 0, got {onset_delay_ms}")
    visual_delay_ms = int(visual_delay_ms)

    if kind is ConditionKind.CONTROL:
        if visual_delay_ms != 0:
            raise ConditionConfigError(
                f"control condition requires zero visual delay, got {visual_delay_ms}")
        return ConditionSpec(kind, 0, 0, onset_delay_ms, LOCAL_SIMULATION)

    if visual_delay_ms not in VISUAL_DELAY_LEVELS_MS:
        raise ConditionConfigError(
            f"visual delay {visual_delay_ms} not in {VISUAL_DELAY_LEVELS_MS}")

    if kind is ConditionKind.ANCHORING:
        return ConditionSpec(kind, visual_delay_ms, 0, onset_delay_ms, LOCAL_SIMULATION)
    if kind is ConditionKind.SYNCHRONOUS:
        return ConditionSpec(kind, visual_delay_ms, visual_delay_ms,
                             onset_delay_ms, REMOTE_SENSOR)
    # asynchronous
    if visual_delay_ms <= ASYNC_HAPTIC_DELAY_MS:
        raise ConditionConfigError(
            "asynchronous condition requires visual delay strictly above the "
            f"{ASYNC_HAPTIC_DELAY_MS} ms haptic delay, got {visual_delay_ms}")
    return ConditionSpec(kind, visual_delay_ms, ASYNC_HAPTIC_DELAY_MS,
                         onset_delay_ms, REMOTE_SENSOR)


def all_valid_conditions(onset_delay_ms: int = 0) -> list[ConditionSpec]:
    """Every valid condition cell: control plus the three delayed kinds at
    each of their allowed visual levels."""
    out = [make_condition(ConditionKind.CONTROL, 0, onset_delay_ms)]
    for v in VISUAL_DELAY_LEVELS_MS:
        out.append(make_condition(ConditionKind.ANCHORING, v, onset_delay_ms))
        out.append(make_condition(ConditionKind.SYNCHRONOUS, v, onset_delay_ms))
        if v > ASYNC_HAPTIC_DELAY_MS:
            out.append(make_condition(ConditionKind.ASYNCHRONOUS, v, onset_delay_ms))
    return out


@dataclass(frozen=True)
class ChannelEvent:
    """A timestamped payload traversing one delay channel."""

    channel: Channel
    emit_time_ms: int
    due_time_ms: int
    sequence: int
    payload: Any


class DelayPipeline:
    """Per-channel FIFO buffers with due-time release.

    One producer and one consumer per channel are safe concurrently: each
    channel buffer is guarded by the pipeline lock, and a global sequence
    counter makes the cross-channel drain order total. Within a channel,
    delays are constant, so FIFO order and due-time order coincide.
    """

    def __init__(self, condition: ConditionSpec):
        self.condition = condition
        self._buffers: dict[Channel, deque[ChannelEvent]] = {
            ch: deque() for ch in Channel}
        self._lock = threading.Lock()
        self._sequence = 0
        self._depth = 0
        self._last_drain_ms: int | None = None
        self.high_water_mark = 0

    def enqueue(self, payload: Any, channel: Channel, now_ms: int) -> int:
        """Store a payload; it becomes due after the channel's delay."""
        if not isinstance(channel, Channel):
            channel = Channel(channel)
        due = int(now_ms) + self.condition.delay_for(channel)
        with self._lock:
            seq = self._sequence
            self._sequence += 1
            self._buffers[channel].append(
                ChannelEvent(channel, int(now_ms), due, seq, payload))
            self._depth += 1
            if self._depth > self.high_water_mark:
                self.high_water_mark = self._depth
        return seq

    def drain_due(self, now_ms: int) -> list[ChannelEvent]:
        """Remove and return every event with due_time <= now, ordered by
        (due time, enqueue sequence). ``now`` must never regress."""
        now_ms = int(now_ms)
        with self._lock:
            if self._last_drain_ms is not None and now_ms < self._last_drain_ms:
                raise ClockMonotonicityError(
                    f"drain clock moved backwards: {now_ms} < {self._last_drain_ms}")
            self._last_drain_ms = now_ms
            due: list[ChannelEvent] = []
            for buf in self._buffers.values():
                while buf and buf[0].due_time_ms <= now_ms:
                    due.append(buf.popleft())
            self._depth -= len(due)
        if len(due) > 1:
            due.sort(key=lambda e: (e.due_time_ms, e.sequence))
        return due

    def pending(self) -> int:
        with self._lock:
            return self._depth


class SynchronizedBuffer:
    """Release haptic samples so their total latency equals a target delay.

    Samples arrive carrying an intrinsic delay already incurred upstream
    (e.g. sensor transmission); this buffer holds each one for the remaining
    time. A target below the intrinsic delay is infeasible.
    """

    def __init__(self, target_delay_ms: int, intrinsic_delay_ms: int = 0):
        if target_delay_ms < intrinsic_delay_ms:
            raise InfeasibleBufferError(
                f"target delay {target_delay_ms} ms below intrinsic "
                f"{intrinsic_delay_ms} ms")
        self.target_delay_ms = int(target_delay_ms)
        self.intrinsic_delay_ms = int(intrinsic_delay_ms)
        self._queue: deque[tuple[int, Any]] = deque()

    def push(self, sample: Any, emit_time_ms: int) -> None:
        self._queue.append((int(emit_time_ms), sample))

    def pop_due(self, now_ms: int) -> list[tuple[int, Any]]:
        """(release_time, sample) pairs whose total latency has elapsed."""
        out = []
        while self._queue and self._queue[0][0] + self.target_delay_ms <= now_ms:
            emit, sample = self._queue.popleft()
            out.append((emit + self.target_delay_ms, sample))
        return out


def synchronize_stream(stream: Iterable[tuple[int, Any]], target_delay_ms: int,
                       intrinsic_delay_ms: int = 0) -> Iterator[tuple[int, Any]]:
    """Re-time (emit_ms, sample) pairs so each is released at
    emit + target_delay. Pass-through when target equals the intrinsic delay.
    """
    buf = SynchronizedBuffer(target_delay_ms, intrinsic_delay_ms)
    for emit_ms, sample in stream:
        buf.push(sample, emit_ms)
        yield from buf.pop_due(emit_ms + target_delay_ms)
