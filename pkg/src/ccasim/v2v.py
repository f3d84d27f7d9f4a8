"""Simulated V2V layer: BSM records, their binary frame, and a lossy delayed bus.

Frame layout (little-endian, 50 bytes)::

    offset  size  field
    0       4     magic b"BSM1"
    4       4     vehicle_id      u32
    8       8     timestamp_ms    u64
    16      8     x               f64 (m)
    24      8     y               f64 (m)
    32      8     speed           f64 (m/s)
    40      8     heading         f64 (rad, [0, 2pi))
    48      1     brake_flag      u8 (0/1)
    49      1     reserved        u8 = 0
"""

from __future__ import annotations

import heapq
import logging
import math
import socket
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Optional

import numpy as np

from .errors import BadLength, BadMagic, NonFiniteField

log = logging.getLogger(__name__)

MAGIC = b"BSM1"
_FRAME = struct.Struct("<4sIQddddBB")
FRAME_SIZE = _FRAME.size
TWO_PI = 2.0 * math.pi
_EPS = 1e-9


def normalize_heading(heading: float) -> float:
    h = math.fmod(heading, TWO_PI)
    if h < 0.0:
        h += TWO_PI
    # fmod of a tiny negative can round up to exactly 2pi
    return 0.0 if h >= TWO_PI else h


@dataclass(frozen=True)
class BsmRecord:
    vehicle_id: int
    timestamp_ms: int
    x: float
    y: float
    speed: float
    heading: float
    brake_flag: bool = False

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be >= 0")
        if not 0 <= self.vehicle_id < 2**32:
            raise ValueError("vehicle_id must fit in u32")
        if not 0 <= self.timestamp_ms < 2**64:
            raise ValueError("timestamp_ms must fit in u64")
        object.__setattr__(self, "heading", normalize_heading(self.heading))
        object.__setattr__(self, "brake_flag", bool(self.brake_flag))

    @property
    def time_s(self) -> float:
        return self.timestamp_ms / 1000.0


def encode_bsm(record: BsmRecord) -> bytes:
    return _FRAME.pack(MAGIC, record.vehicle_id, record.timestamp_ms, record.x, record.y,
                       record.speed, record.heading, 1 if record.brake_flag else 0, 0)


def decode_bsm(data: bytes) -> BsmRecord:
    if len(data) != FRAME_SIZE:
        raise BadLength(f"BSM frame must be {FRAME_SIZE} bytes, got {len(data)}")
    magic, vid, ts, x, y, speed, heading, brake, _ = _FRAME.unpack(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    for name, value in (("x", x), ("y", y), ("speed", speed), ("heading", heading)):
        if not math.isfinite(value):
            raise NonFiniteField(f"{name} is not finite")
    return BsmRecord(vid, ts, x, y, speed, heading, bool(brake))


def write_message_log(stream: BinaryIO, records: Iterable[BsmRecord]) -> int:
    n = 0
    for rec in records:
        stream.write(encode_bsm(rec))
        n += 1
    return n


def read_message_log(path: str | Path) -> Iterator[BsmRecord]:
    """Replay a log of back-to-back frames."""
    data = Path(path).read_bytes()
    if len(data) % FRAME_SIZE:
        raise BadLength(f"log size {len(data)} is not a multiple of {FRAME_SIZE}")
    for off in range(0, len(data), FRAME_SIZE):
        yield decode_bsm(data[off : off + FRAME_SIZE])


@dataclass(frozen=True)
class BusConfig:
    rate_hz: float = 10.0
    latency: float = 0.02
    drop_probability: float = 0.0
    rng_seed: int = 0
    udp_target: Optional[tuple[str, int]] = None

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ValueError("rate_hz must be positive")
        if self.latency < 0:
            raise ValueError("latency must be >= 0")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be >= 0")


def publish_times(duration: float, rate_hz: float) -> list[float]:
    """Broadcast instants in ``[0, duration)`` on the fixed cadence."""
    period = 1.0 / rate_hz
    n = int(math.ceil(duration * rate_hz - _EPS))
    return [k * period for k in range(n)]


@dataclass(order=True)
class _Pending:
    deliver_at: float
    sender: int
    seq: int
    record: BsmRecord = field(compare=False)


class MessageBus:
    """Broadcast medium shared by all vehicles of one simulation.

    Every publish is fanned out to every registered vehicle except the
    sender.  Each copy is independently dropped with ``drop_probability``
    (one draw per copy from a seeded generator, in receiver-id order) or
    queued for delivery ``latency`` seconds later.
    """

    def __init__(self, config: BusConfig, vehicle_ids: Iterable[int], log_stream: Optional[BinaryIO] = None):
        self.config = config
        self.vehicle_ids = sorted(set(vehicle_ids))
        self._rng = np.random.default_rng(config.rng_seed)
        self._queues: dict[int, list[_Pending]] = {vid: [] for vid in self.vehicle_ids}
        self._seq = 0
        self._log_stream = log_stream
        self._sock = None
        if config.udp_target is not None:
            self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self._sock.setblocking(False)
        self.published = 0
        self.dropped = 0
        self.delivered = 0

    @property
    def in_flight(self) -> int:
        return sum(len(q) for q in self._queues.values())

    def publish(self, record: BsmRecord, now: float) -> None:
        sender = record.vehicle_id
        self.published += 1
        frame = None
        if self._log_stream is not None or self._sock is not None:
            frame = encode_bsm(record)
        if self._log_stream is not None:
            self._log_stream.write(frame)
        if self._sock is not None:
            try:
                self._sock.sendto(frame, self.config.udp_target)
            except OSError as exc:  # fire-and-forget
                log.debug("udp export failed: %s", exc)
        deliver_at = now + self.config.latency
        for receiver in self.vehicle_ids:
            if receiver == sender:
                continue
            if self._rng.random() < self.config.drop_probability:
                self.dropped += 1
                continue
            self._seq += 1
            heapq.heappush(self._queues[receiver], _Pending(deliver_at, sender, self._seq, record))

    def poll(self, receiver: int, now: float) -> list[BsmRecord]:
        queue = self._queues[receiver]
        out = []
        while queue and queue[0].deliver_at <= now + _EPS:
            out.append(heapq.heappop(queue).record)
        self.delivered += len(out)
        return out

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None


def bus_publish(bus: MessageBus, record: BsmRecord, now: float) -> None:
    bus.publish(record, now)


def bus_poll(bus: MessageBus, receiver_id: int, now: float) -> list[BsmRecord]:
    return bus.poll(receiver_id, now)
