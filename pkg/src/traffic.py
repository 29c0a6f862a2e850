"""
Traffic - UDP generator/sink and echo server for round-trip measurements

Both ends live in this process so the send and receive timestamps come from
the same clock. The generator stamps each payload with its sequence number
and perf_counter_ns() at send time; the sink (the generator's own receive
callback) turns every echo into a LatencySample.

Lost packets are counted, never fabricated.
"""

import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from src.logger import get_logger
from src.packets import (
    MIN_FRAME_SIZE,
    STAMP_SIZE,
    PacketError,
    UdpFrame,
    read_stamp,
    stamped_payload,
    swap_endpoints,
)

logger = get_logger(__name__)

Send = Callable[[bytes], object]

GENERATOR_MAC = "02:00:00:00:00:01"
ECHO_MAC = "02:00:00:00:00:02"
GENERATOR_IP = "10.0.0.1"
ECHO_IP = "10.0.0.2"
GENERATOR_PORT = 40000
ECHO_UDP_PORT = 7


class TrafficConfigError(ValueError):
    """Generator asked for something it can't send."""


@dataclass(frozen=True)
class LatencySample:
    packet_size: int
    rtt_us: float
    sequence: int
    timestamp: float


class TokenBucket:
    """Paces calls to `rate` per second; burst of one, no catch-up bursts."""

    def __init__(self, rate: float, clock: Callable[[], float] = time.perf_counter,
                 sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise TrafficConfigError("rate must be positive")
        self.interval = 1.0 / rate
        self.clock = clock
        self.sleep = sleep
        self._next: Optional[float] = None

    def wait(self) -> None:
        now = self.clock()
        if self._next is None:
            self._next = now
        delay = self._next - now
        if delay > 0:
            self.sleep(delay)
        self._next = max(self._next, now) + self.interval


class EchoServer:
    """
    Sends every received UDP frame straight back with endpoints swapped.

    `receive` only enqueues; a worker thread does the echoing so the switch
    can deliver without waiting on us.
    """

    def __init__(self, send: Send):
        self.send = send
        self.echoed = 0
        self.malformed = 0
        self._inbox: "queue.Queue[Optional[bytes]]" = queue.Queue()
        self._thread: Optional[threading.Thread] = None

    def receive(self, frame: bytes) -> None:
        self._inbox.put(frame)

    def start(self) -> "EchoServer":
        self._thread = threading.Thread(target=self._loop, name="echo-server", daemon=True)
        self._thread.start()
        return self

    def _loop(self) -> None:
        while True:
            frame = self._inbox.get()
            if frame is None:
                return
            try:
                reply = swap_endpoints(frame)
            except PacketError as e:
                self.malformed += 1
                logger.debug("echo server ignoring frame: %s", e)
                continue
            self.send(reply)
            self.echoed += 1

    def stop(self) -> None:
        if self._thread is not None:
            self._inbox.put(None)
            self._thread.join(5.0)
            self._thread = None


def run_echo_server(send: Send) -> EchoServer:
    return EchoServer(send).start()


@dataclass
class TrafficRun:
    size: int
    sent: int
    samples: List[LatencySample] = field(default_factory=list)
    lost: int = 0
    corrupted: int = 0
    duration_s: float = 0.0


class TrafficGenerator:
    """
    Paced UDP source plus sink.

    Args:
        send: Where frames go (a switch port or a LoopbackLink)
        size: Whole-frame size in bytes (>= 58)
        rate: Packets per second
        count: Packets to send
    """

    def __init__(self, send: Send, size: int, rate: float, count: int,
                 drain_timeout: float = 2.0):
        if size < MIN_FRAME_SIZE:
            raise TrafficConfigError(
                f"frame size {size} can't hold the {STAMP_SIZE}-byte stamp "
                f"(minimum {MIN_FRAME_SIZE})")
        if count < 0:
            raise TrafficConfigError("count must not be negative")
        self.send = send
        self.size = size
        self.rate = rate
        self.count = count
        self.drain_timeout = drain_timeout
        self._bucket = TokenBucket(rate)
        self._pending: Dict[int, int] = {}
        self._lock = threading.Lock()
        self._done = threading.Condition(self._lock)
        self._run = TrafficRun(size=size, sent=0)

    def _frame(self, sequence: int, send_ns: int) -> bytes:
        return UdpFrame(
            src_mac=GENERATOR_MAC, dst_mac=ECHO_MAC,
            src_ip=GENERATOR_IP, dst_ip=ECHO_IP,
            src_port=GENERATOR_PORT, dst_port=ECHO_UDP_PORT,
            payload=stamped_payload(sequence, send_ns, self.size),
            ident=sequence,
        ).encode()

    def receive(self, frame: bytes) -> None:
        """Sink side: match an echo to its send time."""
        now_ns = time.perf_counter_ns()
        try:
            payload = UdpFrame.decode(frame).payload
            sequence, send_ns = read_stamp(payload)
        except PacketError:
            return
        with self._lock:
            if self._pending.pop(sequence, None) is None:
                return
            if payload != stamped_payload(sequence, send_ns, self.size):
                self._run.corrupted += 1
            else:
                self._run.samples.append(LatencySample(
                    packet_size=len(frame),
                    rtt_us=(now_ns - send_ns) / 1000.0,
                    sequence=sequence,
                    timestamp=time.monotonic(),
                ))
            if not self._pending:
                self._done.notify_all()

    def run(self) -> TrafficRun:
        started = time.perf_counter()
        for sequence in range(self.count):
            self._bucket.wait()
            send_ns = time.perf_counter_ns()
            frame = self._frame(sequence, send_ns)
            with self._lock:
                self._pending[sequence] = send_ns
            self.send(frame)
            self._run.sent += 1

        with self._done:
            self._done.wait_for(lambda: not self._pending, self.drain_timeout)
            self._run.lost = len(self._pending)
            self._pending.clear()
        self._run.duration_s = time.perf_counter() - started
        if self._run.lost:
            logger.warning("size %d: %d of %d packets lost", self.size, self._run.lost, self.count)
        return self._run


def run_traffic_generator(send: Send, size: int, rate: float, count: int) -> TrafficRun:
    """Send `count` stamped frames of `size` bytes at `rate` pps through `send`."""
    return TrafficGenerator(send, size, rate, count).run()


class LoopbackLink:
    """
    Generator <-> echo with nothing in between (baseline and tests).

    Usage:
        link = LoopbackLink()
        generator = TrafficGenerator(link.to_echo, size, rate, count)
        link.connect(generator)
    """

    def __init__(self):
        self.echo = EchoServer(self._to_generator)
        self._generator: Optional[TrafficGenerator] = None

    def connect(self, generator: TrafficGenerator) -> None:
        self._generator = generator
        self.echo.start()

    def to_echo(self, frame: bytes) -> None:
        self.echo.receive(frame)

    def _to_generator(self, frame: bytes) -> None:
        if self._generator is not None:
            self._generator.receive(frame)

    def close(self) -> None:
        self.echo.stop()
