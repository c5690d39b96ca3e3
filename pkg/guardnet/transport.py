"""
Simulated Communication layer.

Endpoints exchange envelopes over a virtual-time network with sampled
latency and loss. Every envelope is framed by the wire codec (kind, correlation
id, length-prefixed body), accounted for in the size metrics stream, and
logged at delivery time.
"""
import logging
import random
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, List, Optional, Tuple

import msgpack

from guardnet.config import settings
from guardnet.exceptions import (
    AddressInUse, EncodingError, GuardError, TransportTimeout, Undeliverable, remote_error,
)
from guardnet.schemas.network import Address, LatencyModel, MessageKind
from guardnet.simulator import SimFuture, Simulator

logger = logging.getLogger(__name__)

# kind (1) + correlation id (8) + body length (4) + reserved padding up to the header size
FRAME_HEADER = struct.Struct(f">BQI{settings.ENVELOPE_HEADER_BYTES - 13}x")
QUERY_KINDS = frozenset({MessageKind.QUERY})


def encode_frame(kind: MessageKind, correlation_id: int, body: bytes) -> bytes:
    return FRAME_HEADER.pack(int(kind), correlation_id, len(body)) + body


def decode_frame(frame: bytes) -> Tuple[MessageKind, int, bytes]:
    if len(frame) < FRAME_HEADER.size:
        raise EncodingError(f"frame shorter than header: {len(frame)} bytes")
    kind, correlation_id, length = FRAME_HEADER.unpack_from(frame)
    body = frame[FRAME_HEADER.size:]
    if len(body) != length:
        raise EncodingError(f"frame body has {len(body)} bytes, header says {length}")
    return MessageKind(kind), correlation_id, body


def pack_body(obj: Any) -> bytes:
    return msgpack.packb(obj, use_bin_type=True)


def unpack_body(data: bytes) -> Any:
    return msgpack.unpackb(data, raw=False, strict_map_key=False)


@dataclass
class Envelope:
    """A framed message in flight; kind, correlation id and body are read back from the frame."""
    src: Address
    dst: Address
    frame: bytes
    send_time_us: int
    deliver_time_us: int
    trace: Optional[str] = None
    payload_bytes: int = 0
    kind: MessageKind = field(init=False)
    correlation_id: int = field(init=False)
    body: bytes = field(init=False)

    def __post_init__(self) -> None:
        self.kind, self.correlation_id, self.body = decode_frame(self.frame)

    @property
    def size_bytes(self) -> int:
        return len(self.frame)


@dataclass(frozen=True)
class SizeRecord:
    time_us: int
    trace: Optional[str]
    kind: str
    size_bytes: int
    payload_bytes: int
    overhead_bytes: int


Handler = Callable[[Envelope], Awaitable[Optional[bytes]]]


class Endpoint:
    """One bound address; handles incoming envelopes and correlates responses."""

    def __init__(self, network: "Network", address: Address) -> None:
        self.network = network
        self.address = address
        self._handler: Optional[Handler] = None
        self._pending: Dict[int, SimFuture] = {}

    def on_message(self, handler: Handler) -> None:
        self._handler = handler

    def send(self, dst: Address, kind: MessageKind, body: bytes,
             trace: Optional[str] = None, payload_bytes: int = 0) -> None:
        self.network.transmit(self, dst, kind, body, 0, trace, payload_bytes)

    async def request(self, dst: Address, kind: MessageKind, body: bytes,
                      timeout_us: Optional[int] = None, trace: Optional[str] = None) -> bytes:
        network = self.network
        correlation_id = network.next_correlation_id()
        future = network.sim.create_future()
        self._pending[correlation_id] = future
        network.transmit(self, dst, kind, body, correlation_id, trace, 0)
        timeout = timeout_us if timeout_us is not None else network.default_timeout_us()
        try:
            return await network.sim.wait_for(future, timeout)
        except TransportTimeout:
            if not network.is_bound(dst):
                raise Undeliverable(f"{dst} is not bound")
            raise TransportTimeout(f"{kind.name} to {dst} timed out after {timeout} us")
        finally:
            self._pending.pop(correlation_id, None)

    def _resolve(self, envelope: Envelope) -> None:
        future = self._pending.get(envelope.correlation_id)
        if future is None:
            logger.debug(f"Late response {envelope.correlation_id} at {self.address} dropped")
            return
        if envelope.kind == MessageKind.ERROR:
            error = unpack_body(envelope.body)
            future.set_exception(remote_error(error["error"], error["detail"]))
        else:
            future.set_result(envelope.body)

    async def _serve(self, envelope: Envelope) -> None:
        is_request = envelope.correlation_id != 0
        try:
            reply = await self._handler(envelope)
        except GuardError as exc:
            logger.warning(f"{self.address} rejected {envelope.kind.name} from {envelope.src}: {exc}")
            if is_request:
                body = pack_body({"error": type(exc).__name__, "detail": str(exc)})
                self.network.transmit(self, envelope.src, MessageKind.ERROR, body,
                                      envelope.correlation_id, envelope.trace, 0)
            return
        except Exception as exc:
            logger.error(f"Handler at {self.address} crashed on {envelope.kind.name}: {exc}", exc_info=True)
            if is_request:
                body = pack_body({"error": type(exc).__name__, "detail": str(exc)})
                self.network.transmit(self, envelope.src, MessageKind.ERROR, body,
                                      envelope.correlation_id, envelope.trace, 0)
            raise
        if is_request:
            self.network.transmit(self, envelope.src, MessageKind.RESPONSE, reply or b"",
                                  envelope.correlation_id, envelope.trace, 0)


class Network:
    """Virtual-time network connecting every bound endpoint of one simulation."""

    def __init__(self, sim: Simulator, latency: Optional[LatencyModel] = None,
                 rng: Optional[random.Random] = None) -> None:
        self.sim = sim
        self.latency = latency or LatencyModel()
        self.rng = rng or random.Random(0)
        self._endpoints: Dict[Address, Endpoint] = {}
        self._correlation = 0
        self.event_log: List[Tuple[int, str, str, str, int]] = []
        self.metrics: List[SizeRecord] = []
        self.lost = 0
        self._trace_bytes: Dict[str, Dict[str, int]] = defaultdict(lambda: defaultdict(int))

    # ── endpoints ────────────────────────────────────────
    def bind(self, address: Address) -> Endpoint:
        if address in self._endpoints:
            raise AddressInUse(f"{address} is already bound")
        endpoint = Endpoint(self, address)
        self._endpoints[address] = endpoint
        return endpoint

    def unbind(self, address: Address) -> None:
        self._endpoints.pop(address, None)

    def is_bound(self, address: Address) -> bool:
        return address in self._endpoints

    def next_correlation_id(self) -> int:
        self._correlation += 1
        return self._correlation

    def default_timeout_us(self) -> int:
        return max(1, self.latency.default_timeout_us())

    # ── delivery ─────────────────────────────────────────
    def transmit(self, src: Endpoint, dst: Address, kind: MessageKind, body: bytes,
                 correlation_id: int, trace: Optional[str], payload_bytes: int) -> Envelope:
        base_us, jitter_us, loss_prob = self.latency.link(src.address, dst)
        delay = base_us + (self.rng.randint(0, jitter_us) if jitter_us else 0)
        now = self.sim.now_us
        envelope = Envelope(
            src=src.address,
            dst=dst,
            frame=encode_frame(kind, correlation_id, body),
            send_time_us=now,
            deliver_time_us=now + max(1, delay),
            trace=trace,
            payload_bytes=payload_bytes if kind in QUERY_KINDS else 0,
        )
        self.account(envelope)
        if loss_prob and self.rng.random() < loss_prob:
            self.lost += 1
            logger.debug(f"Lost {kind.name} {src.address} -> {dst}")
            return envelope
        self.sim.call_at(envelope.deliver_time_us, self._deliver, envelope)
        return envelope

    def _deliver(self, envelope: Envelope) -> None:
        self.event_log.append((
            envelope.deliver_time_us, str(envelope.src), str(envelope.dst),
            envelope.kind.name, envelope.size_bytes,
        ))
        endpoint = self._endpoints.get(envelope.dst)
        if endpoint is None:
            logger.debug(f"No endpoint at {envelope.dst}; {envelope.kind.name} discarded")
            return
        if envelope.kind in (MessageKind.RESPONSE, MessageKind.ERROR):
            endpoint._resolve(envelope)
            return
        if endpoint._handler is None:
            logger.warning(f"{envelope.dst} has no handler; {envelope.kind.name} discarded")
            return
        self.sim.spawn(endpoint._serve(envelope), name=f"{envelope.dst}:{envelope.kind.name}")

    # ── accounting ───────────────────────────────────────
    def account(self, envelope: Envelope) -> SizeRecord:
        record = SizeRecord(
            time_us=envelope.send_time_us,
            trace=envelope.trace,
            kind=envelope.kind.name,
            size_bytes=envelope.size_bytes,
            payload_bytes=envelope.payload_bytes,
            overhead_bytes=envelope.size_bytes - envelope.payload_bytes,
        )
        self.metrics.append(record)
        if envelope.trace is not None:
            self._trace_bytes[envelope.trace][record.kind] += record.size_bytes
        return record

    def pop_trace_bytes(self, trace: str, kinds: Optional[Tuple[str, ...]] = None) -> int:
        """Bytes of a finished search; its per-trace totals are released."""
        total = self.trace_bytes(trace, kinds)
        self._trace_bytes.pop(trace, None)
        return total

    def drain_metrics(self) -> List[SizeRecord]:
        """Hand over the size records gathered so far and start a fresh stream."""
        drained, self.metrics = self.metrics, []
        self._trace_bytes.clear()
        return drained

    def total_bytes(self) -> int:
        return sum(record.size_bytes for record in self.metrics)

    def trace_bytes(self, trace: str, kinds: Optional[Tuple[str, ...]] = None) -> int:
        per_kind = self._trace_bytes.get(trace, {})
        return sum(size for kind, size in per_kind.items() if kinds is None or kind in kinds)

    def event_log_lines(self) -> List[str]:
        return [f"{t},{src},{dst},{kind},{size}" for t, src, dst, kind, size in self.event_log]

    def write_event_log(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.event_log_lines()) + "\n", encoding="utf-8")
        return path
