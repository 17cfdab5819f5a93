"""Deterministic discrete-event CAN-FD bus.

Models the pieces of the bus that matter for protocol accounting:

* fragmentation of logical messages into frames with at most 64 payload
  bytes (4-byte fragment header + up to 60 data bytes),
* ID-based arbitration: when several frames wait for the bus, the lowest
  CAN id transmits first, ties broken by queueing order,
* transmission time from a configurable bitrate and flat per-frame overhead,
* per-node compute latency charged per cryptographic operation, so phase
  durations reflect the configured hardware class,
* an adversary that can tamper frames in flight, replay captured messages,
  and forge new ones.

Everything is driven by one event heap ordered by (time, insertion serial),
so a (config, seed) pair fully determines the run.
"""

from __future__ import annotations

import dataclasses
import heapq
import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .errors import ConfigError
from .protocol import SECU_ID, Disposition, Ecu, MsgKind, Secu, WireMessage

FRAG_HEADER_LEN = 4
FRAME_DATA_MAX = 60
FRAME_PAYLOAD_MAX = FRAG_HEADER_LEN + FRAME_DATA_MAX

SECU_CAN_ID = 0x010
ECU_CAN_BASE = 0x100
ADVERSARY_CAN_ID = 0x7FF
ADVERSARY_ID = -2           # origin marker for injected frames

_DATA_PAYLOAD = b"\x00" * 8


@dataclass
class BusConfig:
    bitrate_bps: int = 1_000_000
    frame_overhead_bits: int = 128

    def __post_init__(self):
        if not 125_000 <= self.bitrate_bps <= 8_000_000:
            raise ConfigError(
                f"bitrate {self.bitrate_bps} outside the CAN/CAN-FD envelope")
        if self.frame_overhead_bits < 0:
            raise ConfigError("frame overhead must be >= 0 bits")


@dataclass
class CanFdFrame:
    """One frame on the bus.

    ``kind``/``sender``/``receiver`` mirror the CAN practice of encoding the
    message stream in the identifier: they are carried out of band and do not
    count toward the payload, which holds only the fragment header and a body
    chunk. ``origin`` records which node physically transmitted the frame
    (the adversary when it replays or forges), while ``sender`` is the claim
    the protocol layer sees.
    """

    can_id: int
    payload: bytes
    kind: Optional[MsgKind]     # None for plain application data frames
    sender: int
    receiver: Optional[int]
    msg_seq: int
    frag_index: int
    frag_total: int
    origin: int
    timestamp_us: int = -1      # start of transmission, set by the bus


def fragment(msg: WireMessage, can_id: int, msg_seq: int,
             origin: Optional[int] = None) -> list[CanFdFrame]:
    """Split a message body into frames of at most 60 data bytes each."""
    total = max(1, -(-len(msg.body) // FRAME_DATA_MAX))
    if total > 0xFF:
        raise ValueError(f"body of {len(msg.body)} bytes needs too many fragments")
    frames = []
    for idx in range(total):
        chunk = msg.body[idx * FRAME_DATA_MAX:(idx + 1) * FRAME_DATA_MAX]
        header = struct.pack(">HBB", msg_seq & 0xFFFF, idx, total)
        frames.append(CanFdFrame(
            can_id=can_id, payload=header + chunk, kind=msg.kind,
            sender=msg.sender, receiver=msg.receiver,
            msg_seq=msg_seq & 0xFFFF, frag_index=idx, frag_total=total,
            origin=msg.sender if origin is None else origin))
    return frames


def reassemble(frames: list[CanFdFrame]) -> WireMessage:
    """Rebuild the logical message from a complete fragment set."""
    if not frames:
        raise ValueError("no frames to reassemble")
    first = frames[0]
    if len(frames) != first.frag_total:
        raise ValueError("fragment set incomplete")
    ordered = sorted(frames, key=lambda f: f.frag_index)
    if [f.frag_index for f in ordered] != list(range(first.frag_total)):
        raise ValueError("fragment indices do not cover the message")
    if any(f.msg_seq != first.msg_seq for f in ordered):
        raise ValueError("fragments from different messages")
    body = b"".join(f.payload[FRAG_HEADER_LEN:] for f in ordered)
    return WireMessage(first.kind, first.sender, first.receiver, body)


def frame_time_us(frame: CanFdFrame, cfg: BusConfig) -> int:
    """Wire time of one frame in microseconds, rounded up."""
    bits = cfg.frame_overhead_bits + 8 * len(frame.payload)
    return -(-bits * 1_000_000 // cfg.bitrate_bps)


# Latency presets, microseconds per operation for each node class. The
# asymmetric figure covers one full encapsulation or decapsulation; the
# sign/verify entries only feed the analytic computation tally.
_STM32 = {"eccdh": 3_000, "hkdf": 300, "aes": 40, "sha": 40, "hmac": 40,
          "sign": 2_870, "verify": 4_460}
_W806 = {"eccdh": 2_000_000, "hkdf": 700, "aes": 100, "sha": 100, "hmac": 100}
_UNO = {"eccdh": 4_000_000, "hkdf": 88_000, "aes": 1_000, "sha": 1_000,
        "hmac": 1_000}

LATENCY_PRESETS: dict[str, dict[str, dict[str, int]]] = {
    "stm32": {"secu": dict(_STM32), "ecu": dict(_STM32)},
    "w806": {"secu": dict(_W806), "ecu": dict(_W806)},
    "uno": {"secu": dict(_UNO), "ecu": dict(_UNO)},
}

# Operations charged per message, by kind and direction. The sender of the
# group secret derives keys, encrypts and MACs; its receiver derives keys,
# verifies and decrypts; and so on. Charged once per message handled.
SEND_CHARGES = {
    MsgKind.PAIRWISE_CIPHER: ("eccdh",),
    MsgKind.GROUP_SECRET: ("hkdf", "aes", "hmac"),
    MsgKind.SEED_BROADCAST: ("hkdf", "hkdf", "hmac"),
}
RECV_CHARGES = {
    MsgKind.PAIRWISE_CIPHER: ("eccdh",),
    MsgKind.GROUP_SECRET: ("hkdf", "hmac", "aes"),
    MsgKind.SEED_BROADCAST: ("hkdf", "hmac", "hkdf"),
}
REFRESH_CHARGE = ("hkdf",)


@dataclass
class TamperAction:
    """Flip one bit of a message body while its frame is in flight.

    ``occurrence`` counts messages of the kind in send order; ``bit`` indexes
    into the body, LSB-first within each byte.
    """
    kind: MsgKind
    bit: int
    occurrence: int = 0


@dataclass
class ReplayAction:
    """Re-inject a verbatim copy of a captured message's frames."""
    kind: MsgKind
    occurrence: int = 0
    delay_us: int = 0


@dataclass
class ForgeAction:
    """Inject a fabricated message at a chosen time under the adversary id."""
    kind: MsgKind
    body: bytes
    receiver: Optional[int]
    sender: int             # claimed sender, typically the central node
    at_us: int = 0


AdversaryAction = Union[TamperAction, ReplayAction, ForgeAction]


@dataclass
class SimReport:
    """Metrics of one simulation run. All fields are JSON-plain types so the
    report round-trips losslessly through its JSON form."""

    group: str = ""
    n_ecus: int = 0
    rng_seed: int = 0
    latency_profile: str = ""
    logical_messages: int = 0
    frames: int = 0
    data_frames: int = 0
    refresh_events: int = 0
    phase_times: dict = field(default_factory=dict)
    rejections: list = field(default_factory=list)
    converged: dict = field(default_factory=dict)
    partially_keyed: bool = False
    expected_messages: int = 0
    checks: dict = field(default_factory=dict)
    comparison: list = field(default_factory=list)
    computation_tally_us: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimReport":
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SimReport":
        return cls.from_dict(json.loads(text))


@dataclass
class _Node:
    node_id: int
    can_id: int
    node_class: str             # "secu" or "ecu"
    machine: Union[Secu, Ecu]
    busy_until: int = 0
    buffers: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return "secu" if self.node_class == "secu" else f"ecu{self.node_id}"


class Network:
    """Event-driven broadcast bus with registered protocol nodes."""

    def __init__(self, cfg: BusConfig, latency: dict[str, dict[str, int]],
                 keep_trace: bool = False):
        self.cfg = cfg
        self.latency = latency
        self.now = 0
        self.logical_messages = 0
        self.frames = 0
        self.data_frames = 0
        self.refresh_completions = 0
        self.rejections: list[dict] = []
        self.trace: Optional[list[tuple]] = [] if keep_trace else None
        self._nodes: dict[int, _Node] = {}
        self._heap: list = []
        self._serial = 0
        self._pending: list = []            # (can_id, serial, frame)
        self._transmitting: Optional[CanFdFrame] = None
        self._msg_seq = 0
        self._kind_sent: dict[MsgKind, int] = {k: 0 for k in MsgKind}
        self._tampers: list[TamperAction] = []
        self._replays: list[ReplayAction] = []
        self._captures: dict[tuple, tuple] = {}   # (origin, seq) -> (frames, delay)

    # -- topology ---------------------------------------------------------

    def add_secu(self, machine: Secu, can_id: int = SECU_CAN_ID) -> None:
        self._add_node(_Node(SECU_ID, can_id, "secu", machine))

    def add_ecu(self, machine: Ecu, can_id: Optional[int] = None) -> None:
        cid = ECU_CAN_BASE + machine.ecu_id if can_id is None else can_id
        self._add_node(_Node(machine.ecu_id, cid, "ecu", machine))

    def _add_node(self, node: _Node) -> None:
        if node.node_id in self._nodes:
            raise ValueError(f"duplicate node id {node.node_id}")
        self._nodes[node.node_id] = node

    def node(self, node_id: int) -> _Node:
        return self._nodes[node_id]

    # -- scheduling -------------------------------------------------------

    def charge_us(self, node_class: str, ops: tuple[str, ...]) -> int:
        table = self.latency[node_class]
        return sum(table[op] for op in ops)

    def schedule_protocol_send(self, sender_id: int, msgs: list[WireMessage],
                               start_us: int) -> int:
        """Queue messages from one node, charging its compute serially.

        Each message's send-side operations run before it is offered to the
        bus, one message after another, mirroring a single-core node working
        through its loop. Returns the time the node becomes free.
        """
        node = self._nodes[sender_id]
        t = max(start_us, node.busy_until)
        for msg in msgs:
            t += self.charge_us(node.node_class, SEND_CHARGES[msg.kind])
            self._send_message(node.node_id, node.can_id, msg, t)
        node.busy_until = t
        self._at(t, lambda: None)       # keep the clock honest if nothing else runs
        return t

    def schedule_data_frame(self, sender_id: int, at_us: int) -> None:
        """Queue one plain application frame (counter tick driver)."""
        node = self._nodes[sender_id]
        frame = CanFdFrame(
            can_id=node.can_id, payload=_DATA_PAYLOAD, kind=None,
            sender=sender_id, receiver=None, msg_seq=0, frag_index=0,
            frag_total=1, origin=sender_id)
        self._enqueue_frame(frame, at_us)

    def inject_adversary(self, action: AdversaryAction) -> None:
        if isinstance(action, TamperAction):
            self._tampers.append(action)
        elif isinstance(action, ReplayAction):
            self._replays.append(action)
        else:
            msg = WireMessage(action.kind, action.sender, action.receiver,
                              action.body)
            self._send_message(ADVERSARY_ID, ADVERSARY_CAN_ID, msg,
                               action.at_us, count_logical=False)

    def _send_message(self, origin: int, can_id: int, msg: WireMessage,
                      at_us: int, count_logical: bool = True) -> None:
        seq = self._msg_seq = (self._msg_seq + 1) & 0xFFFF
        frames = fragment(msg, can_id, seq, origin)
        occurrence = self._kind_sent[msg.kind]
        self._kind_sent[msg.kind] = occurrence + 1
        for tamper in self._tampers:
            if tamper.kind is msg.kind and tamper.occurrence == occurrence:
                self._apply_tamper(frames, tamper, len(msg.body))
        for replay in self._replays:
            if replay.kind is msg.kind and replay.occurrence == occurrence:
                copies = [dataclasses.replace(f, origin=ADVERSARY_ID)
                          for f in frames]
                self._captures[(origin, seq)] = (copies, replay.delay_us)
        if count_logical:
            self.logical_messages += 1
        for f in frames:
            self._enqueue_frame(f, at_us)

    @staticmethod
    def _apply_tamper(frames: list[CanFdFrame], tamper: TamperAction,
                      body_len: int) -> None:
        if not 0 <= tamper.bit < body_len * 8:
            raise ConfigError(
                f"tamper bit {tamper.bit} outside {body_len}-byte body")
        byte_idx, bit_in_byte = divmod(tamper.bit, 8)
        frag, offset = divmod(byte_idx, FRAME_DATA_MAX)
        payload = bytearray(frames[frag].payload)
        payload[FRAG_HEADER_LEN + offset] ^= 1 << bit_in_byte
        frames[frag].payload = bytes(payload)

    # -- event loop -------------------------------------------------------

    def _at(self, t: int, fn: Callable[[], None]) -> None:
        self._serial += 1
        heapq.heappush(self._heap, (t, self._serial, fn))

    def _enqueue_frame(self, frame: CanFdFrame, t: int) -> None:
        self._at(t, lambda: self._on_frame_ready(frame))

    def _on_frame_ready(self, frame: CanFdFrame) -> None:
        self._serial += 1
        heapq.heappush(self._pending, (frame.can_id, self._serial, frame))

    def _try_start(self) -> None:
        # Lowest CAN id wins arbitration; ties resolve in queueing order.
        if self._transmitting is not None or not self._pending:
            return
        _, _, frame = heapq.heappop(self._pending)
        frame.timestamp_us = self.now
        self._transmitting = frame
        if frame.kind is None:
            self.data_frames += 1
        else:
            self.frames += 1
        if self.trace is not None:
            frag = ("data" if frame.kind is None else
                    f"{frame.msg_seq}:{frame.frag_index}/{frame.frag_total}")
            self.trace.append(
                (frame.timestamp_us, frame.can_id, frag, frame.payload.hex()))
        self._at(self.now + frame_time_us(frame, self.cfg),
                 lambda: self._on_tx_done(frame))

    def _on_tx_done(self, frame: CanFdFrame) -> None:
        self._transmitting = None
        self._deliver(frame)
        if frame.frag_index == frame.frag_total - 1:
            capture = self._captures.pop((frame.origin, frame.msg_seq), None)
            if capture is not None:
                copies, delay = capture
                for f in copies:
                    self._enqueue_frame(f, self.now + delay)

    def _deliver(self, frame: CanFdFrame) -> None:
        for node_id in sorted(self._nodes):
            node = self._nodes[node_id]
            if frame.kind is None:
                self._tick_node(node)
                continue
            if frame.origin == node.node_id:
                continue
            key = (frame.sender, frame.msg_seq)
            parts = node.buffers.setdefault(key, {})
            parts[frame.frag_index] = frame
            if len(parts) == frame.frag_total:
                del node.buffers[key]
                try:
                    msg = reassemble(list(parts.values()))
                except ValueError:
                    continue        # mismatched fragment set; drop silently
                self._dispatch(node, msg)

    def _tick_node(self, node: _Node) -> None:
        machine = node.machine
        if not isinstance(machine, Ecu) or machine.session is None:
            return
        if machine.tick_counter():
            self.refresh_completions += 1
            finish = max(self.now, node.busy_until) + \
                self.charge_us(node.node_class, REFRESH_CHARGE)
            node.busy_until = finish
            self._at(finish, lambda: None)

    def _dispatch(self, node: _Node, msg: WireMessage) -> None:
        # State commits in delivery order; busy_until only accounts for the
        # compute time until the node's result is ready. Messages a node
        # ignores cost nothing, mirroring hardware id filtering.
        outcome = node.machine.handle(msg)
        if outcome.disposition is Disposition.IGNORED:
            return
        finish = max(self.now, node.busy_until) + \
            self.charge_us(node.node_class, RECV_CHARGES[msg.kind])
        node.busy_until = finish
        self._at(finish, lambda: None)
        if outcome.rejected:
            self.rejections.append({
                "time_us": finish, "node": node.label,
                "kind": msg.kind.value, "reason": outcome.reason})

    def run_to_quiescence(self) -> int:
        """Process events until the queue drains; returns the final time.

        Arbitration runs only once every event at the current instant has
        been seen, so frames queued at the same microsecond genuinely
        contend instead of the first enqueued one grabbing the bus.
        """
        while self._heap:
            t, _, fn = heapq.heappop(self._heap)
            self.now = t
            fn()
            if not self._heap or self._heap[0][0] != self.now:
                self._try_start()
        return self.now

    def write_trace_csv(self, path: str) -> None:
        if self.trace is None:
            raise ValueError("network was built without trace recording")
        with open(path, "w") as fh:
            fh.write("timestamp_us,can_id,frag,payload_hex\n")
            for ts, can_id, frag, payload in self.trace:
                fh.write(f"{ts},{can_id:#05x},{frag},{payload}\n")
