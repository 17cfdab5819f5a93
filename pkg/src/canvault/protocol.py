"""Message-driven state machines for the central node and the regular units.

The key distribution runs in numbered phases:

1. provisioning (offline): every unit gets a long-term keypair, the central
   node gets the public halves.
2. pairwise: the central node encapsulates a fresh 32-byte secret to each
   unit (one unicast message per unit).
3. group secret: the central node draws a 16-byte group secret and sends it
   to each unit encrypted-then-MACed under keys derived from the pairwise
   secret (one unicast message per unit).
4. session: one elected unit broadcasts an authenticated random seed; every
   holder of the group secret derives the same round-0 session key.
5. refresh: message counters drive silent, traffic-free re-derivation of the
   session key for each new round.

The classes here are pure state machines: they consume and produce
:class:`WireMessage` objects and know nothing about frames or timing. A
rejected message never raises out of a handler; handlers return an
:class:`Outcome` with a reason code so a node keeps running after a bad
frame.
"""

from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass
from random import Random
from typing import Optional

from . import kem, primitives
from .errors import ConsistencyError, DecodeError, MacError, StateError
from .group import Group, GroupElement

SECU_ID = -1            # node id of the central security unit
BROADCAST = None        # receiver value for broadcast messages

GROUP_SECRET_LEN = 16
SEED_LEN = 16
MAC_LEN = 32

# Domain-separation labels for the two key-splitting derivations.
_SPLIT_GROUP_INFO = b"phase3"
_SPLIT_SESSION_INFO = b"phase4"

DEFAULT_CTR_MAX = 65_535
DEFAULT_REPLAY_CACHE = 64


class MsgKind(enum.Enum):
    PAIRWISE_CIPHER = "pairwise_cipher"
    GROUP_SECRET = "group_secret"
    SEED_BROADCAST = "seed_broadcast"


@dataclass(frozen=True)
class WireMessage:
    """One logical protocol message, before fragmentation into bus frames."""

    kind: MsgKind
    sender: int
    receiver: Optional[int]     # None for broadcast
    body: bytes


def body_length(group: Group, kind: MsgKind) -> int:
    """Exact body length of a message kind under a group instantiation."""
    if kind is MsgKind.PAIRWISE_CIPHER:
        return 2 * group.element_len
    if kind is MsgKind.GROUP_SECRET:
        # nonce[16] + encrypted secret[16] + mac[32]
        return primitives.NONCE_LEN + GROUP_SECRET_LEN + MAC_LEN
    return SEED_LEN + MAC_LEN


class Disposition(enum.Enum):
    ACCEPTED = "accepted"
    IGNORED = "ignored"      # not addressed to this node / not relevant
    REJECTED = "rejected"    # failed a check; state unchanged


@dataclass(frozen=True)
class Outcome:
    disposition: Disposition
    reason: Optional[str] = None    # reason code when rejected

    @property
    def accepted(self) -> bool:
        return self.disposition is Disposition.ACCEPTED

    @property
    def rejected(self) -> bool:
        return self.disposition is Disposition.REJECTED


_ACCEPTED = Outcome(Disposition.ACCEPTED)
_IGNORED = Outcome(Disposition.IGNORED)


def _rejected(reason: str) -> Outcome:
    return Outcome(Disposition.REJECTED, reason)


class Phase(enum.IntEnum):
    INIT = 0
    PAIRWISE = 1
    GROUP_SECRET = 2
    DONE = 3


def _require_mac(msg: bytes, key: bytes, tag: bytes) -> None:
    if not primitives.hmac_verify(msg, key, tag):
        raise MacError("authentication tag mismatch")


@dataclass
class SessionState:
    """Per-unit session keying state for phases 4 and 5."""

    round_index: int
    counter: int
    session_key: bytes      # 32-byte working key of the current round
    chain_key: bytes        # 16-byte salt feeding each round derivation
    mac_key: bytes          # 32-byte key authenticating the seed broadcast


class _ReplayCache:
    """Bounded FIFO set of recently accepted MAC tags."""

    def __init__(self, size: int):
        self.size = size
        self._tags: OrderedDict[bytes, None] = OrderedDict()

    def __contains__(self, tag: bytes) -> bool:
        return tag in self._tags

    def add(self, tag: bytes) -> None:
        if tag in self._tags:
            return
        self._tags[tag] = None
        while len(self._tags) > self.size:
            self._tags.popitem(last=False)

    def __len__(self) -> int:
        return len(self._tags)


class Secu:
    """Central security unit: drives phases 2 and 3, observes phase 4.

    The phase attribute only ever advances: INIT -> PAIRWISE -> GROUP_SECRET
    -> DONE.
    """

    def __init__(self, group: Group,
                 registry: list[tuple[int, tuple[GroupElement, GroupElement]]]):
        self.group = group
        self.registry = list(registry)
        self.pairwise: dict[int, bytes] = {}
        self.group_secret: Optional[bytes] = None
        self.phase = Phase.INIT

    def run_phase2(self, rng: Random) -> list[WireMessage]:
        """Encapsulate a pairwise secret to every registered unit."""
        if self.phase is not Phase.INIT:
            raise StateError(f"phase 2 requires INIT, node is in {self.phase.name}")
        if not self.registry:
            raise StateError("cannot run phase 2 with an empty registry")
        msgs = []
        for ecu_id, public in self.registry:
            key, ct = kem.encapsulate(self.group, public, rng)
            self.pairwise[ecu_id] = key
            msgs.append(WireMessage(MsgKind.PAIRWISE_CIPHER, SECU_ID, ecu_id,
                                    kem.encode_ciphertext(self.group, ct)))
        self.phase = Phase.PAIRWISE
        return msgs

    def run_phase3(self, rng: Random) -> list[WireMessage]:
        """Distribute one fresh group secret, wrapped per unit."""
        if self.phase is not Phase.PAIRWISE:
            raise StateError(f"phase 3 requires PAIRWISE, node is in {self.phase.name}")
        secret = rng.randbytes(GROUP_SECRET_LEN)
        msgs = []
        for ecu_id, _ in self.registry:
            enc_key, mac_key = primitives.hkdf_split(self.pairwise[ecu_id],
                                                     _SPLIT_GROUP_INFO)
            nonce = rng.randbytes(primitives.NONCE_LEN)
            wrapped = primitives.sym_encrypt(secret, enc_key, nonce)
            tag = primitives.hmac_tag(wrapped, mac_key)
            msgs.append(WireMessage(MsgKind.GROUP_SECRET, SECU_ID, ecu_id,
                                    wrapped + tag))
        self.group_secret = secret
        self.phase = Phase.GROUP_SECRET
        return msgs

    def handle(self, msg: WireMessage) -> Outcome:
        """Observe bus traffic; only the seed broadcast matters here."""
        if msg.kind is not MsgKind.SEED_BROADCAST:
            return _IGNORED
        if self.phase is not Phase.GROUP_SECRET:
            return _IGNORED
        if len(msg.body) != SEED_LEN + MAC_LEN:
            return _rejected("decode")
        seed, tag = msg.body[:SEED_LEN], msg.body[SEED_LEN:]
        _, mac_key = primitives.hkdf_split(self.group_secret, _SPLIT_SESSION_INFO)
        try:
            _require_mac(seed, mac_key, tag)
        except MacError:
            return _rejected("mac")
        self.phase = Phase.DONE
        return _ACCEPTED


class Ecu:
    """Regular unit: decapsulates, unwraps the group secret, keys sessions."""

    def __init__(self, group: Group, keypair: kem.EcuKeyPair,
                 ctr_max: int = DEFAULT_CTR_MAX,
                 replay_cache_size: int = DEFAULT_REPLAY_CACHE):
        self.group = group
        self.keypair = keypair
        self.ctr_max = ctr_max
        self.pairwise: Optional[bytes] = None
        self.group_secret: Optional[bytes] = None
        self.session: Optional[SessionState] = None
        self.replay_cache = _ReplayCache(replay_cache_size)

    @property
    def ecu_id(self) -> int:
        return self.keypair.ecu_id

    def handle(self, msg: WireMessage) -> Outcome:
        if msg.kind is MsgKind.PAIRWISE_CIPHER:
            return self.handle_pairwise(msg)
        if msg.kind is MsgKind.GROUP_SECRET:
            return self.handle_group_secret(msg)
        return self.handle_seed(msg)

    def handle_pairwise(self, msg: WireMessage) -> Outcome:
        if msg.receiver != self.ecu_id:
            return _IGNORED
        try:
            ct = kem.decode_ciphertext(self.group, msg.body)
        except DecodeError:
            return _rejected("decode")
        try:
            key = kem.decapsulate(self.group, self.keypair, ct)
        except ConsistencyError:
            return _rejected("consistency")
        self.pairwise = key
        return _ACCEPTED

    def handle_group_secret(self, msg: WireMessage) -> Outcome:
        if msg.receiver != self.ecu_id:
            return _IGNORED
        if self.pairwise is None:
            return _rejected("state")
        if len(msg.body) != body_length(self.group, MsgKind.GROUP_SECRET):
            return _rejected("decode")
        wrapped, tag = msg.body[:-MAC_LEN], msg.body[-MAC_LEN:]
        if tag in self.replay_cache:
            return _rejected("replay")
        enc_key, mac_key = primitives.hkdf_split(self.pairwise, _SPLIT_GROUP_INFO)
        try:
            _require_mac(wrapped, mac_key, tag)
        except MacError:
            return _rejected("mac")
        self.group_secret = primitives.sym_decrypt(wrapped, enc_key)
        self.replay_cache.add(tag)
        return _ACCEPTED

    def run_phase4(self, rng: Random) -> WireMessage:
        """Broadcast a fresh authenticated seed and key round 0 locally."""
        if self.group_secret is None:
            raise StateError("phase 4 requires the group secret")
        seed = rng.randbytes(SEED_LEN)
        chain_key, mac_key = primitives.hkdf_split(self.group_secret,
                                                   _SPLIT_SESSION_INFO)
        tag = primitives.hmac_tag(seed, mac_key)
        self.session = SessionState(
            round_index=0, counter=0,
            session_key=primitives.hkdf_session(seed, 0, chain_key),
            chain_key=chain_key, mac_key=mac_key)
        # Own tag goes in the cache so a replayed copy of this broadcast is
        # recognized even by its original sender.
        self.replay_cache.add(tag)
        return WireMessage(MsgKind.SEED_BROADCAST, self.ecu_id, BROADCAST,
                           seed + tag)

    def handle_seed(self, msg: WireMessage) -> Outcome:
        if self.group_secret is None:
            return _rejected("state")
        if len(msg.body) != SEED_LEN + MAC_LEN:
            return _rejected("decode")
        seed, tag = msg.body[:SEED_LEN], msg.body[SEED_LEN:]
        if tag in self.replay_cache:
            return _rejected("replay")
        chain_key, mac_key = primitives.hkdf_split(self.group_secret,
                                                   _SPLIT_SESSION_INFO)
        try:
            _require_mac(seed, mac_key, tag)
        except MacError:
            return _rejected("mac")
        self.session = SessionState(
            round_index=0, counter=0,
            session_key=primitives.hkdf_session(seed, 0, chain_key),
            chain_key=chain_key, mac_key=mac_key)
        self.replay_cache.add(tag)
        return _ACCEPTED

    def tick_counter(self) -> bool:
        """Count one data frame; rotate the session key when the round is full.

        The counter runs 0..ctr_max; the tick that would push it past the
        limit performs the silent rotation instead of counting. Returns True
        exactly when a rotation happened. No message is ever produced.
        """
        if self.session is None:
            raise StateError("cannot tick counter before the session exists")
        s = self.session
        if s.counter == self.ctr_max:
            s.counter = 0
            s.round_index += 1
            s.session_key = primitives.hkdf_session(
                s.session_key, s.round_index, s.chain_key)
            return True
        s.counter += 1
        return False
