"""Chosen-ciphertext-secure key encapsulation over a prime-order group.

The central node encapsulates a fresh shared secret to each unit's public
key; the unit decapsulates and, before deriving anything, recomputes the
binding element to confirm the ciphertext is consistent. Tampered or forged
ciphertexts fail that check and are rejected.

Construction sketch (all within an injected :class:`~canvault.group.Group`):

* keypair: secret exponents ``(x, y)``, public ``(u, v) = (g^x, g^y)``
* encapsulate: pick ``r``; ciphertext is ``(c, binding) = (g^r, (u^t v)^r)``
  where ``t`` hashes ``c`` to an exponent; the shared key is ``H(u^r)``
* decapsulate: accept iff ``binding == c^(x*t + y)``, then key = ``H(c^x)``

Both sides reach the same key because ``u^r = (g^x)^r = (g^r)^x = c^x``.
"""

from __future__ import annotations

from dataclasses import dataclass
from random import Random
from typing import Callable, Optional

from . import primitives
from .errors import ConsistencyError, DecodeError
from .group import Group, GroupElement

# Tests may inject a stand-in exponent hash to force specific traces;
# protocol wiring always passes None and gets the real one.
ScalarHash = Callable[[GroupElement], int]

PAIRWISE_KEY_LEN = 32


@dataclass(frozen=True)
class KemCiphertext:
    """Encapsulation of one pairwise secret.

    ``ephemeral`` is the fresh public element g^r; ``binding`` ties the
    ciphertext to the receiver's keypair and is what the consistency check
    recomputes.
    """

    ephemeral: GroupElement
    binding: GroupElement


@dataclass(frozen=True)
class EcuKeyPair:
    """Long-term keypair provisioned onto one unit.

    ``key_exp`` is the exponent that recovers the shared key; ``bind_exp``
    only feeds the consistency check. ``pub_key`` and ``pub_bind`` are their
    public counterparts.
    """

    ecu_id: int
    key_exp: int
    bind_exp: int
    pub_key: GroupElement
    pub_bind: GroupElement

    @property
    def public(self) -> tuple[GroupElement, GroupElement]:
        return (self.pub_key, self.pub_bind)


def keygen(group: Group, ecu_id: int, rng: Random) -> EcuKeyPair:
    """Draw a fresh keypair for one unit."""
    x = group.random_scalar(rng)
    y = group.random_scalar(rng)
    return EcuKeyPair(
        ecu_id=ecu_id,
        key_exp=x,
        bind_exp=y,
        pub_key=group.exp(group.generator, x),
        pub_bind=group.exp(group.generator, y),
    )


def encapsulate(
    group: Group,
    public: tuple[GroupElement, GroupElement],
    rng: Random,
    scalar_hash: Optional[ScalarHash] = None,
) -> tuple[bytes, KemCiphertext]:
    """Produce (shared key, ciphertext) under the receiver's public pair."""
    if scalar_hash is None:
        scalar_hash = lambda e: primitives.hash_to_scalar(group, e)
    u, v = public
    r = group.random_scalar(rng)
    c = group.exp(group.generator, r)
    t = scalar_hash(c)
    binding = group.exp(group.mul(group.exp(u, t), v), r)
    key = primitives.hash_to_key(group, group.exp(u, r))
    return key, KemCiphertext(ephemeral=c, binding=binding)


def decapsulate(
    group: Group,
    keypair: EcuKeyPair,
    ct: KemCiphertext,
    scalar_hash: Optional[ScalarHash] = None,
) -> bytes:
    """Recover the shared key, rejecting inconsistent ciphertexts.

    Raises:
        ConsistencyError: the binding element does not match the one implied
            by the keypair, i.e. the ciphertext was forged or mauled.
    """
    if scalar_hash is None:
        scalar_hash = lambda e: primitives.hash_to_scalar(group, e)
    c = ct.ephemeral
    t = scalar_hash(c)
    # Exponents act modulo the group order, so reduce the combined exponent.
    expected = group.exp(c, (keypair.key_exp * t + keypair.bind_exp) % group.order)
    if expected != ct.binding:
        raise ConsistencyError("ciphertext binding check failed")
    return primitives.hash_to_key(group, group.exp(c, keypair.key_exp))


def encode_ciphertext(group: Group, ct: KemCiphertext) -> bytes:
    """Fixed-length wire form: ephemeral element followed by binding element."""
    return group.encode_element(ct.ephemeral) + group.encode_element(ct.binding)


def decode_ciphertext(group: Group, data: bytes) -> KemCiphertext:
    """Inverse of :func:`encode_ciphertext`; rejects non-member elements."""
    if len(data) != 2 * group.element_len:
        raise DecodeError(
            f"ciphertext must be {2 * group.element_len} bytes, got {len(data)}")
    return KemCiphertext(
        ephemeral=group.decode_element(data[: group.element_len]),
        binding=group.decode_element(data[group.element_len:]),
    )
