"""Hash sponge, seeds, one-time signatures, Merkle roots, and payload masking.

All higher layers compose these primitives.  The hash behind ``sponge_hash``
is a standard byte-oriented digest; the 27-symbol alphabet {A-Z, 9} appears
only in externally visible identifiers (seeds, channel ids).

Winternitz parameters: window w = 4, so a 32-byte digest splits into 128
base-4 digits plus 5 checksum digits = 133 hash chains per fragment.  The
fragment count equals the security level (1, 2 or 3), which makes signature
size scale linearly with the level.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field

from .errors import (
    EmptyKeyMaterial,
    EntropyExhausted,
    InvalidSecurityLevel,
    KeyReuse,
    LeafOutOfRange,
    MalformedSignature,
)

HASH_LEN = 32
SEED_LEN = 81

# Symbol value table: '9' = 0, 'A' = 1 .. 'Z' = 26.
SYMBOL_ALPHABET = "9ABCDEFGHIJKLMNOPQRSTUVWXYZ"
_SYMBOL_VALUE = {c: i for i, c in enumerate(SYMBOL_ALPHABET)}

WOTS_W = 4
_MSG_DIGITS = HASH_LEN * 4          # 2 bits per digit
_CHECKSUM_DIGITS = 5                # max checksum 128 * 3 = 384 < 4**5
CHAINS_PER_FRAGMENT = _MSG_DIGITS + _CHECKSUM_DIGITS
SECURITY_LEVELS = (1, 2, 3)


def sponge_hash(data: bytes) -> bytes:
    """Fixed-length digest used everywhere a hash is needed."""
    return hashlib.sha256(data).digest()


def check_security_level(level: int) -> None:
    if level not in SECURITY_LEVELS:
        raise InvalidSecurityLevel(f"security level must be 1, 2 or 3, got {level!r}")


def generate_seed(entropy_source=None) -> str:
    """Draw an 81-symbol seed over {A-Z, 9} from an entropy source.

    ``entropy_source`` may be a callable returning ``n`` bytes, an object with
    a ``read(n)`` method, or ``None`` for the OS RNG.  Bytes >= 243 are
    rejected so the 27 symbols stay uniform.
    """
    if entropy_source is None:
        read = os.urandom
    elif callable(entropy_source):
        read = entropy_source
    else:
        read = entropy_source.read

    symbols = []
    while len(symbols) < SEED_LEN:
        chunk = read(SEED_LEN)
        if not chunk:
            raise EntropyExhausted("entropy source ended before 81 symbols were drawn")
        for b in chunk:
            if b < 243:  # 9 * 27: keeps the modulo unbiased
                symbols.append(SYMBOL_ALPHABET[b % 27])
                if len(symbols) == SEED_LEN:
                    break
    return "".join(symbols)


def seed_to_bytes(seed: str) -> bytes:
    """Map a seed to its 81-byte value sequence for hashing."""
    if len(seed) != SEED_LEN:
        raise ValueError(f"seed must be {SEED_LEN} symbols, got {len(seed)}")
    try:
        return bytes(_SYMBOL_VALUE[c] for c in seed)
    except KeyError as exc:
        raise ValueError(f"seed contains symbol outside A-Z,9: {exc.args[0]!r}") from None


def tryte_encode(data: bytes) -> str:
    """Render bytes as symbols over {A-Z, 9}, two symbols per byte."""
    out = []
    for b in data:
        out.append(SYMBOL_ALPHABET[b % 27])
        out.append(SYMBOL_ALPHABET[b // 27])
    return "".join(out)


def mask(payload: bytes, key_material: bytes, direction: str) -> bytes:
    """XOR ``payload`` with a sponge-derived keystream.

    Encrypt and decrypt are the same XOR, so mask(mask(p)) == p under a fixed
    key; ``direction`` is kept for call-site clarity and validated.
    """
    if not key_material:
        raise EmptyKeyMaterial("masking requires non-empty key material")
    if direction not in ("encrypt", "decrypt"):
        raise ValueError(f"direction must be 'encrypt' or 'decrypt', got {direction!r}")
    if not payload:
        return b""
    blocks = []
    for counter in range((len(payload) + HASH_LEN - 1) // HASH_LEN):
        blocks.append(sponge_hash(key_material + counter.to_bytes(8, "big")))
    stream = b"".join(blocks)[: len(payload)]
    n = int.from_bytes(payload, "big") ^ int.from_bytes(stream, "big")
    return n.to_bytes(len(payload), "big")


# ---------------------------------------------------------------------------
# Winternitz one-time signatures


@dataclass
class Signature:
    """Raw chain values, ``level`` fragments of 133 chains each."""

    data: bytes
    level: int

    def __len__(self) -> int:
        return len(self.data)


@dataclass
class WotsKeyPair:
    private: tuple[bytes, ...]      # level * 133 chain starting values
    public: bytes
    index: int
    security_level: int
    spent: bool = False


def _advance(value: bytes, steps: int) -> bytes:
    for _ in range(steps):
        value = hashlib.sha256(value).digest()
    return value


def _fragment_digits(message: bytes, fragment: int) -> list[int]:
    """Base-4 digits plus checksum for one signature fragment."""
    d = sponge_hash(message + bytes([fragment]))
    digits = []
    for b in d:
        digits.append((b >> 6) & 3)
        digits.append((b >> 4) & 3)
        digits.append((b >> 2) & 3)
        digits.append(b & 3)
    checksum = sum(WOTS_W - 1 - x for x in digits)
    for shift in range(_CHECKSUM_DIGITS - 1, -1, -1):
        digits.append((checksum >> (2 * shift)) & 3)
    return digits


def wots_keygen(seed: str, index: int, security_level: int) -> WotsKeyPair:
    """Derive a key pair deterministically from (seed, index, level)."""
    check_security_level(security_level)
    if index < 0:
        raise ValueError("leaf index must be non-negative")
    base = b"wots" + seed_to_bytes(seed)
    private = []
    ends = []
    for fragment in range(security_level):
        for chain in range(CHAINS_PER_FRAGMENT):
            sk = hashlib.sha256(
                base + struct.pack(">QBBH", index, security_level, fragment, chain)
            ).digest()
            private.append(sk)
            ends.append(_advance(sk, WOTS_W - 1))
    public = sponge_hash(b"".join(ends))
    return WotsKeyPair(tuple(private), public, index, security_level)


def wots_sign(key: WotsKeyPair, message: bytes) -> Signature:
    """Sign a digest, spending the key."""
    if key.spent:
        raise KeyReuse(f"one-time key {key.index} has already signed")
    if len(message) != HASH_LEN:
        raise ValueError(f"message must be a {HASH_LEN}-byte digest")
    key.spent = True
    parts = []
    for fragment in range(key.security_level):
        digits = _fragment_digits(message, fragment)
        offset = fragment * CHAINS_PER_FRAGMENT
        for i, digit in enumerate(digits):
            parts.append(_advance(key.private[offset + i], digit))
    return Signature(b"".join(parts), key.security_level)


def wots_verify(sig: Signature, message: bytes) -> bytes:
    """Return the public digest implied by (sig, message).

    The caller compares the result against the expected leaf; a wrong
    message or tampered signature simply yields a different digest.
    """
    if sig.level not in SECURITY_LEVELS:
        raise MalformedSignature(f"fragment count {sig.level!r} outside 1..3")
    expected = sig.level * CHAINS_PER_FRAGMENT * HASH_LEN
    if len(sig.data) != expected:
        raise MalformedSignature(
            f"signature is {len(sig.data)} bytes, expected {expected}"
        )
    ends = []
    for fragment in range(sig.level):
        digits = _fragment_digits(message, fragment)
        offset = fragment * CHAINS_PER_FRAGMENT * HASH_LEN
        for i, digit in enumerate(digits):
            start = offset + i * HASH_LEN
            chunk = sig.data[start : start + HASH_LEN]
            ends.append(_advance(chunk, WOTS_W - 1 - digit))
    return sponge_hash(b"".join(ends))


# ---------------------------------------------------------------------------
# Merkle epochs


@dataclass
class MerkleEpoch:
    """One tree of 2**height one-time keys under a single root."""

    root: bytes
    height: int
    start_index: int
    leaves: tuple[bytes, ...]
    keypairs: tuple[WotsKeyPair, ...]
    next_leaf: int = 0

    @property
    def size(self) -> int:
        return 1 << self.height


def merkle_build(seed: str, start_index: int, height: int, security_level: int) -> MerkleEpoch:
    """Build the epoch with leaves start_index .. start_index + 2**height - 1."""
    if height < 0:
        raise ValueError("height must be >= 0")
    keypairs = tuple(
        wots_keygen(seed, start_index + i, security_level) for i in range(1 << height)
    )
    leaves = tuple(kp.public for kp in keypairs)
    level = list(leaves)
    while len(level) > 1:
        level = [
            sponge_hash(level[i] + level[i + 1]) for i in range(0, len(level), 2)
        ]
    return MerkleEpoch(level[0], height, start_index, leaves, keypairs)


def merkle_prove(epoch: MerkleEpoch, leaf_index: int) -> tuple[bytes, ...]:
    """Sibling path from leaf ``leaf_index`` (relative) up to the root."""
    if not 0 <= leaf_index < epoch.size:
        raise LeafOutOfRange(f"leaf {leaf_index} outside tree of {epoch.size}")
    path = []
    level = list(epoch.leaves)
    idx = leaf_index
    while len(level) > 1:
        path.append(level[idx ^ 1])
        level = [
            sponge_hash(level[i] + level[i + 1]) for i in range(0, len(level), 2)
        ]
        idx >>= 1
    return tuple(path)


def merkle_root_of(leaf_digest: bytes, path: tuple[bytes, ...], leaf_index: int) -> bytes:
    """Fold a leaf and its sibling path back into a root."""
    node = leaf_digest
    idx = leaf_index
    for sibling in path:
        if idx & 1:
            node = sponge_hash(sibling + node)
        else:
            node = sponge_hash(node + sibling)
        idx >>= 1
    return node
