"""Masked authenticated messaging over the tangle.

A channel is a chain of message generations.  Each generation lives at the
address derived from its Merkle root; the decrypted message carries the root
of the next generation, so a subscriber who enters at root N can walk forward
to N+1, N+2, ... but can never recover earlier roots.

With the default epoch height of 0 every message owns a fresh root (and a
fresh address).  Taller epochs are supported: their messages share one root
and are told apart by leaf index, and the root only advances once the last
leaf is spent.

Wire layout per bundle:

  head transaction     sigFragment  = u8 level || chain bytes
                       payload      = u8 version || u32 leafIndex ||
                                      u8 pathLen || path nodes ||
                                      masked nextRoot (32 bytes)
  remaining txs        payload      = masked payload, 1300-byte chunks

The keystream covers (nextRoot || payload) in one run, keyed by the root
(public/private) or root || authKey (restricted).  The signed digest is
sponge(maskedNextRoot || maskedPayload || leafIndex), so tampering with the
forward pointer, the payload or the leaf index invalidates the signature.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import crypto
from .crypto import HASH_LEN, MerkleEpoch, Signature
from .errors import (
    MalformedSignature,
    MissingAuthKey,
    NotRestricted,
    PayloadTooLarge,
    SignatureInvalid,
    SpuriousKey,
)
from .tangle import FRAGMENT_CAP, Bundle, BundleDraft, TangleGraph

PUBLIC = "public"
PRIVATE = "private"
RESTRICTED = "restricted"
MODES = (PUBLIC, PRIVATE, RESTRICTED)

DEFAULT_EPOCH_HEIGHT = 0
MAX_CHANNEL_PAYLOAD = 16 * 1024
_WIRE_VERSION = 1


@dataclass
class ChannelState:
    """A publisher's channel state; one writer per channel."""

    seed: str
    channel_id: str             # first root, symbol-encoded
    mode: str
    auth_key: bytes | None
    security_level: int
    epoch: MerkleEpoch
    next_epoch: MerkleEpoch
    leaf_cursor: int
    message_index: int
    height: int
    alias: str | None = None

    @property
    def ident(self) -> str:
        """Display identifier: the assigned alias, else the derived id."""
        return self.alias if self.alias is not None else self.channel_id

    @property
    def current_root(self) -> bytes:
        """Root that will locate the next published message."""
        return self.epoch.root


@dataclass
class MamMessage:
    masked_payload: bytes
    masked_next_root: bytes
    leaf_index: int
    auth_path: tuple[bytes, ...]
    signature: Signature
    address: bytes
    next_root: bytes | None = None      # plaintext, when known


@dataclass
class SplitAnnouncement:
    """Published on a parent channel when a child channel forks off."""

    child_channel_id: str
    child_root: bytes
    category: str | None = None


def mam_init(
    seed: str,
    security_level: int,
    height: int = DEFAULT_EPOCH_HEIGHT,
    alias: str | None = None,
) -> ChannelState:
    """Fresh public-mode channel with its first two epochs built."""
    crypto.check_security_level(security_level)
    epoch = crypto.merkle_build(seed, 0, height, security_level)
    next_epoch = crypto.merkle_build(seed, epoch.size, height, security_level)
    return ChannelState(
        seed=seed,
        channel_id=crypto.tryte_encode(epoch.root),
        mode=PUBLIC,
        auth_key=None,
        security_level=security_level,
        epoch=epoch,
        next_epoch=next_epoch,
        leaf_cursor=0,
        message_index=0,
        height=height,
        alias=alias,
    )


def change_mode(state: ChannelState, mode: str, key: bytes | None = None) -> ChannelState:
    """Switch mode for subsequent publishes; earlier messages are untouched."""
    if mode not in MODES:
        raise ValueError(f"unknown channel mode {mode!r}")
    if mode == RESTRICTED:
        if not key:
            raise MissingAuthKey("restricted mode requires an authorization key")
    elif key is not None:
        raise SpuriousKey(f"{mode} mode takes no key")
    return replace(state, mode=mode, auth_key=key)


def mam_address(root: bytes, mode: str, key: bytes | None = None) -> bytes:
    if mode == PUBLIC:
        return root
    if mode == PRIVATE:
        return crypto.sponge_hash(root)
    if mode == RESTRICTED:
        if not key:
            raise MissingAuthKey("restricted address needs the authorization key")
        return crypto.sponge_hash(root + key)
    raise ValueError(f"unknown channel mode {mode!r}")


def _key_material(root: bytes, mode: str, key: bytes | None) -> bytes:
    if mode == RESTRICTED:
        if not key:
            raise MissingAuthKey("restricted masking needs the authorization key")
        return root + key
    return root


def _signed_digest(masked_next_root: bytes, masked_payload: bytes, leaf_index: int) -> bytes:
    return crypto.sponge_hash(
        masked_next_root + masked_payload + leaf_index.to_bytes(4, "big")
    )


def _encode_signature(sig: Signature) -> bytes:
    return bytes([sig.level]) + sig.data


def _encode_header(leaf_index: int, auth_path: tuple[bytes, ...], masked_next_root: bytes) -> bytes:
    return (
        bytes([_WIRE_VERSION])
        + leaf_index.to_bytes(4, "big")
        + bytes([len(auth_path)])
        + b"".join(auth_path)
        + masked_next_root
    )


def mam_create(state: ChannelState, payload: bytes) -> tuple[MamMessage, BundleDraft, ChannelState]:
    """Mask, sign and package a payload; returns the advanced channel state."""
    if len(payload) > MAX_CHANNEL_PAYLOAD:
        raise PayloadTooLarge(f"{len(payload)} bytes > {MAX_CHANNEL_PAYLOAD}")
    epoch = state.epoch
    root = epoch.root
    last_leaf = state.leaf_cursor == epoch.size - 1
    next_root = state.next_epoch.root if last_leaf else root

    material = _key_material(root, state.mode, state.auth_key)
    masked = crypto.mask(next_root + payload, material, "encrypt")
    masked_next_root, masked_payload = masked[:HASH_LEN], masked[HASH_LEN:]

    digest = _signed_digest(masked_next_root, masked_payload, state.leaf_cursor)
    signature = crypto.wots_sign(epoch.keypairs[state.leaf_cursor], digest)
    auth_path = crypto.merkle_prove(epoch, state.leaf_cursor)
    address = mam_address(root, state.mode, state.auth_key)

    message = MamMessage(
        masked_payload=masked_payload,
        masked_next_root=masked_next_root,
        leaf_index=state.leaf_cursor,
        auth_path=auth_path,
        signature=signature,
        address=address,
        next_root=next_root,
    )
    fragments = [(_encode_signature(signature), _encode_header(state.leaf_cursor, auth_path, masked_next_root))]
    for i in range(0, len(masked_payload), FRAGMENT_CAP):
        fragments.append((b"", masked_payload[i : i + FRAGMENT_CAP]))
    draft = BundleDraft(address=address, fragments=fragments)

    if last_leaf:
        rolled = state.next_epoch
        new_state = replace(
            state,
            epoch=rolled,
            next_epoch=crypto.merkle_build(
                state.seed, rolled.start_index + rolled.size, state.height, state.security_level
            ),
            leaf_cursor=0,
            message_index=state.message_index + 1,
        )
    else:
        new_state = replace(
            state,
            leaf_cursor=state.leaf_cursor + 1,
            message_index=state.message_index + 1,
        )
    return message, draft, new_state


def mam_attach(
    bundle: BundleDraft | Bundle,
    address: bytes,
    graph: TangleGraph,
    budget: int | None = None,
) -> list[bytes]:
    """Finalize (tips + PoW) if needed, then store the bundle at its address."""
    from .tangle import finalize_bundle

    if isinstance(bundle, BundleDraft):
        if bundle.address != address:
            raise ValueError("draft address does not match the attach address")
        trunk, branch = graph.select_tips()
        bundle = finalize_bundle(
            bundle, trunk, branch, graph.difficulty, graph.clock(), budget
        )
    return graph.attach_bundle(bundle, bundle.tail.trunk, bundle.tail.branch)


def _parse_bundle(txs: list) -> MamMessage | None:
    """Rebuild a message from stored transactions; None when not MAM-shaped."""
    head = txs[0]
    sig_raw = head.sig_fragment
    header = head.payload_fragment
    try:
        if len(sig_raw) < 1 or header[0] != _WIRE_VERSION:
            return None
        level = sig_raw[0]
        signature = Signature(sig_raw[1:], level)
        leaf_index = int.from_bytes(header[1:5], "big")
        path_len = header[5]
        need = 6 + path_len * HASH_LEN + HASH_LEN
        if len(header) != need:
            return None
        path = tuple(
            header[6 + i * HASH_LEN : 6 + (i + 1) * HASH_LEN] for i in range(path_len)
        )
        masked_next_root = header[need - HASH_LEN : need]
    except IndexError:
        return None
    masked_payload = b"".join(t.payload_fragment for t in txs[1:])
    return MamMessage(
        masked_payload=masked_payload,
        masked_next_root=masked_next_root,
        leaf_index=leaf_index,
        auth_path=path,
        signature=signature,
        address=head.address,
    )


def verify_ownership(message: MamMessage, claimed_root: bytes) -> bool:
    """True iff the signature folds back to the claimed channel root."""
    digest = _signed_digest(
        message.masked_next_root, message.masked_payload, message.leaf_index
    )
    try:
        implied_leaf = crypto.wots_verify(message.signature, digest)
        recovered = crypto.merkle_root_of(implied_leaf, message.auth_path, message.leaf_index)
    except MalformedSignature:
        return False
    return recovered == claimed_root


def _messages_at(graph: TangleGraph, address: bytes) -> list[MamMessage]:
    messages = []
    for txs in graph.bundles_at(address):
        msg = _parse_bundle(txs)
        if msg is not None:
            messages.append(msg)
    messages.sort(key=lambda m: m.leaf_index)
    return messages


def _open_message(message: MamMessage, root: bytes, mode: str, key: bytes | None) -> tuple[bytes, bytes]:
    if not verify_ownership(message, root):
        raise SignatureInvalid(f"message at root {root.hex()[:16]} failed ownership check")
    material = _key_material(root, mode, key)
    plain = crypto.mask(message.masked_next_root + message.masked_payload, material, "decrypt")
    next_root, payload = plain[:HASH_LEN], plain[HASH_LEN:]
    message.next_root = next_root
    return payload, next_root


def mam_fetch(
    graph: TangleGraph,
    root: bytes,
    mode: str,
    key: bytes | None = None,
) -> list[tuple[bytes, bytes]]:
    """Walk the channel forward from ``root``; returns (payload, root) pairs.

    Ends quietly when no message exists at the derived address; raises
    SignatureInvalid if a present message fails ownership verification.
    """
    results: list[tuple[bytes, bytes]] = []
    current = root
    seen_roots = set()
    while current not in seen_roots:
        seen_roots.add(current)
        address = mam_address(current, mode, key)
        messages = _messages_at(graph, address)
        if not messages:
            break
        next_root = current
        for message in messages:
            payload, next_root = _open_message(message, current, mode, key)
            results.append((payload, current))
        if next_root == current:
            break       # epoch not exhausted yet; stream ends here for now
        current = next_root
    return results


def mam_fetch_single(
    graph: TangleGraph,
    root: bytes,
    mode: str,
    key: bytes | None = None,
) -> tuple[bytes, bytes] | None:
    """Fetch exactly one generation; None when nothing is published there."""
    address = mam_address(root, mode, key)
    messages = _messages_at(graph, address)
    if not messages:
        return None
    return _open_message(messages[0], root, mode, key)


def split_channel(
    state: ChannelState,
    new_key: bytes,
    entropy_source=None,
    child_alias: str | None = None,
    category: str | None = None,
) -> tuple[ChannelState, SplitAnnouncement]:
    """Fork a child channel sharing only future data with selected subjects.

    The announcement is meant to be published on the parent channel; the
    child key travels out of band.  Parent state is untouched.
    """
    if state.mode != RESTRICTED:
        raise NotRestricted("only restricted channels can split")
    if not new_key:
        raise MissingAuthKey("child channel needs its own authorization key")
    child_seed = crypto.generate_seed(entropy_source)
    child = mam_init(child_seed, state.security_level, state.height, alias=child_alias)
    child = change_mode(child, RESTRICTED, new_key)
    announcement = SplitAnnouncement(
        child_channel_id=child.ident,
        child_root=child.current_root,
        category=category,
    )
    return child, announcement
