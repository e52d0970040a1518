"""Key distribution between channel owners and subscribers.

Key exchange is pluggable: anything that can hand a subject the
(mode, key, entry root) triple for a channel satisfies the interface.
This ships a pre-shared implementation where the exchange is a direct
write into the subject's keyring.
"""

from __future__ import annotations

from .provenance import Keyring


class KeyDistribution:
    """Interface for delivering channel access material to subjects."""

    def deliver(self, subject_id: str, channel_id: str, mode: str,
                key: bytes | None, entry_root: bytes) -> None:
        raise NotImplementedError

    def rotate(self, subject_id: str, channel_id: str,
               key: bytes | None, from_root: bytes) -> None:
        raise NotImplementedError

    def keyring_for(self, subject_id: str) -> Keyring:
        raise NotImplementedError


class PresharedKeyDistribution(KeyDistribution):
    """Keys handed over out-of-band; each subject accumulates a keyring."""

    def __init__(self):
        self._keyrings: dict[str, Keyring] = {}

    def keyring_for(self, subject_id: str) -> Keyring:
        if subject_id not in self._keyrings:
            self._keyrings[subject_id] = Keyring()
        return self._keyrings[subject_id]

    def deliver(self, subject_id, channel_id, mode, key, entry_root):
        self.keyring_for(subject_id).add(channel_id, mode, key, entry_root)

    def rotate(self, subject_id, channel_id, key, from_root):
        self.keyring_for(subject_id).extend_key(channel_id, key, from_root)

    def subjects(self) -> list[str]:
        return sorted(self._keyrings)
