"""Exception types raised across the package.

Every error the library can raise on a documented failure path lives here so
the CLI can map each class to a stable exit code.
"""


class TangleprovError(Exception):
    """Base class for all package errors."""


# crypto

class EntropyExhausted(TangleprovError):
    """Entropy source ran dry before a full seed could be drawn."""


class InvalidSecurityLevel(TangleprovError):
    """Security level outside {1, 2, 3}."""


class KeyReuse(TangleprovError):
    """A one-time key was asked to sign a second message."""


class MalformedSignature(TangleprovError):
    """Signature has the wrong fragment count or byte length."""


class LeafOutOfRange(TangleprovError):
    """Leaf index does not exist in the tree."""


class EmptyKeyMaterial(TangleprovError):
    """Masking requires non-empty key material."""


# tangle

class PowUnderDifficulty(TangleprovError):
    """Transaction hash does not meet the required weight."""


class DanglingReference(TangleprovError):
    """Trunk or branch points at an unknown transaction."""


class DuplicateTransaction(TangleprovError):
    """Transaction hash already stored."""


class UnknownTransaction(TangleprovError):
    """No transaction with that hash exists."""


class MergeConflict(TangleprovError):
    """Cluster transaction collides with a differing main-graph transaction."""


class ArchiveWriteFailure(TangleprovError):
    """Archive rejected the write; the snapshot was aborted."""


class PowBudgetExceeded(TangleprovError):
    """Nonce search exceeded the configured budget."""


# mam

class MissingAuthKey(TangleprovError):
    """Restricted mode requires an authorization key."""


class SpuriousKey(TangleprovError):
    """Key supplied for a mode that does not take one."""


class PayloadTooLarge(TangleprovError):
    """Payload exceeds the channel maximum."""


class SignatureInvalid(TangleprovError):
    """Fetched message failed ownership verification."""


class NotRestricted(TangleprovError):
    """Operation only applies to restricted channels."""


# supplychain

class DecodeError(TangleprovError):
    """Byte stream is not a valid payload encoding."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class SellerMismatch(TangleprovError):
    """Trade's seller id is not the publishing channel."""


class TimestampRegression(TangleprovError):
    """Sensor timestamp went backwards for the same sensor."""


class UnknownTrade(TangleprovError):
    """Receipt refers to a trade the buyer never fetched."""


# provenance

class ChannelNotSubscribed(TangleprovError):
    """Keyring has no entry for the channel."""


class CycleDetected(TangleprovError):
    """Provenance hop revisited a channel."""


class HopLimitExceeded(TangleprovError):
    """Provenance walk exceeded the hop limit."""


class BrokenLink(TangleprovError):
    """Previous-transaction pointer not found in the source channel."""


class QrCapacityExceeded(TangleprovError):
    """Rendered trace does not fit a QR code."""


# accesspolicy

class DuplicatePolicy(TangleprovError):
    """A policy for this (owner, subject) pair already exists."""


class NoActiveGrant(TangleprovError):
    """Revocation requested where nothing was granted."""


# simnet

class UnknownNodes(TangleprovError):
    """Operation names nodes absent from the network."""
