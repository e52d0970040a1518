"""Channel-splitting access policies: per-subject grants over data
categories, query evaluation, and key rotation for revocation.

Each data category an owner shares maps to its own child channel with its
own authorization key, so granting and revoking are purely cryptographic:
a grant hands over the child key and current root, a revocation rotates the
child key and re-keys the remaining grantees.  Revocation is forward-only;
roots a subject already holds keep decrypting the history they cover.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum

from . import mam, supplychain as sc
from .errors import DuplicatePolicy, NoActiveGrant, NotRestricted
from .keydist import KeyDistribution
from .supplychain import EntityChannel
from .tangle import TangleGraph

GRANTED = "Granted"
DENIED = "Denied"


class DataCategory(Enum):
    TDATA = "TData"
    ADATA = "AData"
    SALES_INFO = "SalesInfo"
    CLIENT_INFO = "ClientInfo"
    MANUFACTURING_INFO = "ManufacturingInfo"
    ADVERTISING_INFO = "AdvertisingInfo"
    SENSOR_DATA = "SensorData"

    @classmethod
    def from_name(cls, name: str) -> "DataCategory":
        for member in cls:
            if member.value == name:
                return member
        raise ValueError(f"unknown data category {name!r}")


def child_channel_id(owner_id: str, category: DataCategory) -> str:
    return f"{owner_id}:{category.value}"


@dataclass(frozen=True)
class Policy:
    owner_channel_id: str
    subject_id: str
    allowed: frozenset[DataCategory]


@dataclass(frozen=True)
class Decision:
    outcome: str                        # Granted | Denied
    payloads: tuple[bytes, ...] = ()

    def __post_init__(self):
        if self.outcome == DENIED and self.payloads:
            raise ValueError("a denied decision discloses nothing")


def evaluate_query(
    subject_id: str,
    target_channel_id: str,
    category: DataCategory,
    policies: dict[tuple[str, str], Policy],
    keyrings: KeyDistribution,
    graph: TangleGraph,
) -> Decision:
    """Granted iff a policy allows it; granted data is fetched, denial is dumb.

    The cryptographic path and the policy table must agree: a grant only
    works because the subject's keyring can derive the child address, and a
    denial leaks nothing because it cannot.
    """
    policy = policies.get((target_channel_id, subject_id))
    if policy is None or category not in policy.allowed:
        return Decision(DENIED)
    child_id = child_channel_id(target_channel_id, category)
    keyring = keyrings.keyring_for(subject_id)
    if child_id not in keyring:
        return Decision(DENIED)
    stream = [raw for raw, _ in _raw_stream(graph, keyring, child_id)]
    return Decision(GRANTED, tuple(stream))


def _raw_stream(graph, keyring, child_id):
    """Raw payload bytes along a child channel (category data is free-form)."""
    grant = keyring.grants[child_id]
    out = []
    for root, key in grant.segments:
        current = root
        seen = set()
        while current not in seen:
            seen.add(current)
            got = mam.mam_fetch_single(graph, current, grant.mode, key)
            if got is None:
                break
            payload, next_root = got
            out.append((payload, current))
            if next_root == current:
                break
            current = next_root
    return out


class PolicyManager:
    """Owner-side policy state: child channels, keys, grants."""

    def __init__(self, keydist: KeyDistribution, rng: random.Random | None = None):
        self.keydist = keydist
        self.rng = rng or random.Random()
        self.owners: dict[str, EntityChannel] = {}
        self.children: dict[str, EntityChannel] = {}
        self.child_keys: dict[str, bytes] = {}
        self.policies: dict[tuple[str, str], Policy] = {}
        self.grantees: dict[str, set[str]] = {}

    def register_owner(self, channel: EntityChannel):
        self.owners[channel.ident] = channel

    def _ensure_child(self, owner: EntityChannel, category: DataCategory,
                      graph: TangleGraph) -> EntityChannel:
        cid = child_channel_id(owner.ident, category)
        if cid in self.children:
            return self.children[cid]
        key = self.rng.randbytes(16)
        child_state, announcement = mam.split_channel(
            owner.state,
            key,
            entropy_source=self.rng.randbytes,
            child_alias=cid,
            category=category.value,
        )
        sc.publish_announcement(owner, graph, announcement)
        child = EntityChannel(state=child_state)
        child.transport = owner.transport       # children publish via the owner's node
        self.children[cid] = child
        self.child_keys[cid] = key
        self.grantees[cid] = set()
        return child

    def define_policy(
        self,
        owner: EntityChannel,
        subject_id: str,
        categories: set[DataCategory],
        graph: TangleGraph,
        update: bool = False,
    ) -> Policy:
        """Record the policy and release each category's child key."""
        if not categories:
            raise ValueError("policy needs at least one category")
        if owner.state.mode != mam.RESTRICTED:
            raise NotRestricted("policies hang off restricted channels")
        key = (owner.ident, subject_id)
        if key in self.policies and not update:
            raise DuplicatePolicy(f"{key[0]} already has a policy for {key[1]}")
        self.owners.setdefault(owner.ident, owner)
        policy = Policy(owner.ident, subject_id, frozenset(categories))
        self.policies[key] = policy
        for category in sorted(categories, key=lambda c: c.value):
            child = self._ensure_child(owner, category, graph)
            cid = child.ident
            self.keydist.deliver(
                subject_id, cid, mam.RESTRICTED,
                self.child_keys[cid], child.current_root,
            )
            self.grantees[cid].add(subject_id)
        return policy

    def publish_category_data(self, owner: EntityChannel, category: DataCategory,
                              data: bytes, graph: TangleGraph):
        """Put a free-form record on the owner's category child channel."""
        child = self._ensure_child(owner, category, graph)
        return child._publish(graph, data)

    def query(self, subject_id: str, target_channel_id: str,
              category: DataCategory, graph: TangleGraph) -> Decision:
        return evaluate_query(
            subject_id, target_channel_id, category,
            self.policies, self.keydist, graph,
        )

    def revoke_access(self, owner: EntityChannel, subject_id: str,
                      category: DataCategory, graph: TangleGraph) -> bytes:
        """Rotate the category child key; remaining grantees get the new key."""
        key = (owner.ident, subject_id)
        policy = self.policies.get(key)
        if policy is None or category not in policy.allowed:
            raise NoActiveGrant(f"{subject_id} holds no {category.value} grant")
        cid = child_channel_id(owner.ident, category)
        child = self.children[cid]
        new_key = self.rng.randbytes(16)
        rotation_root = child.current_root
        child.state = mam.change_mode(child.state, mam.RESTRICTED, new_key)
        self.child_keys[cid] = new_key
        self.policies[key] = Policy(
            owner.ident, subject_id, policy.allowed - {category}
        )
        self.grantees[cid].discard(subject_id)
        for grantee in sorted(self.grantees[cid]):
            self.keydist.rotate(grantee, cid, new_key, rotation_root)
        return new_key


# ---------------------------------------------------------------------------
# policy file format: one policy per line, "owner,subject,Cat1,Cat2,..."


def format_policy(policy: Policy) -> str:
    cats = ",".join(sorted(c.value for c in policy.allowed))
    return f"{policy.owner_channel_id},{policy.subject_id},{cats}"


def parse_policy_line(line: str) -> Policy:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) < 3:
        raise ValueError(f"policy line needs owner, subject, categories: {line!r}")
    cats = frozenset(DataCategory.from_name(p) for p in parts[2:] if p)
    return Policy(parts[0], parts[1], cats)
