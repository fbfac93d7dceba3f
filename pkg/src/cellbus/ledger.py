"""Append-only hash-chained event log with consortium membership.

Each block's ``prev_hash`` commits to the previous block's full header, the
``payload_hash`` commits to the canonical event JSON, and a keyed-hash
authenticator (per-organization secret) covers the whole header. Verification
recomputes everything and reports the first inconsistency as data, never as
an exception.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import time as _time
from dataclasses import dataclass
from datetime import datetime, timezone

from .digests import GENESIS_HASH, canonical_json_bytes, sha256_hex
from .errors import SignatureInvalid, UnknownOrganization

EVENT_TYPES = (
    "AssetPublished",
    "RunStarted",
    "RunFinished",
    "InstanceEvent",
    "Provisioned",
    "Released",
)


def rfc3339(epoch: float) -> str:
    return datetime.fromtimestamp(epoch, timezone.utc).isoformat()


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: str
    payload_hash: str
    timestamp: str
    signer_org: str
    signature: str
    event: dict

    def header(self) -> dict:
        return {
            "index": self.index,
            "prev_hash": self.prev_hash,
            "payload_hash": self.payload_hash,
            "timestamp": self.timestamp,
            "signer_org": self.signer_org,
            "signature": self.signature,
        }

    def header_hash(self) -> str:
        return sha256_hex(canonical_json_bytes(self.header()))

    def to_dict(self) -> dict:
        doc = self.header()
        doc["event"] = self.event
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "Block":
        return Block(
            index=doc["index"],
            prev_hash=doc["prev_hash"],
            payload_hash=doc["payload_hash"],
            timestamp=doc["timestamp"],
            signer_org=doc["signer_org"],
            signature=doc["signature"],
            event=doc["event"],
        )


def _signed_message(index: int, prev_hash: str, payload_hash: str,
                    timestamp: str, signer_org: str) -> bytes:
    # The authenticator covers the full header (sans itself) so no header
    # byte is mutable without detection.
    return canonical_json_bytes({
        "index": index,
        "prev_hash": prev_hash,
        "payload_hash": payload_hash,
        "timestamp": timestamp,
        "signer_org": signer_org,
    })


class KeyedSigner:
    """Keyed-hash authenticator for one organization."""

    def __init__(self, org_id: str, secret: str):
        self.org_id = org_id
        self._secret = secret.encode("utf-8")

    def sign(self, message: bytes) -> str:
        return hmac.new(self._secret, message, hashlib.sha256).hexdigest()


class Consortium:
    """Organization registry; the org set is append-only within a chain epoch."""

    def __init__(self):
        self._keys: dict[str, str] = {}

    def register(self, org_id: str, secret: str) -> None:
        if org_id in self._keys and self._keys[org_id] != secret:
            raise UnknownOrganization(
                f"organization {org_id!r} already registered with a different key")
        self._keys[org_id] = secret

    def knows(self, org_id: str) -> bool:
        return org_id in self._keys

    def verify(self, org_id: str, message: bytes, signature: str) -> bool:
        if org_id not in self._keys:
            return False
        expected = hmac.new(self._keys[org_id].encode("utf-8"),
                            message, hashlib.sha256).hexdigest()
        return hmac.compare_digest(expected, signature)

    def signer(self, org_id: str) -> KeyedSigner:
        if org_id not in self._keys:
            raise UnknownOrganization(f"organization {org_id!r} not registered")
        return KeyedSigner(org_id, self._keys[org_id])


@dataclass(frozen=True)
class ChainVerdict:
    valid: bool
    broken_at: int | None = None
    reason: str | None = None

    def to_dict(self) -> dict:
        if self.valid:
            return {"valid": True}
        return {"valid": False, "broken_at": self.broken_at, "reason": self.reason}


class Ledger:
    """Single-writer hash chain. Appends serialize through one lock-free
    writer (the orchestration context); reads see immutable prefixes."""

    def __init__(self, consortium: Consortium, clock=None):
        self.consortium = consortium
        self.blocks: list[Block] = []
        self.available = True
        self._clock = clock or _time.time

    def __len__(self) -> int:
        return len(self.blocks)

    def append_event(self, event: dict, signer: KeyedSigner) -> Block:
        if event.get("type") not in EVENT_TYPES:
            raise ValueError(f"unknown event type {event.get('type')!r}")
        if not self.consortium.knows(signer.org_id):
            raise UnknownOrganization(
                f"organization {signer.org_id!r} not registered in consortium")
        index = len(self.blocks)
        prev_hash = self.blocks[-1].header_hash() if self.blocks else GENESIS_HASH
        payload_hash = sha256_hex(canonical_json_bytes(event))
        timestamp = rfc3339(self._clock())
        message = _signed_message(index, prev_hash, payload_hash, timestamp,
                                  signer.org_id)
        signature = signer.sign(message)
        if not self.consortium.verify(signer.org_id, message, signature):
            raise SignatureInvalid(
                f"signature by {signer.org_id!r} does not verify under the registered key")
        block = Block(index=index, prev_hash=prev_hash, payload_hash=payload_hash,
                      timestamp=timestamp, signer_org=signer.org_id,
                      signature=signature, event=event)
        self.blocks.append(block)
        return block

    def verify(self) -> ChainVerdict:
        return verify_chain(self.blocks, self.consortium)

    def query_asset(self, digest: str) -> list[Block]:
        return query_asset(self.blocks, digest)

    # -- persistence -------------------------------------------------------

    def to_jsonl(self) -> bytes:
        lines = [canonical_json_bytes(b.to_dict()) for b in self.blocks]
        return b"\n".join(lines) + (b"\n" if lines else b"")

    @staticmethod
    def from_jsonl(data: bytes, consortium: Consortium, clock=None) -> "Ledger":
        ledger = Ledger(consortium, clock=clock)
        for line in data.splitlines():
            if line.strip():
                ledger.blocks.append(Block.from_dict(json.loads(line)))
        return ledger


def verify_chain(blocks: list[Block], consortium: Consortium) -> ChainVerdict:
    """Recompute all hashes and signatures; report the first inconsistency."""
    for pos, block in enumerate(blocks):
        if sha256_hex(canonical_json_bytes(block.event)) != block.payload_hash:
            return ChainVerdict(False, pos, "payload-hash mismatch")
        expected_prev = blocks[pos - 1].header_hash() if pos else GENESIS_HASH
        if block.prev_hash != expected_prev:
            return ChainVerdict(False, pos, "prev-hash mismatch")
        message = _signed_message(block.index, block.prev_hash, block.payload_hash,
                                  block.timestamp, block.signer_org)
        if not consortium.verify(block.signer_org, message, block.signature):
            return ChainVerdict(False, pos, "signature invalid")
        if block.index != pos:
            return ChainVerdict(False, pos, "index not contiguous")
    return ChainVerdict(True)


def verify_serialized(data: bytes, consortium: Consortium) -> ChainVerdict:
    """Verify a JSON-lines chain; undecodable input is an invalid chain."""
    blocks: list[Block] = []
    for lineno, line in enumerate(data.splitlines()):
        if not line.strip():
            continue
        try:
            blocks.append(Block.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, UnicodeDecodeError):
            return ChainVerdict(False, lineno, "undecodable block")
    return verify_chain(blocks, consortium)


def _mentions(value, digest: str) -> bool:
    if isinstance(value, str):
        return value == digest
    if isinstance(value, dict):
        return any(_mentions(k, digest) or _mentions(v, digest)
                   for k, v in value.items())
    if isinstance(value, (list, tuple)):
        return any(_mentions(v, digest) for v in value)
    return False


def query_asset(blocks: list[Block], digest: str) -> list[Block]:
    """Chronological list of blocks whose event mentions the digest."""
    return [b for b in blocks if _mentions(b.event, digest)]
