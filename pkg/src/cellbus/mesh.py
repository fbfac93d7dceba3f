"""Content-addressed data mesh for all inter-task data.

Two backends behind one put/get surface:

- ``FsStore``: a local directory keyed by digest prefix fan-out
  (``objects/<hh>/<digest>`` raw bytes + ``<digest>.meta`` JSON with size and
  media type). This is the centralized backend; a real WebDAV client would
  slot in behind the same interface.
- ``MeshNetwork``: in-process simulated nodes with configurable replication
  and depth-limited flood lookup, standing in for a peer-to-peer file layer.

Every read re-verifies the digest; no silent corruption passes.
"""

from __future__ import annotations

import json
import os
import threading
from collections import deque
from dataclasses import dataclass
from pathlib import Path

from .digests import is_hex_digest, sha256_hex
from .errors import IntegrityError, MeshLocked, NotFound, StorageFull

LOCK_FILE = ".active-run"
FLOOD_TTL = 8


@dataclass(frozen=True)
class DataRef:
    digest: str
    size: int
    media: str = "application/octet-stream"

    def to_dict(self) -> dict:
        return {"digest": self.digest, "size": self.size, "media": self.media}

    @staticmethod
    def from_dict(doc: dict) -> "DataRef":
        return DataRef(digest=doc["digest"], size=doc["size"], media=doc["media"])


def _digest(ref) -> str:
    if isinstance(ref, DataRef):
        return ref.digest
    if isinstance(ref, str) and is_hex_digest(ref):
        return ref
    raise NotFound(f"not a data reference: {ref!r}")


class Store:
    """Common put/get behavior; subclasses provide raw blob storage."""

    def put(self, content: bytes, media: str = "application/octet-stream") -> DataRef:
        digest = sha256_hex(content)
        ref = DataRef(digest=digest, size=len(content), media=media)
        if not self._has(digest):
            self._write(digest, content, media)
        return ref

    def get(self, ref) -> bytes:
        digest = _digest(ref)
        if not self._has(digest):
            raise NotFound(f"no object {digest}")
        content = self._read(digest)
        if sha256_hex(content) != digest:
            raise IntegrityError(f"object {digest} fails digest re-check")
        return content

    def has(self, ref) -> bool:
        try:
            return self._has(_digest(ref))
        except NotFound:
            return False

    def put_json(self, obj, media: str = "application/json") -> DataRef:
        return self.put(json.dumps(obj, sort_keys=True).encode("utf-8"), media)

    def get_json(self, ref):
        return json.loads(self.get(ref).decode("utf-8"))

    # subclass surface
    def _has(self, digest: str) -> bool:
        raise NotImplementedError

    def _write(self, digest: str, content: bytes, media: str) -> None:
        raise NotImplementedError

    def _read(self, digest: str) -> bytes:
        raise NotImplementedError

    def digests(self) -> set[str]:
        raise NotImplementedError


class MemoryStore(Store):
    """Dict-backed store for tests and ephemeral runs."""

    def __init__(self, quota_bytes: int | None = None):
        self._objects: dict[str, tuple[bytes, str]] = {}
        self._quota = quota_bytes
        self._used = 0
        self._lock = threading.Lock()

    def _has(self, digest: str) -> bool:
        return digest in self._objects

    def _write(self, digest: str, content: bytes, media: str) -> None:
        with self._lock:
            if digest in self._objects:
                return
            if self._quota is not None and self._used + len(content) > self._quota:
                raise StorageFull(f"quota {self._quota} bytes exceeded")
            self._objects[digest] = (content, media)
            self._used += len(content)

    def _read(self, digest: str) -> bytes:
        return self._objects[digest][0]

    def digests(self) -> set[str]:
        return set(self._objects)

    def corrupt(self, digest: str, payload: bytes) -> None:
        """Test hook: overwrite stored bytes without touching the key."""
        media = self._objects[digest][1]
        self._objects[digest] = (payload, media)

    def delete(self, digest: str) -> None:
        content, _ = self._objects.pop(digest)
        self._used -= len(content)


class FsStore(Store):
    """Filesystem store: ``objects/<hh>/<digest>`` plus a ``.meta`` JSON."""

    def __init__(self, root: str | Path, quota_bytes: int | None = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "objects").mkdir(exist_ok=True)
        self._quota = quota_bytes
        self._lock = threading.Lock()

    def _path(self, digest: str) -> Path:
        return self.root / "objects" / digest[:2] / digest

    def _has(self, digest: str) -> bool:
        return self._path(digest).exists()

    def _usage(self) -> int:
        total = 0
        for meta in (self.root / "objects").glob("*/*.meta"):
            try:
                total += json.loads(meta.read_text())["size"]
            except (json.JSONDecodeError, KeyError, OSError):
                continue
        return total

    def _write(self, digest: str, content: bytes, media: str) -> None:
        with self._lock:
            if self._quota is not None and self._usage() + len(content) > self._quota:
                raise StorageFull(f"quota {self._quota} bytes exceeded")
            path = self._path(digest)
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(content)
            os.replace(tmp, path)
            meta = path.with_suffix(path.suffix + ".meta")
            meta_tmp = meta.with_suffix(".meta.tmp")
            meta_tmp.write_text(json.dumps({"size": len(content), "media": media}))
            os.replace(meta_tmp, meta)

    def _read(self, digest: str) -> bytes:
        return self._path(digest).read_bytes()

    def digests(self) -> set[str]:
        return {
            p.name for p in (self.root / "objects").glob("*/*")
            if is_hex_digest(p.name)
        }

    def delete(self, digest: str) -> None:
        path = self._path(digest)
        path.unlink(missing_ok=True)
        path.with_suffix(path.suffix + ".meta").unlink(missing_ok=True)

    # -- run lock (GC requires exclusive access) --------------------------

    def acquire_run_lock(self) -> None:
        (self.root / LOCK_FILE).touch()

    def release_run_lock(self) -> None:
        (self.root / LOCK_FILE).unlink(missing_ok=True)

    def run_active(self) -> bool:
        return (self.root / LOCK_FILE).exists()


class MeshNode:
    """One simulated peer: a local object table plus a peer set."""

    def __init__(self, node_id: str):
        self.node_id = node_id
        self.objects: dict[str, tuple[bytes, str]] = {}
        self.peers: set[str] = set()


class MeshNetwork(Store):
    """Simulated decentralized backend: replicate-on-put, flood-on-get.

    ``put`` stores ``replication`` copies on nodes reachable from the entry
    node (breadth-first, node ids sorted for determinism). ``get`` answers
    locally when possible, otherwise floods a depth-limited query.
    """

    def __init__(self, replication: int = 1, entry: str | None = None):
        self.replication = replication
        self.nodes: dict[str, MeshNode] = {}
        self.entry = entry

    def add_node(self, node_id: str, peers: tuple[str, ...] = ()) -> MeshNode:
        node = self.nodes.setdefault(node_id, MeshNode(node_id))
        for peer in peers:
            other = self.nodes.setdefault(peer, MeshNode(peer))
            node.peers.add(peer)
            other.peers.add(node_id)
        if self.entry is None:
            self.entry = node_id
        return node

    def remove_node(self, node_id: str) -> None:
        self.nodes.pop(node_id)
        for node in self.nodes.values():
            node.peers.discard(node_id)
        if self.entry == node_id:
            self.entry = min(self.nodes) if self.nodes else None

    def _reach(self, start: str, ttl: int = FLOOD_TTL):
        seen = {start}
        queue = deque([(start, 0)])
        while queue:
            node_id, depth = queue.popleft()
            yield node_id
            if depth >= ttl:
                continue
            for peer in sorted(self.nodes[node_id].peers):
                if peer in seen:
                    continue
                seen.add(peer)
                queue.append((peer, depth + 1))

    def put_at(self, node_id: str, content: bytes,
               media: str = "application/octet-stream") -> DataRef:
        digest = sha256_hex(content)
        ref = DataRef(digest=digest, size=len(content), media=media)
        placed = 0
        for nid in self._reach(node_id, ttl=len(self.nodes)):
            node = self.nodes[nid]
            if digest in node.objects:
                placed += 1
            else:
                node.objects[digest] = (content, media)
                placed += 1
            if placed >= self.replication:
                break
        return ref

    def get_at(self, node_id: str, ref) -> bytes:
        digest = _digest(ref)
        for nid in self._reach(node_id, ttl=FLOOD_TTL):
            node = self.nodes[nid]
            if digest in node.objects:
                content = node.objects[digest][0]
                if sha256_hex(content) != digest:
                    raise IntegrityError(f"object {digest} fails digest re-check at {nid}")
                return content
        raise NotFound(f"no object {digest} reachable from {node_id}")

    # Store surface delegates to the entry node.
    def put(self, content: bytes, media: str = "application/octet-stream") -> DataRef:
        assert self.entry is not None, "network has no nodes"
        return self.put_at(self.entry, content, media)

    def get(self, ref) -> bytes:
        assert self.entry is not None, "network has no nodes"
        return self.get_at(self.entry, ref)

    def _has(self, digest: str) -> bool:
        return any(digest in n.objects for n in self.nodes.values())

    def digests(self) -> set[str]:
        out: set[str] = set()
        for node in self.nodes.values():
            out |= set(node.objects)
        return out


def collect_root_digests(*documents) -> set[str]:
    """Conservatively harvest every 64-hex string from JSON-like documents."""
    roots: set[str] = set()

    def walk(value):
        if isinstance(value, str):
            if is_hex_digest(value):
                roots.add(value)
        elif isinstance(value, dict):
            for key, sub in value.items():
                walk(key)
                walk(sub)
        elif isinstance(value, (list, tuple)):
            for sub in value:
                walk(sub)

    for doc in documents:
        walk(doc)
    return roots


def mark_and_sweep(store: FsStore | MemoryStore, roots: set[str],
                   force: bool = False) -> tuple[set[str], set[str]]:
    """Delete unreferenced objects. Requires no active run unless forced."""
    if isinstance(store, FsStore) and store.run_active() and not force:
        raise MeshLocked("a run is active; refusing to garbage-collect")
    live = {d for d in store.digests() if d in roots}
    dead = store.digests() - live
    for digest in dead:
        store.delete(digest)
    return live, dead
