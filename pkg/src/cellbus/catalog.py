"""Indexed registry of research assets with ranked keyword search and baskets.

Scoring is plain TF-IDF (whitespace tokens, lowercased, smoothed log IDF);
ties break on asset_id so rankings are reproducible. Persistence is a single
JSON file reloaded at startup; there is no server process.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import UnknownAsset

KINDS = ("notebook", "task", "workflow", "dataset")


@dataclass(frozen=True)
class CatalogEntry:
    asset_id: str
    kind: str
    title: str
    description: str = ""
    keywords: str = ""
    payload_ref: str = ""

    def to_dict(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "kind": self.kind,
            "title": self.title,
            "description": self.description,
            "keywords": self.keywords,
            "payload_ref": self.payload_ref,
        }

    @staticmethod
    def from_dict(doc: dict) -> "CatalogEntry":
        return CatalogEntry(**doc)


@dataclass(frozen=True)
class Basket:
    owner: str
    items: tuple[str, ...]


def _tokens(entry: CatalogEntry) -> list[str]:
    text = f"{entry.title} {entry.description} {entry.keywords}"
    return text.lower().split()


class Catalog:
    """Single-writer index; concurrent read queries are fine."""

    def __init__(self):
        self._entries: dict[str, CatalogEntry] = {}
        self._baskets: dict[str, list[str]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def index_asset(self, entry: CatalogEntry) -> str:
        if not entry.title or entry.kind not in KINDS:
            raise ValueError("catalog entries need a title and a known kind")
        self._entries[entry.asset_id] = entry
        return entry.asset_id

    def lookup(self, asset_id: str) -> CatalogEntry | None:
        return self._entries.get(asset_id)

    def search(self, query: str) -> list[CatalogEntry]:
        """TF-IDF ranking over title+description+keywords."""
        terms = query.lower().split()
        if not terms or not self._entries:
            return []
        docs = {aid: _tokens(e) for aid, e in self._entries.items()}
        n_docs = len(docs)
        scored: list[tuple[float, str]] = []
        for asset_id, tokens in docs.items():
            score = 0.0
            for term in terms:
                tf = tokens.count(term)
                if tf == 0:
                    continue
                df = sum(1 for t in docs.values() if term in t)
                score += tf * math.log(1.0 + n_docs / df)
            if score > 0.0:
                scored.append((score, asset_id))
        scored.sort(key=lambda pair: (-pair[0], pair[1]))
        return [self._entries[aid] for _, aid in scored]

    # -- baskets -----------------------------------------------------------

    def basket_add(self, owner: str, asset_id: str) -> Basket:
        if asset_id not in self._entries:
            raise UnknownAsset(f"asset {asset_id!r} not in catalog")
        items = self._baskets.setdefault(owner, [])
        if asset_id not in items:
            items.append(asset_id)
        return self.basket_get(owner)

    def basket_get(self, owner: str) -> Basket:
        return Basket(owner=owner, items=tuple(self._baskets.get(owner, ())))

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        doc = {
            "entries": [e.to_dict() for _, e in sorted(self._entries.items())],
            "baskets": {o: list(items) for o, items in sorted(self._baskets.items())},
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True),
                              encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "Catalog":
        catalog = Catalog()
        path = Path(path)
        if not path.exists():
            return catalog
        doc = json.loads(path.read_text(encoding="utf-8"))
        for raw in doc.get("entries", ()):
            catalog.index_asset(CatalogEntry.from_dict(raw))
        for owner, items in doc.get("baskets", {}).items():
            catalog._baskets[owner] = list(items)
        return catalog
