"""Parse notebook documents (nbformat 4.x JSON) into an ordered cell model.

Only code cells get contiguous indices 0..n-1; markdown/raw cells are kept in
document order but remain unindexed. Identity digests use normalized source:
trailing whitespace stripped per line, single trailing newline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .digests import sha256_hex
from .errors import MalformedDocument, MissingKernel, UnsupportedFormat

CODE = "code"
MARKDOWN = "markdown"
RAW = "raw"


def normalize_source(source: str) -> str:
    """Strip trailing whitespace per line; enforce a single trailing newline."""
    lines = [line.rstrip() for line in source.splitlines()]
    return "\n".join(lines).rstrip("\n") + "\n"


@dataclass(frozen=True)
class Cell:
    index: int | None  # None for non-code cells
    source: str
    kind: str
    cell_digest: str

    @staticmethod
    def build(source: str, kind: str, index: int | None) -> "Cell":
        digest = sha256_hex(normalize_source(source).encode("utf-8"))
        return Cell(index=index, source=source, kind=kind, cell_digest=digest)


@dataclass(frozen=True)
class Notebook:
    format_version: tuple[int, int]
    kernel_language: str
    cells: tuple[Cell, ...]
    source_digest: str
    code_cells: tuple[Cell, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "code_cells",
            tuple(c for c in self.cells if c.kind == CODE))

    def code_cell(self, index: int) -> Cell:
        for cell in self.code_cells:
            if cell.index == index:
                return cell
        raise IndexError(f"no code cell with index {index}")


def _join_source(raw) -> str:
    if isinstance(raw, str):
        return raw
    if isinstance(raw, list) and all(isinstance(s, str) for s in raw):
        return "".join(raw)
    raise MalformedDocument("cell source must be a string or list of strings")


def _kernel_language(meta: dict) -> str:
    kernelspec = meta.get("kernelspec") or {}
    language_info = meta.get("language_info") or {}
    lang = kernelspec.get("language") or language_info.get("name")
    if not lang:
        raise MissingKernel("notebook declares no kernel language")
    return str(lang)


def parse_notebook(document: bytes) -> Notebook:
    """Parse raw ``.ipynb`` bytes into a :class:`Notebook`.

    Raises MalformedDocument for non-JSON or structurally broken input,
    UnsupportedFormat for nbformat major != 4, MissingKernel when no
    kernel language is declared.
    """
    try:
        text = document.decode("utf-8")
        doc = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedDocument(f"not a valid notebook JSON document: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedDocument("notebook document must be a JSON object")

    major = doc.get("nbformat")
    if not isinstance(major, int):
        raise MalformedDocument("missing nbformat version field")
    if major != 4:
        raise UnsupportedFormat(f"nbformat major version {major} is unsupported (need 4)")
    minor = doc.get("nbformat_minor", 0)
    if not isinstance(minor, int):
        raise MalformedDocument("nbformat_minor must be an integer")

    meta = doc.get("metadata")
    if not isinstance(meta, dict):
        raise MalformedDocument("missing notebook metadata")
    language = _kernel_language(meta)

    raw_cells = doc.get("cells")
    if not isinstance(raw_cells, list):
        raise MalformedDocument("notebook cells must be a list")

    cells: list[Cell] = []
    code_index = 0
    for pos, raw in enumerate(raw_cells):
        if not isinstance(raw, dict):
            raise MalformedDocument(f"cell {pos} is not an object")
        kind = raw.get("cell_type")
        if kind not in (CODE, MARKDOWN, RAW):
            raise MalformedDocument(f"cell {pos} has unknown cell_type {kind!r}")
        source = _join_source(raw.get("source", ""))
        if kind == CODE:
            cells.append(Cell.build(source, kind, code_index))
            code_index += 1
        else:
            cells.append(Cell.build(source, kind, None))

    return Notebook(
        format_version=(major, minor),
        kernel_language=language,
        cells=tuple(cells),
        source_digest=sha256_hex(document),
    )


def cell_fingerprint(cell: Cell) -> str:
    """Deterministic identity of a cell's normalized source (index-independent)."""
    return cell.cell_digest
