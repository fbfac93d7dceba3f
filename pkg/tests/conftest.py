from __future__ import annotations

import json

import pytest

from cellbus.ledger import Consortium, Ledger
from cellbus.mesh import FsStore, MemoryStore
from cellbus.notebook import parse_notebook


def notebook_bytes(cells, language="python", nbformat=4, minor=5) -> bytes:
    """Build raw .ipynb bytes from (kind, source) pairs."""
    doc = {
        "nbformat": nbformat,
        "nbformat_minor": minor,
        "metadata": {"kernelspec": {"name": "python3", "language": language}},
        "cells": [
            {"cell_type": kind, "source": source, "metadata": {},
             **({"outputs": [], "execution_count": None} if kind == "code" else {})}
            for kind, source in cells
        ],
    }
    return json.dumps(doc).encode("utf-8")


def make_notebook(cells, **kwargs):
    return parse_notebook(notebook_bytes(cells, **kwargs))


@pytest.fixture
def mem_mesh():
    return MemoryStore()


@pytest.fixture
def fs_mesh(tmp_path):
    return FsStore(tmp_path / "mesh")


@pytest.fixture
def consortium():
    c = Consortium()
    c.register("org-a", "secret-a")
    c.register("org-b", "secret-b")
    return c


@pytest.fixture
def ledger(consortium):
    return Ledger(consortium, clock=lambda: 1700000000.0)


@pytest.fixture
def signer(consortium):
    return consortium.signer("org-a")
