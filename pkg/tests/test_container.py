from __future__ import annotations

import json

import pytest

from cellbus.analysis import analyze_cell
from cellbus.catalog import Catalog
from cellbus.container import (build_task_spec, emit_service_descriptor,
                               publish_task, render_dockerfile,
                               verify_wrapper_interface, wrapper_cell_region)
from cellbus.digests import canonical_json_bytes, sha256_hex
from cellbus.errors import EmptyCell, InterfaceMismatch, LedgerUnavailable
from cellbus.ledger import verify_chain

from conftest import make_notebook

IMAGE = "python:3.10-slim"
CLOCK = lambda: 1700000000.0  # noqa: E731


def spec_for(cells, index, image=IMAGE):
    nb = make_notebook(cells)
    iface = analyze_cell(nb, index)
    return build_task_spec(nb.code_cell(index), iface, image, clock=CLOCK)


def test_task_id_deterministic():
    cells = [("code", "a = 1"), ("code", "b = a + 1"), ("code", "print(b)")]
    assert spec_for(cells, 1).task_id == spec_for(cells, 1).task_id


def test_task_id_depends_on_image():
    cells = [("code", "a = 1"), ("code", "b = a + 1"), ("code", "print(b)")]
    assert spec_for(cells, 1).task_id != spec_for(cells, 1, image="other:img").task_id


def test_empty_interface_wrapper_is_valid():
    spec = spec_for([("code", "print('side effect')")], 0)
    verify_wrapper_interface(spec)
    assert "cellbus_shim" in spec.wrapper_source


def test_empty_cell_rejected():
    with pytest.raises(EmptyCell):
        spec_for([("code", "# only a comment")], 0)


def test_interface_names_must_exist():
    nb = make_notebook([("code", "a = 1"), ("code", "b = a"), ("code", "print(b)")])
    iface = analyze_cell(nb, 1)
    stranger = make_notebook([("code", "z = 9")])
    with pytest.raises(InterfaceMismatch):
        build_task_spec(stranger.code_cell(0), iface, IMAGE, clock=CLOCK)


def test_reserved_name_rejected():
    nb = make_notebook([("code", "_io = 3"), ("code", "print(_io)")])
    iface = analyze_cell(nb, 0)
    with pytest.raises(InterfaceMismatch):
        build_task_spec(nb.code_cell(0), iface, IMAGE, clock=CLOCK)


def test_dependency_install_steps():
    cells = [("code", "import numpy\nx = numpy.zeros(3).tolist()"),
             ("code", "print(x)")]
    spec = spec_for(cells, 0)
    installs = [s for s in spec.build_recipe if s["kind"] == "run"]
    assert len(installs) == 1
    assert "numpy" in installs[0]["command"]
    dockerfile = render_dockerfile(spec.build_recipe)
    assert dockerfile.startswith(f"FROM {IMAGE}\n")
    assert "RUN pip install --no-cache-dir numpy" in dockerfile
    assert dockerfile.rstrip().endswith('ENTRYPOINT ["python", "/task/wrapper.py"]')


def test_param_rewrite_keeps_default():
    cells = [("code", "param_scale = 2.5\nout = param_scale * 2"),
             ("code", "print(out)")]
    spec = spec_for(cells, 0)
    region = wrapper_cell_region(spec.wrapper_source)
    assert '_io.param("param_scale", 2.5)' in region
    verify_wrapper_interface(spec)


def test_wrapper_bijection_with_intermediates():
    cells = [("code", "a = 2"),
             ("code", "tmp = a * 3\nb = tmp + 1\ndead = 0"),
             ("code", "print(b)")]
    spec = spec_for(cells, 1)
    verify_wrapper_interface(spec)
    # tampering with the embedded region must break the bijection
    broken = spec.wrapper_source.replace("b = tmp + 1", "c = tmp + 1")
    bad = type(spec)(**{**spec.__dict__, "wrapper_source": broken})
    with pytest.raises(InterfaceMismatch):
        verify_wrapper_interface(bad)


def test_service_descriptor_mirrors_interface():
    cells = [("code", "a = 1"), ("code", "b = a + 1\nc = [b]"),
             ("code", "print(b, c)")]
    descriptor = emit_service_descriptor(spec_for(cells, 1))
    assert descriptor.request_schema == {"a": "integer"}
    assert set(descriptor.response_schema) == {"b", "c"}
    assert descriptor.response_schema["c"] == "list"


def test_service_descriptor_empty_interface():
    descriptor = emit_service_descriptor(spec_for([("code", "print(1)")], 0))
    assert descriptor.request_schema == {}
    assert descriptor.response_schema == {}


def test_publish_indexes_and_logs(mem_mesh, ledger, signer):
    cells = [("code", "a = 1"), ("code", "b = a + 1"), ("code", "print(b)")]
    spec = spec_for(cells, 1)
    catalog = Catalog()
    entry = publish_task(spec, catalog, ledger, signer, mem_mesh)
    assert catalog.lookup(spec.task_id) is entry
    hits = catalog.search(spec.cell_digest[:12])
    assert hits and hits[0].asset_id == spec.task_id

    # ledger payload hash covers the spec bytes (recomputed independently)
    spec_digest = sha256_hex(canonical_json_bytes(spec.to_dict()))
    block = ledger.blocks[-1]
    assert block.event["type"] == "AssetPublished"
    assert block.event["payload"] == spec_digest
    assert mem_mesh.get(block.event["payload"]) is not None
    assert verify_chain(ledger.blocks, ledger.consortium).valid


def test_publish_idempotent(mem_mesh, ledger, signer):
    cells = [("code", "a = 1"), ("code", "b = a + 1"), ("code", "print(b)")]
    spec = spec_for(cells, 1)
    catalog = Catalog()
    first = publish_task(spec, catalog, ledger, signer, mem_mesh)
    before = len(catalog)
    second = publish_task(spec, catalog, ledger, signer, mem_mesh)
    assert first == second
    assert len(catalog) == before
    publishes = [b for b in ledger.blocks if b.event["type"] == "AssetPublished"]
    assert len(publishes) == 2
    assert publishes[0].event["payload"] == publishes[1].event["payload"]
    assert ledger.verify().valid


def test_publish_requires_ledger(mem_mesh, ledger, signer):
    cells = [("code", "a = 1"), ("code", "b = a + 1"), ("code", "print(b)")]
    spec = spec_for(cells, 1)
    ledger.available = False
    with pytest.raises(LedgerUnavailable):
        publish_task(spec, Catalog(), ledger, signer, mem_mesh)


def test_spec_roundtrip_via_json():
    from cellbus.container import TaskSpec
    cells = [("code", "param_k = 2\na = 1"), ("code", "b = a * param_k"),
             ("code", "print(b)")]
    spec = spec_for(cells, 1)
    clone = TaskSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert clone == spec
