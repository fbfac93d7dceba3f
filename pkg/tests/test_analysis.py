from __future__ import annotations

import ast

import pytest

from cellbus.analysis import analyze_cell, analyze_notebook, infer_type, scan_cell
from cellbus.config import AnalysisConfig
from cellbus.errors import NotACodeCell, SyntaxUnsupported

from conftest import make_notebook
from corpus import CORPUS, corpus_sources
from oracles import oracle_interfaces


def names(vars_):
    return {v.name for v in vars_}


def typed(vars_):
    return {v.name: v.vtype for v in vars_}


def test_basic_chain():
    nb = make_notebook([("code", "a = 2"), ("code", "b = a + 1"),
                        ("code", "print(b)")])
    iface = analyze_cell(nb, 1)
    assert names(iface.inputs) == {"a"}
    assert names(iface.outputs) == {"b"}
    assert iface.params == frozenset()


def test_empty_cell():
    nb = make_notebook([("code", "")])
    iface = analyze_cell(nb, 0)
    assert not iface.inputs and not iface.outputs and not iface.params


def test_comprehension_excludes_loop_var():
    nb = make_notebook([("code", "xs = [1, 2]"),
                        ("code", "ys = [x * x for x in xs]"),
                        ("code", "print(ys)")])
    iface = analyze_cell(nb, 1)
    assert typed(iface.inputs) == {"xs": "list"}
    assert typed(iface.outputs) == {"ys": "list"}


def test_param_prefix_rule():
    nb = make_notebook([("code", "param_radius = 1.0"),
                        ("code", "print(param_radius)")])
    iface = analyze_cell(nb, 0)
    assert typed(iface.params) == {"param_radius": "real"}
    assert not iface.outputs  # params never surface as outputs


def test_custom_param_prefix():
    nb = make_notebook([("code", "knob_x = 2"), ("code", "print(knob_x)")])
    cfg = AnalysisConfig(param_prefix="knob_")
    assert names(analyze_cell(nb, 0, cfg).params) == {"knob_x"}


def test_dead_store_not_output():
    nb = make_notebook([("code", "a = 1\nunused = 2"), ("code", "print(a)")])
    assert names(analyze_cell(nb, 0).outputs) == {"a"}


def test_all_assignments_are_outputs_flag():
    nb = make_notebook([("code", "a = 1\nunused = 2"), ("code", "print(a)")])
    cfg = AnalysisConfig(all_assignments_are_outputs=True)
    assert names(analyze_cell(nb, 0, cfg).outputs) == {"a", "unused"}


def test_unbound_read_diagnosed():
    nb = make_notebook([("code", "y = mystery + 1"), ("code", "print(y)")])
    iface = analyze_cell(nb, 0)
    assert typed(iface.inputs) == {"mystery": "opaque"}
    assert any("unbound" in d for d in iface.diagnostics)


def test_builtins_are_ambient():
    nb = make_notebook([("code", "n = len([1, 2])"), ("code", "print(n)")])
    iface = analyze_cell(nb, 0)
    assert not iface.inputs
    assert not iface.diagnostics


def test_imports_become_dependencies():
    nb = make_notebook([("code", "import numpy.linalg\nimport os as o\n"
                                 "from math import sqrt\nr = sqrt(4.0)"),
                        ("code", "print(r)")])
    iface = analyze_cell(nb, 0)
    assert iface.dependencies == frozenset({"numpy", "os", "math"})
    assert names(iface.outputs) == {"r"}  # modules never flow as data


def test_module_flow_excluded_from_inputs():
    nb = make_notebook([("code", "import json"),
                        ("code", "s = json.dumps([])"),
                        ("code", "print(s)")])
    iface = analyze_cell(nb, 1)
    assert not iface.inputs
    assert iface.dependencies == frozenset()


def test_read_then_reassign_in_both_sets():
    nb = make_notebook([("code", "x = 1"), ("code", "x = x + 1"),
                        ("code", "print(x)")])
    iface = analyze_cell(nb, 1)
    assert names(iface.inputs) == {"x"}
    assert names(iface.outputs) == {"x"}


def test_not_a_code_cell():
    nb = make_notebook([("markdown", "hello"), ("code", "a=1")])
    with pytest.raises(NotACodeCell):
        analyze_cell(nb, 5)


def test_unsupported_construct_has_location():
    nb = make_notebook([("code", "a = 1\nwith open('f') as fh:\n    pass")])
    with pytest.raises(SyntaxUnsupported) as exc:
        analyze_cell(nb, 0)
    assert exc.value.line == 2


def test_syntax_error_maps_to_unsupported():
    nb = make_notebook([("code", "def broken(:")])
    with pytest.raises(SyntaxUnsupported):
        analyze_cell(nb, 0)


def test_star_import_rejected():
    nb = make_notebook([("code", "from os import *")])
    with pytest.raises(SyntaxUnsupported):
        analyze_cell(nb, 0)


def test_non_python_kernel_rejected():
    nb = make_notebook([("code", "x <- 1")], language="R")
    with pytest.raises(SyntaxUnsupported):
        analyze_notebook(nb)


def test_function_body_opaque():
    nb = make_notebook([("code", "g = 10"),
                        ("code", "def f(v):\n    return v + g"),
                        ("code", "print(f(1))")])
    iface = analyze_cell(nb, 1)
    assert not iface.inputs  # body reads are not cell-scope reads
    assert names(iface.outputs) == {"f"}


def test_conditional_assignment_counts():
    nb = make_notebook([("code", "flag = True"),
                        ("code", "if flag:\n    x = 1\ny = x"),
                        ("code", "print(y)")])
    iface = analyze_cell(nb, 1)
    # conditional assignment still counts as assignment: x is not an input
    assert names(iface.inputs) == {"flag"}


def test_infer_type_literals():
    assert infer_type("n", ast.parse("3").body[0].value) == "integer"
    assert infer_type("x", ast.parse("3.5").body[0].value) == "real"
    assert infer_type("s", ast.parse("'hi'").body[0].value) == "text"
    assert infer_type("b", ast.parse("True").body[0].value) == "boolean"
    assert infer_type("xs", ast.parse("[1, 2]").body[0].value) == "list"
    assert infer_type("m", ast.parse("f(g)").body[0].value) == "opaque"
    assert infer_type("d", ast.parse("mesh_get('ref')").body[0].value) == "dataref"
    assert infer_type("n", ast.parse("-1").body[0].value) == "integer"
    assert infer_type("z", None) == "opaque"


def test_scan_cell_reports_raw_usage():
    usage = scan_cell("total += weights[0]\nout = total * 2")
    assert usage.reads == {"total", "weights"}
    assert usage.assigns == {"total", "out"}


# -- oracle equivalence over the corpus ------------------------------------


@pytest.mark.parametrize("nb_index", range(len(CORPUS)))
def test_oracle_equivalence(nb_index):
    cells = CORPUS[nb_index]
    nb = make_notebook(cells)
    sources = corpus_sources()[nb_index]
    expected = oracle_interfaces(sources)
    interfaces = analyze_notebook(nb)
    for k, (inputs, outputs, params, types_seen) in enumerate(expected):
        iface = interfaces[k]
        assert names(iface.inputs) == inputs, f"cell {k} inputs"
        assert names(iface.outputs) == outputs, f"cell {k} outputs"
        assert names(iface.params) == params, f"cell {k} params"
        for var in iface.inputs | iface.outputs | iface.params:
            if var.vtype == "opaque":
                continue  # analyzer abstained; nothing to check
            oracle_type = types_seen.get(var.name)
            if oracle_type is not None:
                assert var.vtype == oracle_type, f"cell {k} type of {var.name}"


def test_monotonicity_deleting_sole_reader():
    cells = [("code", "x = 1"), ("code", "y = 2"), ("code", "print(x)")]
    with_reader = analyze_cell(make_notebook(cells), 0)
    assert names(with_reader.outputs) == {"x"}
    without = analyze_cell(make_notebook(cells[:2]), 0)
    assert names(without.outputs) == set()


def test_markdown_locality():
    cells = [("code", "a = 1"), ("code", "b = a"), ("code", "print(b)")]
    base = analyze_notebook(make_notebook(cells))
    for insert_at in range(len(cells) + 1):
        padded = cells[:insert_at] + [("markdown", "note")] + cells[insert_at:]
        shifted = analyze_notebook(make_notebook(padded))
        assert {k: v.to_dict() for k, v in base.items()} == \
            {k: v.to_dict() for k, v in shifted.items()}
