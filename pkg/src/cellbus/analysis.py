"""Static def/use analysis of code cells in notebook context.

A cell's interface is derived from a deliberately small grammar subset:
assignments (plain, augmented, annotated, tuple-unpacking), imports,
function/class definitions (bodies opaque), ``for``/``while``/``if`` blocks,
comprehensions, calls, attribute/subscript reads. Anything else raises
SyntaxUnsupported with its location: an honest failure beats a silently
wrong interface.

Rules:
- inputs  = names read at cell scope before any local assignment, bound by
  an earlier cell (names never bound earlier are recorded as opaque inputs
  with an "unbound in notebook" diagnostic unless they are builtins);
- outputs = names assigned at cell scope that some later cell reads
  (dead stores are not outputs unless ``all_assignments_are_outputs``);
- params  = prefix-matching names assigned in this cell (never outputs);
- dependencies = top-level module names imported in this cell.

Loop targets, comprehension targets, and function-local names are excluded
from every set. Names bound by plain ``import`` flow as dependencies, not
data: they never appear in inputs or outputs.
"""

from __future__ import annotations

import ast
import builtins
from dataclasses import dataclass, field

from .config import AnalysisConfig
from .errors import NotACodeCell, SyntaxUnsupported
from .notebook import CODE, Notebook

BUILTIN_NAMES = frozenset(dir(builtins))

VTYPES = ("integer", "real", "text", "boolean", "list", "dataref", "opaque")


@dataclass(frozen=True, order=True)
class Var:
    name: str
    vtype: str = "opaque"


@dataclass(frozen=True)
class CellInterface:
    inputs: frozenset[Var]
    outputs: frozenset[Var]
    params: frozenset[Var]
    dependencies: frozenset[str]
    diagnostics: tuple[str, ...] = ()

    def input_names(self) -> set[str]:
        return {v.name for v in self.inputs}

    def output_names(self) -> set[str]:
        return {v.name for v in self.outputs}

    def param_names(self) -> set[str]:
        return {v.name for v in self.params}

    def to_dict(self) -> dict:
        return {
            "inputs": [{"name": v.name, "vtype": v.vtype} for v in sorted(self.inputs)],
            "outputs": [{"name": v.name, "vtype": v.vtype} for v in sorted(self.outputs)],
            "params": [{"name": v.name, "vtype": v.vtype} for v in sorted(self.params)],
            "dependencies": sorted(self.dependencies),
            "diagnostics": list(self.diagnostics),
        }

    @staticmethod
    def from_dict(doc: dict) -> "CellInterface":
        return CellInterface(
            inputs=frozenset(Var(v["name"], v["vtype"]) for v in doc["inputs"]),
            outputs=frozenset(Var(v["name"], v["vtype"]) for v in doc["outputs"]),
            params=frozenset(Var(v["name"], v["vtype"]) for v in doc["params"]),
            dependencies=frozenset(doc["dependencies"]),
            diagnostics=tuple(doc.get("diagnostics", ())),
        )


@dataclass
class CellUsage:
    """Raw cell-scope def/use facts for one cell."""

    reads: set[str] = field(default_factory=set)       # read before local assignment
    assigns: set[str] = field(default_factory=set)     # assigned at cell scope
    module_binds: set[str] = field(default_factory=set)  # bound by plain `import m`
    dependencies: set[str] = field(default_factory=set)
    evidence: dict[str, ast.expr | None] = field(default_factory=dict)  # last RHS


def _unsupported(node: ast.AST, what: str) -> SyntaxUnsupported:
    return SyntaxUnsupported(
        f"unsupported construct: {what}",
        line=getattr(node, "lineno", None),
        col=getattr(node, "col_offset", None),
    )


_ALLOWED_EXPR = (
    ast.Name, ast.Constant, ast.Call, ast.Attribute, ast.Subscript,
    ast.BinOp, ast.UnaryOp, ast.BoolOp, ast.Compare, ast.IfExp,
    ast.List, ast.Tuple, ast.Dict, ast.Set, ast.Slice, ast.Starred,
    ast.ListComp, ast.SetComp, ast.DictComp, ast.GeneratorExp,
    ast.Lambda, ast.JoinedStr, ast.FormattedValue, ast.keyword,
)


class _CellScanner:
    """Single-pass, source-order scan collecting reads-before-assignment."""

    def __init__(self, tree: ast.Module):
        self.usage = CellUsage()
        self._assigned: set[str] = set()
        # loop/comprehension targets not also plainly assigned are locals
        plain, loops = _collect_target_kinds(tree)
        self._excluded = loops - plain
        for stmt in tree.body:
            self._stmt(stmt)

    # -- statements ------------------------------------------------------

    def _stmt(self, node: ast.stmt) -> None:
        if isinstance(node, ast.Assign):
            self._expr(node.value)
            for target in node.targets:
                self._bind_target(target, node.value)
        elif isinstance(node, ast.AugAssign):
            self._expr(node.value)
            if isinstance(node.target, ast.Name):
                self._read(node.target.id, node.target)
                self._assign(node.target.id, None)
            else:
                self._expr_target(node.target)
        elif isinstance(node, ast.AnnAssign):
            self._expr(node.annotation)
            if node.value is not None:
                self._expr(node.value)
                self._bind_target(node.target, node.value)
            elif not isinstance(node.target, ast.Name):
                self._expr_target(node.target)
        elif isinstance(node, ast.Expr):
            self._expr(node.value)
        elif isinstance(node, ast.Import):
            for alias in node.names:
                top = alias.name.split(".")[0]
                self.usage.dependencies.add(top)
                bound = alias.asname or top
                self.usage.module_binds.add(bound)
                self._assigned.add(bound)
        elif isinstance(node, ast.ImportFrom):
            if node.level:
                raise _unsupported(node, "relative import")
            assert node.module is not None
            self.usage.dependencies.add(node.module.split(".")[0])
            for alias in node.names:
                if alias.name == "*":
                    raise _unsupported(node, "star import")
                self._assign(alias.asname or alias.name, None)
        elif isinstance(node, ast.FunctionDef):
            for dec in node.decorator_list:
                self._expr(dec)
            for default in node.args.defaults + [d for d in node.args.kw_defaults if d]:
                self._expr(default)
            # body opaque by design; the defined name is a plain binding
            self._assign(node.name, None)
        elif isinstance(node, ast.ClassDef):
            for dec in node.decorator_list:
                self._expr(dec)
            for base in node.bases:
                self._expr(base)
            for kw in node.keywords:
                self._expr(kw.value)
            self._assign(node.name, None)
        elif isinstance(node, ast.For):
            self._expr(node.iter)
            self._loop_target(node.target)
            for stmt in node.body + node.orelse:
                self._stmt(stmt)
        elif isinstance(node, ast.While):
            self._expr(node.test)
            for stmt in node.body + node.orelse:
                self._stmt(stmt)
        elif isinstance(node, ast.If):
            self._expr(node.test)
            for stmt in node.body + node.orelse:
                self._stmt(stmt)
        elif isinstance(node, (ast.Pass, ast.Break, ast.Continue)):
            pass
        else:
            raise _unsupported(node, type(node).__name__)

    # -- names and targets -------------------------------------------------

    def _read(self, name: str, node: ast.AST) -> None:
        if name in self._excluded or name in self._assigned:
            return
        self.usage.reads.add(name)

    def _assign(self, name: str, evidence: ast.expr | None) -> None:
        if name in self._excluded:
            return
        self._assigned.add(name)
        self.usage.assigns.add(name)
        self.usage.evidence[name] = evidence

    def _bind_target(self, target: ast.expr, value: ast.expr) -> None:
        if isinstance(target, ast.Name):
            self._assign(target.id, value)
        elif isinstance(target, (ast.Tuple, ast.List)):
            elements = target.elts
            values: list[ast.expr | None]
            if isinstance(value, (ast.Tuple, ast.List)) and len(value.elts) == len(elements):
                values = list(value.elts)
            else:
                values = [None] * len(elements)
            for element, sub in zip(elements, values):
                if isinstance(element, ast.Starred):
                    element = element.value
                    sub = None
                if isinstance(element, ast.Name):
                    self._assign(element.id, sub)
                else:
                    self._expr_target(element)
        elif isinstance(target, (ast.Attribute, ast.Subscript)):
            self._expr_target(target)
        else:
            raise _unsupported(target, f"assignment target {type(target).__name__}")

    def _expr_target(self, target: ast.expr) -> None:
        # attribute/subscript store: the base object is read, nothing is bound
        if isinstance(target, ast.Attribute):
            self._expr(target.value)
        elif isinstance(target, ast.Subscript):
            self._expr(target.value)
            self._expr(target.slice)
        else:
            raise _unsupported(target, f"assignment target {type(target).__name__}")

    def _loop_target(self, target: ast.expr) -> None:
        if isinstance(target, ast.Name):
            if target.id not in self._excluded:
                # plain-assigned name reused as loop var: still a binding
                self._assign(target.id, None)
        elif isinstance(target, (ast.Tuple, ast.List)):
            for element in target.elts:
                self._loop_target(element)
        elif isinstance(target, ast.Starred):
            self._loop_target(target.value)
        else:
            raise _unsupported(target, f"loop target {type(target).__name__}")

    # -- expressions -------------------------------------------------------

    def _expr(self, node: ast.expr, comp_locals: frozenset[str] = frozenset()) -> None:
        if isinstance(node, ast.Name):
            if isinstance(node.ctx, ast.Load) and node.id not in comp_locals:
                self._read(node.id, node)
        elif isinstance(node, ast.Constant):
            pass
        elif isinstance(node, ast.Lambda):
            for default in node.args.defaults + [d for d in node.args.kw_defaults if d]:
                self._expr(default, comp_locals)
            # lambda body opaque, like def bodies
        elif isinstance(node, (ast.ListComp, ast.SetComp, ast.GeneratorExp, ast.DictComp)):
            scope = set(comp_locals)
            for gen in node.generators:
                self._expr(gen.iter, frozenset(scope))
                scope |= _target_names(gen.target)
                for cond in gen.ifs:
                    self._expr(cond, frozenset(scope))
            inner = frozenset(scope)
            if isinstance(node, ast.DictComp):
                self._expr(node.key, inner)
                self._expr(node.value, inner)
            else:
                self._expr(node.elt, inner)
        elif isinstance(node, ast.Call):
            self._expr(node.func, comp_locals)
            for arg in node.args:
                self._expr(arg, comp_locals)
            for kw in node.keywords:
                self._expr(kw.value, comp_locals)
        elif isinstance(node, _ALLOWED_EXPR):
            for child in ast.iter_child_nodes(node):
                if isinstance(child, ast.expr):
                    self._expr(child, comp_locals)
        else:
            raise _unsupported(node, type(node).__name__)


def _target_names(target: ast.expr) -> set[str]:
    names: set[str] = set()
    for node in ast.walk(target):
        if isinstance(node, ast.Name):
            names.add(node.id)
    return names


def _collect_target_kinds(tree: ast.Module) -> tuple[set[str], set[str]]:
    """Names bound by plain assignment vs. by loop/comprehension targets."""
    plain: set[str] = set()
    loops: set[str] = set()

    def walk_stmts(stmts):
        for stmt in stmts:
            if isinstance(stmt, ast.Assign):
                for target in stmt.targets:
                    plain.update(_target_names(target))
            elif isinstance(stmt, (ast.AugAssign, ast.AnnAssign)):
                if isinstance(stmt.target, ast.Name):
                    plain.add(stmt.target.id)
            elif isinstance(stmt, (ast.FunctionDef, ast.ClassDef)):
                plain.add(stmt.name)
            elif isinstance(stmt, ast.For):
                loops.update(_target_names(stmt.target))
                walk_stmts(stmt.body)
                walk_stmts(stmt.orelse)
            elif isinstance(stmt, (ast.While, ast.If)):
                walk_stmts(stmt.body)
                walk_stmts(stmt.orelse)
    walk_stmts(tree.body)

    for node in ast.walk(tree):
        if isinstance(node, (ast.ListComp, ast.SetComp, ast.GeneratorExp, ast.DictComp)):
            for gen in node.generators:
                loops.update(_target_names(gen.target))
    return plain, loops


def scan_cell(source: str) -> CellUsage:
    """Extract raw def/use facts from one cell's source."""
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        raise SyntaxUnsupported(
            f"source does not parse: {exc.msg}", line=exc.lineno, col=exc.offset
        ) from exc
    return _CellScanner(tree).usage


def infer_type(
    name: str,
    evidence: ast.expr | None,
    mesh_read_helpers: tuple[str, ...] = AnalysisConfig().mesh_read_helpers,
) -> str:
    """Literal-driven vtype lattice; ``opaque`` whenever there is no evidence."""
    node = evidence
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        node = node.operand
    if isinstance(node, ast.Constant):
        value = node.value
        if isinstance(value, bool):
            return "boolean"
        if isinstance(value, int):
            return "integer"
        if isinstance(value, float):
            return "real"
        if isinstance(value, str):
            return "text"
        return "opaque"
    if isinstance(node, (ast.List, ast.ListComp)):
        return "list"
    if isinstance(node, ast.Call):
        func = node.func
        callee = None
        if isinstance(func, ast.Name):
            callee = func.id
        elif isinstance(func, ast.Attribute):
            callee = func.attr
        if callee in mesh_read_helpers:
            return "dataref"
    return "opaque"


def analyze_notebook(
    notebook: Notebook, config: AnalysisConfig | None = None
) -> dict[int, CellInterface]:
    """Analyze every code cell; returns interfaces keyed by cell index."""
    config = config or AnalysisConfig()
    if notebook.kernel_language.lower() not in ("python", "python3"):
        raise SyntaxUnsupported(
            f"kernel language {notebook.kernel_language!r} is not in the supported subset"
        )
    usages = [(cell.index, scan_cell(cell.source)) for cell in notebook.code_cells]
    return {
        index: _assemble(index, usages, config)
        for index, _ in usages
    }


def analyze_cell(
    notebook: Notebook, index: int, config: AnalysisConfig | None = None
) -> CellInterface:
    """Infer the interface of the code cell at ``index``."""
    config = config or AnalysisConfig()
    cell = next((c for c in notebook.cells if c.kind == CODE and c.index == index), None)
    if cell is None:
        raise NotACodeCell(f"index {index} does not address a code cell")
    return analyze_notebook(notebook, config)[index]


def _assemble(
    index: int,
    usages: list[tuple[int, CellUsage]],
    config: AnalysisConfig,
) -> CellInterface:
    usage = next(u for i, u in usages if i == index)
    earlier = [(i, u) for i, u in usages if i < index]
    later = [(i, u) for i, u in usages if i > index]
    diagnostics: list[str] = []

    param_names = {
        name for name in usage.assigns
        if name.startswith(config.param_prefix) and name not in usage.module_binds
    }
    params = frozenset(
        Var(name, infer_type(name, usage.evidence.get(name), config.mesh_read_helpers))
        for name in param_names
    )

    earlier_module_binds: set[str] = set()
    for _, u in earlier:
        earlier_module_binds |= u.module_binds

    inputs: set[Var] = set()
    for name in sorted(usage.reads):
        if name in param_names or name in earlier_module_binds:
            continue
        binder = None
        for i, u in earlier:
            if name in u.assigns:
                binder = u
        if binder is not None:
            vtype = infer_type(name, binder.evidence.get(name), config.mesh_read_helpers)
            inputs.add(Var(name, vtype))
        elif name not in BUILTIN_NAMES:
            inputs.add(Var(name, "opaque"))
            diagnostics.append(f"name {name!r} unbound in notebook")

    later_reads: set[str] = set()
    for _, u in later:
        later_reads |= u.reads

    outputs: set[Var] = set()
    for name in usage.assigns:
        if name in param_names or name in usage.module_binds:
            continue
        if config.all_assignments_are_outputs or name in later_reads:
            vtype = infer_type(name, usage.evidence.get(name), config.mesh_read_helpers)
            outputs.add(Var(name, vtype))

    return CellInterface(
        inputs=frozenset(inputs),
        outputs=frozenset(outputs),
        params=params,
        dependencies=frozenset(usage.dependencies),
        diagnostics=tuple(diagnostics),
    )
