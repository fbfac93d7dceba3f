"""Turn a cell + interface into a portable task: wrapper program, container
build recipe, service descriptor, and publication.

The wrapper embeds the (param-rewritten) cell source verbatim between
``# >>> cell`` / ``# <<< cell`` markers so the def/use scanner can re-derive
the interface from the wrapper itself. Container builds are descriptive at
desk scale: the recipe renders to a Dockerfile but the default path never
builds real images.
"""

from __future__ import annotations

import ast
import json
import time as _time
from dataclasses import dataclass

from .analysis import CellInterface, analyze_cell
from .catalog import Catalog, CatalogEntry
from .digests import canonical_json_bytes, digest_of, sha256_hex
from .errors import EmptyCell, InterfaceMismatch, LedgerUnavailable
from .ledger import KeyedSigner, Ledger, rfc3339
from .mesh import Store
from .notebook import CODE, Cell, Notebook

RESERVED_NAME = "_io"
CELL_BEGIN = "# >>> cell"
CELL_END = "# <<< cell"


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    cell_digest: str
    cell_source: str
    interface: CellInterface
    base_image: str
    wrapper_source: str
    build_recipe: tuple[dict, ...]
    created_at: str

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "cell_digest": self.cell_digest,
            "cell_source": self.cell_source,
            "interface": self.interface.to_dict(),
            "base_image": self.base_image,
            "wrapper_source": self.wrapper_source,
            "build_recipe": list(self.build_recipe),
            "created_at": self.created_at,
        }

    @staticmethod
    def from_dict(doc: dict) -> "TaskSpec":
        return TaskSpec(
            task_id=doc["task_id"],
            cell_digest=doc["cell_digest"],
            cell_source=doc["cell_source"],
            interface=CellInterface.from_dict(doc["interface"]),
            base_image=doc["base_image"],
            wrapper_source=doc["wrapper_source"],
            build_recipe=tuple(doc["build_recipe"]),
            created_at=doc["created_at"],
        )


@dataclass(frozen=True)
class ServiceDescriptor:
    endpoint_path: str
    request_schema: dict[str, str]
    response_schema: dict[str, str]

    def to_dict(self) -> dict:
        return {
            "path": self.endpoint_path,
            "request": dict(sorted(self.request_schema.items())),
            "response": dict(sorted(self.response_schema.items())),
        }


def _interface_names(interface: CellInterface) -> set[str]:
    return interface.input_names() | interface.output_names() | interface.param_names()


def _source_identifiers(tree: ast.Module) -> set[str]:
    return {node.id for node in ast.walk(tree) if isinstance(node, ast.Name)}


def _rewrite_params(source: str, tree: ast.Module, params: set[str]) -> str:
    """Replace each ``param_x = <literal>`` RHS with a manifest lookup that
    falls back to the original literal."""
    edits: list[tuple[int, int, int, int, str]] = []
    rewritten: set[str] = set()
    for stmt in tree.body:
        target: ast.Name | None = None
        value: ast.expr | None = None
        if isinstance(stmt, ast.Assign) and len(stmt.targets) == 1 and \
                isinstance(stmt.targets[0], ast.Name):
            target, value = stmt.targets[0], stmt.value
        elif isinstance(stmt, ast.AnnAssign) and isinstance(stmt.target, ast.Name) \
                and stmt.value is not None:
            target, value = stmt.target, stmt.value
        if target is None or target.id not in params:
            continue
        segment = ast.get_source_segment(source, value)
        if segment is None:
            raise InterfaceMismatch(f"cannot rewrite parameter {target.id!r}")
        replacement = f'{RESERVED_NAME}.param("{target.id}", {segment})'
        edits.append((value.lineno, value.col_offset,
                      value.end_lineno, value.end_col_offset, replacement))
        rewritten.add(target.id)
    unwritable = params - rewritten
    if unwritable:
        raise InterfaceMismatch(
            "parameters must be simple single-target assignments: "
            + ", ".join(sorted(unwritable)))

    lines = source.splitlines()
    for lineno, col, end_lineno, end_col, replacement in sorted(edits, reverse=True):
        if lineno != end_lineno:
            raise InterfaceMismatch("parameter literals must be single-line")
        line = lines[lineno - 1]
        lines[lineno - 1] = line[:col] + replacement + line[end_col:]
    return "\n".join(lines)


def _wrapper(cell_digest: str, interface: CellInterface, body: str) -> str:
    schema = {
        "inputs": {v.name: v.vtype for v in sorted(interface.inputs)},
        "outputs": {v.name: v.vtype for v in sorted(interface.outputs)},
        "params": {v.name: v.vtype for v in sorted(interface.params)},
    }
    schema_literal = json.dumps(schema, sort_keys=True)
    return (
        f'"""Task wrapper generated from cell {cell_digest[:12]}."""\n'
        "import sys\n"
        "\n"
        "from cellbus_shim.runtime import TaskIo\n"
        "\n"
        f"{RESERVED_NAME} = TaskIo.from_argv(sys.argv, interface={schema_literal})\n"
        f"{RESERVED_NAME}.seed(globals())\n"
        f"{CELL_BEGIN}\n"
        f"{body.rstrip()}\n"
        f"{CELL_END}\n"
        f"{RESERVED_NAME}.collect(globals())\n"
        f"sys.exit({RESERVED_NAME}.finish())\n"
    )


def build_task_spec(
    cell: Cell,
    interface: CellInterface,
    base_image: str,
    clock=None,
) -> TaskSpec:
    """Deterministic TaskSpec for (cell, interface, base_image)."""
    try:
        tree = ast.parse(cell.source)
    except SyntaxError as exc:
        raise InterfaceMismatch(f"cell source does not parse: {exc.msg}") from exc
    if not tree.body:
        raise EmptyCell("cell has no executable statements")

    identifiers = _source_identifiers(tree)
    if RESERVED_NAME in identifiers:
        raise InterfaceMismatch(
            f"cell uses the reserved wrapper name {RESERVED_NAME!r}")
    missing = _interface_names(interface) - identifiers
    if missing:
        raise InterfaceMismatch(
            "interface names absent from cell source: " + ", ".join(sorted(missing)))

    body = _rewrite_params(cell.source, tree, interface.param_names())
    wrapper = _wrapper(cell.cell_digest, interface, body)

    recipe: list[dict] = [
        {"kind": "from", "image": base_image},
        {"kind": "copy", "source": "wrapper.py", "dest": "/task/wrapper.py"},
    ]
    for dep in sorted(interface.dependencies):
        recipe.append({"kind": "run",
                       "command": f"pip install --no-cache-dir {dep}"})
    recipe.append({"kind": "entrypoint",
                   "command": ["python", "/task/wrapper.py"]})

    task_id = digest_of({
        "cell_digest": cell.cell_digest,
        "interface": interface.to_dict(),
        "base_image": base_image,
    })
    created = rfc3339((clock or _time.time)())
    return TaskSpec(
        task_id=task_id,
        cell_digest=cell.cell_digest,
        cell_source=cell.source,
        interface=interface,
        base_image=base_image,
        wrapper_source=wrapper,
        build_recipe=tuple(recipe),
        created_at=created,
    )


def wrapper_cell_region(wrapper_source: str) -> str:
    """The embedded (param-rewritten) cell text between the wrapper markers."""
    lines = wrapper_source.splitlines()
    begin = lines.index(CELL_BEGIN)
    end = lines.index(CELL_END)
    return "\n".join(lines[begin + 1:end])


def verify_wrapper_interface(spec: TaskSpec) -> None:
    """Re-derive the wrapper's interface with the cell analyzer itself.

    The wrapper is placed in a synthetic notebook between a cell binding the
    declared inputs/params and a cell reading the declared outputs; analyzing
    it must reproduce exactly the spec's input, output, and param name sets.
    Raises InterfaceMismatch otherwise.
    """
    bound = sorted(spec.interface.input_names() | spec.interface.param_names())
    prelude = "\n".join(f"{name} = None" for name in bound) or "pass"
    postlude = "\n".join(sorted(spec.interface.output_names())) or "pass"
    synthetic = Notebook(
        format_version=(4, 5),
        kernel_language="python",
        cells=(
            Cell.build(prelude, CODE, 0),
            Cell.build(spec.wrapper_source, CODE, 1),
            Cell.build(postlude, CODE, 2),
        ),
        source_digest="0" * 64,
    )
    derived = analyze_cell(synthetic, 1)
    for label, got, want in (
        ("reads", derived.input_names(), spec.interface.input_names()),
        ("params", derived.param_names(), spec.interface.param_names()),
        ("writes", derived.output_names(), spec.interface.output_names()),
    ):
        if got != want:
            raise InterfaceMismatch(
                f"wrapper {label} {sorted(got)} != interface {sorted(want)}")


def emit_service_descriptor(spec: TaskSpec) -> ServiceDescriptor:
    """One endpoint per cell; schemas mirror the interface exactly."""
    request = {v.name: v.vtype for v in spec.interface.inputs}
    request.update({v.name: v.vtype for v in spec.interface.params})
    response = {v.name: v.vtype for v in spec.interface.outputs}
    return ServiceDescriptor(
        endpoint_path=f"/cells/{spec.cell_digest[:12]}",
        request_schema=request,
        response_schema=response,
    )


def render_dockerfile(recipe: tuple[dict, ...]) -> str:
    """Dockerfile-compatible text rendering of a build recipe."""
    lines: list[str] = []
    for step in recipe:
        kind = step["kind"]
        if kind == "from":
            lines.append(f"FROM {step['image']}")
        elif kind == "copy":
            lines.append(f"COPY {step['source']} {step['dest']}")
        elif kind == "run":
            lines.append(f"RUN {step['command']}")
        elif kind == "entrypoint":
            lines.append(f"ENTRYPOINT {json.dumps(step['command'])}")
        else:
            raise ValueError(f"unknown recipe step kind {kind!r}")
    return "\n".join(lines) + "\n"


def publish_task(
    spec: TaskSpec,
    catalog: Catalog,
    ledger: Ledger,
    signer: KeyedSigner,
    mesh: Store,
) -> CatalogEntry:
    """Store the spec in the mesh, index it, and record an AssetPublished event.

    Republishing an identical spec returns the existing catalog entry; the
    ledger still gains a block whose payload hash matches the first one.
    """
    if ledger is None or not ledger.available:
        raise LedgerUnavailable("ledger not accepting appends")
    spec_bytes = canonical_json_bytes(spec.to_dict())
    ref = mesh.put(spec_bytes, media="application/json")
    event = {
        "type": "AssetPublished",
        "asset": spec.task_id,
        "payload": sha256_hex(spec_bytes),
        "cell": spec.cell_digest,
        "base_image": spec.base_image,
    }
    ledger.append_event(event, signer)

    existing = catalog.lookup(spec.task_id)
    if existing is not None:
        return existing
    keywords = " ".join(sorted(
        _interface_names(spec.interface) | set(spec.interface.dependencies)))
    entry = CatalogEntry(
        asset_id=spec.task_id,
        kind="task",
        title=f"cell task {spec.cell_digest[:12]}",
        description=f"containerizable task for cell {spec.cell_digest}",
        keywords=keywords,
        payload_ref=ref.digest,
    )
    catalog.index_asset(entry)
    return entry
