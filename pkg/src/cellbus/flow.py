"""Typed workflow DAG with built-in split/merge and a versioned JSON IR.

The IR ("cellbus-flow/v1") is our own schema, inspired by CWL's scatter
syntax and mappable onto Argo-style DAG templates; we do not claim CWL
conformance (see docs/flow-ir.md for the mapping note). Validation returns
violations as data: a graph is valid iff the list is empty.

Split nodes take one ``items`` port (list) and emit one ``item`` port of the
declared element vtype; merge nodes do the reverse. Every split must close at
exactly one downstream merge on every path (well-nested scatter regions).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .analysis import VTYPES
from .digests import digest_of
from .errors import IrMalformed, IrVersionUnsupported

IR_VERSION = "cellbus-flow/v1"

TASK = "task"
SPLIT = "split"
MERGE = "merge"

SPLIT_IN = "items"
SPLIT_OUT = "item"
MERGE_IN = "item"
MERGE_OUT = "items"


@dataclass(frozen=True)
class Port:
    name: str
    vtype: str
    optional: bool = False


@dataclass(frozen=True)
class Node:
    node_id: str
    kind: str
    inputs: tuple[Port, ...] = ()
    outputs: tuple[Port, ...] = ()
    task_id: str = ""
    element: str = "opaque"  # element vtype for split/merge

    def input_port(self, name: str) -> Port | None:
        return next((p for p in self.inputs if p.name == name), None)

    def output_port(self, name: str) -> Port | None:
        return next((p for p in self.outputs if p.name == name), None)


def task_node(node_id: str, task_id: str = "",
              inputs: dict[str, str] | None = None,
              outputs: dict[str, str] | None = None,
              optional: tuple[str, ...] = ()) -> Node:
    return Node(
        node_id=node_id, kind=TASK, task_id=task_id or node_id,
        inputs=tuple(Port(n, v, n in optional)
                     for n, v in sorted((inputs or {}).items())),
        outputs=tuple(Port(n, v) for n, v in sorted((outputs or {}).items())),
    )


def split_node(node_id: str, element: str = "opaque") -> Node:
    return Node(
        node_id=node_id, kind=SPLIT, element=element,
        inputs=(Port(SPLIT_IN, "list"),),
        outputs=(Port(SPLIT_OUT, element),),
    )


def merge_node(node_id: str, element: str = "opaque") -> Node:
    return Node(
        node_id=node_id, kind=MERGE, element=element,
        inputs=(Port(MERGE_IN, element),),
        outputs=(Port(MERGE_OUT, "list"),),
    )


@dataclass(frozen=True)
class Edge:
    src: str
    src_port: str
    dst: str
    dst_port: str

    def to_dict(self) -> dict:
        return {"from_node": self.src, "from_port": self.src_port,
                "to_node": self.dst, "to_port": self.dst_port}


@dataclass(frozen=True)
class WorkflowGraph:
    nodes: dict[str, Node]
    edges: tuple[Edge, ...]

    @property
    def workflow_digest(self) -> str:
        return digest_of(serialize_ir(self))

    def incoming(self, node_id: str) -> list[Edge]:
        return [e for e in self.edges if e.dst == node_id]

    def outgoing(self, node_id: str) -> list[Edge]:
        return [e for e in self.edges if e.src == node_id]


def graph(nodes: list[Node], edges: list[tuple[str, str, str, str]]) -> WorkflowGraph:
    return WorkflowGraph(
        nodes={n.node_id: n for n in nodes},
        edges=tuple(Edge(*e) for e in edges),
    )


@dataclass(frozen=True)
class Experiment:
    graph: WorkflowGraph
    bindings: dict[str, object] = field(default_factory=dict)  # "node.port" -> value
    requirements: dict[str, dict] = field(default_factory=dict)  # node_id -> cpu/memory

    @property
    def digest(self) -> str:
        return digest_of({
            "workflow": serialize_ir(self.graph),
            "bindings": self.bindings,
            "requirements": self.requirements,
        })


# -- validation ----------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    nodes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message, "nodes": list(self.nodes)}


def toposort(g: WorkflowGraph) -> tuple[list[str], list[str]]:
    """Kahn's algorithm, lexicographic tie-break. Returns (order, leftovers);
    leftovers are the nodes caught in cycles."""
    indegree = {nid: 0 for nid in g.nodes}
    for edge in g.edges:
        if edge.dst in indegree and edge.src in indegree:
            indegree[edge.dst] += 1
    ready = [nid for nid, deg in sorted(indegree.items()) if deg == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for edge in g.outgoing(nid):
            if edge.dst not in indegree:
                continue
            indegree[edge.dst] -= 1
            if indegree[edge.dst] == 0:
                heapq.heappush(ready, edge.dst)
    leftovers = sorted(set(g.nodes) - set(order))
    return order, leftovers


def _edge_endpoint_violations(g: WorkflowGraph) -> list[Violation]:
    out: list[Violation] = []
    for edge in g.edges:
        src = g.nodes.get(edge.src)
        dst = g.nodes.get(edge.dst)
        if src is None:
            out.append(Violation("unknown-node",
                                 f"edge references unknown node {edge.src!r}",
                                 (edge.src,)))
        if dst is None:
            out.append(Violation("unknown-node",
                                 f"edge references unknown node {edge.dst!r}",
                                 (edge.dst,)))
        if src is not None and src.output_port(edge.src_port) is None:
            out.append(Violation("unknown-port",
                                 f"node {edge.src!r} has no output port {edge.src_port!r}",
                                 (edge.src,)))
        if dst is not None and dst.input_port(edge.dst_port) is None:
            out.append(Violation("unknown-port",
                                 f"node {edge.dst!r} has no input port {edge.dst_port!r}",
                                 (edge.dst,)))
    return out


def _vtype_violations(g: WorkflowGraph) -> list[Violation]:
    out: list[Violation] = []
    for edge in g.edges:
        src = g.nodes.get(edge.src)
        dst = g.nodes.get(edge.dst)
        if src is None or dst is None:
            continue
        sport = src.output_port(edge.src_port)
        dport = dst.input_port(edge.dst_port)
        if sport is None or dport is None:
            continue
        if sport.vtype != dport.vtype and dport.vtype != "opaque":
            out.append(Violation(
                "vtype-mismatch",
                f"edge {edge.src}.{edge.src_port} ({sport.vtype}) -> "
                f"{edge.dst}.{edge.dst_port} ({dport.vtype}) is incompatible",
                (edge.src, edge.dst)))
    return out


def _binding_violations(g: WorkflowGraph, bindings: dict[str, object]) -> list[Violation]:
    out: list[Violation] = []
    for nid, node in sorted(g.nodes.items()):
        for port in node.inputs:
            key = f"{nid}.{port.name}"
            edges_in = [e for e in g.edges
                        if e.dst == nid and e.dst_port == port.name]
            bound = len(edges_in) + (1 if key in bindings else 0)
            if bound == 0 and not port.optional:
                out.append(Violation("unbound-input",
                                     f"input {key} is bound by no edge or binding",
                                     (nid,)))
            elif bound > 1:
                out.append(Violation("double-bound",
                                     f"input {key} is bound {bound} times", (nid,)))
    return out


def _scatter_violations(g: WorkflowGraph, order: list[str]) -> list[Violation]:
    out: list[Violation] = []
    context: dict[str, tuple[str, ...]] = {}
    closed_by: dict[str, str] = {}
    for nid in order:
        node = g.nodes[nid]
        incoming = [e for e in g.incoming(nid) if e.src in context]
        contexts = {_out_context(g.nodes[e.src], context[e.src]) for e in incoming}
        if len(contexts) > 1:
            out.append(Violation("ill-nested",
                                 f"node {nid!r} receives edges from different "
                                 "scatter regions", (nid,)))
            context[nid] = sorted(contexts)[0]
            continue
        ctx = contexts.pop() if contexts else ()
        if node.kind == MERGE:
            if not ctx:
                out.append(Violation("ill-nested",
                                     f"merge {nid!r} has no matching split", (nid,)))
                context[nid] = ()
                continue
            split_id = ctx[-1]
            if split_id in closed_by:
                out.append(Violation(
                    "ill-nested",
                    f"split {split_id!r} is closed by both {closed_by[split_id]!r} "
                    f"and {nid!r}", (split_id, nid)))
            closed_by[split_id] = nid
        context[nid] = ctx
        if not g.outgoing(nid) and _out_context(node, ctx):
            open_splits = _out_context(node, ctx)
            out.append(Violation("ill-nested",
                                 f"scatter region(s) {list(open_splits)} never merge",
                                 tuple(open_splits)))
    return out


def _out_context(node: Node, ctx: tuple[str, ...]) -> tuple[str, ...]:
    if node.kind == SPLIT:
        return ctx + (node.node_id,)
    if node.kind == MERGE:
        return ctx[:-1] if ctx else ()
    return ctx


def scatter_contexts(g: WorkflowGraph) -> dict[str, tuple[str, ...]]:
    """Incoming scatter context of each node on an already-valid graph: the
    stack of split node ids whose region the node's inputs arrive from. Task
    nodes with a non-empty context are instantiated once per element; split
    and merge nodes themselves run once (their context is the outer one for
    split, the region being closed for merge)."""
    order, leftovers = toposort(g)
    assert not leftovers, "scatter_contexts requires an acyclic graph"
    context: dict[str, tuple[str, ...]] = {}
    for nid in order:
        ctxs = {_out_context(g.nodes[e.src], context[e.src])
                for e in g.incoming(nid)}
        context[nid] = ctxs.pop() if ctxs else ()
    return context


def validate_graph(g: WorkflowGraph,
                   bindings: dict[str, object] | None = None) -> list[Violation]:
    """Complete list of violations; empty means valid."""
    violations = _edge_endpoint_violations(g)
    violations += _vtype_violations(g)
    violations += _binding_violations(g, bindings or {})
    order, leftovers = toposort(g)
    if leftovers:
        violations.append(Violation(
            "cycle", f"cycle through nodes {leftovers}", tuple(leftovers)))
    else:
        violations += _scatter_violations(g, order)
    return violations


def validate_experiment(experiment: Experiment) -> list[Violation]:
    violations = validate_graph(experiment.graph, experiment.bindings)
    for nid, node in sorted(experiment.graph.nodes.items()):
        if node.kind != TASK:
            continue
        req = experiment.requirements.get(nid)
        if not req or "cpu" not in req or "memory" not in req:
            violations.append(Violation(
                "missing-requirements",
                f"task {nid!r} has no cpu/memory requirements", (nid,)))
    return violations


# -- IR ------------------------------------------------------------------------


def serialize_ir(g: WorkflowGraph) -> dict:
    """Portable JSON IR; canonical under sorted-key serialization."""
    nodes: dict[str, dict] = {}
    for nid, node in sorted(g.nodes.items()):
        if node.kind == TASK:
            nodes[nid] = {
                "kind": TASK,
                "task_id": node.task_id,
                "inputs": [{"name": p.name, "vtype": p.vtype, "optional": p.optional}
                           for p in node.inputs],
                "outputs": [{"name": p.name, "vtype": p.vtype}
                            for p in node.outputs],
            }
        else:
            nodes[nid] = {"kind": node.kind, "element": node.element}
    edges = sorted((e.to_dict() for e in g.edges),
                   key=lambda d: (d["from_node"], d["from_port"],
                                  d["to_node"], d["to_port"]))
    return {"version": IR_VERSION, "nodes": nodes, "edges": edges}


def _require(doc: dict, key: str, kind, location: str):
    if key not in doc:
        raise IrMalformed(f"missing field {key!r}", location)
    value = doc[key]
    if not isinstance(value, kind):
        raise IrMalformed(f"field {key!r} has wrong type", location)
    return value


def parse_ir(doc: dict) -> WorkflowGraph:
    """Parse an IR document; IrVersionUnsupported / IrMalformed on bad input."""
    if not isinstance(doc, dict):
        raise IrMalformed("IR document must be a JSON object", "$")
    version = doc.get("version")
    if version is None:
        raise IrVersionUnsupported("IR document has no version field")
    if version != IR_VERSION:
        raise IrVersionUnsupported(f"unsupported IR version {version!r}")

    raw_nodes = _require(doc, "nodes", dict, "$")
    nodes: dict[str, Node] = {}
    for nid, raw in sorted(raw_nodes.items()):
        loc = f"nodes.{nid}"
        if not isinstance(raw, dict):
            raise IrMalformed("node must be an object", loc)
        kind = _require(raw, "kind", str, loc)
        if kind == TASK:
            inputs = {}
            optional = []
            for p in _require(raw, "inputs", list, loc):
                _check_port(p, loc)
                inputs[p["name"]] = p["vtype"]
                if p.get("optional"):
                    optional.append(p["name"])
            outputs = {}
            for p in _require(raw, "outputs", list, loc):
                _check_port(p, loc)
                outputs[p["name"]] = p["vtype"]
            nodes[nid] = task_node(nid, raw.get("task_id", nid),
                                   inputs, outputs, tuple(optional))
        elif kind == SPLIT:
            nodes[nid] = split_node(nid, _element(raw, loc))
        elif kind == MERGE:
            nodes[nid] = merge_node(nid, _element(raw, loc))
        else:
            raise IrMalformed(f"unknown node kind {kind!r}", loc)

    raw_edges = _require(doc, "edges", list, "$")
    edges: list[Edge] = []
    for pos, raw in enumerate(raw_edges):
        loc = f"edges[{pos}]"
        if not isinstance(raw, dict):
            raise IrMalformed("edge must be an object", loc)
        edges.append(Edge(
            src=_require(raw, "from_node", str, loc),
            src_port=_require(raw, "from_port", str, loc),
            dst=_require(raw, "to_node", str, loc),
            dst_port=_require(raw, "to_port", str, loc),
        ))
    return WorkflowGraph(nodes=nodes, edges=tuple(edges))


def _check_port(p, location: str) -> None:
    if not isinstance(p, dict) or "name" not in p or "vtype" not in p:
        raise IrMalformed("port needs name and vtype", location)
    if p["vtype"] not in VTYPES:
        raise IrMalformed(f"unknown vtype {p['vtype']!r}", location)


def _element(raw: dict, location: str) -> str:
    element = raw.get("element", "opaque")
    if element not in VTYPES:
        raise IrMalformed(f"unknown element vtype {element!r}", location)
    return element
