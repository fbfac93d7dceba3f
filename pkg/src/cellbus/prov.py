"""PROV-style capture of a finished run: entities (data objects), activities
(task instances), agents (user + orchestrator), and the four relation kinds
used / wasGeneratedBy / wasDerivedFrom / wasAssociatedWith.

Built after run termination from the immutable run report; read-only after.
Anomaly flagging is a per-node-family z-score over instance durations,
computed in exact rational arithmetic so threshold equality is not lost to
floating point (population std; std = 0 means nothing can be flagged).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import RunNotTerminal, TooFewSamples, UnknownEntity


def _entity(digest: str) -> str:
    return f"entity:{digest}"


def _activity(instance_id: str) -> str:
    return f"activity:{instance_id}"


def _agent(name: str) -> str:
    return f"agent:{name}"


@dataclass(frozen=True)
class ProvGraph:
    entities: dict[str, dict]
    activities: dict[str, dict]
    agents: dict[str, dict]
    used: tuple[tuple[str, str], ...]                # (activity, entity)
    was_generated_by: tuple[tuple[str, str], ...]    # (entity, activity)
    was_derived_from: tuple[tuple[str, str], ...]    # (entity, source entity)
    was_associated_with: tuple[tuple[str, str], ...]  # (activity, agent)

    def to_prov_json(self) -> dict:
        doc: dict = {
            "entity": {k: dict(v) for k, v in sorted(self.entities.items())},
            "activity": {k: dict(v) for k, v in sorted(self.activities.items())},
            "agent": {k: dict(v) for k, v in sorted(self.agents.items())},
            "used": {}, "wasGeneratedBy": {}, "wasDerivedFrom": {},
            "wasAssociatedWith": {},
        }
        for i, (act, ent) in enumerate(self.used):
            doc["used"][f"_:u{i}"] = {"prov:activity": act, "prov:entity": ent}
        for i, (ent, act) in enumerate(self.was_generated_by):
            doc["wasGeneratedBy"][f"_:g{i}"] = {"prov:entity": ent,
                                                "prov:activity": act}
        for i, (ent, src) in enumerate(self.was_derived_from):
            doc["wasDerivedFrom"][f"_:d{i}"] = {"prov:generatedEntity": ent,
                                                "prov:usedEntity": src}
        for i, (act, agent) in enumerate(self.was_associated_with):
            doc["wasAssociatedWith"][f"_:a{i}"] = {"prov:activity": act,
                                                   "prov:agent": agent}
        return doc


def _report_dict(run) -> dict:
    return run if isinstance(run, dict) else run.to_dict()


def export_prov(run) -> ProvGraph:
    """One activity per instance; entities for every input/output object."""
    report = _report_dict(run)
    if report.get("status") not in ("Succeeded", "Failed"):
        raise RunNotTerminal(f"run {report.get('run_id')} is not terminal")

    user = _agent(report.get("user", "user"))
    orchestrator = _agent(report.get("orchestrator", "orchestrator"))
    agents = {
        user: {"prov:type": "prov:Person"},
        orchestrator: {"prov:type": "prov:SoftwareAgent"},
    }

    entities: dict[str, dict] = {}
    activities: dict[str, dict] = {}
    used: list[tuple[str, str]] = []
    generated: list[tuple[str, str]] = []
    derived: list[tuple[str, str]] = []
    associated: list[tuple[str, str]] = []

    for iid, inst in sorted(report["instances"].items()):
        act = _activity(iid)
        activities[act] = {
            "node": inst["node_id"],
            "state": inst["state"],
            "prov:startTime": inst["start"],
            "prov:endTime": inst["end"],
        }
        associated.append((act, orchestrator))
        associated.append((act, user))
        input_entities = []
        for port, digest in sorted(inst["inputs"].items()):
            ent = _entity(digest)
            entities.setdefault(ent, {"digest": digest})
            used.append((act, ent))
            input_entities.append(ent)
        for port, digest in sorted(inst["outputs"].items()):
            ent = _entity(digest)
            entities.setdefault(ent, {"digest": digest})
            # content-addressed dedup: the first generator wins, a second
            # producer of identical bytes re-derives an existing entity
            if all(e != ent for e, _ in generated):
                generated.append((ent, act))
                for src in input_entities:
                    if src != ent:
                        derived.append((ent, src))

    graph = ProvGraph(
        entities=entities,
        activities=activities,
        agents=agents,
        used=tuple(sorted(set(used))),
        was_generated_by=tuple(sorted(generated)),
        was_derived_from=tuple(sorted(set(derived))),
        was_associated_with=tuple(sorted(set(associated))),
    )
    _assert_acyclic(graph)
    return graph


def _assert_acyclic(graph: ProvGraph) -> None:
    parents: dict[str, list[str]] = {}
    for ent, src in graph.was_derived_from:
        parents.setdefault(ent, []).append(src)
    seen: dict[str, int] = {}  # 0 visiting, 1 done

    def visit(node: str) -> None:
        state = seen.get(node)
        if state == 1:
            return
        if state == 0:
            raise ValueError("provenance derivation graph has a cycle")
        seen[node] = 0
        for parent in parents.get(node, ()):
            visit(parent)
        seen[node] = 1

    for node in list(parents):
        visit(node)


def trace_derivation(graph: ProvGraph, entity: str) -> list[list[str]]:
    """All maximal backward derivation paths from ``entity`` to source
    entities, lexicographically ordered."""
    key = entity if entity.startswith("entity:") else _entity(entity)
    if key not in graph.entities:
        raise UnknownEntity(f"entity {entity!r} not in provenance graph")
    parents: dict[str, list[str]] = {}
    for ent, src in graph.was_derived_from:
        parents.setdefault(ent, []).append(src)

    paths: list[list[str]] = []
    stack: list[tuple[str, list[str]]] = [(key, [key])]
    while stack:
        node, path = stack.pop()
        sources = sorted(parents.get(node, ()))
        if not sources:
            paths.append(path)
            continue
        for src in reversed(sources):
            stack.append((src, path + [src]))
    return sorted(paths)


def flag_anomalies(run, z_threshold: float = 3.0) -> list[dict]:
    """Instances whose duration deviates from their node family's mean by
    more than ``z_threshold`` population standard deviations.

    The comparison dev^2 >= z^2 * var runs in exact rationals, so an
    instance sitting exactly on the threshold is flagged.
    """
    report = _report_dict(run)
    timed = [
        (iid, inst)
        for iid, inst in sorted(report["instances"].items())
        if inst["start"] is not None and inst["end"] is not None
    ]
    if len(timed) < 3:
        raise TooFewSamples(
            f"anomaly detection needs >= 3 timed instances, got {len(timed)}")

    by_family: dict[str, list[tuple[str, Fraction]]] = {}
    for iid, inst in timed:
        duration = Fraction(inst["end"]) - Fraction(inst["start"])
        by_family.setdefault(inst["node_id"], []).append((iid, duration))

    z = Fraction(z_threshold)
    flags: list[dict] = []
    for family, members in sorted(by_family.items()):
        n = len(members)
        mean = sum(d for _, d in members) / n
        var = sum((d - mean) ** 2 for _, d in members) / n
        if var == 0:
            continue
        for iid, duration in members:
            dev = abs(duration - mean)
            if dev * dev >= z * z * var:
                flags.append({
                    "instance": iid,
                    "node_id": family,
                    "duration": float(duration),
                    "z": float(dev / Fraction(math.sqrt(var))),
                })
    return flags
