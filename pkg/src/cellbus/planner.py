"""Plan networked VMs for an experiment and simulate provision/release.

Packing is first-fit-decreasing by cpu (memory as the secondary sort key and
a hard constraint): pre-provisioned pool VMs fill first, then dynamic VMs of
the smallest feasible flavor open on demand. The objective is fewest VMs.

Scatter fan-out is unknown at planning time, so each task inside a split
region reserves ``scatter_width`` concurrent slots; the bus queues instances
beyond that. Split/merge nodes are orchestrator bookkeeping and get no slot.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DoubleRelease, Unsatisfiable, UnknownHandle
from .flow import TASK, Experiment, scatter_contexts
from .ledger import KeyedSigner, Ledger

PRE_PROVISIONED = "pre_provisioned"
DYNAMIC = "dynamic"


@dataclass(frozen=True)
class VmFlavor:
    name: str
    cpu: int
    memory: int
    provider: str = "local-sim"

    def __post_init__(self):
        if self.cpu < 1 or self.memory < 1:
            raise ValueError("flavors need cpu >= 1 and memory >= 1")

    def to_dict(self) -> dict:
        return {"name": self.name, "cpu": self.cpu,
                "memory": self.memory, "provider": self.provider}


@dataclass(frozen=True)
class PlannedVm:
    vm_id: str
    flavor: VmFlavor
    origin: str  # pre_provisioned | dynamic


@dataclass(frozen=True)
class InfraPlan:
    vms: tuple[PlannedVm, ...]
    assignment: dict[str, str]  # slot key (node_id or node_id#s<k>) -> vm_id
    slots: dict[str, dict]      # vm_id -> residual {"cpu", "memory"}

    def vm(self, vm_id: str) -> PlannedVm:
        return next(v for v in self.vms if v.vm_id == vm_id)

    def dynamic_vms(self) -> list[PlannedVm]:
        return [v for v in self.vms if v.origin == DYNAMIC]

    def to_dict(self) -> dict:
        return {
            "vms": [{"vm_id": v.vm_id, "flavor": v.flavor.to_dict(),
                     "origin": v.origin} for v in self.vms],
            "assignment": dict(sorted(self.assignment.items())),
            "slots": {k: dict(v) for k, v in sorted(self.slots.items())},
        }


def slot_keys_for(experiment: Experiment, scatter_width: int) -> list[tuple[str, dict]]:
    """Slot keys with their requirements, one per planned concurrent instance."""
    contexts = scatter_contexts(experiment.graph)
    slots: list[tuple[str, dict]] = []
    for nid, node in sorted(experiment.graph.nodes.items()):
        if node.kind != TASK:
            continue
        req = experiment.requirements[nid]
        if contexts[nid]:
            for k in range(scatter_width):
                slots.append((f"{nid}#s{k}", req))
        else:
            slots.append((nid, req))
    return slots


def plan_infrastructure(
    experiment: Experiment,
    flavors: list[VmFlavor],
    pool: list[VmFlavor] | None = None,
    scatter_width: int = 4,
) -> InfraPlan:
    """Deterministic first-fit-decreasing packing; Unsatisfiable when some
    task exceeds every flavor."""
    slots = slot_keys_for(experiment, scatter_width)
    ordered = sorted(slots, key=lambda s: (-s[1]["cpu"], -s[1]["memory"], s[0]))
    flavor_order = sorted(flavors, key=lambda f: (f.cpu, f.memory, f.name))

    vms: list[PlannedVm] = []
    residual: dict[str, dict] = {}
    for i, flavor in enumerate(pool or []):
        vm = PlannedVm(vm_id=f"pool-{i}", flavor=flavor, origin=PRE_PROVISIONED)
        vms.append(vm)
        residual[vm.vm_id] = {"cpu": flavor.cpu, "memory": flavor.memory}

    assignment: dict[str, str] = {}
    dynamic_count = 0
    for key, req in ordered:
        placed = None
        for vm in vms:
            free = residual[vm.vm_id]
            if free["cpu"] >= req["cpu"] and free["memory"] >= req["memory"]:
                placed = vm.vm_id
                break
        if placed is None:
            flavor = next(
                (f for f in flavor_order
                 if f.cpu >= req["cpu"] and f.memory >= req["memory"]), None)
            if flavor is None:
                raise Unsatisfiable(
                    f"task slot {key!r} (cpu={req['cpu']}, memory={req['memory']}) "
                    "exceeds every flavor", task=key)
            vm = PlannedVm(vm_id=f"dyn-{dynamic_count}", flavor=flavor, origin=DYNAMIC)
            dynamic_count += 1
            vms.append(vm)
            residual[vm.vm_id] = {"cpu": flavor.cpu, "memory": flavor.memory}
            placed = vm.vm_id
        residual[placed]["cpu"] -= req["cpu"]
        residual[placed]["memory"] -= req["memory"]
        assignment[key] = placed

    return InfraPlan(vms=tuple(vms), assignment=assignment, slots=residual)


# -- simulated provision/release -------------------------------------------


@dataclass
class LiveInfra:
    handle_id: str
    plan: InfraPlan
    vm_states: dict[str, str]  # vm_id -> created | ready | released
    released: bool = False


class Provisioner:
    """Simulated IaaS: VMs transition created -> ready; releases are logged."""

    def __init__(self, ledger: Ledger | None = None,
                 signer: KeyedSigner | None = None):
        self._ledger = ledger
        self._signer = signer
        self._handles: dict[str, LiveInfra] = {}
        self._counter = 0

    def _log(self, event: dict) -> None:
        if self._ledger is not None and self._signer is not None:
            self._ledger.append_event(event, self._signer)

    def provision(self, plan: InfraPlan) -> LiveInfra:
        handle = LiveInfra(
            handle_id=f"infra-{self._counter}",
            plan=plan,
            vm_states={vm.vm_id: "created" for vm in plan.vms},
        )
        self._counter += 1
        self._handles[handle.handle_id] = handle
        for vm in plan.vms:
            handle.vm_states[vm.vm_id] = "ready"
            if vm.origin == DYNAMIC:
                self._log({"type": "Provisioned", "vm_id": vm.vm_id,
                           "flavor": vm.flavor.name, "origin": vm.origin})
        return handle

    def release(self, handle: LiveInfra, scope: str = "dynamic_only") -> None:
        if handle.handle_id not in self._handles:
            raise UnknownHandle(f"handle {handle.handle_id!r} is not managed here")
        if handle.released:
            raise DoubleRelease(f"handle {handle.handle_id!r} already released")
        if scope not in ("dynamic_only", "all"):
            raise ValueError(f"unknown release scope {scope!r}")
        for vm in handle.plan.vms:
            if scope == "dynamic_only" and vm.origin != DYNAMIC:
                continue
            handle.vm_states[vm.vm_id] = "released"
            self._log({"type": "Released", "vm_id": vm.vm_id,
                       "flavor": vm.flavor.name, "origin": vm.origin})
        handle.released = True
