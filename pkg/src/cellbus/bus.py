"""Schedule and execute an experiment over planned infrastructure.

Single orchestration loop, pluggable executor: the simulated executor runs
a discrete-event virtual clock (deterministic, used by tests and the demo),
the thread executor runs wall-clock concurrency for real workloads. Runners
execute concurrently up to per-VM slot capacity; split expansion happens at
runtime from the actual list length; merge collects index-ordered.

Split and merge are zero-duration orchestrator actions but are recorded as
instances: they get states, timings, ledger events, and provenance
activities like any task instance.
"""

from __future__ import annotations

import heapq
import json
import subprocess
import sys
import tempfile
import time as _time
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path

from .container import TaskSpec
from .digests import digest_of
from .errors import NestedScatterUnsupported, NotAList, RunnerMissing
from .flow import (MERGE, MERGE_IN, MERGE_OUT, SPLIT, SPLIT_OUT, TASK,
                   Experiment, scatter_contexts, toposort, validate_experiment)
from .ledger import KeyedSigner, Ledger
from .mesh import FsStore, Store
from .planner import InfraPlan, Provisioner

PENDING = "Pending"
RUNNING = "Running"
SUCCEEDED = "Succeeded"
FAILED = "Failed"
SKIPPED = "Skipped"


class SimulatedClock:
    """Virtual time owned by the simulated executor."""

    def __init__(self, start: float = 0.0):
        self._now = start

    def now(self) -> float:
        return self._now

    def advance_to(self, t: float) -> None:
        assert t >= self._now
        self._now = t


# -- runners ---------------------------------------------------------------


class NativeRunner:
    """In-process function registered by name; duration feeds the virtual
    clock and may be a float or callable(instance_id, inputs) -> float."""

    def __init__(self, fn, duration=1.0):
        self._fn = fn
        self._duration = duration

    def run(self, instance_id: str, inputs: dict) -> dict:
        return self._fn(inputs)

    def duration(self, instance_id: str, inputs: dict) -> float:
        if callable(self._duration):
            return self._duration(instance_id, inputs)
        return self._duration


class ChaosRunner:
    """Always (or the first ``fail_times``) fails; for retry/skip tests."""

    def __init__(self, fail_times: int | None = None, duration: float = 1.0):
        self._fail_times = fail_times
        self._failed = 0
        self._duration = duration

    def run(self, instance_id: str, inputs: dict) -> dict:
        if self._fail_times is None or self._failed < self._fail_times:
            self._failed += 1
            raise RuntimeError("chaos runner failure")
        return {}

    def duration(self, instance_id: str, inputs: dict) -> float:
        return self._duration


class SubprocessRunner:
    """Executes a TaskSpec's generated wrapper in a child interpreter.

    Requires the cellbus_shim package on the child's path and a filesystem
    mesh the child can reach. Inputs with scalar/list vtypes are inlined in
    the manifest; everything else travels as a mesh reference.
    """

    def __init__(self, spec: TaskSpec, mesh: FsStore,
                 python: str = sys.executable, duration: float = 1.0):
        self.spec = spec
        self._mesh = mesh
        self._python = python
        self._duration = duration

    def duration(self, instance_id: str, inputs: dict) -> float:
        return self._duration

    def run(self, instance_id: str, inputs: dict) -> dict:
        inline = {"integer", "real", "text", "boolean", "list"}
        vtypes = {v.name: v.vtype
                  for v in self.spec.interface.inputs | self.spec.interface.params}
        manifest_inputs = {}
        for name, value in inputs.items():
            if vtypes.get(name, "opaque") in inline:
                manifest_inputs[name] = value
            else:
                ref = self._mesh.put_json(value)
                manifest_inputs[name] = {"$dataref": ref.digest}
        with tempfile.TemporaryDirectory(prefix="cellbus-task-") as tmp:
            tmpdir = Path(tmp)
            wrapper = tmpdir / "wrapper.py"
            wrapper.write_text(self.spec.wrapper_source, encoding="utf-8")
            in_path = tmpdir / "input.manifest.json"
            out_path = tmpdir / "output.manifest.json"
            in_path.write_text(json.dumps({
                "mesh_dir": str(self._mesh.root),
                "inputs": manifest_inputs,
            }), encoding="utf-8")
            proc = subprocess.run(
                [self._python, str(wrapper), str(in_path), str(out_path)],
                capture_output=True, text=True)
            if not out_path.exists():
                raise RuntimeError(
                    f"wrapper produced no output manifest (exit {proc.returncode}): "
                    f"{proc.stderr.strip()}")
            manifest = json.loads(out_path.read_text(encoding="utf-8"))
        if manifest.get("status") != "ok":
            error = manifest.get("error") or {}
            raise RuntimeError(
                f"task failed (exit {proc.returncode}): {error.get('message')}")
        outputs = {}
        for name, value in manifest.get("outputs", {}).items():
            if isinstance(value, dict) and "$dataref" in value:
                outputs[name] = self._mesh.get_json(value["$dataref"])
            else:
                outputs[name] = value
        return outputs


class RunnerRegistry:
    def __init__(self, runners: dict[str, object] | None = None):
        self._runners = dict(runners or {})

    def register(self, task_id: str, runner) -> None:
        self._runners[task_id] = runner

    def resolve(self, task_id: str):
        if task_id not in self._runners:
            raise RunnerMissing(f"no runner registered for task {task_id!r}")
        return self._runners[task_id]


# -- executors ---------------------------------------------------------------


class SimulatedExecutor:
    """Discrete-event execution: work is computed at submit time, completion
    is scheduled on the virtual clock."""

    def __init__(self, clock: SimulatedClock | None = None):
        self.clock = clock or SimulatedClock()
        self._heap: list[tuple[float, int, str, object, BaseException | None, float]] = []
        self._seq = 0

    def now(self) -> float:
        return self.clock.now()

    def submit(self, instance_id: str, fn, duration: float) -> None:
        start = self.clock.now()
        result, error = None, None
        try:
            result = fn()
        except Exception as exc:  # runner failures become Failed instances
            error = exc
        heapq.heappush(self._heap,
                       (start + duration, self._seq, instance_id, result, error, start))
        self._seq += 1

    def pending(self) -> int:
        return len(self._heap)

    def wait_one(self):
        finish, _, instance_id, result, error, start = heapq.heappop(self._heap)
        self.clock.advance_to(finish)
        return instance_id, result, error, start, finish


class ThreadExecutor:
    """Wall-clock execution on a thread pool."""

    def __init__(self, max_workers: int = 8):
        self._pool = ThreadPoolExecutor(max_workers=max_workers)
        self._futures: dict[Future, tuple[str, float]] = {}

    def now(self) -> float:
        return _time.time()

    def submit(self, instance_id: str, fn, duration: float) -> None:
        future = self._pool.submit(fn)
        self._futures[future] = (instance_id, _time.time())

    def pending(self) -> int:
        return len(self._futures)

    def wait_one(self):
        done, _ = wait(list(self._futures), return_when=FIRST_COMPLETED)
        future = next(iter(done))
        instance_id, start = self._futures.pop(future)
        result, error = None, None
        try:
            result = future.result()
        except Exception as exc:
            error = exc
        return instance_id, result, error, start, _time.time()

    def shutdown(self) -> None:
        self._pool.shutdown(wait=False)


# -- run records ---------------------------------------------------------------


@dataclass
class InstanceRecord:
    instance_id: str
    node_id: str
    scatter_index: int | None
    state: str = PENDING
    vm_id: str | None = None
    start: float | None = None
    end: float | None = None
    attempts: int = 0
    inputs: dict[str, str] = field(default_factory=dict)   # port -> digest
    outputs: dict[str, str] = field(default_factory=dict)  # port -> digest

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "node_id": self.node_id,
            "scatter_index": self.scatter_index,
            "state": self.state,
            "vm_id": self.vm_id,
            "start": self.start,
            "end": self.end,
            "attempts": self.attempts,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
        }


@dataclass
class RunReport:
    run_id: str
    experiment_digest: str
    status: str
    instances: dict[str, InstanceRecord]
    outputs: dict[str, str]            # sink "node.port" -> digest
    plan: dict
    events: list[dict]
    user: str
    orchestrator: str

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "experiment_digest": self.experiment_digest,
            "status": self.status,
            "instances": {k: v.to_dict() for k, v in sorted(self.instances.items())},
            "outputs": dict(sorted(self.outputs.items())),
            "plan": self.plan,
            "events": self.events,
            "user": self.user,
            "orchestrator": self.orchestrator,
        }


def expand_split(list_value, list_ref_digest: str | None = None) -> list[tuple[int, object]]:
    """One (index, element) binding per list element, index-ordered."""
    if not isinstance(list_value, list):
        raise NotAList(
            f"split input {list_ref_digest or ''} is {type(list_value).__name__}, not a list")
    return list(enumerate(list_value))


# -- the bus -------------------------------------------------------------------


class Bus:
    """Owns run state through a single orchestration context."""

    def __init__(
        self,
        mesh: Store,
        ledger: Ledger | None = None,
        signer: KeyedSigner | None = None,
        executor=None,
        retries: int = 1,
        user: str = "local-user",
        orchestrator: str = "cellbus-bus",
        provisioner: Provisioner | None = None,
        run_id: str | None = None,
    ):
        self.mesh = mesh
        self.ledger = ledger
        self.signer = signer
        self.executor = executor or SimulatedExecutor()
        self.retries = retries
        self.user = user
        self.orchestrator = orchestrator
        self.provisioner = provisioner or Provisioner(ledger, signer)
        self._run_id = run_id

    # -- ledger + event helpers -------------------------------------------

    def _ledger_event(self, event: dict) -> None:
        if self.ledger is not None and self.signer is not None:
            self.ledger.append_event(event, self.signer)

    # -- main entry point ---------------------------------------------------

    def run_experiment(self, experiment: Experiment, plan: InfraPlan,
                       runners: RunnerRegistry,
                       scatter_width: int = 4) -> RunReport:
        g = experiment.graph
        violations = validate_experiment(experiment)
        if violations:
            raise ValueError(
                "experiment is invalid: "
                + "; ".join(v.message for v in violations))
        contexts = scatter_contexts(g)
        if any(len(ctx) > 1 for ctx in contexts.values()):
            raise NestedScatterUnsupported(
                "runtime supports single-level scatter regions only")
        for nid, node in g.nodes.items():
            if node.kind == TASK:
                runners.resolve(node.task_id)  # RunnerMissing up front

        run_id = self._run_id or f"run-{digest_of([experiment.digest, _time.time()])[:12]}"
        state = _RunState(self, experiment, plan, runners, contexts,
                          scatter_width, run_id)
        return state.execute()


class _RunState:
    """One experiment execution; never reused."""

    def __init__(self, bus: Bus, experiment: Experiment, plan: InfraPlan,
                 runners: RunnerRegistry, contexts, scatter_width, run_id):
        self.bus = bus
        self.experiment = experiment
        self.g = experiment.graph
        self.plan = plan
        self.runners = runners
        self.contexts = contexts
        self.scatter_width = scatter_width
        self.run_id = run_id

        self.instances: dict[str, InstanceRecord] = {}
        self.port_data: dict[str, str] = {}      # "node.port[#k]" -> digest
        self.fan_out: dict[str, int] = {}        # split node -> length
        self.node_failed: set[str] = set()
        self.node_skipped: set[str] = set()
        self.events: list[dict] = []
        # runtime capacity tracking starts from full flavor capacity; the
        # plan's residual slots only witness that the reservation fits
        self.residual = {vm.vm_id: {"cpu": vm.flavor.cpu,
                                    "memory": vm.flavor.memory}
                         for vm in self.plan.vms}
        # scattered instances additionally hold their planned slot, so a
        # region never runs wider than scatter_width at once
        self.slot_busy: set[str] = set()
        order, _ = toposort(self.g)
        self.layer: dict[str, int] = {}
        for nid in order:
            preds = [e.src for e in self.g.incoming(nid)]
            self.layer[nid] = 1 + max((self.layer[p] for p in preds), default=-1)

    # -- small helpers ------------------------------------------------------

    def _event(self, kind: str, **fields) -> None:
        record = {"time": self.bus.executor.now(), "kind": kind, **fields}
        self.events.append(record)

    def _instance_ledger(self, instance_id: str, phase: str) -> None:
        self.bus._ledger_event({
            "type": "InstanceEvent", "run_id": self.run_id,
            "instance": instance_id, "phase": phase,
        })

    def _put_value(self, value) -> str:
        return self.bus.mesh.put_json(value).digest

    def _get_value(self, digest: str):
        return self.bus.mesh.get_json(digest)

    def _requirement(self, node_id: str) -> dict:
        return self.experiment.requirements.get(node_id, {"cpu": 1, "memory": 1})

    def _slot_key(self, record: InstanceRecord) -> str | None:
        if record.scatter_index is None:
            return None
        return f"{record.node_id}#s{record.scatter_index % self.scatter_width}"

    def _slot_vm(self, node_id: str, scatter_index: int | None) -> str | None:
        if self.g.nodes[node_id].kind != TASK:
            return None  # split/merge run on the orchestrator
        if scatter_index is None:
            return self.plan.assignment[node_id]
        slot = f"{node_id}#s{scatter_index % self.scatter_width}"
        return self.plan.assignment[slot]

    # -- instance lifecycle --------------------------------------------------

    def _make_instance(self, node_id: str, scatter_index: int | None) -> InstanceRecord:
        iid = node_id if scatter_index is None else f"{node_id}#{scatter_index}"
        record = InstanceRecord(
            instance_id=iid, node_id=node_id, scatter_index=scatter_index,
            vm_id=self._slot_vm(node_id, scatter_index))
        self.instances[iid] = record
        return record

    def _input_keys(self, node_id: str, scatter_index: int | None) -> dict[str, str]:
        """Map each input port to the port_data key feeding it."""
        keys: dict[str, str] = {}
        node = self.g.nodes[node_id]
        for port in node.inputs:
            binding_key = f"{node_id}.{port.name}"
            edge = next((e for e in self.g.edges
                         if e.dst == node_id and e.dst_port == port.name), None)
            if edge is None:
                keys[port.name] = binding_key  # experiment binding
                continue
            src_ctx = self.contexts[edge.src]
            src_kind = self.g.nodes[edge.src].kind
            scattered_src = bool(src_ctx) or src_kind == SPLIT
            if scattered_src and scatter_index is not None:
                keys[port.name] = f"{edge.src}.{edge.src_port}#{scatter_index}"
            else:
                keys[port.name] = f"{edge.src}.{edge.src_port}"
        return keys

    def _ready(self, record: InstanceRecord) -> bool:
        keys = self._input_keys(record.node_id, record.scatter_index)
        return all(k in self.port_data for k in keys.values())

    def _fits(self, record: InstanceRecord) -> bool:
        if record.vm_id is None:
            return True
        slot = self._slot_key(record)
        if slot is not None and slot in self.slot_busy:
            return False
        req = self._requirement(record.node_id)
        free = self.residual[record.vm_id]
        return free["cpu"] >= req["cpu"] and free["memory"] >= req["memory"]

    def _occupy(self, record: InstanceRecord) -> None:
        if record.vm_id is None:
            return
        slot = self._slot_key(record)
        if slot is not None:
            self.slot_busy.add(slot)
        req = self._requirement(record.node_id)
        self.residual[record.vm_id]["cpu"] -= req["cpu"]
        self.residual[record.vm_id]["memory"] -= req["memory"]

    def _vacate(self, record: InstanceRecord) -> None:
        if record.vm_id is None:
            return
        slot = self._slot_key(record)
        if slot is not None:
            self.slot_busy.discard(slot)
        req = self._requirement(record.node_id)
        self.residual[record.vm_id]["cpu"] += req["cpu"]
        self.residual[record.vm_id]["memory"] += req["memory"]

    # -- seeding -------------------------------------------------------------

    def _seed(self) -> None:
        for key, value in self.experiment.bindings.items():
            if isinstance(value, dict) and "$dataref" in value:
                self.port_data[key] = value["$dataref"]
            else:
                self.port_data[key] = self._put_value(value)
        for nid, node in self.g.nodes.items():
            if node.kind == TASK and not self.contexts[nid]:
                self._make_instance(nid, None)
        # splits/merges at top level materialize immediately; scattered ones
        # would need nested regions, which the runtime rejects upstream
        for nid, node in self.g.nodes.items():
            if node.kind in (SPLIT, MERGE):
                self._make_instance(nid, None)

    # -- orchestrator actions --------------------------------------------------

    def _run_split(self, record: InstanceRecord) -> None:
        keys = self._input_keys(record.node_id, None)
        digest = self.port_data[keys["items"]]
        record.inputs = {"items": digest}
        value = self._get_value(digest)
        now = self.bus.executor.now()
        record.start = record.end = now
        try:
            elements = expand_split(value, digest)
        except NotAList:
            record.state = FAILED
            record.attempts += 1
            self._event("instance-failed", instance=record.instance_id,
                        vm=None, error="split input is not a list")
            self._instance_ledger(record.instance_id, "failed")
            self._skip_downstream(record.node_id)
            return
        self.fan_out[record.node_id] = len(elements)
        for index, element in elements:
            digest_k = self._put_value(element)
            self.port_data[f"{record.node_id}.{SPLIT_OUT}#{index}"] = digest_k
            record.outputs[f"{SPLIT_OUT}#{index}"] = digest_k
        # the scattered region's task instances now exist
        region_nodes = [nid for nid, ctx in self.contexts.items()
                        if ctx == (record.node_id,)
                        and self.g.nodes[nid].kind == TASK]
        for nid in sorted(region_nodes):
            for index, _ in elements:
                self._make_instance(nid, index)
        record.state = SUCCEEDED
        record.attempts = 1
        self._event("instance-succeeded", instance=record.instance_id, vm=None)
        self._instance_ledger(record.instance_id, "succeeded")

    def _merge_sources(self, node_id: str) -> tuple[str, str, str]:
        edge = next(e for e in self.g.edges if e.dst == node_id)
        split_id = self.contexts[node_id][-1]
        return edge.src, edge.src_port, split_id

    def _merge_ready(self, record: InstanceRecord) -> bool:
        if not self.contexts[record.node_id]:
            return False  # ill-nested; validation rejects earlier
        src, src_port, split_id = self._merge_sources(record.node_id)
        if split_id not in self.fan_out:
            return False
        n = self.fan_out[split_id]
        if n == 0:
            return True
        return all(f"{src}.{src_port}#{k}" in self.port_data for k in range(n))

    def _run_merge(self, record: InstanceRecord) -> None:
        src, src_port, split_id = self._merge_sources(record.node_id)
        n = self.fan_out[split_id]
        now = self.bus.executor.now()
        record.start = record.end = now
        values = []
        for k in range(n):
            digest = self.port_data[f"{src}.{src_port}#{k}"]
            record.inputs[f"{MERGE_IN}#{k}"] = digest
            values.append(self._get_value(digest))
        digest = self._put_value(values)
        self.port_data[f"{record.node_id}.{MERGE_OUT}"] = digest
        record.outputs = {MERGE_OUT: digest}
        record.state = SUCCEEDED
        record.attempts = 1
        self._event("instance-succeeded", instance=record.instance_id, vm=None)
        self._instance_ledger(record.instance_id, "succeeded")

    # -- failure propagation ---------------------------------------------------

    def _downstream_nodes(self, node_id: str) -> set[str]:
        out: set[str] = set()
        frontier = [node_id]
        while frontier:
            nid = frontier.pop()
            for edge in self.g.outgoing(nid):
                if edge.dst not in out:
                    out.add(edge.dst)
                    frontier.append(edge.dst)
        return out

    def _skip_downstream(self, node_id: str) -> None:
        self.node_failed.add(node_id)
        for nid in sorted(self._downstream_nodes(node_id)):
            self.node_skipped.add(nid)
            for record in self.instances.values():
                if record.node_id == nid and record.state == PENDING:
                    record.state = SKIPPED
                    self._event("instance-skipped", instance=record.instance_id)
                    self._instance_ledger(record.instance_id, "skipped")

    # -- scheduling loop ---------------------------------------------------------

    def _eligible(self) -> list[InstanceRecord]:
        out = []
        for record in self.instances.values():
            if record.state != PENDING:
                continue
            if record.node_id in self.node_skipped:
                continue
            kind = self.g.nodes[record.node_id].kind
            if kind == MERGE:
                if self._merge_ready(record):
                    out.append(record)
            elif self._ready(record):
                out.append(record)
        out.sort(key=lambda r: (self.layer[r.node_id],
                                r.scatter_index if r.scatter_index is not None else -1,
                                r.node_id))
        return out

    def _start_task(self, record: InstanceRecord) -> None:
        node = self.g.nodes[record.node_id]
        keys = self._input_keys(record.node_id, record.scatter_index)
        record.inputs = {port: self.port_data[key] for port, key in keys.items()}
        inputs = {port: self._get_value(digest)
                  for port, digest in record.inputs.items()}
        runner = self.runners.resolve(node.task_id)
        record.state = RUNNING
        record.attempts += 1
        if record.start is None:
            record.start = self.bus.executor.now()
        self._occupy(record)
        self._event("instance-started", instance=record.instance_id,
                    vm=record.vm_id, attempt=record.attempts)
        if record.attempts == 1:
            self._instance_ledger(record.instance_id, "started")
        duration = runner.duration(record.instance_id, inputs) \
            if hasattr(runner, "duration") else 1.0
        self.bus.executor.submit(
            record.instance_id,
            lambda r=runner, iid=record.instance_id, ins=inputs: r.run(iid, ins),
            duration)

    def _complete(self, instance_id: str, result, error, start: float,
                  end: float) -> None:
        record = self.instances[instance_id]
        self._vacate(record)
        record.end = end
        if error is None:
            node = self.g.nodes[record.node_id]
            outputs = result or {}
            for port in node.outputs:
                if port.name not in outputs:
                    error = RuntimeError(
                        f"runner produced no output {port.name!r}")
                    break
        if error is not None:
            if record.attempts <= self.bus.retries:
                record.state = PENDING
                self._event("instance-retried", instance=record.instance_id,
                            vm=record.vm_id, error=str(error))
                self._instance_ledger(record.instance_id, "retried")
                return
            record.state = FAILED
            self._event("instance-failed", instance=record.instance_id,
                        vm=record.vm_id, error=str(error))
            self._instance_ledger(record.instance_id, "failed")
            self._skip_downstream(record.node_id)
            return
        suffix = "" if record.scatter_index is None else f"#{record.scatter_index}"
        for port_name, value in (result or {}).items():
            digest = self._put_value(value)
            record.outputs[port_name] = digest
            self.port_data[f"{record.node_id}.{port_name}{suffix}"] = digest
        record.state = SUCCEEDED
        self._event("instance-succeeded", instance=record.instance_id,
                    vm=record.vm_id)
        self._instance_ledger(record.instance_id, "succeeded")

    def execute(self) -> RunReport:
        bus = self.bus
        bus._ledger_event({"type": "RunStarted", "run_id": self.run_id,
                           "experiment": self.experiment.digest})
        handle = bus.provisioner.provision(self.plan)
        self._seed()
        self._event("run-started", run=self.run_id)

        while True:
            progressed = True
            while progressed:
                progressed = False
                for record in self._eligible():
                    kind = self.g.nodes[record.node_id].kind
                    if kind == SPLIT:
                        self._run_split(record)
                        progressed = True
                    elif kind == MERGE:
                        self._run_merge(record)
                        progressed = True
                    elif self._fits(record):
                        self._start_task(record)
            if bus.executor.pending() == 0:
                break
            self._complete(*bus.executor.wait_one())

        # anything still pending is unreachable (upstream failed/skipped)
        for record in self.instances.values():
            if record.state == PENDING:
                record.state = SKIPPED
                self._event("instance-skipped", instance=record.instance_id)
                self._instance_ledger(record.instance_id, "skipped")

        status = SUCCEEDED if all(
            r.state == SUCCEEDED for r in self.instances.values()) else FAILED
        bus.provisioner.release(handle, scope="dynamic_only")
        bus._ledger_event({"type": "RunFinished", "run_id": self.run_id,
                           "status": status})
        self._event("run-finished", run=self.run_id, status=status)

        outputs = {}
        for nid, node in sorted(self.g.nodes.items()):
            if self.g.outgoing(nid):
                continue
            for port in node.outputs:
                key = f"{nid}.{port.name}"
                if key in self.port_data:
                    outputs[key] = self.port_data[key]
        return RunReport(
            run_id=self.run_id,
            experiment_digest=self.experiment.digest,
            status=status,
            instances=self.instances,
            outputs=outputs,
            plan=self.plan.to_dict(),
            events=self.events,
            user=bus.user,
            orchestrator=bus.orchestrator,
        )
