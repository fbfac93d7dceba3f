from __future__ import annotations

import random

import pytest

from cellbus.bus import (Bus, ChaosRunner, NativeRunner, RunnerRegistry,
                         SimulatedExecutor, expand_split)
from cellbus.errors import NestedScatterUnsupported, NotAList, RunnerMissing
from cellbus.flow import Experiment, graph, merge_node, split_node, task_node
from cellbus.ledger import Consortium, Ledger
from cellbus.mesh import MemoryStore
from cellbus.planner import InfraPlan, PlannedVm, VmFlavor, plan_infrastructure


def make_bus(mesh=None, retries=1, run_id="run-test"):
    mesh = mesh or MemoryStore()
    consortium = Consortium()
    consortium.register("org", "secret")
    executor = SimulatedExecutor()
    ledger = Ledger(consortium, clock=executor.clock.now)
    bus = Bus(mesh, ledger=ledger, signer=consortium.signer("org"),
              executor=executor, retries=retries, run_id=run_id)
    return bus, mesh, ledger


def chain_experiment():
    g = graph(
        nodes=[task_node("first", "f1", inputs={"x": "integer"},
                         outputs={"y": "integer"}),
               task_node("second", "f2", inputs={"y": "integer"},
                         outputs={"z": "integer"})],
        edges=[("first", "y", "second", "y")])
    return Experiment(graph=g, bindings={"first.x": 5},
                      requirements={"first": {"cpu": 1, "memory": 1},
                                    "second": {"cpu": 1, "memory": 1}})


def scatter_experiment(xs):
    g = graph(
        nodes=[task_node("feed", "feed", inputs={"xs": "list"},
                         outputs={"items": "list"}),
               split_node("split", "integer"),
               task_node("double", "double", inputs={"v": "integer"},
                         outputs={"w": "integer"}),
               merge_node("merge", "integer"),
               task_node("sink", "sink", inputs={"all": "list"},
                         outputs={"result": "list"})],
        edges=[("feed", "items", "split", "items"),
               ("split", "item", "double", "v"),
               ("double", "w", "merge", "item"),
               ("merge", "items", "sink", "all")])
    return Experiment(graph=g, bindings={"feed.xs": xs},
                      requirements={n: {"cpu": 1, "memory": 1}
                                    for n in ("feed", "double", "sink")})


def scatter_runners(double_duration=1.0):
    return RunnerRegistry({
        "feed": NativeRunner(lambda ins: {"items": ins["xs"]}),
        "double": NativeRunner(lambda ins: {"w": ins["v"] * 2},
                               duration=double_duration),
        "sink": NativeRunner(lambda ins: {"result": ins["all"]}),
    })


def test_chain_composition():
    bus, mesh, _ = make_bus()
    exp = chain_experiment()
    plan = plan_infrastructure(exp, [VmFlavor("f", 2, 4)])
    runners = RunnerRegistry({
        "f1": NativeRunner(lambda ins: {"y": ins["x"] * 3}),
        "f2": NativeRunner(lambda ins: {"z": ins["y"] + 1}),
    })
    report = bus.run_experiment(exp, plan, runners)
    assert report.status == "Succeeded"
    # direct composition oracle: f2(f1(5))
    assert mesh.get_json(report.outputs["second.z"]) == (5 * 3) + 1


def test_split_fanout_matches_list_length():
    bus, mesh, _ = make_bus()
    exp = scatter_experiment([4, 5, 6])
    plan = plan_infrastructure(exp, [VmFlavor("f", 2, 4)], scatter_width=2)
    report = bus.run_experiment(exp, plan, scatter_runners(), scatter_width=2)
    doubles = [i for i in report.instances if i.startswith("double#")]
    assert sorted(doubles) == ["double#0", "double#1", "double#2"]
    assert mesh.get_json(report.outputs["sink.result"]) == [8, 10, 12]


def test_empty_list_zero_instances_empty_merge():
    bus, mesh, _ = make_bus()
    exp = scatter_experiment([])
    plan = plan_infrastructure(exp, [VmFlavor("f", 2, 4)], scatter_width=2)
    report = bus.run_experiment(exp, plan, scatter_runners(), scatter_width=2)
    assert report.status == "Succeeded"
    assert not [i for i in report.instances if i.startswith("double#")]
    assert mesh.get_json(report.outputs["sink.result"]) == []


@pytest.mark.parametrize("seed", range(10))
def test_merge_order_independent_of_schedule(seed):
    rng = random.Random(seed)
    xs = [rng.randint(-50, 50) for _ in range(rng.randint(1, 8))]
    durations = {k: rng.uniform(0.1, 5.0) for k in range(len(xs))}
    bus, mesh, _ = make_bus()
    exp = scatter_experiment(xs)
    plan = plan_infrastructure(exp, [VmFlavor("f", 4, 8)], scatter_width=4)
    runners = scatter_runners(
        double_duration=lambda iid, ins: durations[int(iid.split("#")[1])])
    report = bus.run_experiment(exp, plan, runners, scatter_width=4)
    assert mesh.get_json(report.outputs["sink.result"]) == [x * 2 for x in xs]


def test_retry_then_skip_downstream():
    bus, _, ledger = make_bus(retries=2)
    exp = chain_experiment()
    plan = plan_infrastructure(exp, [VmFlavor("f", 2, 4)])
    runners = RunnerRegistry({
        "f1": ChaosRunner(),  # always fails
        "f2": NativeRunner(lambda ins: {"z": 0}),
    })
    report = bus.run_experiment(exp, plan, runners)
    assert report.status == "Failed"
    assert report.instances["first"].state == "Failed"
    assert report.instances["first"].attempts == 3
    assert report.instances["second"].state == "Skipped"
    phases = [b.event["phase"] for b in ledger.blocks
              if b.event["type"] == "InstanceEvent"
              and b.event["instance"] == "first"]
    assert phases == ["started", "retried", "retried", "failed"]


def test_chaos_recovers_within_retries():
    bus, mesh, _ = make_bus(retries=1)
    g = graph(nodes=[task_node("only", "flaky", outputs={"out": "integer"})],
              edges=[])
    exp = Experiment(graph=g, requirements={"only": {"cpu": 1, "memory": 1}})

    class FlakyRunner:
        def __init__(self):
            self.calls = 0

        def run(self, iid, ins):
            self.calls += 1
            if self.calls == 1:
                raise RuntimeError("first time fails")
            return {"out": 42}

        def duration(self, iid, ins):
            return 1.0

    plan = plan_infrastructure(exp, [VmFlavor("f", 2, 4)])
    report = bus.run_experiment(exp, plan, RunnerRegistry({"flaky": FlakyRunner()}))
    assert report.status == "Succeeded"
    assert report.instances["only"].attempts == 2
    assert mesh.get_json(report.outputs["only.out"]) == 42


def test_sibling_failure_skips_merge():
    bus, _, _ = make_bus(retries=0)
    exp = scatter_experiment([1, 2, 3])

    class FailOne:
        def run(self, iid, ins):
            if iid == "double#1":
                raise RuntimeError("sibling down")
            return {"w": ins["v"] * 2}

        def duration(self, iid, ins):
            return 1.0

    runners = RunnerRegistry({
        "feed": NativeRunner(lambda ins: {"items": ins["xs"]}),
        "double": FailOne(),
        "sink": NativeRunner(lambda ins: {"result": ins["all"]}),
    })
    plan = plan_infrastructure(exp, [VmFlavor("f", 4, 8)], scatter_width=4)
    report = bus.run_experiment(exp, plan, runners, scatter_width=4)
    assert report.status == "Failed"
    assert report.instances["merge"].state == "Skipped"
    assert report.instances["sink"].state == "Skipped"
    assert report.instances["double#0"].state == "Succeeded"


def test_runner_missing_up_front():
    bus, _, _ = make_bus()
    exp = chain_experiment()
    plan = plan_infrastructure(exp, [VmFlavor("f", 2, 4)])
    with pytest.raises(RunnerMissing):
        bus.run_experiment(exp, plan, RunnerRegistry({
            "f1": NativeRunner(lambda ins: {"y": 1})}))


def test_nested_scatter_rejected():
    g = graph(
        nodes=[task_node("a", "a", outputs={"out": "list"}),
               split_node("s1", "list"),
               split_node("s2", "integer"),
               task_node("w", "w", inputs={"in": "integer"},
                         outputs={"out": "integer"}),
               merge_node("m2", "integer"),
               merge_node("m1", "list"),
               task_node("z", "z", inputs={"in": "list"}, outputs={})],
        edges=[("a", "out", "s1", "items"), ("s1", "item", "s2", "items"),
               ("s2", "item", "w", "in"), ("w", "out", "m2", "item"),
               ("m2", "items", "m1", "item"), ("m1", "items", "z", "in")])
    exp = Experiment(graph=g, requirements={
        n: {"cpu": 1, "memory": 1} for n in ("a", "w", "z")})
    bus, _, _ = make_bus()
    plan = plan_infrastructure(exp, [VmFlavor("f", 4, 8)])
    with pytest.raises(NestedScatterUnsupported):
        bus.run_experiment(exp, plan, RunnerRegistry({
            "a": NativeRunner(lambda ins: {"out": []}),
            "w": NativeRunner(lambda ins: {"out": 0}),
            "z": NativeRunner(lambda ins: {})}))


def test_split_non_list_fails_run():
    bus, _, _ = make_bus()
    exp = scatter_experiment(xs=[1])
    exp = Experiment(graph=exp.graph, bindings={"feed.xs": [1]},
                     requirements=exp.requirements)
    runners = RunnerRegistry({
        "feed": NativeRunner(lambda ins: {"items": 42}),  # not a list
        "double": NativeRunner(lambda ins: {"w": 0}),
        "sink": NativeRunner(lambda ins: {"result": []}),
    })
    plan = plan_infrastructure(exp, [VmFlavor("f", 2, 4)])
    report = bus.run_experiment(exp, plan, runners)
    assert report.status == "Failed"
    assert report.instances["split"].state == "Failed"
    assert report.instances["sink"].state == "Skipped"


def test_expand_split_contract():
    assert expand_split([10, 20]) == [(0, 10), (1, 20)]
    assert expand_split([]) == []
    with pytest.raises(NotAList):
        expand_split({"not": "a list"})


def manual_plan(task_ids, cpu_capacity):
    flavor = VmFlavor("cap", cpu_capacity, cpu_capacity)
    vm = PlannedVm("vm0", flavor, "pre_provisioned")
    return InfraPlan(vms=(vm,), assignment={t: "vm0" for t in task_ids},
                     slots={"vm0": {"cpu": 0, "memory": 0}})


def independent_experiment(n):
    nodes = [task_node(f"t{i:02d}", "work", outputs={}) for i in range(n)]
    return Experiment(graph=graph(nodes, []),
                      requirements={f"t{i:02d}": {"cpu": 1, "memory": 1}
                                    for i in range(n)})


def concurrency_profile(events):
    """Max concurrent instances per vm reconstructed from the event log."""
    active: dict[str, set[str]] = {}
    peak: dict[str, int] = {}
    for event in events:
        vm = event.get("vm")
        if vm is None:
            continue
        if event["kind"] == "instance-started":
            active.setdefault(vm, set()).add(event["instance"])
        elif event["kind"] in ("instance-succeeded", "instance-failed",
                               "instance-retried"):
            active.setdefault(vm, set()).discard(event["instance"])
        peak[vm] = max(peak.get(vm, 0), len(active.get(vm, ())))
    return peak


@pytest.mark.parametrize("n,capacity", [(1, 1), (4, 2), (5, 2), (8, 3), (9, 4)])
def test_wave_scheduling(n, capacity):
    bus, _, _ = make_bus()
    exp = independent_experiment(n)
    plan = manual_plan(list(exp.requirements), capacity)
    duration = 2.0
    runners = RunnerRegistry({"work": NativeRunner(lambda ins: {},
                                                   duration=duration)})
    report = bus.run_experiment(exp, plan, runners)
    assert report.status == "Succeeded"
    ends = [r.end for r in report.instances.values()]
    waves = -(-n // capacity)  # ceil
    assert max(ends) == waves * duration
    peak = concurrency_profile(report.events)
    assert peak.get("vm0", 0) <= capacity


def test_capacity_never_exceeded_randomized():
    for seed in range(25):
        rng = random.Random(seed)
        n = rng.randint(1, 12)
        capacity = rng.randint(1, 4)
        bus, _, _ = make_bus(run_id=f"run-{seed}")
        exp = independent_experiment(n)
        plan = manual_plan(list(exp.requirements), capacity)
        runners = RunnerRegistry({"work": NativeRunner(
            lambda ins: {},
            duration=lambda iid, ins, r=rng: 0.5 + 2 * random.Random(iid).random())})
        report = bus.run_experiment(exp, plan, runners)
        peak = concurrency_profile(report.events)
        assert peak.get("vm0", 0) <= capacity


def test_result_determinism_across_runs():
    outs = []
    for _ in range(2):
        bus, mesh, _ = make_bus()
        exp = scatter_experiment([3, 1, 4])
        plan = plan_infrastructure(exp, [VmFlavor("f", 2, 4)], scatter_width=2)
        report = bus.run_experiment(exp, plan, scatter_runners(), scatter_width=2)
        outs.append(mesh.get_json(report.outputs["sink.result"]))
    assert outs[0] == outs[1] == [6, 2, 8]


def test_ledger_records_run_lifecycle():
    bus, _, ledger = make_bus()
    exp = chain_experiment()
    plan = plan_infrastructure(exp, [VmFlavor("f", 2, 4)])
    runners = RunnerRegistry({
        "f1": NativeRunner(lambda ins: {"y": 1}),
        "f2": NativeRunner(lambda ins: {"z": 2}),
    })
    report = bus.run_experiment(exp, plan, runners)
    kinds = [b.event["type"] for b in ledger.blocks]
    assert kinds[0] == "RunStarted"
    assert kinds[-1] == "RunFinished"
    assert ledger.verify().valid
    # exactly one terminal instance event per instance
    terminal = {}
    for b in ledger.blocks:
        if b.event["type"] == "InstanceEvent" and \
                b.event["phase"] in ("succeeded", "failed", "skipped"):
            terminal[b.event["instance"]] = terminal.get(b.event["instance"], 0) + 1
    assert terminal == {i: 1 for i in report.instances}


def test_timings_end_after_start():
    bus, _, _ = make_bus()
    exp = scatter_experiment([1, 2])
    plan = plan_infrastructure(exp, [VmFlavor("f", 2, 4)], scatter_width=2)
    report = bus.run_experiment(exp, plan, scatter_runners(), scatter_width=2)
    for record in report.instances.values():
        assert record.end >= record.start
