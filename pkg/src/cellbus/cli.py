"""Single command-line entry point for the whole pipeline.

Exit codes: 0 ok, 1 runtime failure, 2 validation failure, 64 usage error.
With ``--json`` stdout carries machine-parseable JSON; diagnostics go to
stderr either way.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analysis, container, demo, errors, flow, lidar, prov
from .bus import Bus, RunnerRegistry, SubprocessRunner, ThreadExecutor
from .catalog import Catalog
from .config import Config, load_config
from .ledger import Consortium, Ledger, verify_serialized
from .mesh import FsStore, collect_root_digests, mark_and_sweep
from .notebook import parse_notebook
from .planner import VmFlavor, plan_infrastructure

OK = 0
RUNTIME_FAILURE = 1
VALIDATION_FAILURE = 2
USAGE_ERROR = 64

VALIDATION_ERRORS = (
    errors.MalformedDocument, errors.UnsupportedFormat, errors.MissingKernel,
    errors.SyntaxUnsupported, errors.NotACodeCell, errors.InterfaceMismatch,
    errors.EmptyCell, errors.IrVersionUnsupported, errors.IrMalformed,
    errors.Unsatisfiable, errors.UnknownAsset, errors.UnknownEntity,
    errors.TooFewSamples, errors.NotFound, errors.RunnerMissing,
    errors.RunNotTerminal,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(payload, args, text: str | None = None) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text if text is not None else json.dumps(payload, indent=2,
                                                       sort_keys=True))


def _consortium(cfg: Config) -> Consortium:
    consortium = Consortium()
    consortium.register(cfg.ledger.org, cfg.ledger.secret)
    return consortium


def _mesh(cfg: Config) -> FsStore:
    return FsStore(cfg.mesh.root, quota_bytes=cfg.mesh.quota_bytes)


def _flavors(cfg: Config) -> tuple[list[VmFlavor], list[VmFlavor]]:
    flavors = [VmFlavor(f.name, f.cpu, f.memory, f.provider)
               for f in cfg.planner.flavors]
    by_name = {f.name: f for f in flavors}
    pool = [by_name[name] for name in cfg.planner.pool]
    return flavors, pool


def _load_experiment(path: str) -> flow.Experiment:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    g = flow.parse_ir(doc)
    section = doc.get("experiment", {})
    return flow.Experiment(
        graph=g,
        bindings=section.get("bindings", {}),
        requirements=section.get("requirements", {}),
    )


# -- subcommand handlers ---------------------------------------------------


def _cmd_analyze(args, cfg: Config) -> int:
    nb = parse_notebook(Path(args.notebook).read_bytes())
    if args.cell is not None:
        interfaces = {args.cell: analysis.analyze_cell(nb, args.cell, cfg.analysis)}
    else:
        interfaces = analysis.analyze_notebook(nb, cfg.analysis)
    payload = {str(i): iface.to_dict() for i, iface in sorted(interfaces.items())}
    _emit(payload, args)
    return OK


def _cmd_containerize(args, cfg: Config) -> int:
    nb = parse_notebook(Path(args.notebook).read_bytes())
    interface = analysis.analyze_cell(nb, args.cell, cfg.analysis)
    cell = nb.code_cell(args.cell)
    spec = container.build_task_spec(cell, interface,
                                     args.image or cfg.container.base_image)
    out = Path(args.out or f"task-{spec.task_id[:12]}.json")
    out.write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True),
                   encoding="utf-8")
    if args.publish:
        catalog = Catalog.load(cfg.catalog.path)
        consortium = _consortium(cfg)
        ledger_path = Path(cfg.ledger.path)
        ledger = Ledger.from_jsonl(ledger_path.read_bytes(), consortium) \
            if ledger_path.exists() else Ledger(consortium)
        container.publish_task(spec, catalog, ledger,
                               consortium.signer(cfg.ledger.org), _mesh(cfg))
        catalog.save(cfg.catalog.path)
        ledger_path.write_bytes(ledger.to_jsonl())
    _emit({"task_id": spec.task_id, "spec": str(out)}, args,
          text=f"{spec.task_id} -> {out}")
    return OK


def _cmd_flow_validate(args, cfg: Config) -> int:
    experiment = _load_experiment(args.ir)
    violations = flow.validate_graph(experiment.graph, experiment.bindings)
    if violations:
        for v in violations:
            print(f"{v.code}: {v.message}", file=sys.stderr)
        _emit({"valid": False,
               "violations": [v.to_dict() for v in violations]}, args,
              text="invalid")
        return VALIDATION_FAILURE
    _emit({"valid": True, "digest": experiment.graph.workflow_digest}, args,
          text=f"valid {experiment.graph.workflow_digest}")
    return OK


def _cmd_flow_run(args, cfg: Config) -> int:
    experiment = _load_experiment(args.ir)
    flavors, pool = _flavors(cfg)
    if args.plan:
        plan_doc = json.loads(Path(args.plan).read_text(encoding="utf-8"))
        plan = _plan_from_dict(plan_doc)
    else:
        plan = plan_infrastructure(experiment, flavors, pool,
                                   cfg.planner.scatter_width)
    mesh = _mesh(cfg)
    registry = RunnerRegistry()
    if args.specs:
        for path in sorted(Path(args.specs).glob("*.json")):
            spec = container.TaskSpec.from_dict(
                json.loads(path.read_text(encoding="utf-8")))
            registry.register(spec.task_id, SubprocessRunner(spec, mesh))
    consortium = _consortium(cfg)
    executor = ThreadExecutor()
    bus = Bus(mesh, ledger=Ledger(consortium),
              signer=consortium.signer(cfg.ledger.org), executor=executor,
              retries=cfg.bus.retries, user=cfg.bus.user,
              orchestrator=cfg.bus.orchestrator)
    mesh.acquire_run_lock()
    try:
        report = bus.run_experiment(experiment, plan, registry,
                                    cfg.planner.scatter_width)
    finally:
        mesh.release_run_lock()
        executor.shutdown()
    report._ledger = bus.ledger
    out_dir = Path(args.out or f"runs/{report.run_id}")
    paths = demo.write_run_artifacts(report, out_dir)
    _emit({"run_id": report.run_id, "status": report.status, **paths}, args,
          text=paths["report"])
    return OK if report.status == "Succeeded" else RUNTIME_FAILURE


def _plan_from_dict(doc: dict):
    from .planner import InfraPlan, PlannedVm
    vms = tuple(
        PlannedVm(vm_id=v["vm_id"],
                  flavor=VmFlavor(**v["flavor"]),
                  origin=v["origin"])
        for v in doc["vms"])
    return InfraPlan(vms=vms, assignment=dict(doc["assignment"]),
                     slots={k: dict(v) for k, v in doc["slots"].items()})


def _cmd_plan(args, cfg: Config) -> int:
    experiment = _load_experiment(args.ir)
    flavors, pool = _flavors(cfg)
    plan = plan_infrastructure(experiment, flavors, pool,
                               cfg.planner.scatter_width)
    out = Path(args.out or "plan.json")
    out.write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True),
                   encoding="utf-8")
    _emit({"plan": str(out), "vms": len(plan.vms)}, args, text=str(out))
    return OK


def _cmd_ledger_verify(args, cfg: Config) -> int:
    data = Path(args.chain).read_bytes()
    verdict = verify_serialized(data, _consortium(cfg))
    _emit(verdict.to_dict(), args,
          text="valid" if verdict.valid else
          f"broken at {verdict.broken_at}: {verdict.reason}")
    return OK if verdict.valid else VALIDATION_FAILURE


def _cmd_prov_export(args, cfg: Config) -> int:
    report = json.loads(Path(args.run).read_text(encoding="utf-8"))
    graph = prov.export_prov(report)
    out = Path(args.out or "prov.json")
    out.write_text(json.dumps(graph.to_prov_json(), indent=2, sort_keys=True),
                   encoding="utf-8")
    _emit({"prov": str(out), "activities": len(graph.activities)}, args,
          text=str(out))
    return OK


def _cmd_prov_trace(args, cfg: Config) -> int:
    report = json.loads(Path(args.run).read_text(encoding="utf-8"))
    graph = prov.export_prov(report)
    chains = prov.trace_derivation(graph, args.entity)
    _emit({"entity": args.entity, "chains": chains}, args,
          text="\n".join(" <- ".join(chain) for chain in chains))
    return OK


def _cmd_search(args, cfg: Config) -> int:
    catalog = Catalog.load(cfg.catalog.path)
    hits = catalog.search(" ".join(args.terms))
    _emit([h.to_dict() for h in hits], args,
          text="\n".join(f"{h.asset_id[:12]}  {h.kind:8s}  {h.title}"
                         for h in hits))
    return OK


def _cmd_basket(args, cfg: Config) -> int:
    catalog = Catalog.load(cfg.catalog.path)
    if args.action == "add":
        if not args.asset:
            raise UsageError("basket add needs an asset id")
        basket = catalog.basket_add(args.owner, args.asset)
        catalog.save(cfg.catalog.path)
    else:
        basket = catalog.basket_get(args.owner)
    _emit({"owner": basket.owner, "items": list(basket.items)}, args,
          text="\n".join(basket.items))
    return OK


def _cmd_mesh(args, cfg: Config) -> int:
    store = _mesh(cfg)
    if args.action == "put":
        ref = store.put(Path(args.target).read_bytes())
        _emit(ref.to_dict(), args, text=ref.digest)
    elif args.action == "get":
        content = store.get(args.target)
        if args.out:
            Path(args.out).write_bytes(content)
            _emit({"digest": args.target, "out": args.out}, args, text=args.out)
        else:
            sys.stdout.buffer.write(content)
    else:  # gc
        docs = [json.loads(Path(p).read_text(encoding="utf-8"))
                for p in args.roots or ()]
        live, dead = mark_and_sweep(store, collect_root_digests(*docs),
                                    force=args.force)
        _emit({"kept": len(live), "deleted": len(dead)}, args,
              text=f"kept {len(live)}, deleted {len(dead)}")
    return OK


def _cmd_demo(args, cfg: Config) -> int:
    params = demo.DemoParams(seed=args.seed if args.seed is not None else 7,
                             n_points=args.points)
    report, merged = demo.run_demo(params)
    out_dir = Path(args.out or f"runs/{report.run_id}")
    paths = demo.write_run_artifacts(report, out_dir, merged)
    payload = {"run_id": report.run_id, "status": report.status, **paths}
    if args.check:
        reference = demo.single_process_features(params)
        worst = _max_feature_delta(merged, reference)
        payload["max_delta"] = worst
        if worst > 1e-9:
            _emit(payload, args, text=f"scatter mismatch: {worst}")
            return RUNTIME_FAILURE
    _emit(payload, args, text=paths["report"])
    return OK if report.status == "Succeeded" else RUNTIME_FAILURE


def _max_feature_delta(a: lidar.FeatureResult, b: lidar.FeatureResult) -> float:
    assert a.targets == b.targets
    worst = 0.0
    for va, vb in zip(a.values, b.values):
        for key in set(va) | set(vb):
            x, y = va.get(key), vb.get(key)
            if x is None or y is None:
                if x != y:
                    return float("inf")
                continue
            worst = max(worst, abs(x - y))
    return worst


# -- parser ------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="cellbus", description=__doc__)
    parser.add_argument("--config", help="config file (JSON)")
    parser.add_argument("--json", action="store_true",
                        help="machine-parseable JSON on stdout")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed for seeded subcommands")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("analyze", help="infer cell interfaces")
    p.add_argument("notebook")
    p.add_argument("--cell", type=int, default=None)
    p.set_defaults(handler=_cmd_analyze)

    p = sub.add_parser("containerize", help="build a task spec from a cell")
    p.add_argument("notebook")
    p.add_argument("--cell", type=int, required=True)
    p.add_argument("--image", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--publish", action="store_true")
    p.set_defaults(handler=_cmd_containerize)

    p = sub.add_parser("flow", help="validate or run workflow IR")
    flow_sub = p.add_subparsers(dest="flow_command")
    v = flow_sub.add_parser("validate")
    v.add_argument("ir")
    v.set_defaults(handler=_cmd_flow_validate)
    r = flow_sub.add_parser("run")
    r.add_argument("ir")
    r.add_argument("--plan", default=None)
    r.add_argument("--specs", default=None, help="directory of TaskSpec JSONs")
    r.add_argument("--out", default=None)
    r.set_defaults(handler=_cmd_flow_run)

    p = sub.add_parser("plan", help="plan infrastructure for an experiment")
    p.add_argument("ir")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_plan)

    p = sub.add_parser("ledger", help="ledger operations")
    ledger_sub = p.add_subparsers(dest="ledger_command")
    v = ledger_sub.add_parser("verify")
    v.add_argument("chain")
    v.set_defaults(handler=_cmd_ledger_verify)

    p = sub.add_parser("prov", help="provenance export and tracing")
    prov_sub = p.add_subparsers(dest="prov_command")
    e = prov_sub.add_parser("export")
    e.add_argument("--run", required=True)
    e.add_argument("--out", default=None)
    e.set_defaults(handler=_cmd_prov_export)
    t = prov_sub.add_parser("trace")
    t.add_argument("--run", required=True)
    t.add_argument("--entity", required=True)
    t.set_defaults(handler=_cmd_prov_trace)

    p = sub.add_parser("search", help="ranked catalog search")
    p.add_argument("terms", nargs="+")
    p.set_defaults(handler=_cmd_search)

    p = sub.add_parser("basket", help="per-user asset basket")
    p.add_argument("action", choices=("add", "get"))
    p.add_argument("owner")
    p.add_argument("asset", nargs="?")
    p.set_defaults(handler=_cmd_basket)

    p = sub.add_parser("mesh", help="content-addressed store operations")
    p.add_argument("action", choices=("put", "get", "gc"))
    p.add_argument("target", nargs="?")
    p.add_argument("--out", default=None)
    p.add_argument("--roots", nargs="*", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=_cmd_mesh)

    p = sub.add_parser("demo", help="run the bundled demo pipeline")
    p.add_argument("pipeline", choices=("laserchicken",))
    p.add_argument("--points", type=int, default=10_000)
    p.add_argument("--out", default=None)
    p.add_argument("--check", action="store_true",
                   help="compare against the single-process reference")
    p.set_defaults(handler=_cmd_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "handler", None):
            parser.print_usage(sys.stderr)
            return USAGE_ERROR
        cfg = load_config(args.config)
        return args.handler(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except VALIDATION_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return VALIDATION_FAILURE
    except errors.CellbusError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_FAILURE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return RUNTIME_FAILURE


if __name__ == "__main__":
    sys.exit(main())
