"""End-to-end scatter/gather run of the point-cloud feature pipeline:
synthesize cloud -> tile -> split -> (normalize + neighbors + features)
per tile -> merge -> combine, executed by the bus on a simulated plan.

The same target list evaluated over the untiled cloud is the single-process
reference; with grid-aligned tile cores and halo >= radius the tiled result
matches it exactly for every (interior) target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import lidar
from .bus import Bus, NativeRunner, RunnerRegistry, RunReport, SimulatedExecutor
from .errors import TooFewSamples
from .flow import Experiment, graph, merge_node, split_node, task_node
from .ledger import Consortium, Ledger
from .mesh import FsStore, MemoryStore, Store
from .planner import InfraPlan, VmFlavor, plan_infrastructure
from .prov import export_prov, flag_anomalies


@dataclass(frozen=True)
class DemoParams:
    seed: int = 7
    n_points: int = 10_000
    extent: tuple[float, float] = (80.0, 80.0)
    nx: int = 4
    ny: int = 2
    halo: float = 1.0
    radius: float = 1.0
    grid_size: float = 10.0
    target_spacing: float = 5.0
    scatter_width: int = 2


def demo_targets(params: DemoParams) -> list[tuple[float, float]]:
    """Interior targets in tile order (the order the merged result carries)."""
    raw = lidar.grid_targets(params.extent, params.target_spacing)
    width = params.extent[0] / params.nx
    height = params.extent[1] / params.ny
    ordered: list[tuple[float, float]] = []
    for iy in range(params.ny):
        for ix in range(params.nx):
            x0, x1 = ix * width, (ix + 1) * width
            y0, y1 = iy * height, (iy + 1) * height
            ordered.extend(
                (tx, ty) for tx, ty in raw
                if x0 + params.radius <= tx <= x1 - params.radius
                and y0 + params.radius <= ty <= y1 - params.radius)
    return ordered


def build_experiment(params: DemoParams) -> tuple[Experiment, RunnerRegistry]:
    g = graph(
        nodes=[
            task_node("make_cloud", "demo.make_cloud",
                      inputs={"seed": "integer", "n_points": "integer"},
                      outputs={"cloud": "opaque"}),
            task_node("tile", "demo.tile",
                      inputs={"cloud": "opaque"}, outputs={"tiles": "list"}),
            split_node("scatter", element="opaque"),
            task_node("tile_features", "demo.tile_features",
                      inputs={"tile": "opaque"}, outputs={"block": "opaque"}),
            merge_node("gather", element="opaque"),
            task_node("combine", "demo.combine",
                      inputs={"blocks": "list"}, outputs={"features": "opaque"}),
        ],
        edges=[
            ("make_cloud", "cloud", "tile", "cloud"),
            ("tile", "tiles", "scatter", "items"),
            ("scatter", "item", "tile_features", "tile"),
            ("tile_features", "block", "gather", "item"),
            ("gather", "items", "combine", "blocks"),
        ],
    )
    experiment = Experiment(
        graph=g,
        bindings={"make_cloud.seed": params.seed,
                  "make_cloud.n_points": params.n_points},
        requirements={nid: {"cpu": 1, "memory": 1}
                      for nid in ("make_cloud", "tile", "tile_features", "combine")},
    )

    targets = lidar.grid_targets(params.extent, params.target_spacing)

    def make_cloud(inputs: dict) -> dict:
        cloud = lidar.synth_cloud(inputs["n_points"], inputs["seed"],
                                  extent=params.extent)
        return {"cloud": cloud.to_dict()}

    def tile(inputs: dict) -> dict:
        cloud = lidar.PointCloud.from_dict(inputs["cloud"])
        tiles = lidar.make_tiles(cloud, targets, params.nx, params.ny,
                                 params.halo, params.extent, params.radius,
                                 params.grid_size)
        return {"tiles": tiles}

    def features(inputs: dict) -> dict:
        return {"block": lidar.tile_features(inputs["tile"])}

    def combine(inputs: dict) -> dict:
        return {"features": lidar.combine_feature_blocks(inputs["blocks"])}

    runners = RunnerRegistry({
        "demo.make_cloud": NativeRunner(make_cloud),
        "demo.tile": NativeRunner(tile),
        "demo.tile_features": NativeRunner(features),
        "demo.combine": NativeRunner(combine),
    })
    return experiment, runners


def demo_plan(experiment: Experiment, params: DemoParams) -> InfraPlan:
    flavors = [VmFlavor("demo-vm", cpu=2, memory=4)]
    return plan_infrastructure(experiment, flavors,
                               scatter_width=params.scatter_width)


def single_process_features(params: DemoParams) -> lidar.FeatureResult:
    """Untiled reference: full cloud, same targets, same order."""
    cloud = lidar.synth_cloud(params.n_points, params.seed, extent=params.extent)
    normalized = lidar.normalize_height(cloud, params.grid_size)
    return lidar.extract_features(normalized, demo_targets(params), params.radius)


def run_demo(params: DemoParams | None = None,
             mesh: Store | None = None) -> tuple[RunReport, lidar.FeatureResult]:
    """Execute the scatter pipeline on a simulated clock; returns the run
    report and the merged feature result."""
    params = params or DemoParams()
    mesh = mesh if mesh is not None else MemoryStore()
    experiment, runners = build_experiment(params)
    plan = demo_plan(experiment, params)
    executor = SimulatedExecutor()
    consortium = Consortium()
    consortium.register("demo-org", "demo-org-secret")
    ledger = Ledger(consortium, clock=executor.clock.now)
    bus = Bus(mesh, ledger=ledger, signer=consortium.signer("demo-org"),
              executor=executor, run_id=f"run-demo-{params.seed}",
              user="demo-user")
    report = bus.run_experiment(experiment, plan, runners,
                                scatter_width=params.scatter_width)
    merged = lidar.FeatureResult.from_dict(
        mesh.get_json(report.outputs["combine.features"]))
    report._ledger = ledger  # kept for artifact export
    return report, merged


def write_run_artifacts(report: RunReport, out_dir: str | Path,
                        merged: lidar.FeatureResult | None = None) -> dict:
    """Write report.json, events.jsonl, prov.json, ledger.jsonl (when the
    report carries one), and features.ply for feature-producing runs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    try:
        doc["anomalies"] = flag_anomalies(doc)
    except TooFewSamples:
        doc["anomalies"] = []
    paths = {"report": out / "report.json"}
    paths["report"].write_text(json.dumps(doc, indent=2, sort_keys=True),
                               encoding="utf-8")
    paths["events"] = out / "events.jsonl"
    paths["events"].write_text(
        "".join(json.dumps(e, sort_keys=True) + "\n" for e in report.events),
        encoding="utf-8")
    paths["prov"] = out / "prov.json"
    paths["prov"].write_text(
        json.dumps(export_prov(doc).to_prov_json(), indent=2, sort_keys=True),
        encoding="utf-8")
    ledger = getattr(report, "_ledger", None)
    if ledger is not None:
        paths["ledger"] = out / "ledger.jsonl"
        paths["ledger"].write_bytes(ledger.to_jsonl())
    if merged is not None:
        paths["features"] = out / "features.ply"
        lidar.export_cloud(merged, paths["features"])
    return {k: str(v) for k, v in paths.items()}
