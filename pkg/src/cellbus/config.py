"""Dataclass configuration for the toolchain.

Loaded from a JSON file (``--config`` flag or the CELLBUS_CONFIG env var);
every section has working defaults so a bare invocation needs no file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

CONFIG_ENV_VAR = "CELLBUS_CONFIG"


@dataclass(frozen=True)
class AnalysisConfig:
    param_prefix: str = "param_"
    all_assignments_are_outputs: bool = False
    # callables whose result is treated as a mesh read (vtype dataref)
    mesh_read_helpers: tuple[str, ...] = ("mesh_get",)


@dataclass(frozen=True)
class ContainerConfig:
    base_image: str = "python:3.10-slim"


@dataclass(frozen=True)
class FlavorConfig:
    name: str
    cpu: int
    memory: int
    provider: str = "local-sim"


@dataclass(frozen=True)
class PlannerConfig:
    provider: str = "local-sim"
    scatter_width: int = 4
    flavors: tuple[FlavorConfig, ...] = (
        FlavorConfig("small", 1, 2),
        FlavorConfig("medium", 2, 4),
        FlavorConfig("large", 4, 8),
    )
    # pre-provisioned pool: list of flavor names
    pool: tuple[str, ...] = ()


@dataclass(frozen=True)
class BusConfig:
    retries: int = 1
    user: str = "local-user"
    orchestrator: str = "cellbus-bus"


@dataclass(frozen=True)
class MeshConfig:
    backend: str = "fs"  # fs | memory
    root: str = "mesh"
    quota_bytes: int | None = None


@dataclass(frozen=True)
class LedgerConfig:
    org: str = "local-org"
    secret: str = "local-org-secret"
    path: str = "ledger.jsonl"


@dataclass(frozen=True)
class CatalogConfig:
    path: str = "catalog.json"


@dataclass(frozen=True)
class Config:
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    container: ContainerConfig = field(default_factory=ContainerConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    bus: BusConfig = field(default_factory=BusConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    ledger: LedgerConfig = field(default_factory=LedgerConfig)
    catalog: CatalogConfig = field(default_factory=CatalogConfig)

    def to_dict(self) -> dict:
        return asdict(self)


def _build_planner(raw: dict) -> PlannerConfig:
    flavors = tuple(FlavorConfig(**f) for f in raw.pop("flavors", ())) or \
        PlannerConfig().flavors
    pool = tuple(raw.pop("pool", ()))
    return PlannerConfig(flavors=flavors, pool=pool, **raw)


def load_config(path: str | Path | None = None) -> Config:
    """Load config from ``path``, the CELLBUS_CONFIG env var, or defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return Config()
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    sections: dict = {}
    if "analysis" in raw:
        sections["analysis"] = AnalysisConfig(
            **{**raw["analysis"],
               **({"mesh_read_helpers": tuple(raw["analysis"]["mesh_read_helpers"])}
                  if "mesh_read_helpers" in raw["analysis"] else {})})
    if "container" in raw:
        sections["container"] = ContainerConfig(**raw["container"])
    if "planner" in raw:
        sections["planner"] = _build_planner(dict(raw["planner"]))
    if "bus" in raw:
        sections["bus"] = BusConfig(**raw["bus"])
    if "mesh" in raw:
        sections["mesh"] = MeshConfig(**raw["mesh"])
    if "ledger" in raw:
        sections["ledger"] = LedgerConfig(**raw["ledger"])
    if "catalog" in raw:
        sections["catalog"] = CatalogConfig(**raw["catalog"])
    return Config(**sections)
