"""Point-cloud feature extraction: load, normalize height, cylinder
neighborhoods, per-target features, PLY export.

Conventions that change values, fixed here and documented in the README:
- 95th percentile by linear interpolation between closest ranks
  (sorted h0..h(n-1), rank r = 0.95*(n-1), h[floor(r)] + frac*(h[floor+1]-h[floor]));
- coefficient of variance = population std / mean (divide by n);
- height normalization subtracts the per-grid-cell minimum z (grid-min
  ground proxy, default 10 m cells).

Input is XYZ CSV text (x,y,z per line); output is ASCII PLY. The neighbor
index uses spatial hashing; tests hold it to brute-force equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyCloud, IoFailure

P95 = "p95_norm_height"
CV = "cv_norm_height"
FEATURES = (P95, CV)
NORMALIZED = "normalized_height"

DEFAULT_GRID_SIZE = 10.0


@dataclass
class PointCloud:
    points: np.ndarray  # (n, 3) float64
    attributes: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        for name, values in self.attributes.items():
            values = np.asarray(values, dtype=np.float64)
            if values.shape != (len(self.points),):
                raise ValueError(f"attribute {name!r} does not cover all points")
            self.attributes[name] = values

    def __len__(self) -> int:
        return len(self.points)

    def to_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "attributes": {k: v.tolist() for k, v in sorted(self.attributes.items())},
        }

    @staticmethod
    def from_dict(doc: dict) -> "PointCloud":
        return PointCloud(
            points=np.asarray(doc["points"], dtype=np.float64).reshape(-1, 3),
            attributes={k: np.asarray(v, dtype=np.float64)
                        for k, v in doc.get("attributes", {}).items()},
        )


@dataclass
class FeatureResult:
    targets: list[tuple[float, float]]
    values: list[dict]  # feature name -> float | None
    diagnostics: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "targets": [list(t) for t in self.targets],
            "values": self.values,
            "diagnostics": list(self.diagnostics),
        }

    @staticmethod
    def from_dict(doc: dict) -> "FeatureResult":
        return FeatureResult(
            targets=[tuple(t) for t in doc["targets"]],
            values=list(doc["values"]),
            diagnostics=list(doc.get("diagnostics", ())),
        )


# -- synthetic data ------------------------------------------------------------


def synth_cloud(n_points: int, seed: int, extent: tuple[float, float] = (80.0, 80.0),
                ramp: tuple[float, float] = (0.02, 0.01),
                veg_height: float = 25.0) -> PointCloud:
    """Seeded synthetic cloud: uniform XY, z = ground ramp + vegetation noise."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform((0.0, 0.0), extent, size=(n_points, 2))
    ground = ramp[0] * xy[:, 0] + ramp[1] * xy[:, 1]
    vegetation = rng.uniform(0.0, veg_height, size=n_points) * \
        (rng.random(n_points) < 0.8)
    z = ground + vegetation
    return PointCloud(points=np.column_stack([xy, z]))


# -- XYZ CSV I/O ----------------------------------------------------------------


def load_xyz(text: str) -> PointCloud:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise IoFailure(f"XYZ line {lineno}: expected x,y,z")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise IoFailure(f"XYZ line {lineno}: {exc}") from exc
    return PointCloud(points=np.asarray(rows, dtype=np.float64).reshape(-1, 3))


def save_xyz(cloud: PointCloud, path: str | Path) -> None:
    lines = [f"{x!r},{y!r},{z!r}" for x, y, z in cloud.points.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- normalization -------------------------------------------------------------


def normalize_height(cloud: PointCloud,
                     grid_size: float = DEFAULT_GRID_SIZE) -> PointCloud:
    """Attach ``normalized_height``: z minus the minimum z of the point's
    grid_size x grid_size XY cell (per-cell minimum as local ground)."""
    if grid_size <= 0:
        raise ValueError("grid_size must be positive")
    if len(cloud) == 0:
        raise EmptyCloud("cannot normalize an empty cloud")
    cells = np.floor(cloud.points[:, :2] / grid_size).astype(np.int64)
    _, inverse = np.unique(cells, axis=0, return_inverse=True)
    mins = np.full(inverse.max() + 1, np.inf)
    np.minimum.at(mins, inverse, cloud.points[:, 2])
    normalized = cloud.points[:, 2] - mins[inverse]
    attributes = dict(cloud.attributes)
    attributes[NORMALIZED] = normalized
    return PointCloud(points=cloud.points.copy(), attributes=attributes)


# -- neighbor search -------------------------------------------------------------


class NeighborIndex:
    """Spatial hash over XY with bucket size = radius; query checks the 3x3
    bucket neighborhood. Boundary inclusive, z ignored (infinite cylinder)."""

    def __init__(self, cloud: PointCloud, radius: float):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.cloud = cloud
        self.radius = radius
        self._buckets: dict[tuple[int, int], list[int]] = {}
        for i, (x, y) in enumerate(cloud.points[:, :2]):
            key = (int(math.floor(x / radius)), int(math.floor(y / radius)))
            self._buckets.setdefault(key, []).append(i)

    def query(self, target: tuple[float, float]) -> np.ndarray:
        tx, ty = float(target[0]), float(target[1])
        cx = int(math.floor(tx / self.radius))
        cy = int(math.floor(ty / self.radius))
        candidates: list[int] = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                candidates.extend(self._buckets.get((cx + dx, cy + dy), ()))
        if not candidates:
            return np.empty(0, dtype=np.intp)
        idx = np.asarray(sorted(candidates), dtype=np.intp)
        pts = self.cloud.points[idx, :2]
        mask = (pts[:, 0] - tx) ** 2 + (pts[:, 1] - ty) ** 2 <= self.radius ** 2
        return idx[mask]


def cylinder_neighbors(cloud: PointCloud, target: tuple[float, float],
                       radius: float) -> np.ndarray:
    """Indices of points within horizontal distance ``radius`` of ``target``."""
    if len(cloud) == 0:
        return np.empty(0, dtype=np.intp)
    return NeighborIndex(cloud, radius).query(target)


# -- features --------------------------------------------------------------


def percentile_95(heights) -> float:
    """Linear interpolation between closest ranks."""
    ordered = sorted(float(h) for h in heights)
    if not ordered:
        raise ValueError("p95 of an empty sample")
    n = len(ordered)
    rank = 0.95 * (n - 1)
    low = int(math.floor(rank))
    frac = rank - low
    if low + 1 >= n:
        return ordered[low]
    return ordered[low] + frac * (ordered[low + 1] - ordered[low])


def coeff_variation(heights) -> float | None:
    """Population std over mean; None (ZeroMean) when the mean is zero."""
    values = [float(h) for h in heights]
    n = len(values)
    mean = sum(values) / n
    if mean == 0.0:
        return None
    var = sum((v - mean) ** 2 for v in values) / n
    return math.sqrt(var) / mean


def extract_features(
    cloud: PointCloud,
    targets: list[tuple[float, float]],
    radius: float,
    features: tuple[str, ...] = FEATURES,
) -> FeatureResult:
    """Per-target features over the cylinder neighborhood; targets without
    neighbors carry explicit nulls."""
    if not features:
        raise ValueError("features must be non-empty")
    unknown = set(features) - set(FEATURES)
    if unknown:
        raise ValueError(f"unknown features: {sorted(unknown)}")
    if NORMALIZED not in cloud.attributes:
        raise ValueError("cloud lacks normalized_height; run normalize_height first")

    index = NeighborIndex(cloud, radius)
    heights_all = cloud.attributes[NORMALIZED]
    values: list[dict] = []
    diagnostics: list[str] = []
    for t, target in enumerate(targets):
        neighbors = index.query(target)
        record: dict = {}
        if len(neighbors) == 0:
            record = {f: None for f in features}
            diagnostics.append(f"target {t}: no neighbors")
        else:
            heights = heights_all[neighbors]
            if P95 in features:
                record[P95] = percentile_95(heights)
            if CV in features:
                cv = coeff_variation(heights)
                record[CV] = cv
                if cv is None:
                    diagnostics.append(f"target {t}: zero mean, cv undefined")
        values.append(record)
    return FeatureResult(targets=[tuple(map(float, t)) for t in targets],
                         values=values, diagnostics=diagnostics)


# -- PLY export ----------------------------------------------------------------


def _fmt(value: float | None) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    return repr(float(value))


def export_cloud(obj: PointCloud | FeatureResult, path: str | Path) -> None:
    """ASCII PLY with one property per attribute/feature; floats rendered
    shortest-round-trip so a reload reproduces values exactly."""
    try:
        if isinstance(obj, PointCloud):
            names = ["x", "y", "z"] + sorted(obj.attributes)
            columns = [obj.points[:, 0], obj.points[:, 1], obj.points[:, 2]]
            columns += [obj.attributes[k] for k in sorted(obj.attributes)]
            rows = zip(*columns) if len(obj) else ()
            count = len(obj)
        else:
            feature_names = sorted({k for record in obj.values for k in record})
            names = ["x", "y"] + feature_names
            rows = (
                [t[0], t[1]] + [record.get(f) for f in feature_names]
                for t, record in zip(obj.targets, obj.values)
            )
            count = len(obj.targets)
        lines = ["ply", "format ascii 1.0", f"element vertex {count}"]
        lines += [f"property double {name}" for name in names]
        lines.append("end_header")
        for row in rows:
            lines.append(" ".join(_fmt(v) for v in row))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_ply(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read back our ASCII PLY: (property names, row matrix)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0] != "ply":
        raise IoFailure(f"{path} is not a PLY file")
    names: list[str] = []
    count = 0
    body_at = 0
    for i, line in enumerate(lines[1:], start=1):
        if line.startswith("element vertex"):
            count = int(line.split()[-1])
        elif line.startswith("property"):
            names.append(line.split()[-1])
        elif line == "end_header":
            body_at = i + 1
            break
    rows = [[float(v) for v in line.split()]
            for line in lines[body_at:body_at + count]]
    matrix = np.asarray(rows, dtype=np.float64).reshape(count, len(names)) \
        if count else np.empty((0, len(names)))
    return names, matrix


def cloud_from_ply(path: str | Path) -> PointCloud:
    names, matrix = read_ply(path)
    if names[:3] != ["x", "y", "z"]:
        raise IoFailure(f"{path} does not carry x,y,z properties")
    attributes = {name: matrix[:, 3 + i] for i, name in enumerate(names[3:])}
    return PointCloud(points=matrix[:, :3], attributes=attributes)


# -- tiling (scatter payloads) -------------------------------------------------


def make_tiles(
    cloud: PointCloud,
    targets: list[tuple[float, float]],
    nx: int,
    ny: int,
    halo: float,
    extent: tuple[float, float],
    radius: float,
    grid_size: float = DEFAULT_GRID_SIZE,
) -> list[dict]:
    """Partition the XY extent into nx*ny half-open core boxes; each tile
    payload carries the core points plus a halo band and the targets whose
    neighborhoods stay inside the core (>= radius from every core edge).

    Exactness condition (asserted): core boundaries must align to the
    normalization grid so per-tile grid cells are never split.
    """
    width, height = extent[0] / nx, extent[1] / ny
    if (width % grid_size) or (height % grid_size):
        raise ValueError("tile cores must align to the normalization grid")
    tiles: list[dict] = []
    pts = cloud.points
    for iy in range(ny):
        for ix in range(nx):
            x0, x1 = ix * width, (ix + 1) * width
            y0, y1 = iy * height, (iy + 1) * height
            box = ((pts[:, 0] >= x0 - halo) & (pts[:, 0] < x1 + halo)
                   & (pts[:, 1] >= y0 - halo) & (pts[:, 1] < y1 + halo))
            tile_targets = [
                (tx, ty) for tx, ty in targets
                if x0 + radius <= tx <= x1 - radius
                and y0 + radius <= ty <= y1 - radius
            ]
            tiles.append({
                "tile": [ix, iy],
                "core": [x0, y0, x1, y1],
                "radius": radius,
                "grid_size": grid_size,
                "cloud": PointCloud(points=pts[box]).to_dict(),
                "targets": [list(t) for t in tile_targets],
            })
    return tiles


def tile_features(tile: dict, features: tuple[str, ...] = FEATURES) -> dict:
    """Normalize + feature-extract one tile payload."""
    cloud = PointCloud.from_dict(tile["cloud"])
    targets = [tuple(t) for t in tile["targets"]]
    if len(cloud) == 0:
        return FeatureResult(targets=targets,
                             values=[{f: None for f in features} for _ in targets],
                             diagnostics=["empty tile"]).to_dict()
    normalized = normalize_height(cloud, tile["grid_size"])
    return extract_features(normalized, targets, tile["radius"], features).to_dict()


def combine_feature_blocks(blocks: list[dict]) -> dict:
    """Concatenate per-tile feature blocks (already index-ordered by merge)."""
    targets: list = []
    values: list = []
    diagnostics: list = []
    for block in blocks:
        result = FeatureResult.from_dict(block)
        targets.extend(result.targets)
        values.extend(result.values)
        diagnostics.extend(result.diagnostics)
    return FeatureResult(targets=targets, values=values,
                         diagnostics=diagnostics).to_dict()


def grid_targets(extent: tuple[float, float], spacing: float,
                 margin: float = 0.0) -> list[tuple[float, float]]:
    """Regular XY query grid over the extent (margin inset on every side)."""
    xs = np.arange(margin, extent[0] - margin + 1e-9, spacing)
    ys = np.arange(margin, extent[1] - margin + 1e-9, spacing)
    return [(float(x), float(y)) for y in ys for x in xs]
