from __future__ import annotations

import math
import random

import numpy as np
import pytest

from cellbus import lidar
from cellbus.errors import EmptyCloud, IoFailure

from oracles import (brute_force_cell_min, brute_force_neighbors,
                     reference_cv, reference_p95)

GOLDEN = "fixtures/golden_3pt.ply"


def cloud_of(points, **attrs):
    return lidar.PointCloud(points=np.asarray(points, dtype=float),
                            attributes={k: np.asarray(v, dtype=float)
                                        for k, v in attrs.items()})


# -- normalize_height ---------------------------------------------------------


def test_single_point_zero_height():
    cloud = lidar.normalize_height(cloud_of([[1.0, 1.0, 42.0]]), 10.0)
    assert cloud.attributes["normalized_height"].tolist() == [0.0]


def test_two_points_one_cell():
    cloud = lidar.normalize_height(
        cloud_of([[1.0, 1.0, 1.0], [2.0, 2.0, 4.5]]), 10.0)
    assert cloud.attributes["normalized_height"].tolist() == [0.0, 3.5]


def test_empty_cloud_rejected():
    with pytest.raises(EmptyCloud):
        lidar.normalize_height(cloud_of(np.empty((0, 3))), 10.0)


def test_per_cell_min_is_zero_randomized():
    cloud = lidar.synth_cloud(500, seed=3, extent=(40.0, 40.0))
    normalized = lidar.normalize_height(cloud, 10.0)
    heights = normalized.attributes["normalized_height"]
    mins = brute_force_cell_min(cloud.points.tolist(), 10.0)
    per_cell: dict = {}
    for (x, y, _z), h in zip(cloud.points.tolist(), heights.tolist()):
        key = (math.floor(x / 10.0), math.floor(y / 10.0))
        per_cell.setdefault(key, []).append(h)
        assert h >= -1e-12
    for key, values in per_cell.items():
        assert min(values) == pytest.approx(0.0, abs=1e-12)
    # normalized height equals z minus the brute-force cell minimum
    for (x, y, z), h in zip(cloud.points.tolist(), heights.tolist()):
        key = (math.floor(x / 10.0), math.floor(y / 10.0))
        assert h == pytest.approx(z - mins[key], abs=1e-12)


# -- cylinder neighbors -----------------------------------------------------


def test_boundary_inclusive_and_z_ignored():
    cloud = cloud_of([[0.5, 0.0, 100.0], [0.99, 0.0, -50.0], [1.01, 0.0, 0.0]])
    hit = lidar.cylinder_neighbors(cloud, (0.0, 0.0), 1.0)
    assert sorted(hit.tolist()) == [0, 1]
    exact = cloud_of([[1.0, 0.0, 7.0]])
    assert lidar.cylinder_neighbors(exact, (0.0, 0.0), 1.0).tolist() == [0]


def test_empty_cloud_no_neighbors():
    cloud = cloud_of(np.empty((0, 3)))
    assert lidar.cylinder_neighbors(cloud, (0.0, 0.0), 1.0).tolist() == []


@pytest.mark.parametrize("seed", range(5))
def test_neighbors_match_brute_force(seed):
    rng = random.Random(seed)
    cloud = lidar.synth_cloud(2000, seed=seed, extent=(30.0, 30.0))
    index = lidar.NeighborIndex(cloud, radius=1.0)
    for _ in range(50):
        target = (rng.uniform(-2, 32), rng.uniform(-2, 32))
        expected = brute_force_neighbors(cloud.points.tolist(), target, 1.0)
        assert set(index.query(target).tolist()) == expected


# -- features -----------------------------------------------------------------


def test_p95_of_1_to_100():
    assert lidar.percentile_95(range(1, 101)) == pytest.approx(95.05, abs=1e-9)
    assert reference_p95(range(1, 101)) == pytest.approx(95.05, abs=1e-9)


def test_constant_heights_degenerate():
    assert lidar.percentile_95([4.2] * 7) == pytest.approx(4.2, abs=1e-12)
    assert lidar.coeff_variation([4.2] * 7) == pytest.approx(0.0, abs=1e-12)


def test_cv_hand_computed():
    heights = [2, 4, 4, 4, 5, 5, 7, 9]
    assert lidar.coeff_variation(heights) == pytest.approx(0.4, abs=1e-9)
    assert reference_cv(heights) == pytest.approx(0.4, abs=1e-9)


def test_zero_mean_cv_is_null():
    assert lidar.coeff_variation([-1.0, 1.0]) is None


@pytest.mark.parametrize("seed", range(5))
def test_features_match_oracle_randomized(seed):
    rng = random.Random(100 + seed)
    heights = [rng.uniform(0, 30) for _ in range(rng.randint(1, 200))]
    assert lidar.percentile_95(heights) == pytest.approx(
        reference_p95(heights), abs=1e-9)
    cv = lidar.coeff_variation(heights)
    ref = reference_cv(heights)
    if ref is None:
        assert cv is None
    else:
        assert cv == pytest.approx(ref, abs=1e-9)


def test_extract_features_contract():
    cloud = cloud_of([[0.0, 0.0, 1.0], [0.1, 0.0, 2.0], [50.0, 50.0, 9.0]])
    normalized = lidar.normalize_height(cloud, 10.0)
    result = lidar.extract_features(normalized, [(0.0, 0.0), (25.0, 25.0)], 1.0)
    near, far = result.values
    assert near[lidar.P95] is not None and near[lidar.CV] is not None
    assert far == {lidar.P95: None, lidar.CV: None}  # no neighbors
    assert any("no neighbors" in d for d in result.diagnostics)


def test_extract_requires_normalization():
    cloud = cloud_of([[0.0, 0.0, 1.0]])
    with pytest.raises(ValueError):
        lidar.extract_features(cloud, [(0.0, 0.0)], 1.0)


def test_unknown_feature_rejected():
    cloud = lidar.normalize_height(cloud_of([[0.0, 0.0, 1.0]]), 10.0)
    with pytest.raises(ValueError):
        lidar.extract_features(cloud, [(0.0, 0.0)], 1.0, features=("median",))


# -- XYZ / PLY I/O -------------------------------------------------------------


def test_xyz_roundtrip(tmp_path):
    cloud = lidar.synth_cloud(50, seed=1)
    path = tmp_path / "cloud.xyz"
    lidar.save_xyz(cloud, path)
    back = lidar.load_xyz(path.read_text())
    assert np.array_equal(back.points, cloud.points)


def test_xyz_malformed():
    with pytest.raises(IoFailure):
        lidar.load_xyz("1.0,2.0\n")
    with pytest.raises(IoFailure):
        lidar.load_xyz("a,b,c\n")


def test_ply_roundtrip_exact(tmp_path):
    cloud = lidar.normalize_height(lidar.synth_cloud(100, seed=2), 10.0)
    path = tmp_path / "cloud.ply"
    lidar.export_cloud(cloud, path)
    back = lidar.cloud_from_ply(path)
    assert np.array_equal(back.points, cloud.points)
    assert np.array_equal(back.attributes["normalized_height"],
                          cloud.attributes["normalized_height"])


def test_ply_header_without_attributes(tmp_path):
    cloud = cloud_of([[1.0, 2.0, 3.0]])
    path = tmp_path / "bare.ply"
    lidar.export_cloud(cloud, path)
    header = path.read_text().splitlines()
    assert header[:7] == ["ply", "format ascii 1.0", "element vertex 1",
                          "property double x", "property double y",
                          "property double z", "end_header"]


def test_feature_result_ply(tmp_path):
    result = lidar.FeatureResult(
        targets=[(1.0, 2.0), (3.0, 4.0)],
        values=[{lidar.P95: 9.5, lidar.CV: 0.25}, {lidar.P95: None, lidar.CV: None}])
    path = tmp_path / "features.ply"
    lidar.export_cloud(result, path)
    names, matrix = lidar.read_ply(path)
    assert names == ["x", "y", lidar.CV, lidar.P95]
    assert matrix[0].tolist() == [1.0, 2.0, 0.25, 9.5]
    assert math.isnan(matrix[1][2]) and math.isnan(matrix[1][3])


def test_golden_three_point_fixture(tmp_path):
    cloud = cloud_of([[0.0, 0.0, 1.5], [10.0, 0.0, 2.25], [0.0, 10.0, -0.5]],
                     normalized_height=[0.0, 0.75, 0.0])
    out = tmp_path / "three.ply"
    lidar.export_cloud(cloud, out)
    import pathlib
    golden = pathlib.Path(__file__).parent / GOLDEN
    assert out.read_bytes() == golden.read_bytes()


# -- tiling --------------------------------------------------------------------


def test_tiles_cover_and_halo():
    cloud = lidar.synth_cloud(2000, seed=5, extent=(80.0, 80.0))
    targets = lidar.grid_targets((80.0, 80.0), 5.0)
    tiles = lidar.make_tiles(cloud, targets, 4, 2, 1.0, (80.0, 80.0), 1.0)
    assert len(tiles) == 8
    total_targets = sum(len(t["targets"]) for t in tiles)
    assert 0 < total_targets < len(targets)  # boundary bands dropped
    for tile in tiles:
        x0, y0, x1, y1 = tile["core"]
        pts = np.asarray(tile["cloud"]["points"]).reshape(-1, 3)
        assert (pts[:, 0] >= x0 - 1.0).all() and (pts[:, 0] < x1 + 1.0).all()
        for tx, ty in tile["targets"]:
            assert x0 + 1.0 <= tx <= x1 - 1.0
            assert y0 + 1.0 <= ty <= y1 - 1.0


def test_tile_grid_alignment_enforced():
    cloud = lidar.synth_cloud(10, seed=5, extent=(50.0, 50.0))
    with pytest.raises(ValueError):
        lidar.make_tiles(cloud, [], 3, 2, 1.0, (50.0, 50.0), 1.0, grid_size=10.0)


def test_tiled_equals_untiled_for_interior_targets():
    params_extent = (40.0, 40.0)
    cloud = lidar.synth_cloud(3000, seed=11, extent=params_extent)
    targets = lidar.grid_targets(params_extent, 5.0)
    tiles = lidar.make_tiles(cloud, targets, 2, 2, 1.0, params_extent, 1.0)
    tiled: dict = {}
    for tile in tiles:
        block = lidar.FeatureResult.from_dict(lidar.tile_features(tile))
        for target, record in zip(block.targets, block.values):
            tiled[target] = record
    reference = lidar.extract_features(
        lidar.normalize_height(cloud, 10.0), sorted(tiled), 1.0)
    for target, record in zip(reference.targets, reference.values):
        for feature, expected in record.items():
            got = tiled[target][feature]
            if expected is None:
                assert got is None
            else:
                assert got == pytest.approx(expected, abs=1e-9)
