import json
import math

import numpy as np
import pytest

import rectiscope as rs


def test_bl_norm_matches_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        k = int(rng.integers(2, 7))
        pts = rng.uniform(-1, 1, size=(k, 2))
        m = rng.normal(size=k)
        c = np.zeros(2)
        assert rs.bl_norm(pts, m, c, 1.5) == pytest.approx(rs.bl_norm_oracle(pts, m, c, 1.5), abs=1e-8)


def test_plane_is_flat():
    cloud, truth = rs.gen_plane(2, 1, 1.0, 2e-3)
    assert cloud.n == 2 and cloud.d == 1
    assert cloud.points.shape == (len(cloud), 2)
    x = np.zeros(2)
    assert rs.alpha(cloud, x, 0.25) <= 1e-2
    assert rs.bbetainf(cloud, x, 0.25) <= 1e-2


def test_two_planes_are_not():
    cloud, _ = rs.gen_two_planes(2, math.pi / 4, 1.0, 2e-3)
    assert rs.bbeta1(cloud, np.zeros(2), 0.3) > 0.05


def test_lattice_and_table_roundtrip(tmp_path):
    cloud, _ = rs.gen_lipschitz_graph(2, 1, 0.1, h=2e-3, seed=4)
    lat = rs.build_lattice(cloud, j_min=2)
    rep = rs.verify_lattice(lat, cloud)
    assert rep["ok"]
    table = rs.coefficient_table(cloud, lat, select=["alpha"])
    a = table.arrays()
    assert len(a["alpha"]) == len(table) == len(lat)
    ok = (a["reliable"] & a["trusted"]).astype(bool)
    assert ok.any() and np.isnan(a["alpha"][~ok]).all()
    assert np.all(a["alpha"][ok] >= 0)
    assert table.to_csv().startswith("cube,")
    path = tmp_path / "c.bin"
    cloud.save(str(path))
    back = rs.Cloud.load(str(path))
    np.testing.assert_array_equal(back.points, cloud.points)


def test_corona_on_graph():
    cloud, _ = rs.gen_lipschitz_graph(2, 1, 0.1, h=2e-3, seed=4)
    lat = rs.build_lattice(cloud, j_min=2)
    forests = rs.corona(cloud, lat)
    assert forests and all(f["ok"] for f in forests)
    assert max(f["packing_max"] for f in forests) <= 1.5


def test_config_hash_and_errors(tmp_path):
    base = {"input": {"generator": {"kind": "plane", "h": 2e-3}}, "output": str(tmp_path)}
    assert rs.config_hash(base) == rs.config_hash(dict(base, output="elsewhere"))
    assert rs.normalized_config(base)["corona"]["delta"] == 0.05
    with pytest.raises(rs.ConfigError, match="corona.delta"):
        rs.config_hash(dict(base, corona={"delta": 0.5}))


def test_pipeline(tmp_path):
    cfg = {"input": {"generator": {"kind": "plane", "h": 2e-3}}, "output": str(tmp_path / "run")}
    with pytest.raises(rs.StaleArtifactError):
        rs.run_stage(cfg, "lattice")
    summary = rs.run_pipeline(cfg)
    assert summary["config_hash"] == rs.config_hash(cfg)
    assert summary["verify"]["ok"]
    assert summary["corona"]["packing_max"] == 1.0
    with open(tmp_path / "run" / "corona.json") as f:
        assert json.load(f)["config_hash"] == summary["config_hash"]
