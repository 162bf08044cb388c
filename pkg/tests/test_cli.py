import json

import numpy as np
import pytest

from dpbv.cli import EXIT_CONFIG, EXIT_MISSING, main
from dpbv.distance import DistanceMatrix
from dpbv.encoder import EncodedDataset


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def points_csv(tmp_path):
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(10, 1.5, (30, 2)), rng.normal(35, 1.5, (30, 2))]).clip(0, 50)
    labels = np.repeat([0, 1], 30)
    path = tmp_path / "points.csv"
    np.savetxt(path, np.column_stack([x, labels]), delimiter=",", fmt="%.6f", header="a0,a1,label", comments="")
    return path


def test_privacy_text(capsys):
    assert run("privacy", "--epsilon", 2, "--s", 1000) == 0
    out = capsys.readouterr().out
    assert "delta=7.5e-56" in out and "3.7022" in out and "E[w]=500.0000" in out


def test_privacy_json(capsys):
    assert run("privacy", "--epsilon", 1, "--s", 1000, "--json") == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["delta"].startswith("9") and doc["s"] == 1000


def test_config_from_delta(tmp_path):
    assert run("config", "--d", 3, "--delta", 1e-40, "--out-dir", tmp_path) == 0
    doc = json.loads((tmp_path / "schema.json").read_text())
    assert len(doc["attributes"]) == 3
    assert (tmp_path / "schema.json.manifest.json").exists()


def test_encode_distances_cluster(tmp_path, points_csv, capsys):
    assert run("config", "--d", 2, "--s", 400, "--seed", 3, "--out-dir", tmp_path) == 0
    schema = tmp_path / "schema.json"
    assert run("encode", "--input", points_csv, "--schema", schema, "--out-dir", tmp_path) == 0
    enc = EncodedDataset.load(tmp_path / "encoded.bin")
    assert enc.n == 60 and enc.d == 2 and enc.s == 400
    assert run("distances", "--encoded", tmp_path / "encoded.bin", "--schema", schema,
               "--out-dir", tmp_path) == 0
    m = DistanceMatrix.load(tmp_path / "distances.bin")
    assert m.n == 60 and np.array_equal(m.values, m.values.T)
    assert run("consistence", "--matrix", tmp_path / "distances.bin", "--schema", schema,
               "--out-dir", tmp_path) == 0
    capsys.readouterr()
    assert run("cluster", "--input", points_csv, "--schema", schema, "--k", 2, "--out-dir", tmp_path) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["nmi"] > 0.9


def test_schema_mismatch_is_config_error(tmp_path, points_csv):
    run("config", "--d", 2, "--s", 100, "--seed", 1, "--output", "a.json", "--out-dir", tmp_path)
    run("config", "--d", 2, "--s", 100, "--seed", 2, "--output", "b.json", "--out-dir", tmp_path)
    run("encode", "--input", points_csv, "--schema", tmp_path / "a.json", "--out-dir", tmp_path)
    code = run("distances", "--encoded", tmp_path / "encoded.bin", "--schema", tmp_path / "b.json",
               "--out-dir", tmp_path)
    assert code == EXIT_CONFIG


def test_missing_file(tmp_path):
    assert run("distances", "--encoded", tmp_path / "nope.bin", "--schema", tmp_path / "nope.json",
               "--out-dir", tmp_path) == EXIT_MISSING


def test_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("DPBV_OUT", str(tmp_path / "env"))
    assert run("config", "--d", 1) == 0
    assert (tmp_path / "env" / "schema.json").exists()


def test_simulate_vertical_decomposition(tmp_path, capsys):
    assert run("simulate", "--dataset", "blobs", "--n", 120, "--s", 300, "--partition", "vertical",
               "--method", "decomposition", "--k", 3, "--out-dir", tmp_path) == 0
    doc = json.loads((tmp_path / "simulation.json").read_text())
    assert doc["parties"] == 2 and doc["method"] == "decomposition"
    manifest = json.loads((tmp_path / "simulation.json.manifest.json").read_text())
    assert len(manifest["party_manifests"]) == 2


@pytest.mark.parametrize("argv,output", [
    (["encode", "--dataset", "moons", "--n", 80, "--s", 200], "encoded.bin"),
    (["cluster", "--dataset", "blobs", "--n", 90, "--s", 200, "--k", 3], "labels.csv"),
    (["simulate", "--dataset", "circles", "--n", 90, "--s", 200, "--k", 2, "--parties", 3], "simulation.json"),
])
def test_rerun_is_bit_identical(tmp_path, argv, output):
    out_dir = tmp_path / "run"
    assert run(*argv, "--out-dir", out_dir) == 0
    first = (out_dir / output).read_bytes()
    (out_dir / output).unlink()
    assert run("rerun", out_dir / f"{output}.manifest.json") == 0
    assert (out_dir / output).read_bytes() == first
