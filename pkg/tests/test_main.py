# tests/test_main.py
import json

import pytest

from main import run

SCENE = """
[scene]
d = 3
k1 = {k1}
xhat = 9,0,0
u = 1.0

[engine]
seed = 3
replicas = 20
"""


def _config(tmp_path, k1="singleton"):
    path = tmp_path / "scene.ini"
    path.write_text(SCENE.format(k1=k1))
    return str(path)


def test_invalid_scene_exits_with_validation_error(tmp_path, capsys):
    code = run(["--config", _config(tmp_path, "sites:1,0,0"), "--out", str(tmp_path / "out"), "potential"])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "SceneValidationError"
    assert "0 in K1" in err["message"]


def test_unknown_subcommand(tmp_path):
    assert run(["--config", _config(tmp_path), "bogus"]) == 2


def test_invalid_override(tmp_path):
    assert run(["--config", _config(tmp_path), "--replicas", "0", "--out", str(tmp_path / "o"), "couple"]) == 2


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(["--config", _config(tmp_path), "--out", str(blocker / "sub"), "potential"]) == 3


def test_potential_writes_tables(tmp_path):
    out = tmp_path / "out"
    assert run(["--config", _config(tmp_path), "--out", str(out), "potential"]) == 0
    assert (out / "potential.csv").exists()
    summary = json.loads((out / "potential_summary.json").read_text())
    assert summary["result"]["exit_method"] == "exact"
    assert 0.5 < summary["result"]["q"] <= 1.0


def test_sample_json_format(tmp_path):
    out = tmp_path / "out"
    assert run(["--config", _config(tmp_path), "--out", str(out), "--format", "json", "sample", "ns"]) == 0
    rows = json.loads((out / "samples_ns.json").read_text())["result"]
    assert len(rows) == 20


def test_couple_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["--config", _config(tmp_path), "--out", str(a), "couple"]) == 0
    assert run(["--config", _config(tmp_path), "--out", str(b), "couple"]) == 0
    assert (a / "coupling.csv").read_bytes() == (b / "coupling.csv").read_bytes()
    assert (a / "coupling_summary.json").read_bytes() == (b / "coupling_summary.json").read_bytes()


@pytest.mark.slow
def test_couple_does_not_depend_on_threads(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["--config", _config(tmp_path), "--out", str(a), "--threads", "1", "couple"]) == 0
    assert run(["--config", _config(tmp_path), "--out", str(b), "--threads", "2", "couple"]) == 0
    # the run header hashes the thread count, so compare the rows only
    assert (a / "coupling.csv").read_text().splitlines()[1:] == (b / "coupling.csv").read_text().splitlines()[1:]


EXPERIMENT = """
[experiment]
distances = 8.0,12.0
levels = 0.5,1.0
lemma_radii = 4,8
f1 = 0.0,1.0
f2 = 1.0,0.0
"""


@pytest.fixture
def experiment_config(tmp_path):
    path = tmp_path / "experiment.ini"
    path.write_text(SCENE.format(k1="singleton") + EXPERIMENT)
    return str(path)


@pytest.mark.parametrize(
    "kind,files",
    [
        ("scaling", ["scaling_distance.csv", "scaling_level.csv", "scaling_summary.json"]),
        ("tv", ["trace_tv.csv", "trace_tv_summary.json"]),
        ("covariance", ["covariance.csv", "covariance_summary.json"]),
        ("lemmas", ["lemmas.csv", "lemmas_summary.json"]),
    ],
)
def test_experiment_writes_its_reports(experiment_config, tmp_path, kind, files):
    out = tmp_path / "out"
    assert run(["--config", experiment_config, "--out", str(out), "experiment", kind]) == 0
    for name in files:
        assert (out / name).exists(), name


def test_scaling_distances_are_realised(experiment_config, tmp_path):
    out = tmp_path / "out"
    assert run(["--config", experiment_config, "--out", str(out), "--format", "json", "experiment", "scaling"]) == 0
    rows = json.loads((out / "scaling_distance.json").read_text())["result"]
    xs = [row["x"] for row in rows]
    assert xs[0] >= 8.0 and xs[1] >= 12.0
