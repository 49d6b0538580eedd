# tests/test_data_utils.py
import json

import pytest

from models.lattice import SiteSet
from utils.data_utils import (
    OutputPathError,
    ensure_dir,
    load_csv_rows,
    load_excursions,
    load_gzipped_pickle,
    load_site_set,
    run_header,
    save_excursions,
    save_json,
    save_rows_to_csv,
    save_site_set,
    save_to_gzipped_pickle,
)
from utils.excursion_utils import sample_excursion
from utils.rng_utils import RngStream


def test_csv_carries_run_header(tmp_path):
    header = run_header("abc", 5)
    path = save_rows_to_csv(
        [{"a": 1, "b": [1, 2], "c": True}, {"a": 0.1, "b": (), "c": False}],
        ["a", "b", "c"],
        str(tmp_path / "rows.csv"),
        header,
    )
    with open(path, encoding="utf-8") as f:
        first = f.readline()
    assert first.startswith("# ")
    assert json.loads(first[2:]) == header
    rows = load_csv_rows(path)
    assert rows[0] == {"a": "1", "b": "1 2", "c": "1"}
    assert rows[1]["a"] == "0.1"


def test_json_summary(tmp_path):
    path = save_json({"x": 1.5}, str(tmp_path / "s.json"), run_header("h", 0))
    with open(path, encoding="utf-8") as f:
        body = json.load(f)
    assert body["result"] == {"x": 1.5}
    assert body["header"]["config_sha256"] == "h"


def test_site_set_file(tmp_path):
    sites = SiteSet.from_points([(0, 0, 0), (2, -1, 3)])
    path = save_site_set(sites, str(tmp_path / "k1.txt"))
    assert load_site_set(path) == sites


def test_excursion_records(tmp_path, mini_cfg):
    rng = RngStream(1, 0, "paths")
    excs = [sample_excursion(x, mini_cfg, rng) for x in [(0, 0, 0), (9, 0, 0), (0, 0, 0)]]
    lean = sample_excursion((0, 0, 0), mini_cfg, rng, lean=True)
    path = str(tmp_path / "exc.bin")
    assert save_excursions(excs + [lean], 3, path) == 3
    back = load_excursions(path, mini_cfg)
    assert [e.key for e in back] == [e.key for e in excs]


def test_gzipped_pickle(tmp_path):
    path = save_to_gzipped_pickle({"a": [1, 2]}, "dump", str(tmp_path / "out"))
    assert path.endswith("dump.pkl.gz")
    assert load_gzipped_pickle(path) == {"a": [1, 2]}


def test_unusable_output_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OutputPathError, match="cannot create output directory"):
        ensure_dir(str(blocker / "sub"))
