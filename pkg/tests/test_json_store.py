import numpy as np
import pytest
from path import Path

from json_store import (
    JsonRecordStore,
    RunStore,
    load_csv_rows,
    load_json_file,
    save_csv_rows,
    save_json_file,
)
from selfint import SelfIntegralReport, Verdict
from utils import derive_seed, make_rng, strip_timestamp


def test_csv_keeps_full_float_precision(tmp_path):
    path = Path(tmp_path) / "nested" / "trace.csv"
    save_csv_rows(path, ["n", "sum"], [(4, 0.1 + 0.2), (8, 1 / 3)])
    rows = load_csv_rows(path)
    assert [int(r["n"]) for r in rows] == [4, 8]
    assert float(rows[0]["sum"]) == 0.1 + 0.2
    assert float(rows[1]["sum"]) == 1 / 3


def test_report_model_saved_and_validated(tmp_path):
    report = SelfIntegralReport(
        kernel="brownian_wn",
        domain=[[0.0, 1.0]],
        verdict=Verdict.TAG_DEPENDENT,
        values={"uniform/left": 0.0, "uniform/midpoint": 0.5},
        traces={"uniform/left": [(4, 0.0), (8, 0.0)]},
        tol=1e-3,
        n_max=8,
    )
    path = Path(tmp_path) / "report.json"
    save_json_file(path, report)
    loaded = load_json_file(path, SelfIntegralReport)
    assert loaded.verdict == Verdict.TAG_DEPENDENT
    assert strip_timestamp(loaded) == strip_timestamp(report)


def test_missing_file_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_json_file(Path(tmp_path) / "absent.json")


def test_empty_file_loads_as_empty_list(tmp_path):
    path = Path(tmp_path) / "empty.json"
    path.write_text("")
    assert load_json_file(path) == []


def test_record_store_appends_across_instances(tmp_path):
    store = JsonRecordStore(Path(tmp_path) / "items.json")
    for record in ({"kind": "a", "v": 1}, {"kind": "b", "v": 2}, {"kind": "a", "v": 3}):
        store.append(record)
    reopened = JsonRecordStore(Path(tmp_path) / "items.json")
    assert [r["v"] for r in reopened.records] == [1, 2, 3]


def test_run_ids_increment(tmp_path):
    store = RunStore(tmp_path)
    first = store.record_run("selfint", "a.json", "Converged", 0, ["x.json"])
    second = RunStore(tmp_path).record_run("quasi", "b.json", "error", 1, [])
    assert (first["run_id"], second["run_id"]) == (1, 2)
    assert [r["command"] for r in RunStore(tmp_path).records] == ["selfint", "quasi"]


def test_strip_timestamp_at_any_depth():
    report = {"timestamp": "t", "rows": [{"timestamp": "u", "v": 1}], "inner": {"timestamp": "w"}}
    assert strip_timestamp(report) == {"rows": [{"v": 1}], "inner": {}}
    assert report["rows"][0]["timestamp"] == "u"


def test_derived_streams_are_reproducible_and_distinct():
    a = make_rng(7, 0).standard_normal(5)
    np.testing.assert_array_equal(a, make_rng(7, 0).standard_normal(5))
    assert not np.array_equal(a, make_rng(7, 1).standard_normal(5))
    assert not np.array_equal(a, make_rng(8, 0).standard_normal(5))
    assert derive_seed(7, 2, 3).spawn_key == (2, 3)
