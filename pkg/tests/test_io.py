import json

import numpy as np
import pytest

from scatterfold.errors import IoFailure
from scatterfold.io import fmt, read_json, read_matrix_csv, write_json, write_matrix_csv, write_rows_csv


def test_fmt():
    assert fmt(None) == "n/a"
    assert fmt(float("nan")) == "nan"
    assert fmt(0.1 + 0.2) == "0.30000000000000004"
    assert float(fmt(1 / 3)) == 1 / 3
    assert fmt(np.float64(2.0)) == "2.0"


def test_matrix_round_trip(tmp_path):
    m = np.random.default_rng(0).standard_normal((4, 3))
    write_matrix_csv(tmp_path / "m.csv", m, "z", ids=[5, 6, 7, 8], extra={"meta": [1.0, None, 3.0, 4.0]})
    ids, values, header = read_matrix_csv(tmp_path / "m.csv")
    assert header == ["graph_id", "z0", "z1", "z2", "meta"]
    assert ids.tolist() == [5, 6, 7, 8]
    assert np.array_equal(values[:, :3], m)
    assert np.isnan(values[1, 3]) and values[2, 3] == 3.0


def test_rows_csv(tmp_path):
    write_rows_csv(tmp_path / "r.csv", ["a", "b", "c"], [["x", 1.5, None], ["y", 2, 0.25]])
    assert (tmp_path / "r.csv").read_text() == "a,b,c\nx,1.5,n/a\ny,2,0.25\n"


def test_json(tmp_path):
    write_json(tmp_path / "j.json", {"b": 1, "a": [1, 2]})
    text = (tmp_path / "j.json").read_text()
    assert text.index('"a"') < text.index('"b"') and text.endswith("\n")
    assert read_json(tmp_path / "j.json") == json.loads(text)
    with pytest.raises(IoFailure):
        read_json(tmp_path / "missing.json")
