import json

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from twoscale.cell import CoefficientField, load_field, save_field
from twoscale.io import fmt, read_field, write_csv, write_field, write_json
from twoscale.mesh import TorusGrid

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(finite)
def test_fmt_round_trips(x):
    assert float(fmt(x)) == x


def test_fmt_special_values():
    assert fmt(True) == "true"
    assert fmt(np.int64(7)) == "7"
    assert fmt(float("inf")) == "inf"


def test_field_round_trip_real_and_complex(tmp_path):
    rng = np.random.default_rng(3)
    for v in (rng.standard_normal((4, 2, 2)), rng.standard_normal((3, 1)) + 1j * rng.standard_normal((3, 1))):
        write_field(tmp_path / "a.field", v, {"dims": 1, "n_y": 4, "components": 2, "lambda": 0.5, "Lambda": 2.0})
        back, head = read_field(tmp_path / "a.field")
        assert np.array_equal(back, v)
        assert head["n_y"] == 4 and head["Lambda"] == 2.0


def test_coefficient_file_round_trip(tmp_path):
    a = CoefficientField.checkerboard(TorusGrid(2, 8), 1.0, 4.0)
    save_field(tmp_path / "c.field", a)
    b = load_field(tmp_path / "c.field")
    assert np.array_equal(a.values, b.values)
    assert b.torus.n_y == 8 and b.lam == a.lam


def test_bad_field_header(tmp_path):
    (tmp_path / "x.field").write_bytes(b"nope\n")
    try:
        read_field(tmp_path / "x.field")
    except ValueError:
        return
    raise AssertionError("expected ValueError")


def test_csv_and_json(tmp_path):
    write_csv(tmp_path / "t.csv", ["a", "b"], [{"a": 0.1, "b": "x"}, {"a": 2, "b": "y"}])
    assert (tmp_path / "t.csv").read_text() == "a,b\n0.10000000000000001,x\n2,y\n"
    obj = {"z": [1.5, None, True], "a": np.array([1.0, 2.0]), "c": 1 + 2j}
    write_json(tmp_path / "s.json", obj)
    back = json.loads((tmp_path / "s.json").read_text())
    assert back == {"a": [1.0, 2.0], "c": {"im": 2.0, "re": 1.0}, "z": [1.5, None, True]}
    assert list(back) == sorted(back)
