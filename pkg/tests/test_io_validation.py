import io

import numpy as np
import pytest

from hodlr3d._io import parse_csv, write_csv
from hodlr3d._validation import check_points, check_positive, check_variant, check_vector


def test_write_csv_roundtrip(tmp_path):
    rows = [{"a": 1, "b": 2.5, "extra": "x"}, {"a": 3, "b": -1}]
    text = write_csv(None, ("a", "b"), rows, {"cmd": "census", "N": "8,27"})
    assert text.splitlines()[0] == "# cmd=census N=8,27"
    assert parse_csv(text) == [{"a": "1", "b": "2.5"}, {"a": "3", "b": "-1"}]
    path = tmp_path / "out.csv"
    write_csv(path, ("a", "b"), rows)
    assert path.read_text() == "a,b\n1,2.5\n3,-1\n"
    fh = io.StringIO()
    assert write_csv(fh, ("a",), rows) is None and fh.getvalue().startswith("a\n")


def test_check_points():
    assert check_points([[0, 1, 2]]).dtype == np.float64
    for bad in (np.zeros((3, 2)), np.zeros((0, 3)), [[np.inf, 0, 0]]):
        with pytest.raises(ValueError):
            check_points(bad)


def test_check_vector():
    assert check_vector([1, 2], 2).dtype == np.float64
    with pytest.raises(ValueError):
        check_vector([1, 2], 3)
    with pytest.raises(ValueError):
        check_vector([1, np.nan], 2)


def test_check_positive():
    assert check_positive(3, "n", integer=True) == 3
    assert check_positive(0.5, "eps") == 0.5
    for value, integer in ((0, True), (2.5, True), (True, True), (-1e-3, False), ("1", False)):
        with pytest.raises(ValueError):
            check_positive(value, "v", integer=integer)


def test_check_variant():
    assert check_variant("hodlr") == "hodlr"
    with pytest.raises(ValueError):
        check_variant("HODLR")
