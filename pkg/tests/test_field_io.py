import csv
import json

import numpy as np
import pytest

from gpam.analysis import finish, metric
from gpam.field_io import (
    HEADER,
    FieldFormatError,
    decode_field,
    encode_field,
    load_trajectory,
    read_field,
    save_trajectory,
    write_field,
    write_field_csv,
    write_report,
    write_table_csv,
)
from gpam.fields import sample_white_noise
from gpam.spde_solver import solve_gpam


def test_field_file_round_trip(tmp_path, grid32):
    field = sample_white_noise(1, grid32)
    path = write_field(tmp_path / "nested" / "xi.gpf", field)
    assert path.stat().st_size == HEADER.size + 8 * 32 * 32
    np.testing.assert_array_equal(read_field(path).values, field.values)


def test_decode_rejects_corrupt_data(grid32):
    data = encode_field(sample_white_noise(1, grid32))
    with pytest.raises(FieldFormatError):
        decode_field(b"XXXX" + data[4:])
    with pytest.raises(FieldFormatError):
        decode_field(data[:-8])
    with pytest.raises(FieldFormatError):
        decode_field(data[:6])
    with pytest.raises(FieldFormatError):
        decode_field(HEADER.pack(b"GPF1", 24, 0) + bytes(8 * 24 * 24))


def test_decode_rejects_non_finite_values(grid32):
    values = np.zeros(32 * 32)
    values[7] = np.nan
    data = HEADER.pack(b"GPF1", 32, 0) + values.astype("<f8").tobytes()
    with pytest.raises(FieldFormatError):
        decode_field(data)


def test_missing_file(tmp_path):
    with pytest.raises(FieldFormatError):
        read_field(tmp_path / "absent.gpf")


def test_csv_exports(tmp_path, grid32):
    field = sample_white_noise(2, grid32)
    with write_field_csv(tmp_path / "xi.csv", field).open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 32 * 32
    assert float(rows[1]["x2"]) == pytest.approx(grid32.spacing)
    assert float(rows[1]["value"]) == field.at((0, 1))

    table = write_table_csv(tmp_path / "t.csv", [{"a": 1, "b": 2.5}, {"a": 3, "b": -1.0}])
    assert table.read_text(encoding="utf-8").splitlines() == ["a,b", "1,2.5", "3,-1.0"]
    assert write_table_csv(tmp_path / "empty.csv", []).read_text(encoding="utf-8") == ""


def test_reports(tmp_path):
    report = finish("demo", {"n": 32}, [metric("x", 0.5, "<", 1.0, "claim")])
    data = json.loads(write_report(tmp_path / "demo.json", report).read_text(encoding="utf-8"))
    assert data["status"] == "pass"
    assert data["metrics"][0]["name"] == "x"
    plain = json.loads(write_report(tmp_path / "rows.json", [{"b": 1, "a": 2}]).read_text(encoding="utf-8"))
    assert plain == [{"a": 2, "b": 1}]


def test_trajectory_round_trip(tmp_path, pde32, xi32):
    traj = solve_gpam(pde32.model_copy(update={"save_levels": 2}), "sin", xi32)
    directory = save_trajectory(tmp_path / "run", traj, {"grid_n": 32}, seed=7)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 7
    assert manifest["params"]["g"] == "sin" and manifest["params"]["grid_n"] == 32
    loaded = load_trajectory(directory)
    assert loaded.times == traj.times
    assert loaded.steps == traj.steps
    np.testing.assert_array_equal(loaded.final.values, traj.final.values)
    assert not loaded.blowup


def test_trajectory_without_manifest(tmp_path):
    with pytest.raises(FieldFormatError):
        load_trajectory(tmp_path)
