import json

import numpy as np
import pytest

from cvcollect import io
from cvcollect.baselines import cs_select
from cvcollect.ingest import synth_trip
from cvcollect.mpla import mpla_encode
from cvcollect.types import ThresholdConfig


def test_transmission_round_trip_bit_exact(tmp_path):
    trip = synth_trip("random_walk", 500, 2)
    cfg = ThresholdConfig((1.0, 1e-4, 1e-4), 20)
    tx = mpla_encode(trip, cfg)
    io.write_transmission(tmp_path / "a", tx, cfg, "trip-a")
    back, header = io.read_transmission(tmp_path / "a")
    assert np.array_equal(back.indices, tx.indices)
    assert np.array_equal(back.ticks, tx.ticks)
    assert back.values.tobytes() == tx.values.tobytes()
    assert header["trip_id"] == "trip-a" and header["N"] == 500
    assert io.threshold_config(header) == cfg


def test_transmission_keeps_codec_metadata(tmp_path):
    tx = cs_select(synth_trip("linear", 300, 1), 0.2, 9).tx
    io.write_transmission(tmp_path / "b", tx)
    back, header = io.read_transmission(tmp_path / "b")
    assert back.meta["seed"] == 9
    assert io.threshold_config(header) is None


def test_transmission_bad_columns(tmp_path):
    tx = mpla_encode(synth_trip("constant", 10), ThresholdConfig((1.0, 1.0, 1.0), 5))
    io.write_transmission(tmp_path / "c", tx)
    (tmp_path / "c.csv").write_text("i,t,v1\n1,0.0,1.0\n")
    with pytest.raises(ValueError):
        io.read_transmission(tmp_path / "c")


def test_rows_round_trip_with_repr(tmp_path):
    rows = [{"a": 0.1 + 0.2, "b": np.int64(3), "c": None}]
    io.write_rows(tmp_path / "r.csv", rows)
    back = io.read_rows(tmp_path / "r.csv")
    assert float(back[0]["a"]) == 0.1 + 0.2
    assert back[0]["b"] == "3" and back[0]["c"] == ""


def test_jsonable():
    out = io._jsonable({"x": np.float64(1.5), "y": (np.int32(2), float("nan"))})
    assert json.dumps(out) == '{"x": 1.5, "y": [2, null]}'


def test_manifest_verify(tmp_path):
    (tmp_path / "sub").mkdir()
    (tmp_path / "a.txt").write_text("one")
    (tmp_path / "sub" / "b.txt").write_text("two")
    io.write_manifest(tmp_path, "sweep", {"k": 50}, [1, 2])
    man = io.read_manifest(tmp_path)
    assert set(man["outputs"]) == {"a.txt", "sub/b.txt"}
    assert man["seeds"] == [1, 2] and man["config"] == {"k": 50}
    assert io.verify_manifest(tmp_path) == []
    (tmp_path / "a.txt").write_text("changed")
    (tmp_path / "extra.txt").write_text("")
    assert io.verify_manifest(tmp_path) == ["a.txt", "extra.txt"]
