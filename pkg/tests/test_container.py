import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from gridshock.container import MAGIC, peek_schema, read_container, write_container
from gridshock.errors import FileFormatError


def _sample_arrays(rng):
    return {
        "floats": rng.normal(size=(3, 4)),
        "ints": rng.integers(-5, 5, size=(2, 6)),
        "flags": rng.integers(0, 2, size=7).astype(np.uint8),
    }


def test_roundtrip_preserves_values_and_dtypes(tmp_path):
    rng = np.random.default_rng(0)
    arrays = _sample_arrays(rng)
    meta = {"name": "demo", "nested": {"k": [1, 2, 3]}}
    path = tmp_path / "blob.gshk"
    write_container(path, "schema-x", meta, arrays)
    meta2, arrays2 = read_container(path, "schema-x")
    assert meta2 == meta
    assert set(arrays2) == set(arrays)
    for name in arrays:
        assert_array_equal(arrays2[name], arrays[name])
    assert arrays2["floats"].dtype == np.float64
    assert arrays2["ints"].dtype == np.int64
    assert arrays2["flags"].dtype == np.uint8


def test_write_is_byte_deterministic(tmp_path):
    rng = np.random.default_rng(1)
    arrays = _sample_arrays(rng)
    a, b = tmp_path / "a.gshk", tmp_path / "b.gshk"
    write_container(a, "schema-x", {"run": 1}, arrays)
    write_container(b, "schema-x", {"run": 1}, arrays)
    assert a.read_bytes() == b.read_bytes()


def test_bool_arrays_stored_as_bytes(tmp_path):
    path = tmp_path / "m.gshk"
    write_container(path, "s", {}, {"mask": np.array([True, False, True])})
    _, arrays = read_container(path, "s")
    assert arrays["mask"].dtype == np.uint8
    assert_array_equal(arrays["mask"], [1, 0, 1])


def test_peek_schema(tmp_path):
    path = tmp_path / "p.gshk"
    write_container(path, "gridshock-ds-v1", {}, {"x": np.zeros(2)})
    assert peek_schema(path) == "gridshock-ds-v1"


def test_schema_mismatch_rejected(tmp_path):
    path = tmp_path / "p.gshk"
    write_container(path, "schema-a", {}, {"x": np.zeros(2)})
    with pytest.raises(FileFormatError, match="schema"):
        read_container(path, "schema-b")


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(FileFormatError, match="magic"):
        read_container(path, "s")
    with pytest.raises(FileFormatError, match="magic"):
        peek_schema(path)


def test_truncated_header_rejected(tmp_path):
    path = tmp_path / "p.gshk"
    write_container(path, "s", {}, {"x": np.zeros(2)})
    blob = path.read_bytes()
    path.write_bytes(blob[: len(MAGIC) + 12])
    with pytest.raises(FileFormatError, match="truncated"):
        read_container(path, "s")


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "p.gshk"
    write_container(path, "s", {}, {"x": np.arange(100, dtype=np.float64)})
    blob = path.read_bytes()
    path.write_bytes(blob[:-16])
    with pytest.raises(FileFormatError, match="truncated payload"):
        read_container(path, "s")


def test_illegal_dtype_in_header_rejected(tmp_path):
    path = tmp_path / "p.gshk"
    write_container(path, "s", {}, {"x": np.zeros(4)})
    blob = path.read_bytes()
    hlen = int.from_bytes(blob[len(MAGIC) : len(MAGIC) + 8], "little")
    start = len(MAGIC) + 8
    header = json.loads(blob[start : start + hlen])
    header["arrays"][0]["dtype"] = "<f2"
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path.write_bytes(MAGIC + len(hb).to_bytes(8, "little") + hb + blob[start + hlen :])
    with pytest.raises(FileFormatError, match="dtype"):
        read_container(path, "s")


def test_float32_input_upcast(tmp_path):
    path = tmp_path / "p.gshk"
    write_container(path, "s", {}, {"x": np.arange(3, dtype=np.float32)})
    _, arrays = read_container(path, "s")
    assert arrays["x"].dtype == np.float64
    assert_array_equal(arrays["x"], [0.0, 1.0, 2.0])
