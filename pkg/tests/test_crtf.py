"""CRTF tensor container and key=value manifests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radlab.crtf import (CrtfError, load_manifest, load_tensor, save_manifest,
                         save_tensor)


class TestTensorRoundTrip:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        for shape in ((), (5,), (3, 4), (2, 3, 4, 5)):
            arr = rng.standard_normal(shape).astype(np.float32)
            p = tmp_path / "t.crtf"
            save_tensor(p, arr)
            back = load_tensor(p)
            assert back.dtype == np.float32
            np.testing.assert_array_equal(back, arr.reshape(back.shape))

    def test_saved_bytes_deterministic(self, tmp_path):
        arr = np.arange(12, dtype=np.float32).reshape(3, 4)
        save_tensor(tmp_path / "a", arr)
        save_tensor(tmp_path / "b", arr)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "t.crtf"
        save_tensor(p, np.ones(3, np.float32))
        raw = bytearray(p.read_bytes())
        raw[:4] = b"NOPE"
        p.write_bytes(bytes(raw))
        with pytest.raises(CrtfError, match="magic"):
            load_tensor(p)

    def test_truncated_payload_reports_byte_counts(self, tmp_path):
        p = tmp_path / "t.crtf"
        save_tensor(p, np.ones(10, np.float32))
        raw = p.read_bytes()
        p.write_bytes(raw[:-8])
        with pytest.raises(CrtfError, match=r"\d+"):
            load_tensor(p)

    def test_dtype_byte_mismatch_rejected(self, tmp_path):
        p = tmp_path / "t.crtf"
        save_tensor(p, np.ones(2, np.float32))
        raw = bytearray(p.read_bytes())
        raw[5] = 0x7F  # dtype code
        p.write_bytes(bytes(raw))
        with pytest.raises(CrtfError, match="dtype"):
            load_tensor(p)


class TestManifest:
    def test_round_trip_preserves_unknown_keys(self, tmp_path):
        entries = {"stage": "simclr", "seed": "3", "custom.future_key": "x y z"}
        p = tmp_path / "manifest.txt"
        save_manifest(p, entries)
        assert load_manifest(p) == entries

    def test_plain_text_key_value_lines(self, tmp_path):
        p = tmp_path / "manifest.txt"
        save_manifest(p, {"a": "1", "b": "two"})
        assert p.read_text() == "a=1\nb=two\n"


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, width=32), min_size=1, max_size=64),
       st.integers(1, 3))
def test_round_trip_property(values, ndim):
    import tempfile
    from pathlib import Path
    arr = np.array(values, np.float32)
    if ndim == 2:
        arr = arr.reshape(len(values), 1)
    elif ndim == 3:
        arr = arr.reshape(1, len(values), 1)
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "t"
        save_tensor(p, arr)
        np.testing.assert_array_equal(load_tensor(p), arr)
