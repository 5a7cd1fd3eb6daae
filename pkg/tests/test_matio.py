import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from osdelta.errors import DataError, FormatError, IntegrityError, StructuralError
from osdelta.matio import (LayerSet, decode_layer_set, delta, encode_layer_set, load_layer_set,
                           load_manifest, save_layer_set, save_manifest)


def raw_container(layers):
    """Byte-exact SDT1 built straight from the format description."""
    out = b"SDT1" + struct.pack("<I", len(layers))
    for lid, rows, cols, values in layers:
        raw = lid.encode()
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<II", rows, cols)
        out += struct.pack(f"<{len(values)}f", *values)
    return out


def test_zero_layer(tmp_path):
    p = tmp_path / "z.sdt"
    p.write_bytes(raw_container([("w", 2, 3, [0.0] * 6)]))
    ls = load_layer_set(p)
    assert len(ls) == 1
    assert ls["w"].shape == (2, 3)
    assert not ls["w"].any()


def test_order_preserved(tmp_path):
    p = tmp_path / "ab.sdt"
    p.write_bytes(raw_container([("a", 1, 1, [1.0]), ("b", 1, 2, [2.0, 3.0])]))
    assert load_layer_set(p).ids == ["a", "b"]


def test_payload_one_float_short():
    buf = raw_container([("a", 1, 1, [1.0]), ("layer.q", 2, 2, [1.0, 2.0, 3.0, 4.0])])[:-4]
    with pytest.raises(IntegrityError, match="layer.q"):
        decode_layer_set(buf)


def test_bad_magic_and_header():
    with pytest.raises(FormatError):
        decode_layer_set(b"XXXX\x00\x00\x00\x00")
    good = raw_container([("abc", 1, 1, [1.0])])
    with pytest.raises(FormatError):
        decode_layer_set(good[:10])


def test_trailing_bytes():
    with pytest.raises(IntegrityError):
        decode_layer_set(raw_container([("a", 1, 1, [1.0])]) + b"\x00")


def test_non_finite_names_layer_and_index():
    buf = raw_container([("ok", 1, 1, [0.0]), ("bad", 2, 2, [0.0, 1.0, float("nan"), 2.0])])
    with pytest.raises(DataError, match=r"'bad'.*index 2"):
        decode_layer_set(buf)


def test_duplicate_ids_rejected():
    with pytest.raises(FormatError):
        decode_layer_set(raw_container([("a", 1, 1, [1.0]), ("a", 1, 1, [2.0])]))


def test_writer_matches_hand_built_bytes():
    vals = [0.5, -1.25, 3.0, 0.0, -0.0, 7.75]
    buf = raw_container([("x", 2, 3, vals)])
    assert encode_layer_set(decode_layer_set(buf)) == buf


layer_strategy = st.tuples(
    st.text(min_size=0, max_size=8),
    st.integers(1, 5),
    st.integers(1, 5),
).flatmap(lambda t: st.tuples(
    st.just(t[0]), st.just(t[1]), st.just(t[2]),
    st.lists(st.floats(width=32, allow_nan=False, allow_infinity=False),
             min_size=t[1] * t[2], max_size=t[1] * t[2])))


@settings(max_examples=60, deadline=None)
@given(st.lists(layer_strategy, max_size=4, unique_by=lambda t: t[0]))
def test_round_trip_byte_identical(layers):
    buf = raw_container(layers)
    assert encode_layer_set(decode_layer_set(buf)) == buf


def test_save_load_file(tmp_path):
    ls = LayerSet.from_pairs([("a", np.arange(6).reshape(2, 3)), ("b", [[1.5]])])
    p = tmp_path / "m.sdt"
    save_layer_set(ls, p)
    back = load_layer_set(p)
    assert back.ids == ["a", "b"]
    np.testing.assert_array_equal(back["a"], ls["a"])


def test_delta_identical_is_zero():
    a = LayerSet.from_pairs([("w", np.random.default_rng(0).standard_normal((4, 3)))])
    assert not delta(a, a)["w"].any()


def test_delta_identity_arithmetic():
    f = LayerSet.from_pairs([("w", [[2, 0], [0, 2]])])
    p = LayerSet.from_pairs([("w", [[1, 0], [0, 1]])])
    np.testing.assert_array_equal(delta(f, p)["w"], [[1, 0], [0, 1]])


def test_delta_matches_elementwise_oracle():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((8, 8)).astype(np.float32)
    b = rng.standard_normal((8, 8)).astype(np.float32)
    got = delta(LayerSet.from_pairs([("w", a)]), LayerSet.from_pairs([("w", b)]))["w"]
    for i in range(8):
        for j in range(8):
            assert got[i, j] == np.float32(a[i, j] - b[i, j])


def test_delta_plus_base_is_exact_for_representable_values():
    rng = np.random.default_rng(2)
    a = rng.integers(-1000, 1000, (5, 7)) / 8.0
    b = rng.integers(-1000, 1000, (5, 7)) / 8.0
    fa, fb = LayerSet.from_pairs([("w", a)]), LayerSet.from_pairs([("w", b)])
    np.testing.assert_array_equal(delta(fa, fb)["w"] + fb["w"], fa["w"])


def test_delta_structural_errors():
    a = LayerSet.from_pairs([("x", np.zeros((2, 2))), ("y", np.zeros((1, 1)))])
    b = LayerSet.from_pairs([("x", np.zeros((2, 3))), ("y", np.zeros((1, 1)))])
    with pytest.raises(StructuralError, match="x"):
        delta(a, b)
    c = LayerSet.from_pairs([("y", np.zeros((1, 1))), ("x", np.zeros((2, 2)))])
    with pytest.raises(StructuralError):
        delta(a, c)


def test_layer_set_is_immutable():
    ls = LayerSet.from_pairs([("w", np.zeros((2, 2)))])
    with pytest.raises(ValueError):
        ls["w"][0, 0] = 1.0


def test_manifest_round_trip(tmp_path):
    save_manifest({"delta": "d.sdt", "importance": "z.sdt"}, tmp_path / "m.json")
    roles = load_manifest(tmp_path / "m.json")
    assert roles == {"delta": tmp_path / "d.sdt", "importance": tmp_path / "z.sdt"}
    (tmp_path / "bad.json").write_text('{"weights": "w.sdt"}')
    with pytest.raises(FormatError):
        load_manifest(tmp_path / "bad.json")
