import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cmlsp.errors import FormatError
from cmlsp.formats import (HEADER, decode_checkpoint, decode_feature_bank, encode_checkpoint, encode_feature_bank,
                           load_bank, load_rows, read_checkpoint, read_csv, read_feature_bank, read_labels,
                           save_bank, write_checkpoint, write_csv, write_feature_bank, write_labels)
from cmlsp.toytrain import TrainConfig, build_model, synth_dataset, train


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, min_side=0, max_side=6),
                  elements=st.floats(width=32, allow_nan=False)))
def test_bank_round_trip_is_bit_exact(rows):
    back = decode_feature_bank(encode_feature_bank(rows))
    assert back.dtype == np.float32 and back.shape == rows.shape
    assert back.tobytes() == rows.astype("<f4").tobytes()


def test_header_layout(tmp_path):
    rows = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_feature_bank(tmp_path / "b.bin", rows)
    data = (tmp_path / "b.bin").read_bytes()
    assert data[:14] == b"CMRE" + struct.pack("<HII", 1, 2, 3)
    assert len(data) == HEADER.size + 24
    np.testing.assert_array_equal(read_feature_bank(tmp_path / "b.bin"), rows)


@pytest.mark.parametrize("mutate", [
    lambda d: b"XXXX" + d[4:],
    lambda d: d[:4] + struct.pack("<H", 2) + d[6:],
    lambda d: d[:-1],
    lambda d: d + b"\0\0\0\0",
    lambda d: d[:5],
])
def test_corrupt_banks_rejected(mutate):
    good = encode_feature_bank(np.ones((2, 2)))
    with pytest.raises(FormatError):
        decode_feature_bank(mutate(good))


def test_encode_rejects_non_matrix():
    with pytest.raises(FormatError):
        encode_feature_bank(np.zeros(3))


def test_labels_round_trip(tmp_path):
    write_labels(tmp_path / "l.json", [3, 1], [0, 1], [0, 2])
    ids, mods, cams = read_labels(tmp_path / "l.json")
    assert ids.tolist() == [3, 1] and mods.tolist() == [0, 1] and cams.tolist() == [0, 2]
    (tmp_path / "bad.json").write_text('[{"id": 1, "modality": "X", "camera": 0}]')
    with pytest.raises(FormatError):
        read_labels(tmp_path / "bad.json")
    (tmp_path / "obj.json").write_text("{}")
    with pytest.raises(FormatError):
        read_labels(tmp_path / "obj.json")


def test_bank_prefix_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    maps = rng.standard_normal((3, 2, 4, 2)).astype(np.float32)
    stripes = rng.standard_normal((3, 2, 5)).astype(np.float32)
    save_bank(tmp_path / "x", maps, [0, 1, 1], [0, 0, 1], [0, 1, 2], row_shape=maps.shape[1:], stripes=stripes)
    np.testing.assert_array_equal(load_rows(tmp_path / "x"), maps)
    b = load_bank(tmp_path / "x")
    np.testing.assert_array_equal(b.stripes, stripes)
    assert b.vectors.shape == (3, 16)
    write_labels(tmp_path / "x.json", [0], [0], [0])
    with pytest.raises(FormatError):
        load_bank(tmp_path / "x")


@pytest.fixture(scope="module")
def trained():
    cfg = TrainConfig(stream_dim=4, hidden_dim=6, embed_dim=5, local_dim=3, parts=2, epochs=1,
                      lr_backbone=0.003)
    data = synth_dataset(num_ids=4, per_id_per_modality=4)
    model = build_model(cfg, data.shape[0], data.num_ids)
    train(model, data, cfg)
    return model, cfg, data


def test_checkpoint_round_trip(trained, tmp_path):
    model, cfg, data = trained
    write_checkpoint(tmp_path / "m.ckpt", model, cfg)
    back, cfg2 = read_checkpoint(tmp_path / "m.ckpt")
    assert cfg2 == cfg
    for k in model.params:
        assert back.params[k].tobytes() == model.params[k].tobytes()
    assert back.running.mean.tobytes() == model.running.mean.tobytes()
    assert back.running.updates == model.running.updates
    a = model.embed(data.images, data.modality)
    b = back.embed(data.images, data.modality)
    assert np.array_equal(a.eglo, b.eglo)
    assert encode_checkpoint(back, cfg2) == (tmp_path / "m.ckpt").read_bytes()


def test_checkpoint_errors(trained):
    model, cfg, _ = trained
    data = encode_checkpoint(model, cfg)
    for bad in (b"NOPE" + data[4:], data[:-8], data + b"\0" * 8):
        with pytest.raises(FormatError):
            decode_checkpoint(bad)


def test_csv_round_trip(tmp_path):
    rows = [{"a": 1, "b": 0.1 + 0.2}, {"a": 2, "b": np.float64(1 / 3)}]
    write_csv(tmp_path / "t.csv", rows, ["a", "b"])
    back = read_csv(tmp_path / "t.csv")
    assert [int(r["a"]) for r in back] == [1, 2]
    assert [float(r["b"]) for r in back] == [0.1 + 0.2, 1 / 3]
