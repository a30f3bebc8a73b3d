import struct

import numpy as np
import pytest

from wafl import storage
from wafl.datamodel import REAL, Dataset
from wafl.errors import FormatError, MissingFeatures


def test_manifest_round_trip(tiny_dataset, tmp_path):
    p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
    storage.save_manifest(tiny_dataset.videos, p1)
    loaded = storage.load_manifest(p1)
    assert loaded == tiny_dataset.videos
    storage.save_manifest(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_features_round_trip(tiny_dataset, tmp_path):
    p1, p2 = tmp_path / "f1.bin", tmp_path / "f2.bin"
    storage.save_features(tiny_dataset.feature_store, p1)
    loaded = storage.load_features(p1)
    assert list(loaded) == list(tiny_dataset.feature_store)
    for vid, feats in tiny_dataset.feature_store.items():
        assert loaded[vid] == feats
    storage.save_features(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_feature_layout(tmp_path, two_video_dataset):
    buf = storage.features_to_bytes(two_video_dataset.feature_store)
    assert buf[:8] == b"WAFLFT01"
    version, n_videos, id_len = struct.unpack_from("<III", buf, 8)
    assert (version, n_videos, id_len) == (1, 2, 1)
    assert buf[20:21] == b"a"
    n_tok, T_v, k_v = struct.unpack_from("<III", buf, 21)
    assert (n_tok, T_v, k_v) == (4, 3, 4)
    first = np.frombuffer(buf, "<f4", count=12, offset=33).reshape(3, 4)
    np.testing.assert_array_equal(first, two_video_dataset.feature_store["a"][0].visual)


def test_bad_magic(tmp_path, two_video_dataset):
    buf = bytearray(storage.features_to_bytes(two_video_dataset.feature_store))
    buf[:8] = b"NOTMAGIC"
    with pytest.raises(FormatError):
        storage.features_from_bytes(bytes(buf))


def test_truncated(two_video_dataset):
    buf = storage.features_to_bytes(two_video_dataset.feature_store)
    with pytest.raises(FormatError):
        storage.features_from_bytes(buf[:-3])


def test_token_count_mismatch(tmp_path, two_video_dataset):
    store = dict(two_video_dataset.feature_store)
    store["a"] = store["a"][:3]
    d = tmp_path / "ds"
    d.mkdir()
    storage.save_manifest(two_video_dataset.videos, d / storage.MANIFEST_NAME)
    storage.save_features(store, d / storage.FEATURES_NAME)
    with pytest.raises(MissingFeatures):
        storage.load_dataset(d)


def test_missing_feature_file(tmp_path, two_video_dataset):
    storage.save_manifest(two_video_dataset.videos, tmp_path / storage.MANIFEST_NAME)
    with pytest.raises(MissingFeatures):
        storage.load_dataset(tmp_path)
    assert len(storage.load_dataset(tmp_path, with_features=False).videos) == 2


def test_manifest_defaults_and_unknown_fields(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{"videos": [{"id": "x", "duration": 2, "extra": 1, '
                 '"tokens": [{"word": "hi", "t_s": 0, "t_e": 0.5, "conf": 0.9}], '
                 '"gt_segments": []}], "version": 3}')
    (v,) = storage.load_manifest(p)
    assert v.tokens[0].label_v == REAL and v.tokens[0].label_a == REAL
    assert v.duration == 2.0


def test_dataset_dir_round_trip(tiny_dataset, tmp_path):
    storage.save_dataset(tiny_dataset, tmp_path / "d")
    again = storage.load_dataset(tmp_path / "d")
    assert again.videos == tiny_dataset.videos
    assert isinstance(again, Dataset) and again.feature_dims == tiny_dataset.feature_dims


def test_resolve_split(tiny_dataset, tmp_path):
    assert storage.resolve_split(tmp_path, "train") == tmp_path
    storage.save_dataset(tiny_dataset, tmp_path / "train")
    assert storage.resolve_split(tmp_path, "train") == tmp_path / "train"
