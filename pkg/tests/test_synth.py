import dataclasses

import numpy as np
import pytest

from wafl import storage
from wafl.errors import DegenerateClass, InvalidConfig
from wafl.synth import (
    SynthConfig,
    generate,
    pooled_raw_features,
    separation_ratio,
    separation_statistic,
    split,
)


def test_deterministic_bytes(tiny_synth_config, tmp_path):
    storage.save_dataset(generate(tiny_synth_config), tmp_path / "a")
    storage.save_dataset(generate(tiny_synth_config), tmp_path / "b")
    for name in (storage.MANIFEST_NAME, storage.FEATURES_NAME):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_changes_output(tiny_synth_config):
    other = dataclasses.replace(tiny_synth_config, seed=8)
    a, b = generate(tiny_synth_config), generate(other)
    assert a.feature_store[a.videos[0].id][0] != b.feature_store[b.videos[0].id][0]


def test_fake_fraction_concentrates():
    ds = generate(SynthConfig(n_videos=100, fake_token_rate=0.1, k_v=4, k_a=4, seed=3))
    frac = ds.labels()[:, 2].mean()
    assert 0.05 <= frac <= 0.15


def test_segments_are_unions_of_fake_tokens():
    cfg = SynthConfig(n_videos=30, run_length=(1, 4), fake_token_rate=0.2, k_v=3, k_a=3, seed=5)
    for v in generate(cfg).videos:
        fake = [t for t in v.tokens if t.fake]
        covered = [t for t in v.tokens
                   if any(s.t_s <= t.t_s and t.t_e <= s.t_e for s in v.gt_segments)]
        assert fake == covered
        for s in v.gt_segments:
            inside = [t for t in v.tokens if s.t_s <= t.t_s and t.t_e <= s.t_e]
            assert inside[0].t_s == s.t_s and inside[-1].t_e == s.t_e
            for t in inside:
                assert t.fake_v == s.covers("visual") and t.fake_a == s.covers("audio")


def test_durations_abut(tiny_dataset):
    for v in tiny_dataset.videos:
        for a, b in zip(v.tokens, v.tokens[1:]):
            assert a.t_e == b.t_s
        assert all(0.2 <= t.t_e - t.t_s <= 0.8 + 1e-12 for t in v.tokens)


def test_raw_lengths_in_range(tiny_synth_config, tiny_dataset):
    for feats in tiny_dataset.feature_store.values():
        for f in feats:
            assert tiny_synth_config.T_v_raw[0] <= f.visual.shape[0] <= tiny_synth_config.T_v_raw[1]
            assert tiny_synth_config.T_a_raw[0] <= f.audio.shape[0] <= tiny_synth_config.T_a_raw[1]


def test_zero_amplitude_has_no_separation():
    cfg = SynthConfig(n_videos=120, fake_token_rate=0.2, artifact_amplitude=0.0, k_v=8, k_a=8, seed=2)
    ds = generate(cfg)
    assert ds.n_tokens >= 2000
    assert separation_statistic(ds, pooled_raw_features(ds)) < 0.05


def test_split_is_head_tail(tiny_dataset):
    tr, te = split(tiny_dataset, 4)
    assert [v.id for v in tr.videos + te.videos] == [v.id for v in tiny_dataset.videos]
    assert len(te.videos) == 4


def test_config_validation():
    with pytest.raises(InvalidConfig):
        SynthConfig(modality_mix={"visual": 0.5, "audio": 0.6})
    with pytest.raises(InvalidConfig):
        SynthConfig(k_v=1)
    with pytest.raises(InvalidConfig):
        SynthConfig(artifact_amplitude=-1)
    with pytest.raises(InvalidConfig):
        SynthConfig(tokens_per_video=(5, 2))


class TestSeparation:
    def test_identical_sets(self):
        pts = np.random.default_rng(0).normal(size=(50, 3))
        x = np.vstack([pts, pts])
        fake = np.r_[np.ones(50, bool), np.zeros(50, bool)]
        assert separation_ratio(x, fake) == pytest.approx(0.0, abs=1e-12)

    def test_offset_closed_form(self):
        rng = np.random.default_rng(1)
        real = rng.normal(scale=0.01, size=(40, 4))
        offset = np.array([6.0, 8.0, 0.0, 0.0])
        x = np.vstack([real + offset, real])
        fake = np.r_[np.ones(40, bool), np.zeros(40, bool)]
        # identical spreads, so the ratio is 100 / (2 * trace(cov))
        expected = 100.0 / (2 * real.var(axis=0).sum())
        assert separation_ratio(x, fake, eps=0.0) == pytest.approx(expected, rel=1e-9)
        assert separation_ratio(x, fake) > 100

    def test_degenerate(self):
        with pytest.raises(DegenerateClass):
            separation_ratio(np.zeros((3, 2)), np.zeros(3, bool))
