import numpy as np
import pytest

from choreoforge import audio, dataset, motion as mo
from choreoforge.errors import FormatError


def test_featurize_cache_matches_direct(tiny_corpus, tmp_path):
    cache = dataset.featurize(tiny_corpus, tmp_path / "cache")
    cached = dataset.load_corpus(tiny_corpus, ("test",), cache)
    direct = dataset.load_corpus(tiny_corpus, ("test",), tmp_path / "empty")
    assert len(cached) == len(direct) > 0
    for a, b in zip(cached, direct):
        assert (a.pair_id, a.index, a.genre) == (b.pair_id, b.index, b.genre)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.image, b.image)
        assert a.fragment == b.fragment


def test_records_are_aligned_clips(tiny_corpus):
    recs = dataset.load_corpus(tiny_corpus, ("train", "val", "test"))
    assert len(recs) == 12 * 2
    for r in recs:
        assert r.features.shape == (120, audio.FEATURE_DIM)
        assert r.image.shape == (224, 224, 3)
        assert len(r.fragment) == mo.CLIP_FRAMES


def test_cut_track_drops_remainder():
    clip = audio.MusicClip(np.zeros(int(9.5 * 48000)), 48000)
    mot = mo.MotionFragment(np.zeros((285, mo.FEATURE_DIM)))
    parts = dataset.cut_track(clip, mot)
    assert len(parts) == 2
    assert all(len(c) == 4 * 48000 and len(m) == 120 for c, m in parts)


def test_manifest_errors(tmp_path):
    with pytest.raises(FormatError):
        dataset.read_manifest(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(FormatError):
        dataset.read_manifest(tmp_path / "bad.json")
    (tmp_path / "empty.json").write_text("{}")
    with pytest.raises(FormatError):
        dataset.read_manifest(tmp_path / "empty.json")
