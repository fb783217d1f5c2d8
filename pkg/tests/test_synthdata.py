import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from diffgan_tts.errors import CorpusError
from diffgan_tts.synthdata import (
    MANIFEST_NAME,
    MEL_CLIP,
    MELS_NAME,
    CorpusSpec,
    generate_corpus,
    load_corpus,
    render_utterance,
    save_corpus,
    speaker_envelopes,
    split_corpus,
)


def test_empty_corpus(tmp_path):
    utts, records = generate_corpus(CorpusSpec(n_utterances=0))
    assert utts == [] and records == []
    save_corpus(tmp_path / "c", utts)
    assert load_corpus(tmp_path / "c") == []


def test_same_seed_same_corpus(small_spec):
    a, _ = generate_corpus(small_spec)
    b, _ = generate_corpus(small_spec)
    for u, v in zip(a, b):
        assert u.uid == v.uid
        assert_array_equal(u.mel, v.mel)
        assert_array_equal(u.durations, v.durations)


def test_utterances_are_consistent(small_spec, small_corpus):
    assert len(small_corpus) == small_spec.n_utterances
    for u in small_corpus:
        assert u.durations.sum() == u.frames
        assert small_spec.min_frames <= u.frames <= small_spec.max_frames
        assert 0 <= u.speaker < small_spec.n_speakers
        assert u.tokens.max() < small_spec.n_tokens
        assert np.all(np.abs(u.mel) <= MEL_CLIP)
        assert_array_equal(u.mel, u.mel.astype(np.float32))


def test_speakers_differ(small_spec):
    env = speaker_envelopes(small_spec)
    assert env.shape == (small_spec.n_speakers, small_spec.mel_bins)
    assert not np.allclose(env[0], env[1])


def test_speakers_get_distinct_pitch_and_energy_contours(small_spec):
    tokens, durations = [3, 7, 7, 12], [2, 3, 1, 4]
    a, b = (render_utterance(small_spec, tokens, durations, s, np.random.default_rng(0)) for s in (0, 1))
    shift = a.pitch - b.pitch
    assert abs(shift[0]) > 0
    np.testing.assert_allclose(shift, shift[0], atol=1e-12)
    assert not np.allclose(a.energy, b.energy)
    assert a.mel.shape == b.mel.shape == (10, small_spec.mel_bins)


def test_save_load_is_exact(small_corpus, small_spec, tmp_path):
    save_corpus(tmp_path, small_corpus, small_spec)
    loaded = load_corpus(tmp_path)
    assert [u.uid for u in loaded] == [u.uid for u in small_corpus]
    for u, v in zip(small_corpus, loaded):
        assert u.speaker == v.speaker
        for field in ("tokens", "mel", "durations", "pitch", "energy"):
            assert_array_equal(getattr(u, field), getattr(v, field))
    assert json.loads((tmp_path / "corpus.json").read_text())["seed"] == small_spec.seed


def test_truncated_mels_are_reported(small_corpus, tmp_path):
    save_corpus(tmp_path, small_corpus)
    blob = (tmp_path / MELS_NAME).read_bytes()
    (tmp_path / MELS_NAME).write_bytes(blob[:-4])
    with pytest.raises(CorpusError, match="truncated"):
        load_corpus(tmp_path)


def test_corrupt_manifest_line(small_corpus, tmp_path):
    save_corpus(tmp_path, small_corpus)
    manifest = tmp_path / MANIFEST_NAME
    lines = manifest.read_text().splitlines()
    lines[1] = "{not json"
    manifest.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorpusError, match=":2:"):
        load_corpus(tmp_path)


def test_manifest_with_inconsistent_durations(small_corpus, tmp_path):
    save_corpus(tmp_path, small_corpus[:1])
    manifest = tmp_path / MANIFEST_NAME
    record = json.loads(manifest.read_text())
    record["durations"][0] += 1
    manifest.write_text(json.dumps(record) + "\n")
    with pytest.raises(CorpusError, match="sum of durations"):
        load_corpus(tmp_path)


def test_missing_corpus(tmp_path):
    with pytest.raises(CorpusError, match="no corpus manifest"):
        load_corpus(tmp_path / "nowhere")


def test_spec_validation():
    with pytest.raises(ValueError):
        CorpusSpec(min_frames=10, max_frames=5)
    with pytest.raises(ValueError):
        CorpusSpec(n_utterances=-1)


def test_split_corpus(small_corpus):
    train, valid = split_corpus(small_corpus, 2)
    assert len(train) == 4 and len(valid) == 2
    assert valid[-1] is small_corpus[-1]
    assert split_corpus(small_corpus, 99)[0] == []
