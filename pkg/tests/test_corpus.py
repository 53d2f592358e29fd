import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avunit.corpus import (
    AUDIO_DIM,
    VISUAL_DIM,
    AvSample,
    CorpusConfig,
    ManifestEntry,
    CorpusManifest,
    ParallelCorpus,
    ToyLanguageSpec,
    make_language,
    make_parallel_corpus,
    make_speakers,
    mix_noise,
    babble_track,
    read_sample,
    synth_sample,
    write_sample,
)
from avunit.modeling import rng_for

from conftest import tiny_corpus_config


# ---------------------------------------------------------------------------
# make_language


def test_make_language_deterministic():
    a = make_language(0, 8, 10)
    b = make_language(0, 8, 10)
    assert a.to_json() == b.to_json()


def test_make_language_seed_changes_lexicon():
    a = make_language(0, 8, 10)
    b = make_language(1, 8, 10)
    assert a.to_json() != b.to_json()


def test_make_language_rejects_small_p():
    with pytest.raises(ValueError):
        make_language(0, 2, 10)


def test_make_language_rejects_small_lexicon():
    with pytest.raises(ValueError):
        make_language(0, 8, 5)


def test_language_invariants():
    lang = make_language(3, 12, 20)
    strings = list(lang.lexicon.values())
    assert len(set(strings)) == len(strings)  # injective
    inventory = set(lang.phoneme_inventory)
    for s in strings:
        assert set(s) <= inventory
        assert 1 <= len(s) <= 4


def test_lexicon_must_be_injective():
    with pytest.raises(ValueError, match="injective"):
        ToyLanguageSpec("bad", (0, 1), {0: (0, 1), 1: (0, 1)}, 4)


# ---------------------------------------------------------------------------
# synth_sample


def test_empty_concepts_give_empty_sample():
    lang = make_language(0, 8, 10)
    spk = make_speakers(4, 0)[0]
    s = synth_sample(lang, spk, [], 0)
    assert s.num_audio_frames == 0
    assert s.num_visual_frames == 0
    assert s.alignment.size == 0


def test_single_phoneme_forced_duration():
    lang = ToyLanguageSpec("t", (5,), {0: (5,)}, 4)
    spk = make_speakers(4, 0)[0]
    s = synth_sample(lang, spk, [0], 7, duration_jitter=0)
    assert s.num_audio_frames == 4
    assert s.num_visual_frames == 2
    assert list(s.alignment) == [5, 5, 5, 5]


def test_unknown_concept_rejected():
    lang = make_language(0, 8, 10)
    spk = make_speakers(4, 0)[0]
    with pytest.raises(KeyError):
        synth_sample(lang, spk, [999], 0)


def test_speaker_separation_is_exact():
    # same seed => identical noise and durations, so the difference between
    # two speakers' feature matrices is exactly the profile difference
    lang = make_language(0, 8, 10)
    a, b = make_speakers(4, 0)[:2]
    b_same_energy = type(b)(b.speaker_id, b.spectral_color, b.lip_shape_offset, a.base_energy)
    sa = synth_sample(lang, a, [0, 1, 2], 11)
    sb = synth_sample(lang, b_same_energy, [0, 1, 2], 11)
    diff = sa.audio_frames - sb.audio_frames
    expected = a.base_energy * np.linalg.norm(a.spectral_color - b.spectral_color)
    per_frame = np.linalg.norm(diff, axis=1)
    assert np.allclose(per_frame, expected, rtol=1e-4)
    assert per_frame.min() >= 0.9 * np.linalg.norm(a.spectral_color - b.spectral_color)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_av_sample_frame_ratio_property(seed, n_concepts):
    lang = make_language(1, 8, 12)
    spk = make_speakers(4, 1)[seed % 4]
    rng = np.random.default_rng(seed)
    concepts = rng.integers(0, 12, size=n_concepts)
    s = synth_sample(lang, spk, concepts, seed)
    assert s.num_audio_frames == 2 * s.num_visual_frames
    assert s.alignment.shape[0] == s.num_audio_frames


# ---------------------------------------------------------------------------
# parallel corpus


def test_parallel_corpus_shape(tiny_corpus):
    n_langs = len(tiny_corpus.languages)
    cfg = tiny_corpus.config
    assert len(tiny_corpus.manifest.entries) == n_langs * (
        cfg.train_sentences + cfg.valid_sentences + cfg.test_sentences
    )
    for concepts, realizations in tiny_corpus.manifest.parallel.items():
        assert set(realizations) == set(tiny_corpus.languages)


def test_parallel_index_counts():
    corpus = make_parallel_corpus(tiny_corpus_config(languages=3, train_sentences=20))
    train_groups = [
        c for c, r in corpus.manifest.parallel.items()
        if corpus.manifest.entries[next(iter(r.values()))].split == "train"
    ]
    assert len(train_groups) == 20
    assert all(len(corpus.manifest.parallel[c]) == 3 for c in train_groups)


def test_splits_disjoint(tiny_corpus):
    by_split = {}
    for entry in tiny_corpus.manifest.entries:
        by_split.setdefault(entry.split, set()).add(entry.concepts)
    assert not (by_split["train"] & by_split["test"])
    assert not (by_split["train"] & by_split["valid"])
    assert not (by_split["valid"] & by_split["test"])


def test_manifest_hash_stable(tiny_corpus):
    again = make_parallel_corpus(tiny_corpus.config)
    assert tiny_corpus.manifest_hash() == again.manifest_hash()


def test_manifest_rejects_cross_split_sentence():
    entries = (
        ManifestEntry("a", "L0", "spk0", (1, 2), "train"),
        ManifestEntry("b", "L0", "spk0", (1, 2), "test"),
    )
    with pytest.raises(ValueError, match="splits"):
        CorpusManifest(entries, {(1, 2): {"L0": 0}})


def test_corpus_requires_minimums():
    with pytest.raises(ValueError):
        make_parallel_corpus(tiny_corpus_config(languages=1))
    with pytest.raises(ValueError):
        make_parallel_corpus(tiny_corpus_config(speakers=3))


def test_sample_determinism(tiny_corpus):
    s1 = tiny_corpus.sample(0)
    fresh = make_parallel_corpus(tiny_corpus.config)
    s2 = fresh.sample(0)
    assert np.array_equal(s1.audio_frames, s2.audio_frames)
    assert np.array_equal(s1.visual_frames, s2.visual_frames)


# ---------------------------------------------------------------------------
# mix_noise


def test_mix_noise_snr_zero_matches_power():
    rng = np.random.default_rng(0)
    audio = rng.normal(0, 1, (40, AUDIO_DIM)).astype(np.float32)
    noise = rng.normal(0, 2.5, (40, AUDIO_DIM)).astype(np.float32)
    mixed = mix_noise(audio, noise, 0.0)
    added = mixed - audio
    assert math.isclose(float(np.mean(added**2)), float(np.mean(audio**2)), rel_tol=1e-6)


def test_mix_noise_minus5_power_ratio():
    rng = np.random.default_rng(1)
    audio = rng.normal(0, 1, (64, AUDIO_DIM)).astype(np.float32)
    noise = rng.normal(0, 0.5, (64, AUDIO_DIM)).astype(np.float32)
    mixed = mix_noise(audio, noise, -5.0)
    added = mixed - audio
    ratio = float(np.mean(added**2)) / float(np.mean(audio**2))
    assert math.isclose(ratio, 10 ** 0.5, rel_tol=1e-5)


def test_mix_noise_alpha_against_power_measurement():
    # recompute the implied scale from the output and compare with the
    # closed form, to 1e-9 relative
    rng = np.random.default_rng(2)
    audio = rng.normal(0, 1.3, (50, AUDIO_DIM))
    noise = rng.normal(0, 0.7, (50, AUDIO_DIM))
    snr = 7.5
    mixed = mix_noise(audio, noise, snr)
    added = mixed - audio
    alpha_measured = math.sqrt(float(np.mean(added**2)) / float(np.mean(noise**2)))
    alpha_expected = math.sqrt(float(np.mean(audio**2)) / (float(np.mean(noise**2)) * 10 ** (snr / 10)))
    assert math.isclose(alpha_measured, alpha_expected, rel_tol=1e-9)


def test_mix_noise_clean_sentinel_returns_input():
    rng = np.random.default_rng(3)
    audio = rng.normal(0, 1, (10, AUDIO_DIM)).astype(np.float32)
    noise = rng.normal(0, 1, (10, AUDIO_DIM)).astype(np.float32)
    out = mix_noise(audio, noise, math.inf)
    assert np.array_equal(out, audio)


def test_mix_noise_tiles_short_noise():
    rng = np.random.default_rng(4)
    audio = rng.normal(0, 1, (20, AUDIO_DIM)).astype(np.float32)
    noise = rng.normal(0, 1, (6, AUDIO_DIM)).astype(np.float32)
    out = mix_noise(audio, noise, 10.0)
    assert out.shape == audio.shape


def test_mix_noise_rejects_zero_power():
    audio = np.ones((8, AUDIO_DIM), dtype=np.float32)
    with pytest.raises(ValueError, match="noise"):
        mix_noise(audio, np.zeros((8, AUDIO_DIM), dtype=np.float32), 0.0)
    with pytest.raises(ValueError, match="signal"):
        mix_noise(np.zeros((8, AUDIO_DIM), dtype=np.float32), audio, 0.0)


def test_babble_is_deterministic_and_skips_speaker(tiny_corpus):
    r1 = babble_track(tiny_corpus, 30, "spk0", rng_for(0, "b"))
    r2 = babble_track(tiny_corpus, 30, "spk0", rng_for(0, "b"))
    assert np.array_equal(r1, r2)
    assert r1.shape == (30, AUDIO_DIM)


# ---------------------------------------------------------------------------
# binary sample format and disk round trip


def test_sample_file_round_trip(tmp_path, tiny_corpus):
    sample = tiny_corpus.sample(0)
    path = tmp_path / "s.avb"
    write_sample(path, sample)
    audio, visual = read_sample(path)
    assert np.array_equal(audio, sample.audio_frames)
    assert np.array_equal(visual, sample.visual_frames)
    raw = path.read_bytes()
    assert raw[:4] == b"AVSB"
    assert len(raw) == 16 + 4 * (audio.size + visual.size)


def test_corpus_save_load_round_trip(tmp_path):
    corpus = make_parallel_corpus(tiny_corpus_config(train_sentences=6, valid_sentences=2, test_sentences=2))
    corpus.save(tmp_path / "c")
    loaded = ParallelCorpus.load(tmp_path / "c")
    assert loaded.manifest_hash() == corpus.manifest_hash()
    for i in range(4):
        a = corpus.sample(i)
        b = loaded.sample(i)
        assert np.array_equal(a.audio_frames, b.audio_frames)
        assert np.array_equal(a.alignment, b.alignment)
    assert loaded.languages.keys() == corpus.languages.keys()
