import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avunit.evaluation import (
    OracleTranscriber,
    _edit_distance,
    corpus_bleu,
    speaker_similarity,
    sync_offset,
    unit_agreement,
)
from avunit.renderer import DVector


# ---------------------------------------------------------------------------
# BLEU


def test_bleu_identity_is_100():
    refs = [[1, 2, 3], [4, 5], [6, 7, 8, 9]]
    assert corpus_bleu(refs, refs) == pytest.approx(100.0)


def test_bleu_hand_computed_case():
    # hyp "a b c d" vs ref "a b c d e": all clipped precisions 1,
    # BP = exp(1 - 5/4) -> 77.88
    bleu = corpus_bleu([["a", "b", "c", "d"]], [["a", "b", "c", "d", "e"]])
    assert bleu == pytest.approx(100 * math.exp(1 - 5 / 4), abs=0.01)
    assert bleu == pytest.approx(77.88, abs=0.01)


def test_bleu_disjoint_is_zero():
    assert corpus_bleu([[1, 2, 3]], [[4, 5, 6]]) == 0.0


def test_bleu_empty_corpus_rejected():
    with pytest.raises(ValueError, match="empty"):
        corpus_bleu([], [])


def test_bleu_count_mismatch():
    with pytest.raises(ValueError):
        corpus_bleu([[1]], [[1], [2]])


def test_bleu_permutation_invariant():
    hyps = [[1, 2, 3], [4, 5], [1, 4, 5, 2]]
    refs = [[1, 2, 4], [4, 5, 5], [1, 4, 2, 2]]
    a = corpus_bleu(hyps, refs)
    b = corpus_bleu(hyps[::-1], refs[::-1])
    assert a == pytest.approx(b)


@settings(max_examples=120, deadline=None)
@given(st.data())
def test_bleu_monotone_under_reference_substitution_bp_neutral(data):
    # monotonicity of BLEU under replacing one hypothesis with its
    # reference, in the regime where the brevity penalty stays inactive
    # (every hypothesis at least as long as its reference). With BP
    # active a counterexample exists; see the decisions ledger.
    n = data.draw(st.integers(1, 4))
    refs = []
    hyps = []
    for _ in range(n):
        ref = data.draw(st.lists(st.integers(0, 5), min_size=1, max_size=5))
        extra = data.draw(st.lists(st.integers(0, 5), min_size=0, max_size=3))
        hyp = data.draw(st.permutations(ref + extra))
        refs.append(ref)
        hyps.append(list(hyp))
    base = corpus_bleu(hyps, refs)
    k = data.draw(st.integers(0, n - 1))
    replaced = list(hyps)
    replaced[k] = list(refs[k])
    assert corpus_bleu(replaced, refs) >= base - 1e-9


# ---------------------------------------------------------------------------
# unit agreement and speaker similarity


def test_agreement_bounds():
    assert unit_agreement([1, 2, 3], [1, 2, 3]) == 1.0
    assert unit_agreement([1, 2, 3], [4, 5, 6]) == 0.0


def test_agreement_chance_level():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 100, size=20_000)
    b = rng.integers(0, 100, size=20_000)
    rate = unit_agreement(a, b)
    # binomial CI around 1/100
    sigma = math.sqrt(0.01 * 0.99 / 20_000)
    assert abs(rate - 0.01) < 4 * sigma


def test_agreement_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        unit_agreement([1, 2], [1, 2, 3])


def test_speaker_similarity_basics():
    v = np.zeros(16)
    v[0] = 1.0
    w = np.zeros(16)
    w[1] = 1.0
    assert speaker_similarity(DVector(v), DVector(v)) == pytest.approx(1.0)
    assert speaker_similarity(DVector(v), DVector(w)) == pytest.approx(0.0)


def test_speaker_similarity_rejects_unnormalized():
    with pytest.raises(ValueError, match="unit-norm"):
        speaker_similarity(np.ones(16), np.ones(16))


# ---------------------------------------------------------------------------
# sync offset


def _tracks(n=60, seed=0):
    rng = np.random.default_rng(seed)
    base = np.repeat(rng.normal(0, 1, n // 3), 3)[:n]
    energy_src = base + 0.05 * rng.normal(0, 1, n)
    audio = np.zeros((2 * n, 16), dtype=np.float32)
    audio[:, 0] = np.repeat(energy_src, 2) + 3.0
    lips = np.zeros((n, 4), dtype=np.float32)
    lips[:, 0] = base
    return audio, lips


def test_sync_offset_zero_for_aligned():
    audio, lips = _tracks()
    assert sync_offset((audio, lips)) == 0


def test_sync_offset_detects_shift():
    audio, lips = _tracks(seed=5)
    shifted = np.concatenate([np.repeat(lips[:1], 3, axis=0), lips[:-3]])
    assert sync_offset((audio, shifted)) == 3

    # independent brute-force correlation oracle over candidate lags
    energy = np.sqrt((audio.astype(np.float64) ** 2).mean(axis=1)).reshape(-1, 2).mean(axis=1)
    aper = shifted[:, 0].astype(np.float64)
    n = min(len(energy), len(aper))
    best = None
    for lag in range(-10, 11):
        lo, hi = max(0, -lag), min(n, n - lag)
        a = energy[lo:hi]
        v = aper[lo + lag:hi + lag]
        c = np.corrcoef(a, v)[0, 1]
        if best is None or c > best[0]:
            best = (c, lag)
    assert best[1] == 3


def test_sync_offset_constant_track_rejected():
    audio = np.ones((80, 16), dtype=np.float32)
    lips = np.ones((40, 4), dtype=np.float32)
    with pytest.raises(ValueError, match="constant"):
        sync_offset((audio, lips))


def test_sync_offset_too_short_rejected():
    rng = np.random.default_rng(0)
    audio = rng.normal(0, 1, (16, 16)).astype(np.float32)
    lips = rng.normal(0, 1, (8, 4)).astype(np.float32)
    with pytest.raises(ValueError, match="short"):
        sync_offset((audio, lips))


# ---------------------------------------------------------------------------
# transcriber mechanics (corpus-trained paths live in the pipeline tests)


def _transcriber():
    lexicons = {"L0": {0: (1, 2), 1: (3, 4, 5), 2: (2, 6), 3: (6, 1)}}
    unit_to_phoneme = {u: u % 8 for u in range(40)}
    unit_frames = {u: 2.0 for u in range(40)}
    return OracleTranscriber(unit_to_phoneme, lexicons, unit_frames, {"L0": 4.0}, 2.0)


def test_transcribe_empty_units():
    assert _transcriber().transcribe(np.array([], dtype=np.int32), "L0") == ()


def test_transcribe_exact_string():
    t = _transcriber()
    # phoneme string 1 2 3 4 5 -> concepts (0, 1); two units per phoneme
    units = np.array([1, 9, 2, 10, 3, 11, 4, 12, 5, 13])
    assert t.transcribe(units, "L0") == (0, 1)


def test_transcribe_unseen_unit_maps_to_unk_and_decodes():
    t = _transcriber()
    units = np.array([1, 9, 2, 999])  # 999 unseen -> UNK phoneme, fuzzy match survives
    out = t.transcribe(units, "L0")
    assert out == (0,)


def test_transcribe_unknown_language():
    with pytest.raises(ValueError, match="unknown language"):
        _transcriber().transcribe(np.array([1]), "L9")


def test_edit_distance_weights():
    assert _edit_distance((1, 2, 3), (1, 2, 3)) == 0
    assert _edit_distance((1, 2), (1, 3)) == 1
    # duplicate indels are cheap
    assert _edit_distance((1, 1, 2), (1, 2)) == pytest.approx(0.4)
    assert _edit_distance((1, 2), (1, 2, 2)) == pytest.approx(0.4)
