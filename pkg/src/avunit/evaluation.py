"""Metrics and measurement harnesses for the translation pipeline.

Translation quality is scored as corpus BLEU over concept tokens
recovered by an oracle transcriber (majority-vote unit-to-phoneme map
plus minimum-edit-distance lexicon decoding), a self-contained stand-in
for ASR-based scoring. Synchronization is the argmax lag of the
normalized cross-correlation between audio energy and lip aperture.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .corpus import ParallelCorpus, babble_track, mix_noise
from .modeling import rng_for
from .renderer import DVector
from .representation import (
    AvEncoderModel,
    Codebook,
    ReducedUnitSequence,
    UnitSequence,
    extract_units,
    reduce_units,
)
from .translation import merge_adjacent_repeats, translate

UNK_PHONEME = -1

SNR_CLEAN = math.inf


def snr_label(snr_db: float) -> str:
    return "clean" if snr_db == SNR_CLEAN else f"{snr_db:g}"


# ---------------------------------------------------------------------------
# BLEU


def _ngrams(tokens, order: int) -> Counter:
    return Counter(tuple(tokens[i:i + order]) for i in range(len(tokens) - order + 1))


def corpus_bleu(hypotheses, references, max_order: int = 4) -> float:
    """Corpus-level BLEU-4 in [0, 100] with brevity penalty.

    N-gram precisions for n >= 2 get add-one smoothing; the unigram
    precision is unsmoothed, so disjoint vocabularies score 0.
    """
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis and reference counts differ")
    if not hypotheses:
        raise ValueError("empty corpus")

    matches = [0] * max_order
    possible = [0] * max_order
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp = list(hyp)
        ref = list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            overlap = _ngrams(hyp, n) & _ngrams(ref, n)
            matches[n - 1] += sum(overlap.values())
            possible[n - 1] += max(0, len(hyp) - n + 1)

    if hyp_len == 0 or possible[0] == 0 or matches[0] == 0:
        return 0.0
    log_precisions = [math.log(matches[0] / possible[0])]
    for n in range(2, max_order + 1):
        log_precisions.append(math.log((matches[n - 1] + 1) / (possible[n - 1] + 1)))
    geo = math.exp(sum(log_precisions) / max_order)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * geo


# ---------------------------------------------------------------------------
# unit and speaker metrics


def unit_agreement(seq_a, seq_b) -> float:
    """Fraction of positions where the two unit sequences carry equal ids."""
    a = seq_a.units if isinstance(seq_a, UnitSequence) else np.asarray(seq_a)
    b = seq_b.units if isinstance(seq_b, UnitSequence) else np.asarray(seq_b)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"length mismatch ({a.shape[0]} vs {b.shape[0]})")
    if a.shape[0] == 0:
        return 1.0
    return float(np.mean(a == b))


def speaker_similarity(a, b) -> float:
    """Cosine similarity (dot product) between two unit-norm speaker embeddings."""
    va = a.vec if isinstance(a, DVector) else np.asarray(a, dtype=np.float64)
    vb = b.vec if isinstance(b, DVector) else np.asarray(b, dtype=np.float64)
    for v in (va, vb):
        if abs(float(np.linalg.norm(v)) - 1.0) > 1e-4:
            raise ValueError("speaker_similarity expects unit-norm inputs")
    return float(np.dot(va.astype(np.float64), vb.astype(np.float64)))


# ---------------------------------------------------------------------------
# audio-visual synchronization


def _frame_energy(audio_frames: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(np.square(audio_frames.astype(np.float64)), axis=1))


def sync_offset(out, max_lag: int = 10) -> int:
    """Argmax lag (video frames) of the audio-energy / lip-aperture correlation.

    Accepts an :class:`avunit.renderer.AvOutput` or an (audio_frames,
    lip_frames) pair. Audio energy is downsampled 2x to the lip rate;
    positive offsets mean the lip track lags the audio. Raises on
    constant tracks, where the correlation is undefined.
    """
    if hasattr(out, "audio_frames"):
        audio, lips = out.audio_frames, out.lip_frames
    else:
        audio, lips = out
    energy = _frame_energy(audio)
    energy = energy[: 2 * (len(energy) // 2)].reshape(-1, 2).mean(axis=1)
    aperture = np.asarray(lips, dtype=np.float64)[:, 0]
    n = min(len(energy), len(aperture))
    if n < max_lag + 2:
        raise ValueError(f"tracks too short ({n} frames) for lag search up to {max_lag}")
    energy = energy[:n]
    aperture = aperture[:n]
    if np.ptp(energy) == 0 or np.ptp(aperture) == 0:
        raise ValueError("constant track: correlation undefined")

    best_lag = 0
    best_corr = -math.inf
    for lag in sorted(range(-max_lag, max_lag + 1), key=lambda l: (abs(l), l)):
        lo = max(0, -lag)
        hi = min(n, n - lag)
        a = energy[lo:hi]
        v = aperture[lo + lag:hi + lag]
        sa = a.std()
        sv = v.std()
        if sa == 0 or sv == 0:
            continue
        corr = float(np.mean((a - a.mean()) * (v - v.mean())) / (sa * sv))
        if corr > best_corr:
            best_corr = corr
            best_lag = lag
    return best_lag


# ---------------------------------------------------------------------------
# oracle transcriber


@dataclass
class OracleTranscriber:
    """Ground-truth-backed unit reader: unit -> phoneme -> concept tokens.

    Each unit id carries a majority-vote phoneme and a mean frame count
    per occurrence (both measured on clean train data). A run of units
    mapping to one phoneme is read as round(frames / mean phoneme
    duration) phoneme copies, which recovers repeats that run-length
    reduction would otherwise hide.
    """

    unit_to_phoneme: dict[int, int]
    lexicons: dict[str, dict[int, tuple[int, ...]]]
    unit_frames: dict[int, float] = field(default_factory=dict)
    mean_phoneme_frames: dict[str, float] = field(default_factory=dict)
    default_unit_frames: float = 2.0

    def _reduced_with_frames(self, units) -> tuple[np.ndarray, np.ndarray]:
        """Normalize input to (reduced ids, frames per reduced unit).

        Frame-rate sequences and reduced sequences carry exact durations;
        a bare id array (a decoder hypothesis) gets per-unit frame counts
        estimated from clean train statistics.
        """
        if isinstance(units, ReducedUnitSequence):
            return units.units, units.durations.astype(np.float64)
        if isinstance(units, UnitSequence):
            reduced = reduce_units(units)
            return reduced.units, reduced.durations.astype(np.float64)
        ids = merge_adjacent_repeats(np.asarray(units, dtype=np.int64))
        frames = np.asarray(
            [self.unit_frames.get(int(u), self.default_unit_frames) for u in ids], dtype=np.float64
        )
        return ids.astype(np.int32), frames

    def phonemes(self, units, lang: str) -> list[int]:
        """Phoneme string with repeats restored from frame-count evidence."""
        ids, frames = self._reduced_with_frames(units)
        mapped = [self.unit_to_phoneme.get(int(u), UNK_PHONEME) for u in ids]
        mean_frames = self.mean_phoneme_frames.get(lang, 4.0)
        out: list[int] = []
        i = 0
        while i < len(mapped):
            j = i
            while j < len(mapped) and mapped[j] == mapped[i]:
                j += 1
            copies = int(np.clip(round(float(frames[i:j].sum()) / mean_frames), 1, 8))
            out.extend([mapped[i]] * copies)
            i = j
        return out

    def transcribe(self, units, lang: str) -> tuple[int, ...]:
        """Decode units to concept tokens by minimum-edit-distance segmentation."""
        if lang not in self.lexicons:
            raise ValueError(f"unknown language {lang!r}")
        phonemes = self.phonemes(units, lang)
        if not phonemes:
            return ()
        lexicon = self.lexicons[lang]
        n = len(phonemes)
        # best[j] = (cost, concepts) decoding the prefix phonemes[:j]
        best: list[tuple[float, tuple[int, ...]] | None] = [None] * (n + 1)
        best[0] = (0.0, ())
        for j in range(1, n + 1):
            for concept, string in lexicon.items():
                lo = max(0, j - len(string) - 3)
                hi = j - max(1, len(string) - 3) + 1
                for i in range(lo, min(hi, j)):
                    if best[i] is None:
                        continue
                    cost = best[i][0] + _edit_distance(phonemes[i:j], string)
                    cand = (cost, best[i][1] + (concept,))
                    if best[j] is None or cand < best[j]:
                        best[j] = cand
        assert best[n] is not None
        return best[n][1]


DUP_INDEL_COST = 0.4


def _edit_distance(a, b) -> float:
    """Weighted edit distance; inserting or deleting a copy of the preceding
    symbol is cheap, since phoneme-count estimates wobble by one."""
    prev = [0.0]
    for j in range(1, len(b) + 1):
        prev.append(prev[-1] + (DUP_INDEL_COST if j > 1 and b[j - 1] == b[j - 2] else 1.0))
    for i, ca in enumerate(a, 1):
        del_cost = DUP_INDEL_COST if i > 1 and ca == a[i - 2] else 1.0
        cur = [prev[0] + del_cost]
        for j, cb in enumerate(b, 1):
            ins_cost = DUP_INDEL_COST if j > 1 and cb == b[j - 2] else 1.0
            cur.append(min(prev[j] + del_cost, cur[j - 1] + ins_cost, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def build_oracle_transcriber(corpus: ParallelCorpus, encoder: AvEncoderModel, codebook: Codebook,
                             modality: str = "A") -> OracleTranscriber:
    """Majority-vote unit-to-phoneme map under ground-truth alignment (clean train data)."""
    votes: dict[int, Counter] = defaultdict(Counter)
    frame_sum: Counter = Counter()
    occurrence_count: Counter = Counter()
    count = 0
    for entry, sample in corpus.samples(split="train"):
        if sample.num_audio_frames == 0:
            continue
        units = extract_units(encoder, sample, modality, codebook).units
        for u, p in zip(units, sample.alignment):
            votes[int(u)][int(p)] += 1
        reduced = reduce_units(units)
        for u, d in zip(reduced.units, reduced.durations):
            frame_sum[int(u)] += int(d)
            occurrence_count[int(u)] += 1
        count += 1
    if count == 0:
        raise ValueError("empty training data")
    unit_to_phoneme = {
        u: min(c.items(), key=lambda kv: (-kv[1], kv[0]))[0] for u, c in votes.items()
    }
    unit_frames = {u: frame_sum[u] / occurrence_count[u] for u in occurrence_count}
    lexicons = {tag: dict(spec.lexicon) for tag, spec in corpus.languages.items()}
    return OracleTranscriber(
        unit_to_phoneme=unit_to_phoneme,
        lexicons=lexicons,
        unit_frames=unit_frames,
        mean_phoneme_frames={tag: float(spec.mean_phoneme_duration)
                             for tag, spec in corpus.languages.items()},
        default_unit_frames=(sum(frame_sum.values()) / max(1, sum(occurrence_count.values()))),
    )


# ---------------------------------------------------------------------------
# noise sweep


@dataclass
class NoiseSweepReport:
    """(modality, snr, bleu) rows, one per swept cell."""

    rows: list[dict] = field(default_factory=list)

    def __post_init__(self):
        seen = {(r["modality"], r["snr"]) for r in self.rows}
        if len(seen) != len(self.rows):
            raise ValueError("duplicate (modality, snr) rows")

    def bleu(self, modality: str, snr) -> float:
        key = snr_label(snr) if not isinstance(snr, str) else snr
        for row in self.rows:
            if row["modality"] == modality and row["snr"] == key:
                return row["bleu"]
        raise KeyError((modality, key))


def run_noise_sweep(
    pipe,
    corpus: ParallelCorpus,
    src_lang: str,
    tgt_lang: str,
    snrs,
    modalities,
    seed: int = 0,
    split: str = "test",
    max_samples: int | None = None,
    decode: str = "beam",
    beam_size: int = 5,
) -> NoiseSweepReport:
    """Corrupt audio with babble at each SNR (visual untouched) and score BLEU.

    The babble draw for a sample depends only on (seed, sample, snr), so
    every modality sees the same corrupted audio and the visual-only rows
    are exactly constant across SNRs.
    """
    for name in ("encoder", "codebook", "translator", "transcriber"):
        if getattr(pipe, name, None) is None:
            raise ValueError(f"pipeline component {name!r} is not trained")

    items = [(i, e) for i, e in corpus.rows(split=split, lang=src_lang)]
    if max_samples is not None:
        items = items[:max_samples]
    if not items:
        raise ValueError(f"no {split} samples for language {src_lang}")

    rows = []
    for modality in modalities:
        for snr in snrs:
            hyps = []
            refs = []
            for i, entry in items:
                sample = corpus.sample(i)
                visual_before = sample.visual_frames.copy()
                if snr == SNR_CLEAN or modality == "V":
                    audio = sample.audio_frames
                else:
                    rng = rng_for(seed, "babble", entry.path, snr_label(snr))
                    noise = babble_track(corpus, sample.num_audio_frames, entry.speaker, rng)
                    audio = mix_noise(sample.audio_frames, noise, snr)
                noisy = type(sample)(
                    audio_frames=audio,
                    visual_frames=sample.visual_frames,
                    speaker_id=sample.speaker_id,
                    language_tag=sample.language_tag,
                    concepts=sample.concepts,
                    alignment=sample.alignment,
                )
                assert np.array_equal(noisy.visual_frames, visual_before)
                units = extract_units(pipe.encoder, noisy, modality, pipe.codebook)
                reduced = reduce_units(units)
                hyp = translate(pipe.translator, reduced.units, src_lang, tgt_lang,
                                decode=decode, beam_size=beam_size)
                merged = merge_adjacent_repeats(hyp.units)
                hyps.append(pipe.transcriber.transcribe(merged, tgt_lang))
                refs.append(entry.concepts)
            rows.append({"modality": modality, "snr": snr_label(snr), "bleu": corpus_bleu(hyps, refs)})
    return NoiseSweepReport(rows=rows)
