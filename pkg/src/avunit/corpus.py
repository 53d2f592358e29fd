"""Deterministic synthetic audio-visual corpora with known ground truth.

A toy language maps shared concept ids to short phoneme strings drawn from
a universal phoneme inventory. Each phoneme owns a fixed audio prototype
(16-dim, nominal 50 frames/s) and lip prototype (4-dim, nominal 25
frames/s); a sample is prototypes plus speaker perturbations plus seeded
noise, so every downstream claim can be checked against the generating
alignment. The lip aperture channel is tied to the audio prototype energy
so audio loudness and mouth opening co-vary, which keeps cross-modal
correlation physical.

All randomness flows through :func:`avunit.modeling.rng_for`; corpora are
pure functions of (config, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from hashlib import blake2b
from pathlib import Path

import numpy as np

from .modeling import rng_for, stable_seed

AUDIO_DIM = 16
VISUAL_DIM = 4

# nominal frame rates; the structural invariant is the exact 2:1 ratio
AUDIO_FRAME_RATE = 50
VISUAL_FRAME_RATE = 25

AUDIO_NOISE_STD = 0.05
VISUAL_NOISE_STD = 0.04
SPEAKER_COLOR_STD = 0.03
LIP_OFFSET_STD = 0.04

# scale of the within-phoneme onset-to-offset ramp; it must dominate the
# speaker perturbation so that quantization bands phonemes by position and
# reduced unit counts carry duration information
AUDIO_RAMP_SCALE = 1.2
VISUAL_RAMP_SCALE = 0.15

SAMPLE_MAGIC = b"AVSB"

SPLITS = ("train", "valid", "test")

# separation of lip prototypes; phones must stay identifiable in 4 dims
LIP_PROTO_SCALE = 2.0

# chi(16) moments used to standardize the aperture channel
_CHI16_MEAN = math.sqrt(2) * math.gamma(8.5) / math.gamma(8.0)
_CHI16_STD = math.sqrt(16 - _CHI16_MEAN**2)


@lru_cache(maxsize=None)
def audio_prototype(phoneme: int) -> np.ndarray:
    """Fixed 16-dim audio emission prototype for a universal phoneme id."""
    proto = rng_for("phoneme-audio", phoneme).normal(0.0, 1.0, AUDIO_DIM)
    proto.flags.writeable = False
    return proto


@lru_cache(maxsize=None)
def audio_ramp(phoneme: int) -> np.ndarray:
    """Direction of the onset-to-offset drift within one phoneme occurrence."""
    ramp = rng_for("phoneme-audio-ramp", phoneme).normal(0.0, 1.0, AUDIO_DIM)
    ramp /= np.linalg.norm(ramp)
    ramp.flags.writeable = False
    return ramp


@lru_cache(maxsize=None)
def visual_ramp(phoneme: int) -> np.ndarray:
    ramp = rng_for("phoneme-visual-ramp", phoneme).normal(0.0, 1.0, VISUAL_DIM)
    ramp /= np.linalg.norm(ramp)
    ramp.flags.writeable = False
    return ramp


@lru_cache(maxsize=None)
def lip_prototype(phoneme: int) -> np.ndarray:
    """Fixed 4-dim lip prototype (aperture, width, protrusion, energy).

    Aperture is the standardized energy of the audio prototype, so loud
    phonemes open the mouth.
    """
    aperture = (np.linalg.norm(audio_prototype(phoneme)) - _CHI16_MEAN) / _CHI16_STD
    rest = rng_for("phoneme-lip", phoneme).normal(0.0, 1.0, VISUAL_DIM - 1)
    proto = LIP_PROTO_SCALE * np.concatenate([[aperture], rest])
    proto.flags.writeable = False
    return proto


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ToyLanguageSpec:
    """A toy language: phoneme inventory plus an injective concept lexicon."""

    language_tag: str
    phoneme_inventory: tuple[int, ...]
    lexicon: dict[int, tuple[int, ...]]
    mean_phoneme_duration: int

    def __post_init__(self):
        if self.mean_phoneme_duration < 1:
            raise ValueError("mean_phoneme_duration must be a positive integer")
        inventory = set(self.phoneme_inventory)
        strings = list(self.lexicon.values())
        if len(set(strings)) != len(strings):
            raise ValueError(f"{self.language_tag}: lexicon is not injective")
        for concept, string in self.lexicon.items():
            if not 1 <= len(string) <= 4:
                raise ValueError(f"{self.language_tag}: concept {concept} has string length {len(string)}")
            if not set(string) <= inventory:
                raise ValueError(f"{self.language_tag}: concept {concept} uses phonemes outside the inventory")

    def to_json(self) -> str:
        return json.dumps(
            {
                "language_tag": self.language_tag,
                "phoneme_inventory": list(self.phoneme_inventory),
                "lexicon": {str(k): list(v) for k, v in sorted(self.lexicon.items())},
                "mean_phoneme_duration": self.mean_phoneme_duration,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "ToyLanguageSpec":
        raw = json.loads(text)
        return ToyLanguageSpec(
            language_tag=raw["language_tag"],
            phoneme_inventory=tuple(raw["phoneme_inventory"]),
            lexicon={int(k): tuple(v) for k, v in raw["lexicon"].items()},
            mean_phoneme_duration=raw["mean_phoneme_duration"],
        )


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    spectral_color: np.ndarray
    lip_shape_offset: np.ndarray
    base_energy: float

    def __post_init__(self):
        if self.spectral_color.shape != (AUDIO_DIM,):
            raise ValueError("spectral_color must have shape (AUDIO_DIM,)")
        if self.lip_shape_offset.shape != (VISUAL_DIM,):
            raise ValueError("lip_shape_offset must have shape (VISUAL_DIM,)")


@dataclass
class AvSample:
    """Paired audio-feature and lip-parameter streams with ground truth.

    audio_frames is (T_a, 16) at the audio rate, visual_frames is
    (T_v, 4) at half rate with T_a = 2 * T_v exactly, and alignment
    gives the generating phoneme id per audio frame.
    """

    audio_frames: np.ndarray
    visual_frames: np.ndarray
    speaker_id: str
    language_tag: str
    concepts: tuple[int, ...]
    alignment: np.ndarray

    def __post_init__(self):
        t_a = self.audio_frames.shape[0]
        t_v = self.visual_frames.shape[0]
        if t_a != 2 * t_v:
            raise ValueError(f"audio/visual frame counts violate 2:1 ({t_a} vs {t_v})")
        if self.alignment.shape[0] != t_a:
            raise ValueError("alignment length must equal the audio frame count")

    @property
    def num_audio_frames(self) -> int:
        return self.audio_frames.shape[0]

    @property
    def num_visual_frames(self) -> int:
        return self.visual_frames.shape[0]


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    lang: str
    speaker: str
    concepts: tuple[int, ...]
    split: str

    def to_record(self) -> dict:
        return {
            "path": self.path,
            "lang": self.lang,
            "speaker": self.speaker,
            "concepts": list(self.concepts),
            "split": self.split,
        }


@dataclass
class CorpusManifest:
    """Index of all samples plus the parallel-pair index keyed by sentence."""

    entries: tuple[ManifestEntry, ...]
    parallel: dict[tuple[int, ...], dict[str, int]]

    def __post_init__(self):
        langs = {e.lang for e in self.entries}
        split_of: dict[tuple[int, ...], str] = {}
        for entry in self.entries:
            seen = split_of.setdefault(entry.concepts, entry.split)
            if seen != entry.split:
                raise ValueError(f"concept sequence {entry.concepts} appears in splits {seen} and {entry.split}")
        for concepts, realizations in self.parallel.items():
            if set(realizations) != langs:
                raise ValueError(f"parallel index incomplete for {concepts}")

    def rows(self, split: str | None = None, lang: str | None = None):
        for i, entry in enumerate(self.entries):
            if split is not None and entry.split != split:
                continue
            if lang is not None and entry.lang != lang:
                continue
            yield i, entry

    def content_hash(self) -> str:
        payload = json.dumps([e.to_record() for e in self.entries], sort_keys=True)
        return blake2b(payload.encode(), digest_size=16).hexdigest()


# ---------------------------------------------------------------------------
# generation


def make_language(
    seed: int,
    P: int,
    lexicon_size: int,
    *,
    tag: str | None = None,
    universe: int = 96,
    string_lengths: tuple[int, int] = (2, 4),
    mean_phoneme_duration: int = 4,
) -> ToyLanguageSpec:
    """Create a toy language deterministically from ``seed``.

    The inventory is P phonemes sampled from the universal inventory;
    the lexicon assigns each shared concept id a distinct phoneme string.
    """
    if P < 4:
        raise ValueError(f"P must be at least 4, got {P}")
    if lexicon_size < 10:
        raise ValueError(f"lexicon_size must be at least 10, got {lexicon_size}")
    if P > universe:
        raise ValueError(f"P ({P}) exceeds the universal inventory size ({universe})")
    lo, hi = string_lengths
    if not 1 <= lo <= hi <= 4:
        raise ValueError("string_lengths must satisfy 1 <= lo <= hi <= 4")

    rng = rng_for("language", seed)
    inventory = tuple(sorted(int(p) for p in rng.choice(universe, size=P, replace=False)))
    strings: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    while len(strings) < lexicon_size:
        length = int(rng.integers(lo, hi + 1))
        string = tuple(int(p) for p in rng.choice(inventory, size=length, replace=True))
        if any(a == b for a, b in zip(string, string[1:])):
            continue  # no geminates: adjacent repeats are not recoverable from reduced units
        if string not in seen:
            seen.add(string)
            strings.append(string)
    return ToyLanguageSpec(
        language_tag=tag if tag is not None else f"L{seed}",
        phoneme_inventory=inventory,
        lexicon=dict(enumerate(strings)),
        mean_phoneme_duration=mean_phoneme_duration,
    )


def make_speakers(n: int, seed: int) -> list[SpeakerProfile]:
    rng = rng_for("speakers", seed)
    speakers = []
    for i in range(n):
        color = rng.normal(0.0, SPEAKER_COLOR_STD, AUDIO_DIM)
        offset = rng.normal(0.0, LIP_OFFSET_STD, VISUAL_DIM)
        energy = float(rng.uniform(0.97, 1.03))
        speakers.append(SpeakerProfile(f"spk{i}", color, offset, energy))
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(speakers[i].spectral_color - speakers[j].spectral_color) == 0:
                raise ValueError("speaker spectral colors collide")
    return speakers


def synth_sample(
    spec: ToyLanguageSpec,
    speaker: SpeakerProfile,
    concepts,
    seed: int,
    *,
    duration_jitter: int = 1,
    audio_noise: float = AUDIO_NOISE_STD,
    visual_noise: float = VISUAL_NOISE_STD,
) -> AvSample:
    """Render a concept sequence to synchronized audio and lip streams.

    Noise and durations depend only on (language, concepts, seed), not on
    the speaker, so feature matrices of two speakers saying the same
    sentence differ exactly by their profile perturbations.
    """
    concepts = tuple(int(c) for c in concepts)
    for c in concepts:
        if c not in spec.lexicon:
            raise KeyError(f"concept {c} not in the {spec.language_tag} lexicon")

    phonemes = [p for c in concepts for p in spec.lexicon[c]]
    rng = rng_for("sample", spec.language_tag, seed)
    durations = []
    for _ in phonemes:
        jitter = int(rng.integers(-duration_jitter, duration_jitter + 1)) if duration_jitter else 0
        durations.append(max(1, spec.mean_phoneme_duration + jitter))
    if sum(durations) % 2:
        durations[-1] += 1  # keep T_a even so T_a = 2 * T_v holds exactly

    alignment = np.repeat(np.asarray(phonemes, dtype=np.int32), durations) if phonemes else np.zeros(0, np.int32)
    t_a = alignment.shape[0]
    # onset-anchored position within each phoneme occurrence, in mean-duration
    # steps, so frames of a short and a long occurrence share the same ladder
    mean_d = spec.mean_phoneme_duration
    tau = np.concatenate([(np.arange(d) + 0.5) / mean_d - 0.5 for d in durations]) if phonemes else np.zeros(0)

    audio = np.zeros((t_a, AUDIO_DIM), dtype=np.float64)
    for t, p in enumerate(alignment):
        audio[t] = audio_prototype(int(p)) + AUDIO_RAMP_SCALE * tau[t] * audio_ramp(int(p))
    audio += speaker.spectral_color
    audio += rng.normal(0.0, audio_noise, (t_a, AUDIO_DIM))
    audio *= speaker.base_energy

    t_v = t_a // 2
    visual = np.zeros((t_v, VISUAL_DIM), dtype=np.float64)
    for i in range(t_v):
        p = int(alignment[2 * i])
        visual[i] = lip_prototype(p) + VISUAL_RAMP_SCALE * tau[2 * i] * visual_ramp(p)
    visual += speaker.lip_shape_offset
    visual += rng.normal(0.0, visual_noise, (t_v, VISUAL_DIM))

    return AvSample(
        audio_frames=audio.astype(np.float32),
        visual_frames=visual.astype(np.float32),
        speaker_id=speaker.speaker_id,
        language_tag=spec.language_tag,
        concepts=concepts,
        alignment=alignment,
    )


@dataclass(frozen=True)
class CorpusConfig:
    languages: int = 3
    speakers: int = 8
    train_sentences: int = 480
    valid_sentences: int = 40
    test_sentences: int = 48
    sentence_length: tuple[int, int] = (4, 8)
    phonemes_per_language: int = 32
    phoneme_universe: int = 96
    lexicon_size: int = 30
    string_lengths: tuple[int, int] = (2, 4)
    mean_phoneme_duration: int = 4
    audio_noise: float = AUDIO_NOISE_STD
    visual_noise: float = VISUAL_NOISE_STD
    language_seeds: tuple[int, ...] | None = None
    seed: int = 0

    def resolved_language_seeds(self) -> tuple[int, ...]:
        if self.language_seeds is not None:
            if len(self.language_seeds) != self.languages:
                raise ValueError("language_seeds length must match languages")
            return self.language_seeds
        return tuple(range(self.languages))

    def to_json(self) -> str:
        raw = {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}
        return json.dumps(raw, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "CorpusConfig":
        raw = json.loads(text)
        for key in ("sentence_length", "string_lengths"):
            raw[key] = tuple(raw[key])
        if raw.get("language_seeds") is not None:
            raw["language_seeds"] = tuple(raw["language_seeds"])
        return CorpusConfig(**raw)


class ParallelCorpus:
    """Lazy container over a manifest; samples synthesize on first access."""

    def __init__(self, config: CorpusConfig, languages, speakers, manifest: CorpusManifest):
        self.config = config
        self.languages: dict[str, ToyLanguageSpec] = languages
        self.speakers: dict[str, SpeakerProfile] = speakers
        self.manifest = manifest
        self._cache: dict[int, AvSample] = {}

    def sample(self, index: int) -> AvSample:
        if index not in self._cache:
            entry = self.manifest.entries[index]
            seed = stable_seed(self.config.seed, "synth", entry.path)
            self._cache[index] = synth_sample(
                self.languages[entry.lang],
                self.speakers[entry.speaker],
                entry.concepts,
                seed,
                audio_noise=self.config.audio_noise,
                visual_noise=self.config.visual_noise,
            )
        return self._cache[index]

    def rows(self, split=None, lang=None):
        yield from self.manifest.rows(split=split, lang=lang)

    def samples(self, split=None, lang=None):
        for i, entry in self.rows(split=split, lang=lang):
            yield entry, self.sample(i)

    def manifest_hash(self) -> str:
        return self.manifest.content_hash()

    # -- disk round trip ----------------------------------------------------

    def save(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "manifest.jsonl", "w") as fh:
            for entry in self.manifest.entries:
                fh.write(json.dumps(entry.to_record(), sort_keys=True) + "\n")
        with open(outdir / "alignments.jsonl", "w") as fh:
            for i, entry in enumerate(self.manifest.entries):
                sample = self.sample(i)
                fh.write(json.dumps({"path": entry.path, "alignment": sample.alignment.tolist()}) + "\n")
        (outdir / "config.json").write_text(self.config.to_json())
        (outdir / "languages.json").write_text(
            json.dumps({tag: json.loads(spec.to_json()) for tag, spec in self.languages.items()}, sort_keys=True)
        )
        speakers = {
            sid: {
                "spectral_color": sp.spectral_color.tolist(),
                "lip_shape_offset": sp.lip_shape_offset.tolist(),
                "base_energy": sp.base_energy,
            }
            for sid, sp in self.speakers.items()
        }
        (outdir / "speakers.json").write_text(json.dumps(speakers, sort_keys=True))
        for i, entry in enumerate(self.manifest.entries):
            path = outdir / entry.path
            path.parent.mkdir(parents=True, exist_ok=True)
            write_sample(path, self.sample(i))

    @staticmethod
    def load(indir) -> "ParallelCorpus":
        indir = Path(indir)
        config = CorpusConfig.from_json((indir / "config.json").read_text())
        languages = {
            tag: ToyLanguageSpec.from_json(json.dumps(raw))
            for tag, raw in json.loads((indir / "languages.json").read_text()).items()
        }
        speakers = {
            sid: SpeakerProfile(
                sid,
                np.asarray(raw["spectral_color"]),
                np.asarray(raw["lip_shape_offset"]),
                raw["base_energy"],
            )
            for sid, raw in json.loads((indir / "speakers.json").read_text()).items()
        }
        entries = []
        with open(indir / "manifest.jsonl") as fh:
            for line in fh:
                rec = json.loads(line)
                entries.append(
                    ManifestEntry(rec["path"], rec["lang"], rec["speaker"], tuple(rec["concepts"]), rec["split"])
                )
        alignments = {}
        with open(indir / "alignments.jsonl") as fh:
            for line in fh:
                rec = json.loads(line)
                alignments[rec["path"]] = np.asarray(rec["alignment"], dtype=np.int32)
        manifest = CorpusManifest(tuple(entries), _build_parallel_index(entries))
        corpus = ParallelCorpus(config, languages, speakers, manifest)
        for i, entry in enumerate(entries):
            audio, visual = read_sample(indir / entry.path)
            corpus._cache[i] = AvSample(
                audio, visual, entry.speaker, entry.lang, entry.concepts, alignments[entry.path]
            )
        return corpus


def _build_parallel_index(entries) -> dict:
    parallel: dict[tuple[int, ...], dict[str, int]] = {}
    for i, entry in enumerate(entries):
        parallel.setdefault(entry.concepts, {})[entry.lang] = i
    return parallel


def make_parallel_corpus(config: CorpusConfig) -> ParallelCorpus:
    """Generate the full multilingual parallel corpus for ``config``.

    Every concept sentence is realized once per language by a randomly
    assigned speaker; splits are disjoint by concept sequence; the result
    is hash-stable under (config, seed).
    """
    if config.languages < 2:
        raise ValueError("need at least 2 languages")
    if config.speakers < 4:
        raise ValueError("need at least 4 speakers")
    seeds = config.resolved_language_seeds()
    languages = {}
    for i, lang_seed in enumerate(seeds):
        spec = make_language(
            lang_seed,
            config.phonemes_per_language,
            config.lexicon_size,
            tag=f"L{i}",
            universe=config.phoneme_universe,
            string_lengths=config.string_lengths,
            mean_phoneme_duration=config.mean_phoneme_duration,
        )
        languages[spec.language_tag] = spec
    speakers = {s.speaker_id: s for s in make_speakers(config.speakers, stable_seed(config.seed, "speakers"))}
    speaker_ids = sorted(speakers, key=lambda s: int(s[3:]))

    counts = {"train": config.train_sentences, "valid": config.valid_sentences, "test": config.test_sentences}
    rng = rng_for(config.seed, "sentences")
    lo, hi = config.sentence_length
    used: set[tuple[int, ...]] = set()
    entries: list[ManifestEntry] = []
    for split in SPLITS:
        for idx in range(counts[split]):
            while True:
                length = int(rng.integers(lo, hi + 1))
                sentence = tuple(int(c) for c in rng.integers(0, config.lexicon_size, size=length))
                if sentence not in used:
                    used.add(sentence)
                    break
            for tag in languages:
                speaker = speaker_ids[int(rng.integers(0, len(speaker_ids)))]
                path = f"{split}/{tag}/{idx:05d}_{speaker}.avb"
                entries.append(ManifestEntry(path, tag, speaker, sentence, split))

    manifest = CorpusManifest(tuple(entries), _build_parallel_index(entries))
    return ParallelCorpus(config, languages, speakers, manifest)


# ---------------------------------------------------------------------------
# acoustic noise


def mix_noise(audio: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """Add ``noise`` to ``audio`` scaled to the requested signal-to-noise ratio.

    Power is measured per utterance (mean square over all entries). The
    sentinel snr_db = +inf returns the clean audio unchanged. The noise
    track is tiled or cropped to the audio length.
    """
    audio = np.asarray(audio, dtype=np.float64)
    if snr_db == math.inf:
        return audio.copy()
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[0] == 0:
        raise ValueError("noise track is empty")
    if noise.shape[0] < audio.shape[0]:
        reps = -(-audio.shape[0] // noise.shape[0])
        noise = np.tile(noise, (reps, 1))
    noise = noise[: audio.shape[0]]

    signal_power = float(np.mean(np.square(audio)))
    noise_power = float(np.mean(np.square(noise)))
    if signal_power == 0.0:
        raise ValueError("zero-power signal")
    if noise_power == 0.0:
        raise ValueError("zero-power noise")
    alpha = math.sqrt(signal_power / (noise_power * 10.0 ** (snr_db / 10.0)))
    return audio + alpha * noise


def babble_track(corpus: ParallelCorpus, length: int, exclude_speaker: str, rng: np.random.Generator,
                 n_mix: int = 8) -> np.ndarray:
    """Babble noise: mean of ``n_mix`` other-speaker train samples, tiled to ``length``."""
    pool = [i for i, e in corpus.rows(split="train") if e.speaker != exclude_speaker]
    if not pool:
        raise ValueError("no other-speaker samples available for babble")
    picks = rng.choice(len(pool), size=n_mix, replace=len(pool) < n_mix)
    tracks = []
    for k in picks:
        audio = corpus.sample(pool[int(k)]).audio_frames
        if audio.shape[0] == 0:
            continue
        reps = -(-length // audio.shape[0])
        tracks.append(np.tile(audio, (reps, 1))[:length])
    return np.mean(tracks, axis=0, dtype=np.float64).astype(np.float32)


# ---------------------------------------------------------------------------
# binary sample format: 16-byte header + little-endian float32 payload


def write_sample(path, sample: AvSample) -> None:
    t_a, d_a = sample.audio_frames.shape if sample.audio_frames.ndim == 2 else (0, AUDIO_DIM)
    t_v, d_v = sample.visual_frames.shape if sample.visual_frames.ndim == 2 else (0, VISUAL_DIM)
    header = (
        SAMPLE_MAGIC
        + int(t_a).to_bytes(4, "little")
        + int(t_v).to_bytes(4, "little")
        + int(d_a).to_bytes(2, "little")
        + int(d_v).to_bytes(2, "little")
    )
    audio = np.ascontiguousarray(sample.audio_frames, dtype="<f4")
    visual = np.ascontiguousarray(sample.visual_frames, dtype="<f4")
    Path(path).write_bytes(header + audio.tobytes() + visual.tobytes())


def read_sample(path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != SAMPLE_MAGIC:
        raise ValueError(f"{path}: not a sample file")
    t_a = int.from_bytes(raw[4:8], "little")
    t_v = int.from_bytes(raw[8:12], "little")
    d_a = int.from_bytes(raw[12:14], "little")
    d_v = int.from_bytes(raw[14:16], "little")
    payload = np.frombuffer(raw[16:], dtype="<f4")
    if payload.size != t_a * d_a + t_v * d_v:
        raise ValueError(f"{path}: truncated sample file")
    audio = payload[: t_a * d_a].reshape(t_a, d_a).copy()
    visual = payload[t_a * d_a:].reshape(t_v, d_v).copy()
    return audio, visual
