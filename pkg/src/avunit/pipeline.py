"""End-to-end orchestration: extraction -> translation -> rendering.

One trained bundle serves audio-only, visual-only, and audio-visual
inputs across every declared language direction. Experiment recipes
rebuild the relevant pipeline stages deterministically from (config,
seed) and emit delimited records, a plain-text table, plot-data CSV,
and a rendered figure per run.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
from dataclasses import dataclass, field, replace
from hashlib import blake2b
from pathlib import Path

import numpy as np

from . import reporting
from .corpus import AvSample, CorpusConfig, ParallelCorpus, make_parallel_corpus
from .evaluation import (
    SNR_CLEAN,
    OracleTranscriber,
    build_oracle_transcriber,
    corpus_bleu,
    run_noise_sweep,
    snr_label,
    speaker_similarity,
    sync_offset,
)
from .modeling import (
    TrainConfig,
    load_flat_checkpoint,
    rng_for,
    save_checkpoint,
    save_flat_checkpoint,
    load_checkpoint,
    seeded_init,
    stable_seed,
)
from .renderer import (
    AvOutput,
    DVector,
    RendererBundle,
    RendererConfig,
    SpeakerEncoder,
    SpeakerEncoderConfig,
    constant_dvector,
    decode_audio,
    decode_lips,
    embed_speaker,
    identity_from_visual,
    predict_durations,
    render_av,
    train_renderer,
    train_speaker_encoder,
)
from .representation import (
    AvEncoderModel,
    Codebook,
    EncoderConfig,
    UnitSequence,
    extract_units,
    fit_teacher_codebook,
    fit_unit_codebook,
    reduce_units,
    train_av_encoder,
)
from .translation import (
    TranslatorConfig,
    TranslatorModel,
    UnitPair,
    Vocabulary,
    build_vocab,
    merge_adjacent_repeats,
    train_translator,
    translate,
)

log = logging.getLogger("avunit")

PRIMARY_LANG = "L0"


@dataclass(frozen=True)
class PipelineConfig:
    """All stage configurations plus the shared unit inventory size."""

    corpus: CorpusConfig = CorpusConfig()
    num_units: int = 100
    encoder: EncoderConfig = EncoderConfig()
    translator: TranslatorConfig = TranslatorConfig()
    renderer: RendererConfig = RendererConfig()
    encoder_train: TrainConfig = TrainConfig(steps=1600, warmup_steps=160, peak_lr=2e-3, batch_size=16)
    translator_train: TrainConfig = TrainConfig(steps=3000, warmup_steps=300, peak_lr=1.5e-3, batch_size=24)
    finetune_train: TrainConfig = TrainConfig(steps=300, warmup_steps=30, peak_lr=5e-4, batch_size=24)
    renderer_train: TrainConfig = TrainConfig(steps=400, warmup_steps=40, peak_lr=2e-3, batch_size=16)
    speaker_train: TrainConfig = TrainConfig(steps=250, warmup_steps=25, peak_lr=2e-3, batch_size=16)
    codebook_modalities: tuple[str, ...] = ("A", "V", "AV")
    encoder_langs: tuple[str, ...] | None = None
    beam: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.encoder.num_clusters != self.num_units:
            object.__setattr__(self, "encoder", replace(self.encoder, num_clusters=self.num_units))
        if self.renderer.num_units != self.num_units:
            object.__setattr__(self, "renderer", replace(self.renderer, num_units=self.num_units))

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Re-key every training stage from one run seed; the corpus stays fixed."""
        def derived(stage: str) -> int:
            return stable_seed("run", seed, stage) % (2**31)

        return replace(
            self,
            seed=seed,
            encoder_train=replace(self.encoder_train, seed=derived("encoder")),
            translator_train=replace(self.translator_train, seed=derived("translator")),
            finetune_train=replace(self.finetune_train, seed=derived("finetune")),
            renderer_train=replace(self.renderer_train, seed=derived("renderer")),
            speaker_train=replace(self.speaker_train, seed=derived("speaker")),
        )

    def config_hash(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True, default=str)
        return blake2b(payload.encode(), digest_size=16).hexdigest()


@dataclass
class PipelineBundle:
    """Trained components; renderer parts may be absent for translation-only runs."""

    config: PipelineConfig
    encoder: AvEncoderModel
    teacher: Codebook
    codebook: Codebook
    translator: TranslatorModel
    vocab: Vocabulary
    transcriber: OracleTranscriber
    speaker_encoder: SpeakerEncoder | None = None
    renderer: RendererBundle | None = None

    def __post_init__(self):
        ks = {self.codebook.K, self.vocab.num_units}
        if self.renderer is not None:
            ks.add(self.renderer.cfg.num_units)
        if len(ks) != 1:
            raise ValueError(f"inconsistent unit inventory sizes across components: {ks}")

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()


def codebook_neighbors(codebook: Codebook, n: int = 3) -> np.ndarray:
    """(K, n) table of each centroid's nearest other centroids."""
    c = codebook.centroids
    d2 = np.sum(c**2, 1)[:, None] - 2.0 * c @ c.T + np.sum(c**2, 1)[None, :]
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :n].astype(np.int64)


def extract_split_units(encoder: AvEncoderModel, corpus: ParallelCorpus, codebook: Codebook,
                        modality: str = "A", split: str | None = None) -> dict[int, UnitSequence]:
    """Frame-rate units for every matching sample, keyed by manifest index."""
    return {
        i: extract_units(encoder, corpus.sample(i), modality, codebook)
        for i, _ in corpus.rows(split=split)
    }


def unit_pairs(corpus: ParallelCorpus, units_by_index: dict[int, UnitSequence],
               split: str, identity: bool = False) -> list[UnitPair]:
    """Reduced-unit training pairs for every ordered language direction.

    ``identity=True`` instead yields same-language copy pairs (the
    copy-task sanity setting).
    """
    pairs = []
    for concepts, realizations in corpus.manifest.parallel.items():
        indices = {lang: i for lang, i in realizations.items() if corpus.manifest.entries[i].split == split}
        if not indices:
            continue
        reduced = {lang: reduce_units(units_by_index[i]).units for lang, i in indices.items()}
        if identity:
            pairs.extend(UnitPair(lang, lang, u, u) for lang, u in reduced.items())
        else:
            for src_lang, src in reduced.items():
                for tgt_lang, tgt in reduced.items():
                    if src_lang != tgt_lang:
                        pairs.append(UnitPair(src_lang, tgt_lang, src, tgt))
    return pairs


def build_translation_pipeline(corpus: ParallelCorpus, cfg: PipelineConfig) -> PipelineBundle:
    """Train the stages needed to translate and score: encoder, units, translator."""
    log.info("fitting teacher codebook (K=%d)", cfg.num_units)
    teacher = fit_teacher_codebook(corpus, cfg.num_units, stable_seed(cfg.seed, "teacher") % (2**31),
                                   langs=cfg.encoder_langs)
    log.info("training bimodal encoder (%d steps)", cfg.encoder_train.steps)
    encoder = train_av_encoder(corpus, teacher, cfg.encoder_train, cfg.encoder, langs=cfg.encoder_langs)
    log.info("fitting unit codebook over %s representations", "+".join(cfg.codebook_modalities))
    codebook = fit_unit_codebook(encoder, corpus, cfg.num_units, stable_seed(cfg.seed, "units") % (2**31),
                                 modalities=cfg.codebook_modalities, langs=cfg.encoder_langs)
    units_train = extract_split_units(encoder, corpus, codebook, "A", "train")
    units_valid = extract_split_units(encoder, corpus, codebook, "A", "valid")
    pairs = unit_pairs(corpus, units_train, "train")
    valid = unit_pairs(corpus, units_valid, "valid")
    log.info("training translator on %d pairs (%d steps)", len(pairs), cfg.translator_train.steps)
    translator = train_translator(pairs, cfg.translator_train, vocab=build_vocab(cfg.num_units, sorted(corpus.languages)),
                                  trans_cfg=cfg.translator, valid_pairs=valid[:120],
                                  swap_neighbors=codebook_neighbors(codebook))
    transcriber = build_oracle_transcriber(corpus, encoder, codebook)
    return PipelineBundle(
        config=cfg, encoder=encoder, teacher=teacher, codebook=codebook,
        translator=translator, vocab=translator.vocab, transcriber=transcriber,
    )


def add_renderer(bundle: PipelineBundle, corpus: ParallelCorpus,
                 dvector_override: DVector | None = None) -> PipelineBundle:
    """Train the speaker encoder and renderer on top of a translation pipeline."""
    cfg = bundle.config
    if bundle.speaker_encoder is None:
        log.info("training speaker encoder")
        spk_cfg = SpeakerEncoderConfig(num_speakers=len(corpus.speakers))
        bundle.speaker_encoder = train_speaker_encoder(corpus, cfg.speaker_train, spk_cfg)
    units_train = extract_split_units(bundle.encoder, corpus, bundle.codebook, "A", "train")
    log.info("training renderer (%d steps)", cfg.renderer_train.steps)
    bundle.renderer = train_renderer(corpus, units_train, bundle.speaker_encoder,
                                     cfg.renderer_train, cfg.renderer, dvector_override=dvector_override)
    return bundle


def build_pipeline(corpus: ParallelCorpus, cfg: PipelineConfig) -> PipelineBundle:
    """Full system: translation stages plus speaker encoder and renderer."""
    return add_renderer(build_translation_pipeline(corpus, cfg), corpus)


# ---------------------------------------------------------------------------
# inference


@dataclass
class TranslationOutcome:
    source_units: np.ndarray
    hypothesis: np.ndarray
    log_prob: float
    durations: np.ndarray
    dvector: DVector
    output: AvOutput


def run_translation(bundle: PipelineBundle, sample: AvSample, modality: str, tgt_lang: str,
                    beam: int | None = None, max_len: int | None = None) -> TranslationOutcome:
    """Translate one sample end to end and render the target AV streams.

    The d-vector is embedded from the source audio for audio-bearing
    modalities; visual-only requests use a fixed reference vector so the
    output is bitwise invariant to the (ignored) audio stream. Identity
    conditioning always comes from the source lip track.
    """
    if bundle.renderer is None or bundle.speaker_encoder is None:
        raise ValueError("pipeline renderer components are not trained")
    if tgt_lang not in bundle.vocab.languages:
        raise ValueError(f"unknown target language {tgt_lang!r}")
    units = extract_units(bundle.encoder, sample, modality, bundle.codebook)
    reduced = reduce_units(units)
    result = translate(bundle.translator, reduced.units, sample.language_tag, tgt_lang,
                       decode="beam", beam_size=beam if beam is not None else bundle.config.beam,
                       max_len=max_len)
    hyp = merge_adjacent_repeats(result.units)
    if hyp.size == 0:
        raise ValueError("decoder produced an empty hypothesis")
    durations = predict_durations(bundle.renderer, hyp)
    if modality == "V":
        dvec = constant_dvector(bundle.renderer.cfg.dvector_dim)
    else:
        dvec = embed_speaker(bundle.speaker_encoder, sample.audio_frames)
    identity = identity_from_visual(sample.visual_frames)
    out = render_av(bundle.renderer, hyp, dvec, identity, durations=durations)
    return TranslationOutcome(
        source_units=reduced.units, hypothesis=hyp, log_prob=result.log_prob,
        durations=durations, dvector=dvec, output=out,
    )


def direction_bleu(bundle: PipelineBundle, corpus: ParallelCorpus, src_lang: str, tgt_lang: str,
                   modality: str = "A", split: str = "test", decode: str = "greedy",
                   beam: int = 5, max_samples: int | None = None) -> float:
    """Oracle-transcriber BLEU for one language direction and input modality."""
    hyps = []
    refs = []
    for i, entry in corpus.rows(split=split, lang=src_lang):
        if max_samples is not None and len(refs) >= max_samples:
            break
        sample = corpus.sample(i)
        units = extract_units(bundle.encoder, sample, modality, bundle.codebook)
        reduced = reduce_units(units)
        result = translate(bundle.translator, reduced.units, src_lang, tgt_lang,
                           decode=decode, beam_size=beam)
        hyp = merge_adjacent_repeats(result.units)
        hyps.append(bundle.transcriber.transcribe(hyp, tgt_lang))
        refs.append(entry.concepts)
    return corpus_bleu(hyps, refs)


def all_direction_bleu(bundle: PipelineBundle, corpus: ParallelCorpus, modality: str = "A",
                       split: str = "test", max_samples: int | None = None) -> dict[str, float]:
    langs = sorted(corpus.languages)
    return {
        f"{a}-{b}": direction_bleu(bundle, corpus, a, b, modality, split, max_samples=max_samples)
        for a in langs for b in langs if a != b
    }


def rendered_to_sample(out: AvOutput, language_tag: str, concepts=()) -> AvSample:
    """Wrap a render result as a sample so units can be re-extracted from it."""
    return AvSample(
        audio_frames=out.audio_frames,
        visual_frames=out.lip_frames,
        speaker_id="rendered",
        language_tag=language_tag,
        concepts=tuple(concepts),
        alignment=np.zeros(out.audio_frames.shape[0], dtype=np.int32),
    )


# ---------------------------------------------------------------------------
# experiment recipes


@dataclass(frozen=True)
class ExperimentConfig:
    pipeline: PipelineConfig = PipelineConfig()
    seeds: tuple[int, ...] = (0, 1, 2)
    snrs: tuple[float, ...] = (-5.0, 0.0, 5.0, 10.0, SNR_CLEAN)
    modalities: tuple[str, ...] = ("A", "V", "AV")
    direction: tuple[str, str] = ("L1", "L0")
    fractions: tuple[float, ...] = (0.0, 0.05, 0.15, 1.0)
    finetune_corpus_seed: int = 101
    max_eval_samples: int | None = 32
    duration_jitter_prob: float = 0.6

    def config_hash(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True, default=str)
        return blake2b(payload.encode(), digest_size=16).hexdigest()


def run_noise_recipe(cfg: ExperimentConfig, outdir) -> dict:
    """Babble-noise sweep over (modality, SNR); per-seed full retraining."""
    corpus = make_parallel_corpus(cfg.pipeline.corpus)
    src, tgt = cfg.direction
    records = []
    for seed in cfg.seeds:
        bundle = build_translation_pipeline(corpus, cfg.pipeline.with_seed(seed))
        report = run_noise_sweep(bundle, corpus, src, tgt, cfg.snrs, cfg.modalities,
                                 seed=seed, max_samples=cfg.max_eval_samples)
        for row in report.rows:
            records.append({"seed": seed, **row})

    snr_keys = [snr_label(s) for s in cfg.snrs]
    means = {
        m: {k: float(np.mean([r["bleu"] for r in records if r["modality"] == m and r["snr"] == k]))
            for k in snr_keys}
        for m in cfg.modalities
    }
    matrix = [[means[m][k] for k in snr_keys] for m in cfg.modalities]
    reporting.write_jsonl(Path(outdir) / "records.jsonl", records)
    reporting.write_csv(Path(outdir) / "plot_data.csv", ["modality", *snr_keys],
                        [[m, *[f"{v:.4f}" for v in row]] for m, row in zip(cfg.modalities, matrix)])
    reporting.write_table(Path(outdir) / "table.txt",
                          f"BLEU under babble noise, {src}->{tgt} (mean of {len(cfg.seeds)} seeds)",
                          ["modality", *[f"{k} dB" if k != "clean" else k for k in snr_keys]],
                          [[m, *[f"{v:.2f}" for v in row]] for m, row in zip(cfg.modalities, matrix)])
    reporting.line_figure(Path(outdir) / "figure.png", snr_keys,
                          {m: matrix[i] for i, m in enumerate(cfg.modalities)},
                          title=f"Noise robustness by input modality ({src}->{tgt})",
                          xlabel="SNR (dB)", ylabel="BLEU")
    summary = {"recipe": "noise", "config_hash": cfg.config_hash(), "means": means}
    reporting.write_json(Path(outdir) / "summary.json", summary)
    return summary


def run_lowres_recipe(cfg: ExperimentConfig, outdir) -> dict:
    """Pretrain on the base corpus, finetune on fractions of a shifted-domain corpus."""
    pcfg = cfg.pipeline
    pretrain_corpus = make_parallel_corpus(pcfg.corpus)
    target_corpus = make_parallel_corpus(replace(pcfg.corpus, seed=cfg.finetune_corpus_seed))

    base = build_translation_pipeline(pretrain_corpus, pcfg)
    units_target_train = extract_split_units(base.encoder, target_corpus, base.codebook, "A", "train")
    sentences = [c for c, r in target_corpus.manifest.parallel.items()
                 if target_corpus.manifest.entries[next(iter(r.values()))].split == "train"]

    records = []
    summary_rows: dict[str, list[float]] = {f"{f:g}": [] for f in cfg.fractions}
    summary_rows["control"] = []
    eval_cap = cfg.max_eval_samples

    def mean_test_bleu(model) -> float:
        probe = PipelineBundle(
            config=base.config, encoder=base.encoder, teacher=base.teacher, codebook=base.codebook,
            translator=model, vocab=model.vocab, transcriber=base.transcriber)
        scores = all_direction_bleu(probe, target_corpus, "A", "test", max_samples=eval_cap)
        return float(np.mean(list(scores.values())))

    pretrain_units = extract_split_units(base.encoder, pretrain_corpus, base.codebook, "A", "train")
    pretrain_pairs = unit_pairs(pretrain_corpus, pretrain_units, "train")
    sentence_keep = {f: set(sentences[: int(np.ceil(f * len(sentences)))]) for f in cfg.fractions}

    for seed in cfg.seeds:
        run_cfg = pcfg.with_seed(seed)
        pretrained = train_translator(pretrain_pairs, run_cfg.translator_train,
                                      vocab=base.vocab, trans_cfg=run_cfg.translator)
        control = seeded_init(TranslatorModel(base.vocab, run_cfg.translator), run_cfg.translator_train.seed)
        control_bleu = mean_test_bleu(control)
        records.append({"seed": seed, "arm": "control", "fraction": 0.0, "bleu": control_bleu})
        summary_rows["control"].append(control_bleu)
        for fraction in cfg.fractions:
            if fraction == 0.0:
                model = pretrained
            else:
                kept = sentence_keep[fraction]
                subset = _pairs_for_sentences(target_corpus, units_target_train, kept)
                model = train_translator(subset, run_cfg.finetune_train, init=copy.deepcopy(pretrained))
            bleu = mean_test_bleu(model)
            records.append({"seed": seed, "arm": "pretrained", "fraction": fraction, "bleu": bleu})
            summary_rows[f"{fraction:g}"].append(bleu)

    means = {k: float(np.mean(v)) for k, v in summary_rows.items()}
    frac_keys = [f"{f:g}" for f in cfg.fractions]
    reporting.write_jsonl(Path(outdir) / "records.jsonl", records)
    reporting.write_csv(Path(outdir) / "plot_data.csv", ["arm", *frac_keys],
                        [["pretrained", *[f"{means[k]:.4f}" for k in frac_keys]],
                         ["control", f"{means['control']:.4f}", *[""] * (len(frac_keys) - 1)]])
    reporting.write_table(Path(outdir) / "table.txt",
                          f"BLEU by finetune fraction (mean of {len(cfg.seeds)} seeds)",
                          ["arm", *frac_keys, "control"],
                          [["pretrained", *[f"{means[k]:.2f}" for k in frac_keys], f"{means['control']:.2f}"]])
    reporting.line_figure(Path(outdir) / "figure.png", frac_keys,
                          {"pretrained then finetuned": [means[k] for k in frac_keys],
                           "no pretraining": [means["control"]] * len(frac_keys)},
                          title="Low-resource finetuning on the shifted-domain corpus",
                          xlabel="finetune data fraction", ylabel="BLEU")
    summary = {"recipe": "lowres", "config_hash": cfg.config_hash(), "means": means}
    reporting.write_json(Path(outdir) / "summary.json", summary)
    return summary


def _pairs_for_sentences(corpus: ParallelCorpus, units_by_index, sentences: set) -> list[UnitPair]:
    pairs = []
    for concepts, realizations in corpus.manifest.parallel.items():
        if concepts not in sentences:
            continue
        indices = {lang: i for lang, i in realizations.items()
                   if corpus.manifest.entries[i].split == "train"}
        reduced = {lang: reduce_units(units_by_index[i]).units for lang, i in indices.items()}
        for src_lang, src in reduced.items():
            for tgt_lang, tgt in reduced.items():
                if src_lang != tgt_lang:
                    pairs.append(UnitPair(src_lang, tgt_lang, src, tgt))
    return pairs


def run_teacher_ablation_recipe(cfg: ExperimentConfig, outdir) -> dict:
    """Multilingual vs primary-language-only teacher and encoder training."""
    corpus = make_parallel_corpus(cfg.pipeline.corpus)
    langs = sorted(corpus.languages)
    records = []
    for seed in cfg.seeds:
        for variant, enc_langs in (("multilingual", None), ("monolingual", (PRIMARY_LANG,))):
            run_cfg = replace(cfg.pipeline.with_seed(seed), encoder_langs=enc_langs)
            bundle = build_translation_pipeline(corpus, run_cfg)
            for direction, bleu in all_direction_bleu(bundle, corpus, "A", "test",
                                                      max_samples=cfg.max_eval_samples).items():
                records.append({"seed": seed, "variant": variant, "direction": direction, "bleu": bleu})

    directions = sorted({r["direction"] for r in records})
    means = {
        v: {d: float(np.mean([r["bleu"] for r in records if r["variant"] == v and r["direction"] == d]))
            for d in directions}
        for v in ("multilingual", "monolingual")
    }
    reporting.write_jsonl(Path(outdir) / "records.jsonl", records)
    reporting.write_csv(Path(outdir) / "plot_data.csv", ["variant", *directions],
                        [[v, *[f"{means[v][d]:.4f}" for d in directions]] for v in means])
    reporting.write_table(Path(outdir) / "table.txt",
                          f"BLEU by encoder training languages (mean of {len(cfg.seeds)} seeds)",
                          ["variant", *directions],
                          [[v, *[f"{means[v][d]:.2f}" for d in directions]] for v in means])
    reporting.bar_figure(Path(outdir) / "figure.png", directions,
                         {v: [means[v][d] for d in directions] for v in means},
                         title="Multilingual vs monolingual unit teacher",
                         xlabel="direction", ylabel="BLEU")
    summary = {"recipe": "teacher-ablation", "config_hash": cfg.config_hash(), "means": means,
               "primary": PRIMARY_LANG}
    reporting.write_json(Path(outdir) / "summary.json", summary)
    return summary


def _jitter_durations(durations: np.ndarray, prob: float, rng: np.random.Generator) -> np.ndarray:
    """Independent +/-1 frame jitter per unit (cascaded-system duration drift)."""
    jitter = rng.integers(-1, 2, size=durations.shape) * (rng.random(durations.shape) < prob)
    out = np.maximum(1, durations + jitter)
    if out.sum() % 2:
        out[-1] += 1
    return out.astype(np.int32)


def run_sync_recipe(cfg: ExperimentConfig, outdir) -> dict:
    """Shared-duration rendering vs an independently-timed cascade baseline."""
    corpus = make_parallel_corpus(cfg.pipeline.corpus)
    seed = cfg.seeds[0]
    run_cfg = cfg.pipeline.with_seed(seed)
    teacher = fit_teacher_codebook(corpus, run_cfg.num_units, stable_seed(run_cfg.seed, "teacher") % (2**31))
    encoder = train_av_encoder(corpus, teacher, run_cfg.encoder_train, run_cfg.encoder)
    codebook = fit_unit_codebook(encoder, corpus, run_cfg.num_units, stable_seed(run_cfg.seed, "units") % (2**31),
                                 modalities=run_cfg.codebook_modalities)
    speaker_encoder = train_speaker_encoder(corpus, run_cfg.speaker_train,
                                            SpeakerEncoderConfig(num_speakers=len(corpus.speakers)))
    units_train = extract_split_units(encoder, corpus, codebook, "A", "train")
    renderer = train_renderer(corpus, units_train, speaker_encoder, run_cfg.renderer_train, run_cfg.renderer)

    records = []
    count = 0
    for i, entry in corpus.rows(split="test"):
        if cfg.max_eval_samples is not None and count >= cfg.max_eval_samples:
            break
        sample = corpus.sample(i)
        units = extract_units(encoder, sample, "A", codebook)
        reduced = reduce_units(units)
        if len(reduced) < 4:
            continue
        count += 1
        durations = predict_durations(renderer, reduced.units)
        dvec = embed_speaker(speaker_encoder, sample.audio_frames)
        identity = identity_from_visual(sample.visual_frames)
        shared = render_av(renderer, reduced.units, dvec, identity, durations=durations)
        shared_offset = sync_offset(shared)

        rng_a = rng_for(seed, "cascade-audio", entry.path)
        rng_v = rng_for(seed, "cascade-video", entry.path)
        dur_audio = _jitter_durations(durations, cfg.duration_jitter_prob, rng_a)
        dur_video = _jitter_durations(durations, cfg.duration_jitter_prob, rng_v)
        audio = decode_audio(renderer, np.repeat(reduced.units, dur_audio), dvec)
        lips = decode_lips(renderer, np.repeat(reduced.units, dur_video), identity)
        cascade_offset = sync_offset((audio, lips))
        records.append({"sample": entry.path, "shared_offset": shared_offset,
                        "cascade_offset": cascade_offset})

    shared_offsets = np.array([r["shared_offset"] for r in records])
    cascade_offsets = np.array([r["cascade_offset"] for r in records])
    summary = {
        "recipe": "sync",
        "config_hash": cfg.config_hash(),
        "n": len(records),
        "shared_zero_fraction": float(np.mean(shared_offsets == 0)),
        "shared_mean_abs_offset": float(np.mean(np.abs(shared_offsets))),
        "cascade_mean_abs_offset": float(np.mean(np.abs(cascade_offsets))),
    }
    reporting.write_jsonl(Path(outdir) / "records.jsonl", records)
    reporting.write_csv(Path(outdir) / "plot_data.csv", ["sample", "shared_offset", "cascade_offset"],
                        [[r["sample"], str(r["shared_offset"]), str(r["cascade_offset"])] for r in records])
    reporting.write_table(Path(outdir) / "table.txt", "Audio-visual sync offset (video frames)",
                          ["system", "mean |offset|", "zero fraction"],
                          [["shared duration", f"{summary['shared_mean_abs_offset']:.3f}",
                            f"{summary['shared_zero_fraction']:.3f}"],
                           ["independent durations", f"{summary['cascade_mean_abs_offset']:.3f}",
                            f"{float(np.mean(cascade_offsets == 0)):.3f}"]])
    reporting.bar_figure(Path(outdir) / "figure.png", ["shared duration", "independent durations"],
                         {"mean |offset| (frames)": [summary["shared_mean_abs_offset"],
                                                     summary["cascade_mean_abs_offset"]]},
                         title="Synchronization: one duration track vs cascaded timing",
                         xlabel="renderer", ylabel="mean |offset|")
    reporting.write_json(Path(outdir) / "summary.json", summary)
    return summary


def run_speaker_recipe(cfg: ExperimentConfig, outdir) -> dict:
    """Zero-shot speaker vocoder vs a constant-vector (single voice) vocoder."""
    corpus = make_parallel_corpus(cfg.pipeline.corpus)
    seed = cfg.seeds[0]
    run_cfg = cfg.pipeline.with_seed(seed)
    base = build_translation_pipeline(corpus, run_cfg)
    add_renderer(base, corpus)
    const_bundle = PipelineBundle(
        config=base.config, encoder=base.encoder, teacher=base.teacher, codebook=base.codebook,
        translator=base.translator, vocab=base.vocab, transcriber=base.transcriber,
        speaker_encoder=base.speaker_encoder,
    )
    units_train = extract_split_units(base.encoder, corpus, base.codebook, "A", "train")
    const_bundle.renderer = train_renderer(
        corpus, units_train, base.speaker_encoder, run_cfg.renderer_train, run_cfg.renderer,
        dvector_override=constant_dvector(run_cfg.renderer.dvector_dim))

    src, tgt = cfg.direction
    records = []
    sims = {"zero_shot": [], "constant": []}
    hyps = {"zero_shot": [], "constant": []}
    refs = []
    count = 0
    for i, entry in corpus.rows(split="test", lang=src):
        if cfg.max_eval_samples is not None and count >= cfg.max_eval_samples:
            break
        count += 1
        sample = corpus.sample(i)
        src_dvec = embed_speaker(base.speaker_encoder, sample.audio_frames)
        refs.append(entry.concepts)
        row = {"sample": entry.path}
        for arm, bundle, dvec in (
            ("zero_shot", base, src_dvec),
            ("constant", const_bundle, constant_dvector(run_cfg.renderer.dvector_dim)),
        ):
            units = extract_units(bundle.encoder, sample, "AV", bundle.codebook)
            reduced = reduce_units(units)
            result = translate(bundle.translator, reduced.units, src, tgt, decode="greedy")
            hyp = merge_adjacent_repeats(result.units)
            if hyp.size == 0:
                hyp = np.asarray([0], dtype=np.int32)
            durations = predict_durations(bundle.renderer, hyp)
            out = render_av(bundle.renderer, hyp, dvec, identity_from_visual(sample.visual_frames),
                            durations=durations)
            sim = speaker_similarity(src_dvec, embed_speaker(base.speaker_encoder, out.audio_frames))
            rendered = rendered_to_sample(out, tgt, entry.concepts)
            re_units = extract_units(bundle.encoder, rendered, "A", bundle.codebook)
            hyps[arm].append(bundle.transcriber.transcribe(re_units, tgt))
            sims[arm].append(sim)
            row[f"sim_{arm}"] = sim
        records.append(row)

    bleu = {arm: corpus_bleu(hyps[arm], refs) for arm in hyps}
    summary = {
        "recipe": "speaker",
        "config_hash": cfg.config_hash(),
        "n": len(records),
        "sim_zero_shot": float(np.mean(sims["zero_shot"])),
        "sim_constant": float(np.mean(sims["constant"])),
        "bleu_zero_shot": bleu["zero_shot"],
        "bleu_constant": bleu["constant"],
    }
    reporting.write_jsonl(Path(outdir) / "records.jsonl", records)
    reporting.write_csv(Path(outdir) / "plot_data.csv", ["sample", "sim_zero_shot", "sim_constant"],
                        [[r["sample"], f"{r['sim_zero_shot']:.4f}", f"{r['sim_constant']:.4f}"] for r in records])
    reporting.write_table(Path(outdir) / "table.txt", f"Vocoder speaker conditioning ({src}->{tgt})",
                          ["vocoder", "SIM", "BLEU"],
                          [["zero-shot speaker", f"{summary['sim_zero_shot']:.3f}", f"{bleu['zero_shot']:.2f}"],
                           ["constant vector", f"{summary['sim_constant']:.3f}", f"{bleu['constant']:.2f}"]])
    reporting.bar_figure(Path(outdir) / "figure.png", ["zero-shot", "constant"],
                         {"SIM": [summary["sim_zero_shot"], summary["sim_constant"]]},
                         title="Voice similarity by vocoder conditioning",
                         xlabel="vocoder", ylabel="cosine similarity")
    reporting.write_json(Path(outdir) / "summary.json", summary)
    return summary


RECIPES = {
    "noise": run_noise_recipe,
    "lowres": run_lowres_recipe,
    "teacher-ablation": run_teacher_ablation_recipe,
    "sync": run_sync_recipe,
    "speaker": run_speaker_recipe,
}


def experiment(name: str, cfg: ExperimentConfig, outdir) -> dict:
    """Run a named recipe deterministically and write its report files."""
    if name not in RECIPES:
        raise ValueError(f"unknown recipe {name!r}; choose from {sorted(RECIPES)}")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return RECIPES[name](cfg, outdir)
