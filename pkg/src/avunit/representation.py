"""Unified audio-visual representations and their discretization into units.

The encoder is a small fusion transformer trained by masked cluster
prediction: span-masked fused frames must predict teacher cluster ids
(k-means over clean audio features), under per-utterance modality dropout
so either stream alone can stand in for both. Frame representations are
quantized by a unit codebook into AV speech units; adjacent repeats are
merged into (unit, duration) pairs for translation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import torch
from torch import nn

from . import corpus as corpus_mod
from .corpus import AvSample, ParallelCorpus, babble_track, mix_noise
from .modeling import (
    EncoderBlock,
    TrainConfig,
    deterministic_mode,
    lr_at,
    make_optimizer,
    rng_for,
    seeded_init,
    set_lr,
    sinusoid_table,
)

MODALITIES = ("A", "V", "AV")

KMEANS_MAX_ITER = 200
KMEANS_REL_TOL = 1e-6


# ---------------------------------------------------------------------------
# unit sequences


@dataclass
class UnitSequence:
    units: np.ndarray
    frame_rate: str = "audio"

    def __post_init__(self):
        self.units = np.asarray(self.units, dtype=np.int32)

    def __len__(self):
        return int(self.units.shape[0])


@dataclass
class ReducedUnitSequence:
    """Run-length form: distinct adjacent units paired with frame durations."""

    units: np.ndarray
    durations: np.ndarray

    def __post_init__(self):
        self.units = np.asarray(self.units, dtype=np.int32)
        self.durations = np.asarray(self.durations, dtype=np.int32)
        if self.units.shape != self.durations.shape:
            raise ValueError("units and durations must have equal length")
        if np.any(self.durations < 1):
            raise ValueError("durations must be positive")
        if self.units.size and np.any(self.units[1:] == self.units[:-1]):
            raise ValueError("adjacent units must differ")

    def __len__(self):
        return int(self.units.shape[0])

    @property
    def total_frames(self) -> int:
        return int(self.durations.sum())


def reduce_units(seq) -> ReducedUnitSequence:
    """Merge adjacent repeating units into (unit, duration) pairs."""
    units = seq.units if isinstance(seq, UnitSequence) else np.asarray(seq, dtype=np.int32)
    if units.size == 0:
        return ReducedUnitSequence(np.zeros(0, np.int32), np.zeros(0, np.int32))
    boundaries = np.flatnonzero(np.diff(units)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [units.size]])
    return ReducedUnitSequence(units[starts], (ends - starts).astype(np.int32))


def expand_units(reduced: ReducedUnitSequence) -> UnitSequence:
    """Inverse of :func:`reduce_units`: repeat each unit by its duration."""
    return UnitSequence(np.repeat(reduced.units, reduced.durations))


# ---------------------------------------------------------------------------
# k-means quantization


@dataclass
class Codebook:
    """K centroid vectors defining the unit inventory."""

    centroids: np.ndarray
    iterations: int
    inertia: float

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ValueError("centroids must be a (K, D) matrix with K >= 1")
        if not np.isfinite(self.inertia):
            raise ValueError("inertia must be finite")
        if not np.isfinite(self.centroids).all():
            raise ValueError("centroids must be finite")

    @property
    def K(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])

    def spec_key(self) -> str:
        return f"codebook/K={self.K}/D={self.dim}"


def _squared_distances(points: np.ndarray, centroids: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Exact (no expansion trick) squared L2 distances, chunked over points.

    Used for unit assignment, where the equidistant tie rule must hold in
    exact float arithmetic.
    """
    out = np.empty((points.shape[0], centroids.shape[0]), dtype=np.float64)
    for start in range(0, points.shape[0], chunk):
        block = points[start:start + chunk]
        diff = block[:, None, :] - centroids[None, :, :]
        out[start:start + block.shape[0]] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def _fast_squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Expanded-form distances for the Lloyd iterations (matmul, clipped at 0)."""
    d2 = (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def fit_kmeans(features: np.ndarray, K: int, seed: int, *, history_out: list | None = None) -> Codebook:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when the relative inertia improvement drops below 1e-6 or after
    200 iterations; inertia is asserted non-increasing every iteration.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    if not np.isfinite(x).all():
        raise ValueError("features contain non-finite values")
    n = x.shape[0]
    if K < 1:
        raise ValueError("K must be at least 1")
    if n < K:
        raise ValueError(f"need at least K={K} points, got {n}")

    rng = rng_for(seed, "kmeans")

    # k-means++ seeding
    centroids = np.empty((K, x.shape[1]), dtype=np.float64)
    centroids[0] = x[int(rng.integers(n))]
    if K > 1:
        d2 = _fast_squared_distances(x, centroids[:1]).min(axis=1)
        for k in range(1, K):
            total = d2.sum()
            if total <= 0:
                raise ValueError("fewer than K distinct points")
            centroids[k] = x[int(rng.choice(n, p=d2 / total))]
            d2 = np.minimum(d2, _fast_squared_distances(x, centroids[k:k + 1]).min(axis=1))

    prev_inertia = math.inf
    assign = np.zeros(n, dtype=np.int64)
    iterations = 0
    for iterations in range(1, KMEANS_MAX_ITER + 1):
        d2 = _fast_squared_distances(x, centroids)
        assign = d2.argmin(axis=1)
        inertia = float(d2[np.arange(n), assign].sum())
        if inertia > prev_inertia * (1 + 1e-12) + 1e-12:
            raise AssertionError(f"k-means inertia increased: {prev_inertia} -> {inertia}")
        if history_out is not None:
            history_out.append(inertia)
        improved = prev_inertia - inertia
        converged = prev_inertia < math.inf and improved < KMEANS_REL_TOL * max(prev_inertia, 1e-300)
        prev_inertia = inertia
        if converged:
            break
        new_centroids = np.empty_like(centroids)
        for k in range(K):
            members = assign == k
            if members.any():
                new_centroids[k] = x[members].mean(axis=0)
            else:
                # re-seed an empty cluster at the worst-served point
                new_centroids[k] = x[int(d2[np.arange(n), assign].argmax())]
        centroids = new_centroids

    return Codebook(centroids=centroids, iterations=iterations, inertia=prev_inertia)


def assign_units(features: np.ndarray, codebook: Codebook) -> UnitSequence:
    """Nearest-centroid (L2) id per frame; ties break to the lowest index."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != codebook.dim:
        raise ValueError(f"feature dim {x.shape} does not match codebook dim {codebook.dim}")
    if x.shape[0] == 0:
        return UnitSequence(np.zeros(0, np.int32))
    d2 = _squared_distances(x, codebook.centroids)
    return UnitSequence(d2.argmin(axis=1).astype(np.int32))


# ---------------------------------------------------------------------------
# bimodal encoder


@dataclass(frozen=True)
class EncoderConfig:
    width: int = 64
    heads: int = 4
    ffn: int = 128
    layers: int = 2
    num_clusters: int = 100
    mask_fraction: float = 0.25
    mask_span: int = 5
    modality_dropout: float = 0.5
    unmasked_loss_weight: float = 1.0
    consistency_weight: float = 3.0
    smoothness_weight: float = 0.5
    feature_smoothing: int = 1
    noise_augment_prob: float = 0.25
    noise_snr_range: tuple[float, float] = (-5.0, 10.0)
    max_frames: int = 2048

    def spec_key(self) -> str:
        return (
            f"av-encoder/w={self.width}/h={self.heads}/f={self.ffn}/l={self.layers}"
            f"/k={self.num_clusters}/a={corpus_mod.AUDIO_DIM}/v={corpus_mod.VISUAL_DIM}"
        )


class AvEncoderModel(nn.Module):
    """Fusion transformer over audio and (2x upsampled) lip streams.

    An absent modality is zero-masked at the raw input, so audio-only
    extraction is bitwise invariant to the visual stream and vice versa.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.audio_in = nn.Linear(corpus_mod.AUDIO_DIM, cfg.width)
        self.visual_in = nn.Linear(corpus_mod.VISUAL_DIM, cfg.width)
        self.fuse = nn.Linear(2 * cfg.width, cfg.width)
        self.mask_embedding = nn.Parameter(torch.zeros(cfg.width))
        self.blocks = nn.ModuleList(EncoderBlock(cfg.width, cfg.heads, cfg.ffn) for _ in range(cfg.layers))
        self.out_norm = nn.LayerNorm(cfg.width)
        self.head = nn.Linear(cfg.width, cfg.num_clusters)
        self.register_buffer("positions", sinusoid_table(cfg.max_frames, cfg.width), persistent=False)

    def spec_key(self) -> str:
        return self.cfg.spec_key()

    def fused(self, audio: torch.Tensor, visual: torch.Tensor,
              mask: torch.Tensor | None = None) -> torch.Tensor:
        h = self.fuse(torch.cat([self.audio_in(audio), self.visual_in(visual)], dim=-1))
        if mask is not None and mask.any():
            h = torch.where(mask[..., None], self.mask_embedding.expand_as(h), h)
        return h + self.positions[: h.shape[1]]

    def features(self, audio: torch.Tensor, visual: torch.Tensor,
                 mask: torch.Tensor | None = None, pad_bias: torch.Tensor | None = None) -> torch.Tensor:
        h = self.fused(audio, visual, mask)
        for block in self.blocks:
            h = block(h, pad_bias)
        return self.out_norm(h)

    def forward(self, audio, visual, mask=None, pad_bias=None):
        return self.head(self.features(audio, visual, mask, pad_bias))


def upsample_visual(visual: np.ndarray) -> np.ndarray:
    """Repeat each lip frame twice to reach the audio frame rate."""
    return np.repeat(visual, 2, axis=0)


def _modality_streams(sample: AvSample, modality: str) -> tuple[np.ndarray, np.ndarray]:
    if modality not in MODALITIES:
        raise ValueError(f"modality must be one of {MODALITIES}")
    audio = sample.audio_frames.astype(np.float32)
    visual = upsample_visual(sample.visual_frames).astype(np.float32)
    if modality == "A":
        visual = np.zeros_like(visual)
    elif modality == "V":
        audio = np.zeros_like(audio)
    return audio, visual


def encode(model: AvEncoderModel, sample: AvSample, modality: str = "AV") -> np.ndarray:
    """Per-audio-frame fused representations, shape (T_a, width).

    A short moving average over time (cfg.feature_smoothing frames)
    suppresses single-frame quantization flicker before clustering.
    """
    audio, visual = _modality_streams(sample, modality)
    if audio.shape[0] == 0:
        return np.zeros((0, model.cfg.width), dtype=np.float32)
    with torch.no_grad():
        feats = model.features(torch.from_numpy(audio)[None], torch.from_numpy(visual)[None])
    out = feats[0].numpy()
    window = model.cfg.feature_smoothing
    if window > 1 and out.shape[0] > 1:
        half = window // 2
        padded = np.concatenate([np.repeat(out[:1], half, 0), out, np.repeat(out[-1:], half, 0)])
        out = np.stack([padded[i:i + out.shape[0]] for i in range(window)]).mean(axis=0)
    return out.astype(np.float32)


def extract_units(model: AvEncoderModel, sample: AvSample, modality: str, codebook: Codebook) -> UnitSequence:
    """Quantize the sample's representations; output length equals T_a."""
    return assign_units(encode(model, sample, modality), codebook)


def _sample_mask(t: int, cfg: EncoderConfig, rng: np.random.Generator) -> np.ndarray:
    """Span mask covering ~mask_fraction of the t frames (at least one span)."""
    mask = np.zeros(t, dtype=bool)
    if t == 0:
        return mask
    target = max(1, int(math.ceil(cfg.mask_fraction * t)))
    span = min(cfg.mask_span, t)
    tries = 0
    while mask.sum() < target and tries < 8 * t:
        start = int(rng.integers(0, t - span + 1))
        mask[start:start + span] = True
        tries += 1
    return mask


def fit_teacher_codebook(corpus: ParallelCorpus, K: int, seed: int,
                         langs: Iterable[str] | None = None) -> Codebook:
    """Teacher targets: k-means over clean train-split audio features."""
    frames = [
        sample.audio_frames
        for entry, sample in corpus.samples(split="train")
        if (langs is None or entry.lang in langs) and sample.num_audio_frames
    ]
    return fit_kmeans(np.concatenate(frames, axis=0), K, seed)


def fit_unit_codebook(model: AvEncoderModel, corpus: ParallelCorpus, K: int, seed: int,
                      modalities: tuple[str, ...] = ("AV",),
                      langs: Iterable[str] | None = None) -> Codebook:
    """Unit inventory: k-means over the model's fused train-split representations."""
    feats = []
    for entry, sample in corpus.samples(split="train"):
        if langs is not None and entry.lang not in langs:
            continue
        if sample.num_audio_frames == 0:
            continue
        for modality in modalities:
            feats.append(encode(model, sample, modality))
    return fit_kmeans(np.concatenate(feats, axis=0), K, seed)


def train_av_encoder(
    corpus: ParallelCorpus,
    teacher: Codebook,
    cfg: TrainConfig,
    enc_cfg: EncoderConfig = EncoderConfig(),
    *,
    langs: Iterable[str] | None = None,
) -> AvEncoderModel:
    """Masked cluster prediction with modality dropout over the train split.

    Per utterance: with p/2 the audio stream is dropped, with p/2 the
    visual stream, else both are kept (p = modality_dropout). Cross
    entropy against teacher cluster ids (assigned on the clean audio) is
    computed at span-masked positions, plus a down-weighted term at
    visible positions so inference-time representations stay locally
    discriminative. Babble-noise augmentation perturbs the audio input
    only; targets stay clean. A consistency term pulls each utterance's
    visible features toward the features of its clean full audio-visual
    input (stop-gradient), so the three input modalities share one
    representation space.
    """
    if teacher.dim != corpus_mod.AUDIO_DIM:
        raise ValueError(
            f"teacher codebook dim {teacher.dim} does not match audio features ({corpus_mod.AUDIO_DIM})"
        )
    if teacher.K != enc_cfg.num_clusters:
        raise ValueError(f"teacher has {teacher.K} clusters, encoder expects {enc_cfg.num_clusters}")
    deterministic_mode()

    keep = [
        (entry, sample)
        for entry, sample in corpus.samples(split="train")
        if (langs is None or entry.lang in langs) and sample.num_audio_frames > 0
    ]
    if not keep:
        raise ValueError("no training samples")
    audio_tracks = [s.audio_frames.astype(np.float32) for _, s in keep]
    visual_tracks = [upsample_visual(s.visual_frames).astype(np.float32) for _, s in keep]
    targets = [assign_units(s.audio_frames, teacher).units for _, s in keep]
    speakers = [e.speaker for e, _ in keep]

    model = seeded_init(AvEncoderModel(enc_cfg), cfg.seed)
    optimizer = make_optimizer(model, cfg)
    rng = rng_for(cfg.seed, "encoder-train")
    p = enc_cfg.modality_dropout

    model.train()
    for step in range(cfg.steps):
        picks = rng.integers(0, len(keep), size=cfg.batch_size)
        lengths = [audio_tracks[i].shape[0] for i in picks]
        t_max = max(lengths)
        audio = np.zeros((cfg.batch_size, t_max, corpus_mod.AUDIO_DIM), dtype=np.float32)
        visual = np.zeros((cfg.batch_size, t_max, corpus_mod.VISUAL_DIM), dtype=np.float32)
        mask = np.zeros((cfg.batch_size, t_max), dtype=bool)
        tgt = np.zeros((cfg.batch_size, t_max), dtype=np.int64)
        pad = np.ones((cfg.batch_size, t_max), dtype=bool)

        clean_audio = np.zeros_like(audio)
        clean_visual = np.zeros_like(visual)
        for row, i in enumerate(picks):
            t = lengths[row]
            a = audio_tracks[i]
            if enc_cfg.noise_augment_prob and rng.random() < enc_cfg.noise_augment_prob:
                snr = float(rng.uniform(*enc_cfg.noise_snr_range))
                a = mix_noise(a, babble_track(corpus, t, speakers[i], rng), snr)
            v = visual_tracks[i]
            roll = rng.random()
            if roll < p / 2:
                a = np.zeros_like(a)
            elif roll < p:
                v = np.zeros_like(v)
            audio[row, :t] = a
            visual[row, :t] = v
            clean_audio[row, :t] = audio_tracks[i]
            clean_visual[row, :t] = visual_tracks[i]
            tgt[row, :t] = targets[i]
            pad[row, :t] = False
            mask[row, :t] = _sample_mask(t, enc_cfg, rng)

        pad_t = torch.from_numpy(pad)
        bias = torch.zeros(pad.shape, dtype=torch.float32)
        bias[pad_t] = float("-inf")
        pad_bias = bias[:, None, None, :]
        feats = model.features(
            torch.from_numpy(audio),
            torch.from_numpy(visual),
            mask=torch.from_numpy(mask),
            pad_bias=pad_bias,
        )
        logits = model.head(feats)
        tgt_t = torch.from_numpy(tgt)
        sel = torch.from_numpy(mask & ~pad)
        loss = nn.functional.cross_entropy(logits[sel], tgt_t[sel])
        vis = torch.from_numpy(~mask & ~pad)
        if enc_cfg.unmasked_loss_weight > 0 and vis.any():
            loss = loss + enc_cfg.unmasked_loss_weight * nn.functional.cross_entropy(
                logits[vis], tgt_t[vis])
        if enc_cfg.consistency_weight > 0 and vis.any():
            # anchor: clean audio with the visual stream zeroed, i.e. the
            # canonical stream the translator is trained on
            with torch.no_grad():
                ref = model.features(
                    torch.from_numpy(clean_audio), torch.from_numpy(np.zeros_like(clean_visual)),
                    pad_bias=pad_bias,
                )
            loss = loss + enc_cfg.consistency_weight * ((feats[vis] - ref[vis]) ** 2).mean()
        if enc_cfg.smoothness_weight > 0 and t_max > 1:
            both = torch.from_numpy(~pad[:, 1:] & ~pad[:, :-1])
            delta = ((feats[:, 1:] - feats[:, :-1]) ** 2).mean(-1)
            loss = loss + enc_cfg.smoothness_weight * (delta * both).sum() / both.sum().clamp(min=1)

        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        set_lr(optimizer, lr_at(cfg, step))
        optimizer.step()

    model.eval()
    return model


def masked_accuracy(model: AvEncoderModel, corpus: ParallelCorpus, teacher: Codebook,
                    split: str = "valid", seed: int = 0) -> float:
    """Teacher-cluster accuracy at masked positions on a held-out split."""
    rng = rng_for(seed, "masked-eval")
    hits = 0
    total = 0
    for entry, sample in corpus.samples(split=split):
        t = sample.num_audio_frames
        if t == 0:
            continue
        mask = _sample_mask(t, model.cfg, rng)
        audio = sample.audio_frames.astype(np.float32)
        visual = upsample_visual(sample.visual_frames).astype(np.float32)
        with torch.no_grad():
            logits = model(
                torch.from_numpy(audio)[None],
                torch.from_numpy(visual)[None],
                mask=torch.from_numpy(mask)[None],
            )
        pred = logits[0].argmax(dim=-1).numpy()
        target = assign_units(sample.audio_frames, teacher).units
        hits += int((pred[mask] == target[mask]).sum())
        total += int(mask.sum())
    return hits / max(1, total)
