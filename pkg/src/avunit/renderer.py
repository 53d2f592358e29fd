"""Rendering translated units to synchronized audio and lip streams.

One duration track, predicted per reduced unit by a two-conv regressor,
drives both output paths: the vocoder decodes expanded unit embeddings
concatenated channel-wise with a projected speaker d-vector into audio
feature frames, and the lip decoder pools each adjacent frame pair of
the same expansion (half rate), passes one transformer layer, and decodes
together with a projected identity offset into lip parameters. Speaker
conditioning therefore touches only the audio path and identity only the
lip path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import corpus as corpus_mod
from .corpus import AvSample, ParallelCorpus
from .modeling import (
    EncoderBlock,
    TrainConfig,
    deterministic_mode,
    lr_at,
    make_optimizer,
    rng_for,
    seeded_init,
    set_lr,
)
from .representation import ReducedUnitSequence, UnitSequence, reduce_units

DVECTOR_DIM = 16
UNIT_EMBED_DIM = 32


@dataclass(frozen=True)
class DVector:
    """Unit-norm utterance-level speaker embedding."""

    vec: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vec, dtype=np.float32)
        object.__setattr__(self, "vec", vec)
        if vec.ndim != 1:
            raise ValueError("d-vector must be a 1-D vector")
        if abs(float(np.linalg.norm(vec)) - 1.0) > 1e-6:
            raise ValueError("d-vector must have unit L2 norm")


def constant_dvector(dim: int = DVECTOR_DIM) -> DVector:
    """Fixed reference vector used by the single-speaker vocoder ablation."""
    return DVector(np.full(dim, 1.0 / np.sqrt(dim), dtype=np.float32))


@dataclass
class AvOutput:
    """Synchronized render result; T_a equals the duration total, T_v = T_a / 2."""

    audio_frames: np.ndarray
    lip_frames: np.ndarray
    durations: np.ndarray

    def __post_init__(self):
        t_a = self.audio_frames.shape[0]
        t_v = self.lip_frames.shape[0]
        if t_a != int(np.sum(self.durations)):
            raise ValueError("audio frame count must equal the duration total")
        if t_a != 2 * t_v:
            raise ValueError(f"audio/lip frame counts violate 2:1 ({t_a} vs {t_v})")


# ---------------------------------------------------------------------------
# speaker encoder


@dataclass(frozen=True)
class SpeakerEncoderConfig:
    hidden: int = 32
    embed_dim: int = DVECTOR_DIM
    num_speakers: int = 8

    def spec_key(self) -> str:
        return f"speaker-encoder/h={self.hidden}/e={self.embed_dim}/s={self.num_speakers}"


class SpeakerEncoder(nn.Module):
    """Frame MLP -> temporal mean -> L2 normalize; classifier head for training."""

    def __init__(self, cfg: SpeakerEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.frame = nn.Sequential(
            nn.Linear(corpus_mod.AUDIO_DIM, cfg.hidden),
            nn.ReLU(),
            nn.Linear(cfg.hidden, cfg.embed_dim),
        )
        self.classifier = nn.Linear(cfg.embed_dim, cfg.num_speakers)

    def spec_key(self) -> str:
        return self.cfg.spec_key()

    def embed(self, audio: torch.Tensor, frame_mask: torch.Tensor | None = None) -> torch.Tensor:
        h = self.frame(audio)
        if frame_mask is not None:
            h = h * frame_mask[..., None]
            mean = h.sum(dim=-2) / frame_mask.sum(dim=-1, keepdim=True).clamp(min=1)
        else:
            mean = h.mean(dim=-2)
        return mean / mean.norm(dim=-1, keepdim=True).clamp(min=1e-12)

    def forward(self, audio, frame_mask=None):
        emb = self.embed(audio, frame_mask)
        return emb, self.classifier(emb)


def embed_speaker(encoder: SpeakerEncoder, audio_frames: np.ndarray) -> DVector:
    """One unit-norm d-vector per utterance (temporal mean before normalization)."""
    audio = np.asarray(audio_frames, dtype=np.float32)
    if audio.shape[0] == 0:
        raise ValueError("cannot embed an empty utterance")
    with torch.no_grad():
        emb = encoder.embed(torch.from_numpy(audio)[None])[0].numpy()
    return DVector(emb)


def train_speaker_encoder(corpus: ParallelCorpus, cfg: TrainConfig,
                          spk_cfg: SpeakerEncoderConfig | None = None) -> SpeakerEncoder:
    """Speaker-id classifier on train-split audio; embeddings come from the penultimate layer."""
    deterministic_mode()
    speaker_ids = sorted(corpus.speakers)
    if len(speaker_ids) < 2:
        raise ValueError("single-speaker corpus: cannot learn speaker contrasts")
    if spk_cfg is None:
        spk_cfg = SpeakerEncoderConfig(num_speakers=len(speaker_ids))
    index = {s: i for i, s in enumerate(speaker_ids)}

    tracks = [(s.audio_frames.astype(np.float32), index[e.speaker])
              for e, s in corpus.samples(split="train") if s.num_audio_frames > 0]
    model = seeded_init(SpeakerEncoder(spk_cfg), cfg.seed)
    optimizer = make_optimizer(model, cfg)
    rng = rng_for(cfg.seed, "speaker-train")

    model.train()
    for step in range(cfg.steps):
        picks = rng.integers(0, len(tracks), size=cfg.batch_size)
        t_max = max(tracks[i][0].shape[0] for i in picks)
        audio = np.zeros((cfg.batch_size, t_max, corpus_mod.AUDIO_DIM), dtype=np.float32)
        mask = np.zeros((cfg.batch_size, t_max), dtype=np.float32)
        label = np.zeros(cfg.batch_size, dtype=np.int64)
        for row, i in enumerate(picks):
            a, y = tracks[i]
            audio[row, : a.shape[0]] = a
            mask[row, : a.shape[0]] = 1.0
            label[row] = y
        _, logits = model(torch.from_numpy(audio), torch.from_numpy(mask))
        loss = nn.functional.cross_entropy(logits, torch.from_numpy(label))
        optimizer.zero_grad()
        loss.backward()
        set_lr(optimizer, lr_at(cfg, step))
        optimizer.step()
    model.eval()
    return model


# ---------------------------------------------------------------------------
# renderer bundle


@dataclass(frozen=True)
class RendererConfig:
    num_units: int = 100
    unit_embed_dim: int = UNIT_EMBED_DIM
    dvector_dim: int = DVECTOR_DIM
    hidden: int = 64
    kernel: int = 3
    lip_heads: int = 2
    lip_ffn: int = 64

    def spec_key(self) -> str:
        return (
            f"renderer/k={self.num_units}/u={self.unit_embed_dim}/d={self.dvector_dim}"
            f"/h={self.hidden}/a={corpus_mod.AUDIO_DIM}/v={corpus_mod.VISUAL_DIM}"
        )


class DurationModel(nn.Module):
    """Two 1-D convolutions plus a scalar regressor over per-unit embeddings."""

    def __init__(self, embed_dim: int, kernel: int = 3):
        super().__init__()
        self.conv1 = nn.Conv1d(embed_dim, embed_dim, kernel, padding=kernel // 2)
        self.conv2 = nn.Conv1d(embed_dim, embed_dim, kernel, padding=kernel // 2)
        self.out = nn.Linear(embed_dim, 1)

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        h = emb.transpose(1, 2)
        h = torch.relu(self.conv1(h))
        h = torch.relu(self.conv2(h))
        return nn.functional.softplus(self.out(h.transpose(1, 2))).squeeze(-1)


class Vocoder(nn.Module):
    """Expanded unit embeddings, channel-concatenated with the projected d-vector."""

    def __init__(self, cfg: RendererConfig):
        super().__init__()
        self.dvec_proj = nn.Linear(cfg.dvector_dim, cfg.unit_embed_dim)
        width = 2 * cfg.unit_embed_dim
        self.conv1 = nn.Conv1d(width, cfg.hidden, cfg.kernel, padding=cfg.kernel // 2)
        self.conv2 = nn.Conv1d(cfg.hidden, cfg.hidden, cfg.kernel, padding=cfg.kernel // 2)
        self.out = nn.Linear(cfg.hidden, corpus_mod.AUDIO_DIM)

    def forward(self, emb: torch.Tensor, dvec: torch.Tensor) -> torch.Tensor:
        cond = self.dvec_proj(dvec)[:, None, :].expand(-1, emb.shape[1], -1)
        h = torch.cat([emb, cond], dim=-1).transpose(1, 2)
        h = torch.relu(self.conv1(h))
        h = torch.relu(self.conv2(h))
        return self.out(h.transpose(1, 2))


class LipDecoder(nn.Module):
    """Half-rate path: pair-pooled embeddings, one transformer layer, identity concat."""

    def __init__(self, cfg: RendererConfig):
        super().__init__()
        self.encoder = EncoderBlock(cfg.unit_embed_dim, cfg.lip_heads, cfg.lip_ffn)
        self.identity_proj = nn.Linear(corpus_mod.VISUAL_DIM, cfg.unit_embed_dim)
        width = 2 * cfg.unit_embed_dim
        self.conv = nn.Conv1d(width, cfg.hidden, cfg.kernel, padding=cfg.kernel // 2)
        self.out = nn.Linear(cfg.hidden, corpus_mod.VISUAL_DIM)

    def forward(self, emb_half: torch.Tensor, identity: torch.Tensor,
                pad_bias: torch.Tensor | None = None) -> torch.Tensor:
        h = self.encoder(emb_half, pad_bias)
        cond = self.identity_proj(identity)[:, None, :].expand(-1, h.shape[1], -1)
        h = torch.cat([h, cond], dim=-1).transpose(1, 2)
        h = torch.relu(self.conv(h))
        return self.out(h.transpose(1, 2))


class RendererBundle(nn.Module):
    """Duration model, shared unit embedding table, vocoder, and lip decoder."""

    def __init__(self, cfg: RendererConfig):
        super().__init__()
        self.cfg = cfg
        self.unit_embed = nn.Embedding(cfg.num_units, cfg.unit_embed_dim)
        self.duration = DurationModel(cfg.unit_embed_dim, cfg.kernel)
        self.vocoder = Vocoder(cfg)
        self.lip = LipDecoder(cfg)

    def spec_key(self) -> str:
        return self.cfg.spec_key()


def identity_from_visual(visual_frames: np.ndarray) -> np.ndarray:
    """Identity conditioning vector: temporal mean of the lip parameter track."""
    visual = np.asarray(visual_frames, dtype=np.float32)
    if visual.shape[0] == 0:
        return np.zeros(corpus_mod.VISUAL_DIM, dtype=np.float32)
    return visual.mean(axis=0)


def _pool_pairs(emb: torch.Tensor) -> torch.Tensor:
    b, t, d = emb.shape
    return emb.reshape(b, t // 2, 2, d).mean(dim=2)


def decode_audio(bundle: RendererBundle, expanded_units: np.ndarray, dvector: DVector) -> np.ndarray:
    """Vocoder path only: frame-rate units to audio feature frames."""
    expanded = np.asarray(expanded_units, dtype=np.int64)
    with torch.no_grad():
        emb = bundle.unit_embed(torch.from_numpy(expanded)[None])
        return bundle.vocoder(emb, torch.from_numpy(dvector.vec)[None])[0].numpy()


def decode_lips(bundle: RendererBundle, expanded_units: np.ndarray, identity: np.ndarray) -> np.ndarray:
    """Lip path only: frame-rate units to half-rate lip parameter frames."""
    expanded = np.asarray(expanded_units, dtype=np.int64)
    if expanded.size % 2:
        expanded = np.concatenate([expanded, expanded[-1:]])
    with torch.no_grad():
        emb = bundle.unit_embed(torch.from_numpy(expanded)[None])
        ident = torch.from_numpy(np.asarray(identity, dtype=np.float32))[None]
        return bundle.lip(_pool_pairs(emb), ident)[0].numpy()


def predict_durations(bundle: RendererBundle, reduced) -> np.ndarray:
    """Integer durations: round half-up, clamp to >= 1, bump the last if the total is odd."""
    units = reduced.units if isinstance(reduced, ReducedUnitSequence) else np.asarray(reduced, dtype=np.int32)
    if units.size == 0:
        raise ValueError("empty unit sequence")
    with torch.no_grad():
        emb = bundle.unit_embed(torch.from_numpy(units.astype(np.int64))[None])
        raw = bundle.duration(emb)[0].numpy()
    durations = np.maximum(1, np.floor(raw + 0.5).astype(np.int64))
    if durations.sum() % 2:
        durations[-1] += 1
    return durations.astype(np.int32)


def render_av(bundle: RendererBundle, reduced, dvector: DVector, identity: np.ndarray,
              durations: np.ndarray | None = None) -> AvOutput:
    """Expand units by the shared duration track and decode both streams.

    Audio frames come from the vocoder path at the audio rate; lip frames
    come from the lip path at half rate over the same expansion, so frame
    2i and 2i+1 of audio and frame i of lips always share one unit.
    """
    if isinstance(reduced, ReducedUnitSequence):
        units = reduced.units
        if durations is None:
            durations = reduced.durations
    else:
        units = np.asarray(reduced, dtype=np.int32)
    if units.size == 0:
        raise ValueError("empty unit sequence")
    if durations is None:
        durations = predict_durations(bundle, units)
    durations = np.asarray(durations, dtype=np.int64)
    if durations.sum() % 2:
        raise ValueError("duration total must be even to keep the 2:1 frame ratio")

    expanded = np.repeat(units.astype(np.int64), durations)
    audio = decode_audio(bundle, expanded, dvector)
    lips = decode_lips(bundle, expanded, identity)
    return AvOutput(audio_frames=audio, lip_frames=lips, durations=durations.astype(np.int32))


# ---------------------------------------------------------------------------
# training


def train_renderer(
    corpus: ParallelCorpus,
    units_by_index: dict[int, UnitSequence],
    speaker_encoder: SpeakerEncoder,
    cfg: TrainConfig,
    rnd_cfg: RendererConfig | None = None,
    *,
    dvector_override: DVector | None = None,
) -> RendererBundle:
    """Joint MSE training of the duration, vocoder, and lip paths.

    Ground-truth durations come from run-length reduction of each train
    sample's clean frame-rate units; audio and lip targets are the
    sample's own streams. The vocoder conditions on the d-vector of the
    sample's speaker (or ``dvector_override`` for the single-speaker
    ablation); the lip path conditions on the sample's mean lip frame.
    """
    deterministic_mode()
    if rnd_cfg is None:
        rnd_cfg = RendererConfig()

    items = []
    for i, entry in corpus.rows(split="train"):
        if i not in units_by_index:
            continue
        sample = corpus.sample(i)
        units = units_by_index[i]
        if len(units) == 0:
            continue
        if len(units) != sample.num_audio_frames:
            raise ValueError(f"unit/sample misalignment for {entry.path}")
        reduced = reduce_units(units)
        if dvector_override is not None:
            dvec = dvector_override
        else:
            dvec = embed_speaker(speaker_encoder, sample.audio_frames)
        items.append(
            (
                reduced,
                sample.audio_frames.astype(np.float32),
                sample.visual_frames.astype(np.float32),
                dvec.vec,
                identity_from_visual(sample.visual_frames),
            )
        )
    if not items:
        raise ValueError("no usable training samples for the renderer")

    bundle = seeded_init(RendererBundle(rnd_cfg), cfg.seed)
    optimizer = make_optimizer(bundle, cfg)
    rng = rng_for(cfg.seed, "renderer-train")

    bundle.train()
    for step in range(cfg.steps):
        picks = [int(i) for i in rng.integers(0, len(items), size=cfg.batch_size)]
        r_max = max(len(items[i][0]) for i in picks)
        t_max = max(items[i][1].shape[0] for i in picks)

        red_units = np.zeros((len(picks), r_max), dtype=np.int64)
        red_mask = np.zeros((len(picks), r_max), dtype=np.float32)
        red_tgt = np.zeros((len(picks), r_max), dtype=np.float32)
        exp_units = np.zeros((len(picks), t_max), dtype=np.int64)
        frame_mask = np.zeros((len(picks), t_max), dtype=np.float32)
        audio_tgt = np.zeros((len(picks), t_max, corpus_mod.AUDIO_DIM), dtype=np.float32)
        lip_tgt = np.zeros((len(picks), t_max // 2, corpus_mod.VISUAL_DIM), dtype=np.float32)
        dvecs = np.zeros((len(picks), rnd_cfg.dvector_dim), dtype=np.float32)
        idents = np.zeros((len(picks), corpus_mod.VISUAL_DIM), dtype=np.float32)

        for row, i in enumerate(picks):
            reduced, audio, visual, dvec, ident = items[i]
            r, t = len(reduced), audio.shape[0]
            red_units[row, :r] = reduced.units
            red_mask[row, :r] = 1.0
            red_tgt[row, :r] = reduced.durations
            exp_units[row, :t] = np.repeat(reduced.units, reduced.durations)
            frame_mask[row, :t] = 1.0
            audio_tgt[row, :t] = audio
            lip_tgt[row, : t // 2] = visual
            dvecs[row] = dvec
            idents[row] = ident

        red_emb = bundle.unit_embed(torch.from_numpy(red_units))
        dur_pred = bundle.duration(red_emb)
        m = torch.from_numpy(red_mask)
        dur_loss = ((dur_pred - torch.from_numpy(red_tgt)) ** 2 * m).sum() / m.sum()

        exp_emb = bundle.unit_embed(torch.from_numpy(exp_units))
        fm = torch.from_numpy(frame_mask)
        audio_pred = bundle.vocoder(exp_emb, torch.from_numpy(dvecs))
        audio_loss = ((audio_pred - torch.from_numpy(audio_tgt)) ** 2).mean(-1)
        audio_loss = (audio_loss * fm).sum() / fm.sum()

        hm = fm.reshape(fm.shape[0], -1, 2).amin(dim=2)
        lip_pred = bundle.lip(_pool_pairs(exp_emb), torch.from_numpy(idents))
        lip_loss = ((lip_pred - torch.from_numpy(lip_tgt)) ** 2).mean(-1)
        lip_loss = (lip_loss * hm).sum() / hm.sum()

        loss = dur_loss + audio_loss + lip_loss
        optimizer.zero_grad()
        loss.backward()
        set_lr(optimizer, lr_at(cfg, step))
        optimizer.step()

    bundle.eval()
    return bundle
