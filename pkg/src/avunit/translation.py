"""Many-to-many unit translation with language-token conditioning.

Sequences of reduced AV speech units are treated as pseudo text: the
encoder reads a source language token followed by the source units, and
the decoder, primed with the target language token, autoregressively
predicts target units. One model serves every declared language
direction. The training loss is the summed negative log-likelihood of
the target units (EOS included) given the source sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .modeling import (
    DecoderBlock,
    EncoderBlock,
    TrainConfig,
    causal_bias,
    deterministic_mode,
    flatten_params,
    lr_at,
    make_optimizer,
    param_hash,
    rng_for,
    seeded_init,
    set_lr,
    sinusoid_table,
    unflatten_params,
)


@dataclass(frozen=True)
class Vocabulary:
    """Unit ids [0, K), then one token per language, then BOS, EOS, PAD."""

    num_units: int
    languages: tuple[str, ...]

    def __post_init__(self):
        if self.num_units < 2:
            raise ValueError("need at least 2 unit symbols")
        if len(self.languages) < 2:
            raise ValueError("need at least 2 languages")
        if len(set(self.languages)) != len(self.languages):
            raise ValueError("duplicate language tags")

    @property
    def size(self) -> int:
        return self.num_units + len(self.languages) + 3

    @property
    def bos(self) -> int:
        return self.num_units + len(self.languages)

    @property
    def eos(self) -> int:
        return self.bos + 1

    @property
    def pad(self) -> int:
        return self.bos + 2

    def lang_id(self, tag: str) -> int:
        try:
            return self.num_units + self.languages.index(tag)
        except ValueError:
            raise ValueError(f"unknown language token {tag!r}") from None

    def check_units(self, units: np.ndarray) -> np.ndarray:
        units = np.asarray(units, dtype=np.int64)
        if units.size and (units.min() < 0 or units.max() >= self.num_units):
            raise ValueError("out-of-vocabulary unit id")
        return units

    def spec_key(self) -> str:
        return f"vocab/K={self.num_units}/langs={','.join(self.languages)}"


def build_vocab(K: int, languages) -> Vocabulary:
    return Vocabulary(num_units=K, languages=tuple(languages))


@dataclass(frozen=True)
class TranslatorConfig:
    width: int = 64
    heads: int = 4
    ffn: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 2
    max_positions: int = 512

    def spec_key(self, vocab: Vocabulary) -> str:
        return (
            f"translator/w={self.width}/h={self.heads}/f={self.ffn}"
            f"/e={self.encoder_layers}/d={self.decoder_layers}/{vocab.spec_key()}"
        )


class TranslatorModel(nn.Module):
    def __init__(self, vocab: Vocabulary, cfg: TranslatorConfig = TranslatorConfig()):
        super().__init__()
        self.vocab = vocab
        self.cfg = cfg
        self.embed_scale = math.sqrt(cfg.width)
        self.embed = nn.Embedding(vocab.size, cfg.width)
        self.enc_blocks = nn.ModuleList(
            EncoderBlock(cfg.width, cfg.heads, cfg.ffn) for _ in range(cfg.encoder_layers)
        )
        self.enc_norm = nn.LayerNorm(cfg.width)
        self.dec_blocks = nn.ModuleList(
            DecoderBlock(cfg.width, cfg.heads, cfg.ffn) for _ in range(cfg.decoder_layers)
        )
        self.dec_norm = nn.LayerNorm(cfg.width)
        self.proj = nn.Linear(cfg.width, vocab.size)
        self.register_buffer("positions", sinusoid_table(cfg.max_positions, cfg.width), persistent=False)
        self.train_log: list[tuple[int, float]] = []

    def spec_key(self) -> str:
        return self.cfg.spec_key(self.vocab)

    def encode(self, src: torch.Tensor, src_pad: torch.Tensor | None = None) -> torch.Tensor:
        bias = None
        if src_pad is not None:
            fb = torch.zeros(src_pad.shape, dtype=torch.float32)
            fb[src_pad] = float("-inf")
            bias = fb[:, None, None, :]
        h = self.embed_scale * self.embed(src) + self.positions[: src.shape[1]]
        for block in self.enc_blocks:
            h = block(h, bias)
        return self.enc_norm(h), bias

    def decode(self, tgt_in: torch.Tensor, memory: torch.Tensor,
               cross_bias: torch.Tensor | None = None) -> torch.Tensor:
        self_bias = causal_bias(tgt_in.shape[1])
        h = self.embed_scale * self.embed(tgt_in) + self.positions[: tgt_in.shape[1]]
        for block in self.dec_blocks:
            h = block(h, memory, self_bias, cross_bias)
        return self.proj(self.dec_norm(h))

    def forward(self, src, tgt_in, src_pad=None):
        memory, cross_bias = self.encode(src, src_pad)
        return self.decode(tgt_in, memory, cross_bias)


# ---------------------------------------------------------------------------
# loss


def _encoder_ids(vocab: Vocabulary, units: np.ndarray, lang: str) -> np.ndarray:
    return np.concatenate([[vocab.lang_id(lang)], units, [vocab.eos]]).astype(np.int64)


def sequence_nll(model: TranslatorModel, src_units, src_lang: str, tgt_units, tgt_lang: str) -> float:
    """Teacher-forced negative log-likelihood, summed over target units and EOS.

    Log-probabilities are accumulated in float64 from the raw decoder
    logits, so the value matches an independent per-step summation to
    floating-point precision.
    """
    vocab = model.vocab
    src = vocab.check_units(src_units)
    tgt = vocab.check_units(tgt_units)
    enc_in = torch.from_numpy(_encoder_ids(vocab, src, src_lang))[None]
    dec_in = torch.from_numpy(np.concatenate([[vocab.lang_id(tgt_lang)], tgt]).astype(np.int64))[None]
    gold = np.concatenate([tgt, [vocab.eos]]).astype(np.int64)
    with torch.no_grad():
        logits = model(enc_in, dec_in)[0].double()
    logprobs = torch.log_softmax(logits, dim=-1)
    return float(-logprobs[np.arange(gold.size), gold].sum().item())


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class UnitPair:
    src_lang: str
    tgt_lang: str
    src_units: np.ndarray
    tgt_units: np.ndarray


def _batch_loss(model: TranslatorModel, pairs: list[UnitPair]) -> torch.Tensor:
    vocab = model.vocab
    enc = [_encoder_ids(vocab, vocab.check_units(p.src_units), p.src_lang) for p in pairs]
    dec_in = [np.concatenate([[vocab.lang_id(p.tgt_lang)], vocab.check_units(p.tgt_units)]) for p in pairs]
    gold = [np.concatenate([vocab.check_units(p.tgt_units), [vocab.eos]]) for p in pairs]

    b = len(pairs)
    s_max = max(len(x) for x in enc)
    t_max = max(len(x) for x in dec_in)
    src = np.full((b, s_max), vocab.pad, dtype=np.int64)
    src_pad = np.ones((b, s_max), dtype=bool)
    tin = np.full((b, t_max), vocab.pad, dtype=np.int64)
    out = np.full((b, t_max), vocab.pad, dtype=np.int64)
    for i in range(b):
        src[i, : len(enc[i])] = enc[i]
        src_pad[i, : len(enc[i])] = False
        tin[i, : len(dec_in[i])] = dec_in[i]
        out[i, : len(gold[i])] = gold[i]

    logits = model(torch.from_numpy(src), torch.from_numpy(tin), torch.from_numpy(src_pad))
    return nn.functional.cross_entropy(
        logits.reshape(-1, vocab.size), torch.from_numpy(out).reshape(-1), ignore_index=vocab.pad
    )


def mean_nll(model: TranslatorModel, pairs: list[UnitPair], batch_size: int = 32) -> float:
    """Mean per-token teacher-forced NLL over a pair list."""
    total = 0.0
    tokens = 0
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start:start + batch_size]
            n = sum(len(p.tgt_units) + 1 for p in chunk)
            total += _batch_loss(model, chunk).item() * n
            tokens += n
    return total / max(1, tokens)


def train_translator(
    pairs: list[UnitPair],
    cfg: TrainConfig,
    init: TranslatorModel | None = None,
    *,
    vocab: Vocabulary | None = None,
    trans_cfg: TranslatorConfig = TranslatorConfig(),
    valid_pairs: list[UnitPair] | None = None,
    checkpoints: int = 10,
    source_swap_prob: float = 0.10,
    source_insert_prob: float = 0.0,
    source_delete_prob: float = 0.0,
    swap_neighbors: np.ndarray | None = None,
) -> TranslatorModel:
    """Minimize the unit NLL over ``pairs``; finetune when ``init`` is given.

    With ``init=None`` a fresh model is built from ``vocab`` (pretraining);
    otherwise training continues from the given parameters. ``cfg.steps=0``
    with an init returns it unchanged. Validation NLL is recorded in
    ``model.train_log`` at evenly spaced checkpoints. The source side is
    corrupted on the fly (unit swaps, insertions, deletions; swaps and
    insertions draw near-neighbour units when ``swap_neighbors``, a (K, n)
    index table, is given) so decoding stays robust to the unit
    perturbations other input modalities or acoustic noise produce.
    """
    deterministic_mode()
    if init is not None:
        if vocab is not None and vocab != init.vocab:
            raise ValueError("vocabulary mismatch between init model and request")
        if cfg.steps == 0:
            return init
        model = init
    else:
        if vocab is None:
            raise ValueError("vocab is required when training from scratch")
        model = seeded_init(TranslatorModel(vocab, trans_cfg), cfg.seed)
    if not pairs:
        raise ValueError("empty training corpus")

    optimizer = make_optimizer(model, cfg)
    rng = rng_for(cfg.seed, "translator-train")
    eval_every = max(1, cfg.steps // max(1, checkpoints))
    best = (float("inf"), None)

    model.train()
    for step in range(cfg.steps):
        picks = rng.integers(0, len(pairs), size=cfg.batch_size)
        batch = [pairs[int(i)] for i in picks]
        if source_swap_prob or source_insert_prob or source_delete_prob:
            batch = [
                UnitPair(p.src_lang, p.tgt_lang,
                         _corrupt_source(np.asarray(p.src_units), rng, model.vocab.num_units,
                                         source_swap_prob, source_insert_prob, source_delete_prob,
                                         swap_neighbors),
                         p.tgt_units)
                for p in batch
            ]
        loss = _batch_loss(model, batch)
        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        set_lr(optimizer, lr_at(cfg, step))
        optimizer.step()
        if valid_pairs and ((step + 1) % eval_every == 0 or step + 1 == cfg.steps):
            model.eval()
            nll = mean_nll(model, valid_pairs)
            model.train_log.append((step + 1, nll))
            if nll < best[0]:
                best = (nll, flatten_params(model))
            model.train()

    # keep the checkpoint that scored best on the validation pairs
    if best[1] is not None:
        unflatten_params(model, best[1])
    model.eval()
    return model


def _corrupt_source(src: np.ndarray, rng: np.random.Generator, num_units: int,
                    p_swap: float, p_ins: float, p_del: float,
                    neighbors: np.ndarray | None) -> np.ndarray:
    def variant(u):
        if neighbors is not None:
            return int(neighbors[u, int(rng.integers(0, neighbors.shape[1]))])
        return int(rng.integers(0, num_units))

    out: list[int] = []
    for u in src.tolist():
        r = rng.random()
        if r < p_del and len(src) > 2:
            continue
        if r < p_del + p_ins:
            out.append(variant(u))
        out.append(variant(u) if rng.random() < p_swap else u)
    if not out:
        out = src.tolist()
    return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# decoding


@dataclass
class DecodeResult:
    units: np.ndarray
    log_prob: float
    finished: bool


def translate(
    model: TranslatorModel,
    src_units,
    src_lang: str,
    tgt_lang: str,
    decode: str = "beam",
    beam_size: int = 5,
    max_len: int | None = None,
) -> DecodeResult:
    """Decode target units until EOS or ``max_len`` (default 2x source length).

    ``decode="greedy"`` is beam search with width 1. Beam search returns
    the completed hypothesis with the highest cumulative log-probability;
    generation is restricted to unit symbols plus EOS. Adjacent repeats
    are not enforced here; downstream rendering merges them.
    """
    vocab = model.vocab
    src = vocab.check_units(src_units)
    if decode == "greedy":
        beam_size = 1
    elif decode != "beam":
        raise ValueError(f"decode must be 'greedy' or 'beam', got {decode!r}")
    if beam_size < 1:
        raise ValueError("beam_size must be at least 1")
    if max_len is None:
        max_len = max(1, 2 * int(src.size))

    banned = np.zeros(vocab.size, dtype=np.float32)
    banned[vocab.num_units:] = float("-inf")
    banned[vocab.eos] = 0.0
    banned_t = torch.from_numpy(banned)

    with torch.no_grad():
        enc_in = torch.from_numpy(_encoder_ids(vocab, src, src_lang))[None]
        memory, _ = model.encode(enc_in)
        lt = vocab.lang_id(tgt_lang)

        beams: list[tuple[tuple[int, ...], float]] = [((lt,), 0.0)]
        finished: list[tuple[tuple[int, ...], float]] = []
        for _ in range(max_len):
            if not beams:
                break
            tin = torch.from_numpy(np.asarray([b[0] for b in beams], dtype=np.int64))
            logits = model.decode(tin, memory.expand(len(beams), -1, -1))[:, -1]
            logprobs = torch.log_softmax(logits.double(), dim=-1) + banned_t

            candidates: list[tuple[float, int, int]] = []
            for bi, (_, score) in enumerate(beams):
                lp = logprobs[bi].numpy()
                top = np.argsort(-lp, kind="stable")[: beam_size + 1]
                for tok in top:
                    candidates.append((score + float(lp[tok]), bi, int(tok)))
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

            next_beams = []
            for cand_score, bi, tok in candidates:
                if tok == vocab.eos:
                    finished.append((beams[bi][0], cand_score))
                elif len(next_beams) < beam_size:
                    next_beams.append((beams[bi][0] + (tok,), cand_score))
            beams = next_beams
            if finished:
                best_done = max(f[1] for f in finished)
                beams = [b for b in beams if b[1] > best_done]

        if finished:
            ids, score = max(finished, key=lambda f: f[1])
            done = True
        else:
            ids, score = max(beams, key=lambda b: b[1]) if beams else ((lt,), float("-inf"))
            done = False
    return DecodeResult(units=np.asarray(ids[1:], dtype=np.int32), log_prob=score, finished=done)


def merge_adjacent_repeats(units: np.ndarray) -> np.ndarray:
    """Collapse adjacent duplicate unit ids (post-pass before rendering)."""
    units = np.asarray(units, dtype=np.int32)
    if units.size == 0:
        return units
    keep = np.concatenate([[True], units[1:] != units[:-1]])
    return units[keep]


def translator_hash(model: TranslatorModel) -> str:
    return param_hash(model)
