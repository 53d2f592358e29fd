"""Minimal neural substrate shared by every trained component.

torch supplies tensors and autograd; everything above that lives here:
layer construction from validated specs, deterministic parameter
initialization, the warmup + polynomial-decay learning-rate schedule,
finite-difference gradient verification, and the flat binary checkpoint
format. Training code elsewhere in the package routes all randomness
through numpy generators created by :func:`rng_for`, so a run is a pure
function of (config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from hashlib import blake2b
from pathlib import Path

import numpy as np
import torch
from torch import nn

LAYER_KINDS = (
    "embedding",
    "self-attention",
    "cross-attention",
    "feed-forward",
    "layer-norm",
    "conv1d",
    "linear",
)

CHECKPOINT_MAGIC = b"AVCK"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Raised when a checkpoint file is malformed or built for another spec."""


def stable_seed(*keys) -> int:
    """Collapse a key path into a 128-bit seed, stable across runs and platforms."""
    text = "/".join(str(k) for k in keys)
    return int.from_bytes(blake2b(text.encode(), digest_size=16).digest(), "little")


def rng_for(*keys) -> np.random.Generator:
    """Deterministic generator for a key path, e.g. ``rng_for(seed, "batch", step)``."""
    return np.random.default_rng(stable_seed(*keys))


def deterministic_mode() -> None:
    """Pin torch to one thread so CPU reductions are run-to-run reproducible."""
    torch.set_num_threads(1)


# ---------------------------------------------------------------------------
# layer specs


@dataclass(frozen=True)
class LayerSpec:
    """Dimensional contract for one layer kind.

    Only the fields relevant to ``kind`` are consulted; all consulted
    fields must be positive and attention widths must be divisible by
    the head count.
    """

    kind: str
    width: int = 0
    heads: int = 0
    hidden: int = 0
    in_dim: int = 0
    out_dim: int = 0
    vocab: int = 0
    kernel: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        required = {
            "embedding": ("vocab", "out_dim"),
            "self-attention": ("width", "heads"),
            "cross-attention": ("width", "heads"),
            "feed-forward": ("width", "hidden"),
            "layer-norm": ("width",),
            "conv1d": ("in_dim", "out_dim", "kernel"),
            "linear": ("in_dim", "out_dim"),
        }[self.kind]
        for field in required:
            if getattr(self, field) <= 0:
                raise ValueError(f"{self.kind}: {field} must be positive")
        if self.kind in ("self-attention", "cross-attention") and self.width % self.heads:
            raise ValueError(f"{self.kind}: heads ({self.heads}) must divide width ({self.width})")


def build_layer(spec: LayerSpec) -> nn.Module:
    """Instantiate the torch module described by ``spec`` (uninitialized)."""
    if spec.kind == "embedding":
        return nn.Embedding(spec.vocab, spec.out_dim)
    if spec.kind == "self-attention":
        return SelfAttention(spec.width, spec.heads)
    if spec.kind == "cross-attention":
        return CrossAttention(spec.width, spec.heads)
    if spec.kind == "feed-forward":
        return FeedForward(spec.width, spec.hidden)
    if spec.kind == "layer-norm":
        return nn.LayerNorm(spec.width)
    if spec.kind == "conv1d":
        return nn.Conv1d(spec.in_dim, spec.out_dim, spec.kernel, padding=spec.kernel // 2)
    return nn.Linear(spec.in_dim, spec.out_dim)


# ---------------------------------------------------------------------------
# transformer blocks (pre-norm)


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    b, t, w = x.shape
    return x.view(b, t, heads, w // heads).transpose(1, 2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    b, h, t, d = x.shape
    return x.transpose(1, 2).reshape(b, t, h * d)


def _attend(q, k, v, bias):
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if bias is not None:
        scores = scores + bias
    return torch.softmax(scores, dim=-1) @ v


class SelfAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        if width % heads:
            raise ValueError("heads must divide width")
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)

    def forward(self, x, bias=None):
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        ctx = _attend(_split_heads(q, self.heads), _split_heads(k, self.heads),
                      _split_heads(v, self.heads), bias)
        return self.out(_merge_heads(ctx))


class CrossAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        if width % heads:
            raise ValueError("heads must divide width")
        self.heads = heads
        self.q = nn.Linear(width, width)
        self.kv = nn.Linear(width, 2 * width)
        self.out = nn.Linear(width, width)

    def forward(self, x, memory, bias=None):
        q = _split_heads(self.q(x), self.heads)
        k, v = self.kv(memory).chunk(2, dim=-1)
        ctx = _attend(q, _split_heads(k, self.heads), _split_heads(v, self.heads), bias)
        return self.out(_merge_heads(ctx))


class FeedForward(nn.Module):
    def __init__(self, width: int, hidden: int):
        super().__init__()
        self.up = nn.Linear(width, hidden)
        self.down = nn.Linear(hidden, width)

    def forward(self, x):
        return self.down(torch.relu(self.up(x)))


class EncoderBlock(nn.Module):
    def __init__(self, width: int, heads: int, hidden: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = SelfAttention(width, heads)
        self.norm2 = nn.LayerNorm(width)
        self.ffn = FeedForward(width, hidden)

    def forward(self, x, bias=None):
        x = x + self.attn(self.norm1(x), bias)
        return x + self.ffn(self.norm2(x))


class DecoderBlock(nn.Module):
    def __init__(self, width: int, heads: int, hidden: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.self_attn = SelfAttention(width, heads)
        self.norm2 = nn.LayerNorm(width)
        self.cross_attn = CrossAttention(width, heads)
        self.norm3 = nn.LayerNorm(width)
        self.ffn = FeedForward(width, hidden)

    def forward(self, x, memory, self_bias=None, cross_bias=None):
        x = x + self.self_attn(self.norm1(x), self_bias)
        x = x + self.cross_attn(self.norm2(x), memory, cross_bias)
        return x + self.ffn(self.norm3(x))


def sinusoid_table(length: int, width: int) -> torch.Tensor:
    """Fixed sinusoidal position encodings, shape (length, width)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    dim = np.arange(width, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (dim // 2)) / width)
    table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return torch.from_numpy(table.astype(np.float32))


def causal_bias(length: int) -> torch.Tensor:
    """Additive attention bias masking future positions with -inf."""
    bias = torch.full((length, length), float("-inf"))
    return torch.triu(bias, diagonal=1)


def padding_bias(pad: torch.Tensor) -> torch.Tensor:
    """Additive key-side bias from a (B, T) boolean pad mask (True = padding)."""
    bias = torch.zeros(pad.shape, dtype=torch.float32)
    bias[pad] = float("-inf")
    return bias[:, None, None, :]


# ---------------------------------------------------------------------------
# training config and schedule


SCHEDULES = ("polynomial-decay", "constant")


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    warmup_steps: int
    peak_lr: float
    schedule: str = "polynomial-decay"
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.warmup_steps < 0:
            raise ValueError("steps and warmup_steps must be non-negative")
        if self.warmup_steps > self.steps:
            raise ValueError("warmup_steps must not exceed steps")
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


def lr_at(cfg: TrainConfig, step: int) -> float:
    """Learning rate for 0-based ``step``: linear warmup, then decay to ~0."""
    if step < cfg.warmup_steps:
        return cfg.peak_lr * (step + 1) / cfg.warmup_steps
    if cfg.schedule == "constant" or cfg.steps == cfg.warmup_steps:
        return cfg.peak_lr
    return cfg.peak_lr * (cfg.steps - step) / (cfg.steps - cfg.warmup_steps)


def make_optimizer(module: nn.Module, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(module.parameters(), lr=cfg.peak_lr, betas=(0.9, 0.98), eps=1e-8)


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


# ---------------------------------------------------------------------------
# deterministic initialization


def seeded_init(module_or_spec, seed: int) -> nn.Module:
    """Initialize all parameters deterministically from ``seed``.

    Scheme: weights with >= 2 dims get U(-b, b) with b = 1/sqrt(fan_in)
    and fan_in = prod(shape[1:]); LayerNorm scales get 1; every other
    1-D parameter (biases) gets 0. Accepts a built module or a
    :class:`LayerSpec` (which is built first). Returns the module.
    """
    module = build_layer(module_or_spec) if isinstance(module_or_spec, LayerSpec) else module_or_spec
    norm_weights = {
        f"{name}.weight" if name else "weight"
        for name, sub in module.named_modules()
        if isinstance(sub, nn.LayerNorm)
    }
    rng = rng_for(seed, "init")
    with torch.no_grad():
        for name, p in module.named_parameters():
            if p.ndim >= 2:
                fan_in = int(np.prod(p.shape[1:]))
                bound = 1.0 / math.sqrt(fan_in)
                vals = rng.uniform(-bound, bound, size=tuple(p.shape)).astype(np.float32)
                p.copy_(torch.from_numpy(vals))
            elif name in norm_weights:
                p.fill_(1.0)
            else:
                p.zero_()
    return module


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def flatten_params(module: nn.Module) -> np.ndarray:
    """Concatenate all parameters (registration order) into one float32 vector."""
    if param_count(module) == 0:
        return np.zeros(0, dtype=np.float32)
    with torch.no_grad():
        return torch.cat([p.reshape(-1) for p in module.parameters()]).numpy().astype(np.float32, copy=True)


def unflatten_params(module: nn.Module, flat: np.ndarray) -> None:
    if flat.size != param_count(module):
        raise ValueError(f"parameter count mismatch: file has {flat.size}, model has {param_count(module)}")
    offset = 0
    with torch.no_grad():
        for p in module.parameters():
            n = p.numel()
            chunk = torch.from_numpy(flat[offset:offset + n].copy()).view(p.shape)
            p.copy_(chunk)
            offset += n


def param_hash(module: nn.Module) -> str:
    return blake2b(flatten_params(module).tobytes(), digest_size=16).hexdigest()


# ---------------------------------------------------------------------------
# gradient verification


def gradient_check(fragment: nn.Module, inputs: tuple, eps: float = 1e-5) -> float:
    """Compare autograd gradients with central finite differences.

    ``fragment(*inputs)`` must return a scalar loss. The check runs on a
    float64 copy of the fragment, perturbing every parameter entry by
    +/- eps. Returns the max relative error over all entries; fragments
    with no parameters vacuously return 0.0.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    n_params = param_count(fragment)
    if n_params > 10_000:
        raise ValueError(f"fragment too large for finite differences ({n_params} parameters)")
    if n_params == 0:
        return 0.0

    import copy

    frag = copy.deepcopy(fragment).double()
    dinputs = tuple(
        x.double() if torch.is_tensor(x) and torch.is_floating_point(x) else x for x in inputs
    )

    loss = frag(*dinputs)
    if not torch.isfinite(loss):
        raise ValueError("loss is not finite")
    frag.zero_grad()
    loss.backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
                for p in frag.parameters()]

    worst = 0.0
    with torch.no_grad():
        for p, grad in zip(frag.parameters(), analytic):
            flat = p.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                hi = frag(*dinputs).item()
                flat[i] = orig - eps
                lo = frag(*dinputs).item()
                flat[i] = orig
                fd = (hi - lo) / (2 * eps)
                a = gflat[i].item()
                rel = abs(a - fd) / max(abs(a) + abs(fd), 1e-8)
                worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# checkpoints: 40-byte header + flat little-endian float32 parameters


def spec_digest(spec_key: str) -> bytes:
    return blake2b(spec_key.encode(), digest_size=16).digest()


def save_flat_checkpoint(path, flat: np.ndarray, spec_key: str, step: int) -> None:
    flat = np.ascontiguousarray(flat, dtype="<f4")
    header = (
        CHECKPOINT_MAGIC
        + CHECKPOINT_VERSION.to_bytes(4, "little")
        + spec_digest(spec_key)
        + int(step).to_bytes(8, "little")
        + int(flat.size).to_bytes(8, "little")
    )
    Path(path).write_bytes(header + flat.tobytes())


def load_flat_checkpoint(path, spec_key: str) -> tuple[np.ndarray, int]:
    raw = Path(path).read_bytes()
    if len(raw) < 40 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = int.from_bytes(raw[4:8], "little")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    digest = raw[8:24]
    if digest != spec_digest(spec_key):
        raise CheckpointError(
            f"{path}: checkpoint was built for a different model spec "
            f"(file {digest.hex()}, expected {spec_digest(spec_key).hex()})"
        )
    step = int.from_bytes(raw[24:32], "little")
    n = int.from_bytes(raw[32:40], "little")
    flat = np.frombuffer(raw[40:], dtype="<f4")
    if flat.size != n:
        raise CheckpointError(f"{path}: truncated checkpoint ({flat.size} of {n} values)")
    return flat.copy(), step


def save_checkpoint(path, module: nn.Module, spec_key: str, step: int) -> None:
    save_flat_checkpoint(path, flatten_params(module), spec_key, step)


def load_checkpoint(path, module: nn.Module, spec_key: str) -> int:
    flat, step = load_flat_checkpoint(path, spec_key)
    unflatten_params(module, flat)
    return step
